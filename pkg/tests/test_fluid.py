import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glbfed.fluid import (
    DomainViolation,
    Regime,
    StepTooLarge,
    critical_load,
    drift_bs,
    drift_j,
    drift_s,
    fixed_point,
    integrate,
    max_dt,
)
from glbfed.model import FederationParams, FluidState

FIG2 = dict(mu=1.0, nu_s=0.01, nu_c=0.01)


def p(lam, **kw):
    return FederationParams(lam, **(FIG2 | kw))


def case_split_b_star(lam, mu, nu_s, nu_c):
    """Long-run b_s from the sign of lam + g(rho, s*, s*), in exact rationals."""
    lam, mu, nu_s, nu_c = (Fraction(x) for x in (lam, mu, nu_s, nu_c))
    rho = lam / mu
    s = nu_s / (nu_s + nu_c)
    g = -(nu_s + nu_c + mu) * s + nu_s * rho
    if lam + g > 0:
        return s
    return (lam + rho * nu_s) / (nu_s + nu_c + mu)


def test_drift_j():
    q = p(0.3)
    assert drift_j(0.3, q) == pytest.approx(0.0, abs=1e-15)
    assert drift_j(2.0, q) == pytest.approx(-0.7)
    assert drift_j(0.0, q) == 0.3


def test_drift_s():
    q = p(0.3)
    assert drift_s(0.5, q) == pytest.approx(0.0, abs=1e-15)
    assert drift_s(0.0, q) == 0.01
    assert drift_s(1.0, q) == pytest.approx(-0.01)


def test_drift_bs_interior_and_surface():
    q = p(0.3)
    assert drift_bs(0.3, 0.5, 0.2, q) == pytest.approx(0.3 - 1.02 * 0.2 + 0.01 * 0.3)
    low, high = drift_bs(0.3, 0.5, 0.5, q)
    assert low == pytest.approx(-0.507)
    assert high == pytest.approx(-0.207)
    fp = fixed_point(q)
    assert fp.regime is Regime.LOAD_LIMITED
    assert drift_bs(fp.j_star, fp.s_star, fp.b_s_star, q) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DomainViolation):
        drift_bs(0.3, 0.5, 0.6, q)


def test_fixed_point_examples():
    a = fixed_point(p(0.3))
    assert a.b_s_star == pytest.approx(0.3 * 1.01 / 1.02, abs=1e-15)
    assert a.regime is Regime.LOAD_LIMITED
    b = fixed_point(p(0.8))
    assert b.b_s_star == 0.5 and b.regime is Regime.RENEWABLES_LIMITED
    c = fixed_point(FederationParams(0.4, 1.0, 0.3, 0.0))
    assert c.b_s_star == pytest.approx(0.4, abs=1e-15)


def test_critical_load():
    assert critical_load(p(0.3)) == pytest.approx(0.5 * 1.02 / 1.01, abs=1e-15)
    assert critical_load(FederationParams(0.3, 1.0, 0.2, 0.0)) == pytest.approx(1.0, abs=1e-15)
    crit = critical_load(p(0.3))
    fp = fixed_point(p(crit))
    assert fp.regime is Regime.BOUNDARY
    assert fp.s_star == pytest.approx(crit * 1.01 / 1.02, abs=1e-15)


@settings(max_examples=200)
@given(lam=st.floats(0.01, 0.99), nu_s=st.floats(1e-4, 5), nu_c=st.floats(1e-4, 5))
def test_sign_analysis_matches_regime(lam, nu_s, nu_c):
    q = FederationParams(lam, 1.0, nu_s, nu_c)
    fp = fixed_point(q)
    g = -(nu_s + nu_c + 1.0) * fp.s_star + nu_s * fp.j_star
    margin = lam + g
    if abs(margin) > 1e-9:
        assert (margin > 0) == (fp.regime is Regime.RENEWABLES_LIMITED)
    assert float(case_split_b_star(lam, 1.0, nu_s, nu_c)) == pytest.approx(fp.b_s_star, abs=1e-12)
    assert fp.b_s_star <= min(fp.s_star, fp.j_star) + 1e-15


def test_j_closed_form():
    q = p(0.3)
    dt = 0.001
    traj = integrate(FluidState(0, 0, 0), q, t_end=10.0, dt=dt)
    exact = 0.3 * (1 - np.exp(-traj.grid))
    assert np.max(np.abs(traj.j - exact)) <= 10 * dt
    s_exact = 0.5 * (1 - np.exp(-0.02 * traj.grid))
    assert np.max(np.abs(traj.s - s_exact)) <= 10 * dt


def test_fixed_point_is_stationary():
    q = p(0.3)
    fp = fixed_point(q)
    traj = integrate(FluidState(fp.j_star, fp.s_star, fp.b_s_star), q, t_end=100.0)
    assert np.max(np.abs(traj.b_s - fp.b_s_star)) < 1e-12
    assert np.max(np.abs(traj.j - fp.j_star)) < 1e-12


def test_renewables_limited_slides_on_surface():
    q = p(0.8)
    traj = integrate(FluidState(0.8, 0.5, 0.0), q, t_end=200.0)
    assert np.all(np.diff(traj.b_s) >= -1e-15)
    hit = np.argmax(traj.b_s >= traj.s)
    assert hit > 0
    assert np.allclose(traj.b_s[hit:], traj.s[hit:])
    assert traj.b_s[-1] == pytest.approx(0.5, abs=1e-4)


def test_detaches_when_sunny_fraction_outruns_jobs():
    # s grows fast from a small value while few jobs are present: b_s must leave the surface
    q = FederationParams(0.05, 1.0, 2.0, 0.5)
    traj = integrate(FluidState(0.05, 0.05, 0.05), q, t_end=5.0)
    assert np.any(traj.b_s < traj.s - 1e-3)
    assert traj.b_s[-1] == pytest.approx(fixed_point(q).b_s_star, abs=1e-3)


def test_step_too_large():
    q = p(0.3)
    with pytest.raises(StepTooLarge):
        integrate(FluidState(0, 0, 0), q, t_end=1.0, dt=max_dt(q) * 1.5)


def test_feasibility_along_trajectories():
    rng = np.random.default_rng(7)
    for _ in range(20):
        q = FederationParams(rng.uniform(0.05, 0.95), 1.0, rng.uniform(0.01, 2), rng.uniform(0.01, 2))
        j0 = rng.uniform(0, 2)
        s0 = rng.uniform(0, 1)
        b0 = rng.uniform(0, min(s0, j0, 1))
        traj = integrate(FluidState(j0, s0, b0), q, t_end=20.0)
        assert np.all(traj.b_s >= 0)
        assert np.all(traj.b_s <= np.minimum(traj.s, np.minimum(traj.j, 1.0)) + 1e-15)


def test_step_halving_is_first_order():
    q = p(0.8, nu_s=0.3, nu_c=0.2)
    init = FluidState(0.0, 0.1, 0.0)
    ref = integrate(init, q, t_end=5.0, dt=1e-5).b_s[-1]
    errs = [abs(integrate(init, q, t_end=5.0, dt=dt).b_s[-1] - ref) for dt in (0.04, 0.02, 0.01)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    for r in ratios:
        assert 1.5 < r < 2.5


def test_every_thins_output():
    q = p(0.3)
    full = integrate(FluidState(0, 0.5, 0), q, t_end=1.0, dt=0.001)
    thin = integrate(FluidState(0, 0.5, 0), q, t_end=1.0, dt=0.001, every=7)
    assert thin.grid[-1] == pytest.approx(1.0)
    assert thin.b_s[-1] == full.b_s[-1]
    assert len(thin.grid) == 1000 // 7 + 2


def test_global_attractor():
    rng = np.random.default_rng(2016)
    for _ in range(10):
        q = FederationParams(rng.uniform(0.05, 0.95), 1.0, rng.uniform(0.005, 1.0), rng.uniform(0.005, 1.0))
        fp = fixed_point(q)
        t_end = 50 * max(1 / q.mu, 1 / (q.nu_s + q.nu_c))
        for _ in range(10):
            j0 = rng.uniform(0, 2)
            s0 = rng.uniform(0, 1)
            b0 = rng.uniform(0, min(s0, j0, 1))
            final = integrate(FluidState(j0, s0, b0), q, t_end=t_end, every=10**9).final
            err = max(abs(final.j - fp.j_star), abs(final.s - fp.s_star), abs(final.b_s - fp.b_s_star))
            assert err <= 1e-4, (q, j0, s0, b0, final)
