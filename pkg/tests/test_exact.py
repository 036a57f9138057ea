import math

import numpy as np
import pytest
from scipy.stats import binom

from glbfed import exact
from glbfed.exact import StateSpaceTooLarge
from glbfed.model import FederationParams, SystemState, is_legal_state
from glbfed.simulator import step, transitions


def fed(lam, n, nu_s=0.01, nu_c=0.01):
    return FederationParams(lam, 1.0, nu_s, nu_c, n)


def solved(params, k):
    chain = exact.build(params, k)
    exact.stationary(chain)
    return chain


def test_n1_k0_has_four_states():
    chain = exact.build(fed(0.3, 1), 0)
    assert sorted(chain.states) == [(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 1)]


@pytest.mark.parametrize("n,k", [(1, 0), (2, 1), (3, 4), (5, 2)])
def test_state_space_is_exactly_the_legal_set(n, k):
    chain = exact.build(fed(0.5, n), k)
    legal = {(j, s, b) for j in range(n + k + 1) for s in range(n + 1) for b in range(n + 1)
             if is_legal_state(j, s, b, n)}
    assert set(chain.states) == legal
    assert len(chain.states) == exact.count_states(n, k)


def test_generator_rows():
    rng = np.random.default_rng(3)
    params = fed(rng.uniform(0.1, 0.9), 3, rng.uniform(0.01, 1), rng.uniform(0.01, 1))
    q = exact.build(params, 5).generator.toarray()
    assert np.allclose(q.sum(axis=1), 0.0, atol=1e-13)
    off = q - np.diag(np.diag(q))
    assert np.all(off >= 0)


def test_full_queue_pins_busy_sunny():
    chain = exact.build(fed(0.5, 2), 1)
    for j, s, b in chain.states:
        if j >= 2:
            assert b == s


def test_arrivals_blocked_at_cap():
    params = fed(0.5, 2)
    chain = exact.build(params, 1)
    q = chain.generator
    for j, s, b in chain.states:
        if j == 3:
            row = q.getrow(chain.index[(j, s, b)])
            targets = [chain.states[c] for c in row.indices if c != chain.index[(j, s, b)]]
            assert all(t[0] <= 3 for t in targets)


def test_state_space_guard():
    with pytest.raises(StateSpaceTooLarge):
        exact.build(fed(0.5, 300), 200)


@pytest.mark.parametrize("n,k,lam", [(1, 40, 0.3), (2, 30, 0.8), (3, 60, 0.8), (4, 20, 0.5)])
def test_stationary_solution_contract(n, k, lam):
    chain = solved(fed(lam, n), k)
    pi = chain.pi
    assert chain.residual <= 1e-12
    assert np.all(pi >= 0)
    assert pi.sum() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("n,k,lam,nu_s,nu_c", [(1, 40, 0.3, 0.01, 0.01), (3, 10, 0.7, 0.3, 0.1), (4, 5, 0.5, 2.0, 5.0)])
def test_marginals(n, k, lam, nu_s, nu_c):
    params = fed(lam, n, nu_s, nu_c)
    chain = solved(params, k)
    assert np.max(np.abs(exact.job_marginal(chain) - exact.erlang_marginals(params, k))) < 1e-10
    assert np.max(np.abs(exact.sunny_marginal(chain) - binom.pmf(np.arange(n + 1), n, params.s_star))) < 1e-10


def test_n1_independence():
    chain = solved(fed(0.3, 1), 40)
    assert exact.expected_bs_frac(chain) == pytest.approx(0.15, abs=1e-6)


def test_lambda_to_zero():
    chain = solved(fed(1e-9, 2), 5)
    assert exact.expected_bs_frac(chain) == pytest.approx(0.0, abs=1e-8)


# regression constant from this solver (N=3, rho=0.8, nu_s=nu_c=0.01, K=60)
N3_RHO08 = 0.41492918286971


def test_regression_n3():
    chain = solved(fed(0.8, 3), 60)
    assert exact.expected_bs_frac(chain) == pytest.approx(N3_RHO08, abs=1e-12)


def test_erlang_marginals():
    p = exact.erlang_marginals(fed(0.5, 2), 0)
    assert p == pytest.approx([0.4, 0.4, 0.2], abs=1e-15)
    p = exact.erlang_marginals(fed(0.3, 1), 200)
    k = np.arange(202)
    assert p == pytest.approx(0.7 * 0.3**k, abs=1e-15)


@pytest.mark.parametrize("n,rho", [(1, 0.3), (5, 0.7), (20, 0.8), (100, 0.9)])
def test_busy_servers_equal_load(n, rho):
    params = fed(rho, n)
    k = 600
    p = exact.erlang_marginals(params, k)
    busy = np.minimum(np.arange(n + k + 1), n)
    assert p @ busy / n == pytest.approx(rho, abs=1e-10)
    assert p @ np.arange(n + k + 1) == pytest.approx(exact.mmn_mean_jobs(params), rel=1e-10)


def test_erlang_c_small_cases():
    # M/M/1: waiting probability is rho
    assert exact.erlang_c(1, 0.3) == pytest.approx(0.3, abs=1e-15)
    # M/M/2 with offered load a=1: C = 1/3
    assert exact.erlang_c(2, 0.5) == pytest.approx(1 / 3, abs=1e-15)


@pytest.mark.parametrize("lam", [0.3, 0.5, 0.8])
def test_truncation_error_follows_geometric_tail(lam):
    params = fed(lam, 2)
    ref = exact.expected_bs_frac(solved(params, 400))
    for k in (10, 20, 30):
        err = abs(exact.expected_bs_frac(solved(params, k)) - ref)
        assert err <= 2 * lam**k


def test_doubling_default_cap_is_stable():
    for lam in (0.5, 0.8, 0.9):
        params = fed(lam, 2)
        k = exact.default_queue_cap(params)
        a = exact.expected_bs_frac(solved(params, k))
        b = exact.expected_bs_frac(solved(params, 2 * k))
        assert abs(a - b) < 1e-6


def test_generator_matches_simulator_step():
    params = fed(0.6, 3, 0.4, 0.3)
    rng = np.random.default_rng(11)
    state = SystemState(2, 1, 0, 3)
    expected = {t.as_tuple(): r for r, t in transitions(state, params)}
    total = sum(expected.values())
    counts: dict = {}
    draws = 40000
    for _ in range(draws):
        nxt, _ = step(state, params, rng)
        counts[nxt.as_tuple()] = counts.get(nxt.as_tuple(), 0) + 1
    assert set(counts) == set(expected)
    for target, rate in expected.items():
        prob = rate / total
        se = math.sqrt(prob * (1 - prob) / draws)
        assert abs(counts[target] / draws - prob) < 5 * se
