"""Mean-field limit of the federation.

``j`` and ``s`` follow linear ODEs. The busy-and-sunny fraction ``b_s`` has a
drift that jumps by ``lam`` on the surface ``b_s = s`` (arrivals stop finding
sunny idle servers), so it solves a differential inclusion. The integrator
below follows one canonical solution: explicit Euler off the surface, sliding
along it while the convexified drift admits ``ds/dt``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import FederationParams, FluidState, GlbfedError


class DomainViolation(GlbfedError):
    pass


class StepTooLarge(GlbfedError):
    pass


class Regime(enum.Enum):
    RENEWABLES_LIMITED = "RenewablesLimited"
    LOAD_LIMITED = "LoadLimited"
    BOUNDARY = "Boundary"


def drift_j(j: float, params: FederationParams) -> float:
    if j <= 1.0:
        return params.lam - params.mu * j
    return params.lam - params.mu


def drift_s(s: float, params: FederationParams) -> float:
    return params.nu_s - (params.nu_s + params.nu_c) * s


def _g_on_surface(j, s, lam, mu, nu_s, nu_c):
    return -(nu_s + nu_c + mu) * s + nu_s * min(j, 1.0)


def drift_bs(j: float, s: float, b_s: float, params: FederationParams):
    """Drift of ``b_s``: a float below the surface, a ``(low, high)`` interval on it."""
    p = params
    if b_s > s:
        raise DomainViolation(f"b_s={b_s} exceeds s={s}")
    if b_s < s:
        return p.lam - (p.nu_s + p.nu_c + p.mu) * b_s + p.nu_s * min(j, 1.0)
    low = _g_on_surface(j, s, p.lam, p.mu, p.nu_s, p.nu_c)
    return low, low + p.lam


@njit(cache=True, nogil=True)
def _euler(j, s, b, lam, mu, nu_s, nu_c, dt, n_steps, every):
    n_out = n_steps // every + 1 + (1 if n_steps % every else 0)
    out = np.empty((n_out, 4))
    out[0, 0] = 0.0
    out[0, 1] = j
    out[0, 2] = s
    out[0, 3] = b
    k = 1
    rate = nu_s + nu_c + mu
    for i in range(1, n_steps + 1):
        busy = min(j, 1.0)
        dj = lam - mu * busy
        ds = nu_s - (nu_s + nu_c) * s
        if b < s:
            db = lam - rate * b + nu_s * busy
            b_new = b + dt * db
        else:
            upper = lam - rate * s + nu_s * busy
            if upper < ds:
                # interior branch falls behind s: leave the surface
                b_new = b + dt * upper
            else:
                b_new = s + dt * ds
        j = j + dt * dj
        s = s + dt * ds
        b = min(max(b_new, 0.0), s, min(j, 1.0))
        if i % every == 0 or i == n_steps:
            out[k, 0] = i * dt
            out[k, 1] = j
            out[k, 2] = s
            out[k, 3] = b
            k += 1
    return out


@dataclass(frozen=True)
class FluidTrajectory:
    grid: np.ndarray
    j: np.ndarray
    s: np.ndarray
    b_s: np.ndarray
    params: FederationParams

    @property
    def states(self) -> list[FluidState]:
        return [FluidState(*x) for x in zip(self.j, self.s, self.b_s)]

    @property
    def final(self) -> FluidState:
        return FluidState(float(self.j[-1]), float(self.s[-1]), float(self.b_s[-1]))


def max_dt(params: FederationParams) -> float:
    return 0.1 / (params.nu_s + params.nu_c + params.mu)


def default_dt(params: FederationParams) -> float:
    return 0.01 / (params.nu_s + params.nu_c + params.mu)


def default_horizon(params: FederationParams) -> float:
    return 50.0 * max(1.0 / params.mu, 1.0 / (params.nu_s + params.nu_c))


def integrate(initial: FluidState, params: FederationParams, t_end: float | None = None,
              dt: float | None = None, every: int = 1) -> FluidTrajectory:
    """Integrate ``(j, s, b_s)`` from ``initial`` up to ``t_end``.

    The step is shrunk so that a whole number of steps reaches ``t_end``.
    Only every ``every``-th step (and the last) is kept in the trajectory.
    """
    if t_end is None:
        t_end = default_horizon(params)
    if dt is None:
        dt = default_dt(params)
    if dt <= 0 or dt > max_dt(params) * (1 + 1e-12):
        raise StepTooLarge(f"dt={dt} must lie in (0, {max_dt(params)}]")
    if t_end <= 0:
        raise GlbfedError("t_end must be > 0")
    if every < 1:
        raise GlbfedError("every must be >= 1")
    n_steps = max(1, math.ceil(t_end / dt - 1e-9))
    h = t_end / n_steps
    out = _euler(float(initial.j), float(initial.s), float(initial.b_s), params.lam,
                 params.mu, params.nu_s, params.nu_c, h, n_steps, int(every))
    return FluidTrajectory(out[:, 0], out[:, 1], out[:, 2], out[:, 3], params)


@dataclass(frozen=True)
class FixedPoint:
    j_star: float
    s_star: float
    b_s_star: float
    regime: Regime


def load_factor(params: FederationParams) -> float:
    """Fraction of a job's service that stays on renewables when started sunny."""
    return (params.nu_s + params.mu) / (params.nu_s + params.nu_c + params.mu)


def fixed_point(params: FederationParams) -> FixedPoint:
    rho = params.rho
    s_star = params.s_star
    load = rho * load_factor(params)
    if math.isclose(s_star, load, rel_tol=1e-12, abs_tol=0.0):
        regime = Regime.BOUNDARY
    elif s_star < load:
        regime = Regime.RENEWABLES_LIMITED
    else:
        regime = Regime.LOAD_LIMITED
    return FixedPoint(rho, s_star, min(s_star, load), regime)


def critical_load(params: FederationParams) -> float:
    """Load at which the two branches of ``b_s_star`` meet."""
    return params.s_star / load_factor(params)
