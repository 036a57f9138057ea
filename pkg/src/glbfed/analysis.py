"""Energy costs of the federation and of correlated renewables.

Grid energy costs 1 per unit time and renewable energy costs 0.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .fluid import fixed_point
from .model import FederationParams, GlbfedError, ModulatedParams


class DegenerateWeather(GlbfedError):
    pass


@dataclass(frozen=True)
class CostReport:
    c_f: float
    c_nf: float
    relative_reduction: float
    b_s_star: float
    s_star: float
    rho: float


def _report(rho: float, s_star: float, b_s_star: float) -> CostReport:
    c_f = rho - b_s_star
    c_nf = rho * (1.0 - s_star)
    if c_nf <= 0:
        # always sunny: neither setup pays for grid energy
        return CostReport(c_f, c_nf, 1.0, b_s_star, s_star, rho)
    return CostReport(c_f, c_nf, (c_nf - c_f) / c_nf, b_s_star, s_star, rho)


def costs(params: FederationParams) -> CostReport:
    return _report(params.rho, params.s_star, fixed_point(params).b_s_star)


def federation_inequality(params: FederationParams) -> tuple[float, float, bool]:
    """``(b_s_star, rho * s_star, b_s_star > rho * s_star)``."""
    lhs = fixed_point(params).b_s_star
    rhs = params.rho * params.s_star
    return lhs, rhs, lhs > rhs


def eta(params: ModulatedParams) -> float:
    """Correlation between two sources' sunny indicators induced by the weather."""
    pg, pb = params.pi_g, params.pi_b
    sg, sb = params.s_star_g, params.s_star_b
    mean = sg * pg + sb * pb
    denom = mean * (1.0 - mean)
    if denom == 0:
        raise DegenerateWeather(f"overall sunny fraction {mean} leaves eta undefined")
    return (sg * sg * pg + sb * sb * pb - mean * mean) / denom


SLOW_RATIO = 0.01


def modulated_bs_star(params: ModulatedParams) -> float:
    """Weather-weighted ``b_s_star``, valid when the weather changes slowly."""
    fast = [r for r in (params.nu_sg, params.nu_cg, params.nu_sb, params.nu_cb, params.mu) if r > 0]
    slow = max(params.nu_g, params.nu_b)
    if slow > SLOW_RATIO * min(fast):
        warnings.warn(f"weather rate {slow} is not much slower than {min(fast)}; "
                      "weighted b_s_star is only approximate", stacklevel=2)
    return (params.pi_g * fixed_point(params.good()).b_s_star
            + params.pi_b * fixed_point(params.bad()).b_s_star)


def modulated_costs(params: ModulatedParams) -> CostReport:
    return _report(params.rho, params.s_star, modulated_bs_star(params))


def variability(p: float, n: int) -> float:
    """Coefficient of variation of the number of ``n`` independent units that are on w.p. ``p``."""
    if not 0 < p < 1:
        raise GlbfedError("p must lie in (0, 1)")
    if n < 1:
        raise GlbfedError("n must be >= 1")
    return math.sqrt((1.0 - p) / (p * n))


# Curves for the cost-reduction figures

def speed_params(rho: float, ratio: float, s_star: float = 0.5, mu: float = 1.0) -> FederationParams:
    """Rates with ``(nu_s + nu_c) / mu = ratio`` at fixed ``s_star``."""
    total = ratio * mu
    return FederationParams(rho * mu, mu, s_star * total, (1.0 - s_star) * total)


def eta_params(rho: float, eta_value: float, rate_sum: float = 0.002, nu_weather: float = 1e-5,
               mu: float = 1.0, n=None) -> ModulatedParams:
    """Equal-weight weather with ``s_star_b = 1 - s_star_g`` chosen to hit ``eta_value``.

    With equal weights and overall sunny fraction 1/2, eta equals
    ``(2 s_star_g - 1) ** 2``.
    """
    if not 0 <= eta_value <= 1:
        raise GlbfedError("eta must lie in [0, 1]")
    sg = 0.5 + 0.5 * math.sqrt(eta_value)
    sb = 1.0 - sg
    return ModulatedParams(rho * mu, mu, nu_weather, nu_weather, sg * rate_sum,
                           (1.0 - sg) * rate_sum, sb * rate_sum, (1.0 - sb) * rate_sum, n)


def speed_reduction(rho: float, ratio: float, s_star: float = 0.5) -> float:
    return costs(speed_params(rho, ratio, s_star)).relative_reduction


def eta_reduction(rho: float, eta_value: float, **kwargs) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return modulated_costs(eta_params(rho, eta_value, **kwargs)).relative_reduction
