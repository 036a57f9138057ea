"""Parameters and state types for a federation of renewable-powered datacenters.

All rates are per unit time. The usual normalization is ``mu = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional


class GlbfedError(ValueError):
    """Base class for invalid inputs rejected by this package."""


class UnstableLoad(GlbfedError):
    pass


class NonpositiveRate(GlbfedError):
    pass


class DegenerateRenewables(GlbfedError):
    pass


class InvalidState(GlbfedError):
    pass


def _check_rate(name: str, value: float, strict: bool) -> None:
    if not math.isfinite(value):
        raise NonpositiveRate(f"{name} must be finite, got {value!r}")
    if strict and value <= 0:
        raise NonpositiveRate(f"{name} must be > 0, got {value!r}")
    if value < 0:
        raise NonpositiveRate(f"{name} must be >= 0, got {value!r}")


def _check_n(n: Optional[int]) -> None:
    if n is None:
        return
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise GlbfedError(f"n must be a positive integer, got {n!r}")


def _check_load(lam: float, mu: float) -> None:
    _check_rate("lam", lam, strict=True)
    _check_rate("mu", mu, strict=True)
    if lam / mu >= 1.0:
        raise UnstableLoad(f"rho = lam/mu = {lam / mu!r} must be < 1")


@dataclass(frozen=True)
class FederationParams:
    """Rates of one homogeneous federation.

    ``lam`` is the per-datacenter arrival rate (the federation sees ``n * lam``),
    ``nu_s`` the cloudy-to-sunny rate and ``nu_c`` the sunny-to-cloudy rate.
    ``n`` may be left out for fluid-only computations.
    """

    lam: float
    mu: float
    nu_s: float
    nu_c: float
    n: Optional[int] = None

    def __post_init__(self):
        _check_load(self.lam, self.mu)
        _check_rate("nu_s", self.nu_s, strict=False)
        _check_rate("nu_c", self.nu_c, strict=False)
        if self.nu_s + self.nu_c <= 0:
            raise DegenerateRenewables("nu_s + nu_c must be > 0")
        _check_n(self.n)
        if self.n is not None:
            object.__setattr__(self, "n", int(self.n))

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    @property
    def s_star(self) -> float:
        return self.nu_s / (self.nu_s + self.nu_c)

    def with_n(self, n: int) -> "FederationParams":
        return FederationParams(self.lam, self.mu, self.nu_s, self.nu_c, n)


@dataclass(frozen=True)
class ModulatedParams:
    """Federation whose renewable rates follow a shared good/bad weather chain.

    ``nu_g`` is the bad-to-good rate and ``nu_b`` the good-to-bad rate of the
    weather chain. ``nu_sg, nu_cg`` (``nu_sb, nu_cb``) are the renewable
    rates while the weather is good (bad).
    """

    lam: float
    mu: float
    nu_g: float
    nu_b: float
    nu_sg: float
    nu_cg: float
    nu_sb: float
    nu_cb: float
    n: Optional[int] = None

    def __post_init__(self):
        _check_load(self.lam, self.mu)
        for name in ("nu_g", "nu_b", "nu_sg", "nu_cg", "nu_sb", "nu_cb"):
            _check_rate(name, getattr(self, name), strict=False)
        if self.nu_g + self.nu_b <= 0:
            raise DegenerateRenewables("nu_g + nu_b must be > 0")
        if self.nu_sg + self.nu_cg <= 0 or self.nu_sb + self.nu_cb <= 0:
            raise DegenerateRenewables("renewable rates in each weather state must not both be 0")
        if self.s_star_g < self.s_star_b:
            raise GlbfedError("good weather must have s_star_g >= s_star_b")
        _check_n(self.n)
        if self.n is not None:
            object.__setattr__(self, "n", int(self.n))

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    @property
    def s_star_g(self) -> float:
        return self.nu_sg / (self.nu_sg + self.nu_cg)

    @property
    def s_star_b(self) -> float:
        return self.nu_sb / (self.nu_sb + self.nu_cb)

    @property
    def pi_g(self) -> float:
        return self.nu_g / (self.nu_g + self.nu_b)

    @property
    def pi_b(self) -> float:
        return self.nu_b / (self.nu_g + self.nu_b)

    @property
    def s_star(self) -> float:
        """Long-run sunny fraction averaged over the weather."""
        return self.pi_g * self.s_star_g + self.pi_b * self.s_star_b

    def good(self) -> FederationParams:
        return FederationParams(self.lam, self.mu, self.nu_sg, self.nu_cg, self.n)

    def bad(self) -> FederationParams:
        return FederationParams(self.lam, self.mu, self.nu_sb, self.nu_cb, self.n)

    def with_n(self, n: int) -> "ModulatedParams":
        return ModulatedParams(self.lam, self.mu, self.nu_g, self.nu_b, self.nu_sg,
                               self.nu_cg, self.nu_sb, self.nu_cb, n)


def validate(params):
    """Return ``params`` if every invariant holds, else raise.

    Construction already validates, so this re-checks a possibly hand-built
    object by rebuilding it.
    """
    if isinstance(params, FederationParams):
        FederationParams(params.lam, params.mu, params.nu_s, params.nu_c, params.n)
    elif isinstance(params, ModulatedParams):
        params.with_n(params.n)
    else:
        raise TypeError(f"cannot validate {type(params).__name__}")
    return params


def rho(params) -> float:
    return params.lam / params.mu


def s_star(params) -> float:
    return params.s_star


def modulator_weights(params: ModulatedParams) -> tuple[float, float]:
    return params.pi_g, params.pi_b


def is_legal_state(jobs: int, sunny: int, busy_sunny: int, n: int) -> bool:
    """Whether ``(J, S, B_S)`` can occur in a federation of ``n`` datacenters."""
    if jobs < 0 or not 0 <= sunny <= n or busy_sunny < 0:
        return False
    busy = min(jobs, n)
    if busy_sunny > min(sunny, busy):
        return False
    # busy cloudy servers cannot outnumber cloudy servers
    if busy - busy_sunny > n - sunny:
        return False
    if jobs >= n and busy_sunny != sunny:
        return False
    return True


@dataclass(frozen=True)
class SystemState:
    """Integer state of the lumped chain: jobs ``J``, sunny ``S``, busy-and-sunny ``B_S``."""

    jobs: int
    sunny: int
    busy_sunny: int
    n: int

    def __post_init__(self):
        if not is_legal_state(self.jobs, self.sunny, self.busy_sunny, self.n):
            raise InvalidState(
                f"illegal state (J={self.jobs}, S={self.sunny}, B_S={self.busy_sunny}) for N={self.n}")

    @property
    def busy(self) -> int:
        return min(self.jobs, self.n)

    @property
    def queued(self) -> int:
        return max(self.jobs - self.n, 0)

    def as_tuple(self) -> tuple[int, int, int]:
        return self.jobs, self.sunny, self.busy_sunny


@dataclass(frozen=True)
class FluidState:
    j: float
    s: float
    b_s: float

    def __post_init__(self):
        if self.j < 0 or not 0 <= self.s <= 1:
            raise InvalidState(f"fluid state out of range: {self}")
        if not 0 <= self.b_s <= min(self.s, self.j, 1.0):
            raise InvalidState(f"b_s must lie in [0, min(s, j, 1)]: {self}")
