"""Discrete-event simulation of the lumped ``(J, S, B_S)`` chain.

Servers are exchangeable, so the per-server chain collapses to three counts.
Each event is picked by an exponential race over five clocks (six when the
weather chain is active):

==============  ================================
arrival         ``N * lam``
sunny finish    ``mu * B_S``
cloudy finish   ``mu * (min(J, N) - B_S)``
sun -> cloud    ``nu_c * S``
cloud -> sun    ``nu_s * (N - S)``
weather flip    ``nu_b`` in good, ``nu_g`` in bad
==============  ================================

The event loops are compiled with numba; :func:`step` exposes the same
transition logic to Python for tests and the exact solver.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numba import njit
from scipy import stats

from .model import FederationParams, GlbfedError, ModulatedParams, SystemState

ARRIVAL, SUNNY_DEPARTURE, CLOUDY_DEPARTURE, TO_CLOUDY, TO_SUNNY, WEATHER_FLIP = range(6)
GOOD, BAD = 0, 1

MIN_EVENTS = 1000


class HorizonTooShort(GlbfedError):
    pass


@njit(cache=True, nogil=True)
def _total_rate(n, lam, mu, nu_s, nu_c, nu_w, jobs, sunny, bs):
    busy = min(jobs, n)
    return n * lam + mu * busy + nu_c * sunny + nu_s * (n - sunny) + nu_w


@njit(cache=True, nogil=True)
def _apply(n, lam, mu, nu_s, nu_c, nu_w, jobs, sunny, bs, target):
    """Fire the clock selected by ``target`` in ``[0, total_rate)``.

    Returns ``(kind, jobs, sunny, bs)``. The position of ``target`` inside
    the chosen clock's slice is reused as the uniform that decides whether a
    flipping server is busy.
    """
    busy = min(jobs, n)
    r = n * lam
    if target < r:
        if sunny > bs:
            bs += 1
        return ARRIVAL, jobs + 1, sunny, bs
    c = r
    r = mu * bs
    if target < c + r:
        if jobs <= n:
            bs -= 1
        return SUNNY_DEPARTURE, jobs - 1, sunny, bs
    c += r
    r = mu * (busy - bs)
    if target < c + r:
        return CLOUDY_DEPARTURE, jobs - 1, sunny, bs
    c += r
    r = nu_c * sunny
    if target < c + r:
        # flipped server is busy with probability bs / sunny
        if (target - c) * sunny < bs * r:
            bs -= 1
        return TO_CLOUDY, jobs, sunny - 1, bs
    c += r
    r = nu_s * (n - sunny)
    if target < c + r or nu_w <= 0.0:
        if r <= 0.0:
            # rounding pushed target past the last live clock; arrivals always have rate > 0
            if sunny > bs:
                bs += 1
            return ARRIVAL, jobs + 1, sunny, bs
        u = min((target - c) / r, 1.0)
        # flipped server is busy with probability (busy - bs) / (n - sunny)
        if u * (n - sunny) < busy - bs:
            bs += 1
        return TO_SUNNY, jobs, sunny + 1, bs
    return WEATHER_FLIP, jobs, sunny, bs


@njit(cache=True, nogil=True)
def _legal(n, jobs, sunny, bs):
    busy = min(jobs, n)
    if jobs < 0 or sunny < 0 or sunny > n or bs < 0:
        return False
    if bs > min(sunny, busy) or busy - bs > n - sunny:
        return False
    if jobs >= n and bs != sunny:
        return False
    return True


BLOCK = 1 << 18


@njit(cache=True, nogil=True)
def _run_block(n, lam, mu, nu_s2, nu_c2, nu_g, nu_b, st, clock, t_end, warmup,
               exps, unifs, acc, acc_bs_w, time_w, counters, check):
    """Advance one replication with pre-drawn variates; returns True once ``t_end`` is hit.

    ``st`` holds ``(J, S, B_S, weather)`` and ``clock[0]`` the time; both are
    updated in place, as are the time integrals over ``[warmup, t_end]`` and
    ``counters = (events after warmup, invariant violations)``.
    """
    jobs, sunny, bs, weather = st[0], st[1], st[2], st[3]
    t = clock[0]
    done = False
    for i in range(len(exps)):
        nu_s = nu_s2[weather]
        nu_c = nu_c2[weather]
        nu_w = nu_b if weather == GOOD else nu_g
        total = _total_rate(n, lam, mu, nu_s, nu_c, nu_w, jobs, sunny, bs)
        h = exps[i] / total
        lo = max(t, warmup)
        hi = min(t + h, t_end)
        if hi > lo:
            w = hi - lo
            acc[0] += w * bs
            acc[1] += w * sunny
            acc[2] += w * jobs
            acc[3] += w * min(jobs, n)
            acc_bs_w[weather] += w * bs
            time_w[weather] += w
        t += h
        if t >= t_end:
            done = True
            break
        kind, jobs, sunny, bs = _apply(n, lam, mu, nu_s, nu_c, nu_w, jobs, sunny, bs,
                                       unifs[i] * total)
        if kind == WEATHER_FLIP:
            weather = 1 - weather
        if t >= warmup:
            counters[0] += 1
        if check and not _legal(n, jobs, sunny, bs):
            counters[1] += 1
    st[0], st[1], st[2], st[3] = jobs, sunny, bs, weather
    clock[0] = t
    return done


@njit(cache=True, nogil=True)
def _trace_block(n, lam, mu, nu_s2, nu_c2, nu_g, nu_b, st, clock, sample_dt, out, pos,
                 exps, unifs):
    """Fill ``out`` from row ``pos[0]`` on; returns True once every row is written."""
    jobs, sunny, bs, weather = st[0], st[1], st[2], st[3]
    t = clock[0]
    k = pos[0]
    n_samples = out.shape[0]
    for i in range(len(exps)):
        if k >= n_samples:
            break
        nu_s = nu_s2[weather]
        nu_c = nu_c2[weather]
        nu_w = nu_b if weather == GOOD else nu_g
        total = _total_rate(n, lam, mu, nu_s, nu_c, nu_w, jobs, sunny, bs)
        t_next = t + exps[i] / total
        while k < n_samples and k * sample_dt < t_next:
            out[k, 0] = jobs
            out[k, 1] = sunny
            out[k, 2] = bs
            out[k, 3] = weather
            k += 1
        t = t_next
        kind, jobs, sunny, bs = _apply(n, lam, mu, nu_s, nu_c, nu_w, jobs, sunny, bs,
                                       unifs[i] * total)
        if kind == WEATHER_FLIP:
            weather = 1 - weather
        st[4] += 1
    st[0], st[1], st[2], st[3] = jobs, sunny, bs, weather
    clock[0] = t
    pos[0] = k
    return k >= n_samples


def _rates(params) -> tuple[float, float, np.ndarray, np.ndarray, float, float]:
    if isinstance(params, ModulatedParams):
        return (params.lam, params.mu, np.array([params.nu_sg, params.nu_sb]),
                np.array([params.nu_cg, params.nu_cb]), params.nu_g, params.nu_b)
    return (params.lam, params.mu, np.array([params.nu_s, params.nu_s]),
            np.array([params.nu_c, params.nu_c]), 0.0, 0.0)


def step(state: SystemState, params: FederationParams, rng: np.random.Generator):
    """Sample the next transition of the chain from ``state``.

    Returns ``(new_state, holding_time)``.
    """
    new_state, _, h = _step(state, GOOD, params, rng)
    return new_state, h


def step_modulated(state: SystemState, weather: int, params: ModulatedParams,
                   rng: np.random.Generator):
    """As :func:`step` with the weather chain; returns ``(state, weather, holding_time)``."""
    return _step(state, weather, params, rng)


def _step(state, weather, params, rng):
    n = state.n
    lam, mu, nu_s2, nu_c2, nu_g, nu_b = _rates(params)
    nu_s, nu_c = float(nu_s2[weather]), float(nu_c2[weather])
    nu_w = nu_b if weather == GOOD else nu_g
    j, s, b = state.as_tuple()
    total = _total_rate(n, lam, mu, nu_s, nu_c, nu_w, j, s, b)
    h = rng.exponential(1.0 / total)
    kind, j, s, b = _apply(n, lam, mu, nu_s, nu_c, nu_w, j, s, b, rng.random() * total)
    if kind == WEATHER_FLIP:
        weather = 1 - weather
    return SystemState(int(j), int(s), int(b), n), weather, h


def transitions(state: SystemState, params: FederationParams) -> list[tuple[float, SystemState]]:
    """All ``(rate, next_state)`` pairs out of ``state`` (rates of equal targets merged)."""
    n = state.n
    j, s, b = state.as_tuple()
    busy = state.busy
    out: dict[tuple[int, int, int], float] = {}

    def add(rate, target):
        if rate > 0:
            out[target] = out.get(target, 0.0) + rate

    add(n * params.lam, (j + 1, s, b + 1 if s > b else b))
    add(params.mu * b, (j - 1, s, b if j > n else b - 1))
    add(params.mu * (busy - b), (j - 1, s, b))
    if s > 0:
        add(params.nu_c * b, (j, s - 1, b - 1))
        add(params.nu_c * (s - b), (j, s - 1, b))
    if s < n:
        add(params.nu_s * (busy - b), (j, s + 1, b + 1))
        add(params.nu_s * (n - s - (busy - b)), (j, s + 1, b))
    return [(rate, SystemState(*target, n)) for target, rate in out.items()]


InitialState = Union[SystemState, str]


@dataclass(frozen=True)
class SimConfig:
    """Run settings for :func:`estimate_stationary` and :func:`trace`.

    ``warmup`` defaults to ten times the slowest mixing time and ``t_end`` to
    a hundred warmups. ``initial_weather`` of ``None`` draws the weather from
    its stationary law.
    """

    params: Union[FederationParams, ModulatedParams]
    t_end: Optional[float] = None
    warmup: Optional[float] = None
    replications: int = 20
    seed: int = 0
    initial_state: InitialState = "stationary-marginals"
    initial_weather: Optional[int] = None

    def __post_init__(self):
        if self.params.n is None:
            raise GlbfedError("simulation needs params.n")
        if self.warmup is None:
            object.__setattr__(self, "warmup", default_warmup(self.params))
        if self.t_end is None:
            object.__setattr__(self, "t_end", 100.0 * self.warmup)
        if not 0 <= self.warmup < self.t_end:
            raise GlbfedError(f"need 0 <= warmup < t_end, got {self.warmup}, {self.t_end}")
        if self.replications < 1:
            raise GlbfedError("replications must be >= 1")
        if isinstance(self.initial_state, str):
            if self.initial_state != "stationary-marginals":
                raise GlbfedError(f"unknown initial state {self.initial_state!r}")
        elif self.initial_state.n != self.params.n:
            raise GlbfedError("initial_state.n does not match params.n")
        if self.initial_weather not in (None, GOOD, BAD):
            raise GlbfedError("initial_weather must be 0 (good), 1 (bad) or None")


def default_warmup(params) -> float:
    scales = [1.0 / params.mu]
    if isinstance(params, ModulatedParams):
        scales += [1.0 / (params.nu_sg + params.nu_cg), 1.0 / (params.nu_sb + params.nu_cb),
                   1.0 / (params.nu_g + params.nu_b)]
    else:
        scales.append(1.0 / (params.nu_s + params.nu_c))
    return 10.0 * max(scales)


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent PCG64 stream for replication ``rep``; no dependence on run order."""
    return np.random.default_rng(np.random.SeedSequence([seed % 2**64, rep]))


def _variates(rng: np.random.Generator):
    return rng.standard_exponential(BLOCK), rng.random(BLOCK)


def _initial(config: SimConfig, rng: np.random.Generator) -> tuple[int, int, int, int]:
    params = config.params
    if config.initial_weather is not None:
        weather = config.initial_weather
    elif isinstance(params, ModulatedParams):
        weather = GOOD if rng.random() < params.pi_g else BAD
    else:
        weather = GOOD
    if isinstance(config.initial_state, SystemState):
        return (*config.initial_state.as_tuple(), weather)
    n = params.n
    if isinstance(params, ModulatedParams):
        s_star = params.s_star_g if weather == GOOD else params.s_star_b
    else:
        s_star = params.s_star
    jobs = int(round(params.rho * n))
    sunny = int(rng.binomial(n, s_star))
    return jobs, sunny, min(jobs, sunny), weather


@dataclass(frozen=True)
class StationaryEstimate:
    """Time averages over ``[warmup, t_end]``, averaged over replications.

    ``ci_*`` are 95% Student-t half-widths across replication means. For the
    modulated chain ``weighted_bs_frac`` post-stratifies B_S/N on the weather
    state and reweights by the stationary weather law.
    """

    mean_bs_frac: float
    mean_s_frac: float
    mean_j_frac: float
    mean_busy_frac: float
    ci_halfwidth_bs: float
    ci_halfwidth_s: float
    ci_halfwidth_j: float
    ci_halfwidth_busy: float
    events: int
    replications: int
    weighted_bs_frac: Optional[float] = None
    ci_halfwidth_weighted_bs: Optional[float] = None
    invariant_violations: int = 0
    rep_bs_frac: tuple = field(default=(), repr=False)


def _halfwidth(x: np.ndarray) -> float:
    if len(x) < 2:
        return math.inf
    return float(stats.t.ppf(0.975, len(x) - 1) * x.std(ddof=1) / math.sqrt(len(x)))


def _weighted(params: ModulatedParams, bs_w: np.ndarray, time_w: np.ndarray, n: int):
    pi = np.array([params.pi_g, params.pi_b])

    def pooled(bs, tm):
        if np.any(tm.sum(axis=0) <= 0):
            return math.nan
        return float(pi @ (bs.sum(axis=0) / tm.sum(axis=0)) / n)

    est = pooled(bs_w, time_w)
    r = len(bs_w)
    if r < 2:
        return est, math.inf
    # leave-one-out jackknife over replications
    loo = np.array([pooled(np.delete(bs_w, i, 0), np.delete(time_w, i, 0)) for i in range(r)])
    hw = stats.t.ppf(0.975, r - 1) * math.sqrt((r - 1) / r * np.sum((loo - loo.mean()) ** 2))
    return est, float(hw)


def estimate_stationary(config: SimConfig, check_invariants: bool = False) -> StationaryEstimate:
    """Run ``config.replications`` independent replications and pool them."""
    params = config.params
    n = params.n
    lam, mu, nu_s2, nu_c2, nu_g, nu_b = _rates(params)
    window = config.t_end - config.warmup
    means = np.empty((config.replications, 4))
    bs_w = np.empty((config.replications, 2))
    time_w = np.empty((config.replications, 2))
    total_events = 0
    violations = 0
    for rep in range(config.replications):
        rng = replication_rng(config.seed, rep)
        st = np.array(_initial(config, rng), dtype=np.int64)
        clock = np.zeros(1)
        acc, acc_bs_w, tw = np.zeros(4), np.zeros(2), np.zeros(2)
        counters = np.zeros(2, dtype=np.int64)
        done = False
        while not done:
            done = _run_block(n, lam, mu, nu_s2, nu_c2, nu_g, nu_b, st, clock,
                              float(config.t_end), float(config.warmup), *_variates(rng),
                              acc, acc_bs_w, tw, counters, check_invariants)
        events, viol = int(counters[0]), int(counters[1])
        if events < MIN_EVENTS:
            raise HorizonTooShort(
                f"replication {rep} saw {events} events after warmup; need >= {MIN_EVENTS}")
        means[rep] = acc / (window * n)
        bs_w[rep] = acc_bs_w
        time_w[rep] = tw
        total_events += events
        violations += viol
    mean = means.mean(axis=0)
    hw = [_halfwidth(means[:, k]) for k in range(4)]
    weighted = weighted_hw = None
    if isinstance(params, ModulatedParams):
        weighted, weighted_hw = _weighted(params, bs_w, time_w, n)
        if math.isnan(weighted):
            warnings.warn("a weather state was never visited; weighted estimate unavailable")
    return StationaryEstimate(
        mean_bs_frac=float(mean[0]), mean_s_frac=float(mean[1]), mean_j_frac=float(mean[2]),
        mean_busy_frac=float(mean[3]), ci_halfwidth_bs=hw[0], ci_halfwidth_s=hw[1],
        ci_halfwidth_j=hw[2], ci_halfwidth_busy=hw[3], events=total_events,
        replications=config.replications, weighted_bs_frac=weighted,
        ci_halfwidth_weighted_bs=weighted_hw, invariant_violations=violations,
        rep_bs_frac=tuple(float(x) for x in means[:, 0]))


@dataclass(frozen=True)
class Trace:
    """Uniformly sampled single-replication path, scaled by N."""

    t: np.ndarray
    j: np.ndarray
    s: np.ndarray
    b_s: np.ndarray
    weather: np.ndarray
    counts: np.ndarray = field(repr=False)
    events: int = 0


def trace(config: SimConfig, sample_dt: float, replication: int = 0) -> Trace:
    """Sample replication ``replication`` on the grid ``0, dt, 2 dt, ... <= t_end``."""
    if not sample_dt > 0:
        raise GlbfedError("sample_dt must be > 0")
    params = config.params
    n = params.n
    lam, mu, nu_s2, nu_c2, nu_g, nu_b = _rates(params)
    n_samples = int(math.floor(config.t_end / sample_dt + 1e-9)) + 1
    rng = replication_rng(config.seed, replication)
    st = np.array(_initial(config, rng) + (0,), dtype=np.int64)
    clock = np.zeros(1)
    counts = np.empty((n_samples, 4), dtype=np.int64)
    pos = np.zeros(1, dtype=np.int64)
    while not _trace_block(n, lam, mu, nu_s2, nu_c2, nu_g, nu_b, st, clock, float(sample_dt),
                           counts, pos, *_variates(rng)):
        pass
    events = int(st[4])
    if events < MIN_EVENTS:
        raise HorizonTooShort(f"trace saw {events} events; need >= {MIN_EVENTS}")
    return Trace(t=np.arange(n_samples) * sample_dt, j=counts[:, 0] / n, s=counts[:, 1] / n,
                 b_s=counts[:, 2] / n, weather=counts[:, 3].copy(), counts=counts, events=events)
