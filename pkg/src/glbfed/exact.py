"""Exact stationary law of the lumped chain for small federations.

The job count is truncated at ``N + queue_cap`` (arrivals there are blocked);
the M/M/N tail is geometric so the error decays like ``rho ** queue_cap``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.stats import binom

from .model import FederationParams, GlbfedError, SystemState, is_legal_state
from .simulator import transitions

MAX_STATES = 10**6


class StateSpaceTooLarge(GlbfedError):
    pass


class SingularSystem(GlbfedError):
    pass


def default_queue_cap(params: FederationParams) -> int:
    return max(30, math.ceil(math.log(1e-12) / math.log(params.rho)))


def enumerate_states(n: int, queue_cap: int) -> list[tuple[int, int, int]]:
    states = []
    for j in range(n + queue_cap + 1):
        for s in range(n + 1):
            for b in range(min(s, j, n) + 1):
                if is_legal_state(j, s, b, n):
                    states.append((j, s, b))
    return states


def count_states(n: int, queue_cap: int) -> int:
    # J >= N pins B_S = S, so each such J contributes N + 1 states
    below = sum(1 for j in range(min(n, n + queue_cap + 1)) for s in range(n + 1)
                for b in range(min(s, j) + 1) if j - b <= n - s)
    return below + (queue_cap + 1) * (n + 1)


@dataclass
class TruncatedChain:
    params: FederationParams
    queue_cap: int
    states: list[tuple[int, int, int]]
    index: dict[tuple[int, int, int], int]
    generator: sparse.csr_matrix
    pi: Optional[np.ndarray] = field(default=None, repr=False)
    residual: Optional[float] = None

    @property
    def n(self) -> int:
        return self.params.n

    def _arrays(self):
        a = np.asarray(self.states)
        return a[:, 0], a[:, 1], a[:, 2]


def build(params: FederationParams, queue_cap: Optional[int] = None) -> TruncatedChain:
    """Assemble the sparse generator over every legal state with ``J <= N + queue_cap``."""
    n = params.n
    if n is None:
        raise GlbfedError("exact solve needs params.n")
    if queue_cap is None:
        queue_cap = default_queue_cap(params)
    if queue_cap < 0:
        raise GlbfedError("queue_cap must be >= 0")
    size = count_states(n, queue_cap)
    if size > MAX_STATES:
        raise StateSpaceTooLarge(f"{size} states exceeds the limit of {MAX_STATES}")
    states = enumerate_states(n, queue_cap)
    index = {st: i for i, st in enumerate(states)}
    rows, cols, vals = [], [], []
    for i, st in enumerate(states):
        out = 0.0
        for rate, nxt in transitions(SystemState(*st, n), params):
            if nxt.jobs > n + queue_cap:
                continue
            rows.append(i)
            cols.append(index[nxt.as_tuple()])
            vals.append(rate)
            out += rate
        rows.append(i)
        cols.append(i)
        vals.append(-out)
    q = sparse.csr_matrix((vals, (rows, cols)), shape=(len(states), len(states)))
    return TruncatedChain(params, queue_cap, states, index, q)


def stationary(chain: TruncatedChain) -> np.ndarray:
    """Solve ``pi Q = 0`` with ``sum(pi) = 1``; caches the result on ``chain``."""
    q = chain.generator
    a = q.T.tolil()
    a[0, :] = 1.0
    rhs = np.zeros(q.shape[0])
    rhs[0] = 1.0
    pi = spsolve(a.tocsc(), rhs)
    if not np.all(np.isfinite(pi)):
        raise SingularSystem("balance equations are singular")
    # one step of iterative refinement tightens the residual
    corr = spsolve(a.tocsc(), rhs - a @ pi)
    pi = pi + corr
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    chain.pi = pi
    chain.residual = float(np.max(np.abs(pi @ q)))
    return pi


def _pi(chain: TruncatedChain) -> np.ndarray:
    return chain.pi if chain.pi is not None else stationary(chain)


def expected_bs_frac(chain: TruncatedChain) -> float:
    _, _, b = chain._arrays()
    return float(_pi(chain) @ b) / chain.n


def job_marginal(chain: TruncatedChain) -> np.ndarray:
    j, _, _ = chain._arrays()
    return np.bincount(j, weights=_pi(chain), minlength=chain.n + chain.queue_cap + 1)


def sunny_marginal(chain: TruncatedChain) -> np.ndarray:
    _, s, _ = chain._arrays()
    return np.bincount(s, weights=_pi(chain), minlength=chain.n + 1)


def erlang_marginals(params: FederationParams, queue_cap: int) -> np.ndarray:
    """Law of ``J`` for the M/M/N queue truncated at ``N + queue_cap``."""
    n = params.n
    size = n + queue_cap + 1
    logp = np.zeros(size)
    for k in range(1, size):
        logp[k] = logp[k - 1] + math.log(n * params.lam) - math.log(params.mu * min(k, n))
    p = np.exp(logp - logp.max())
    return p / p.sum()


def binomial_marginal(params: FederationParams) -> np.ndarray:
    return binom.pmf(np.arange(params.n + 1), params.n, params.s_star)


def erlang_c(n: int, rho: float) -> float:
    """Probability that an arrival waits in an M/M/N queue with per-server load ``rho``."""
    a = n * rho
    b = 1.0
    for k in range(1, n + 1):
        b = a * b / (k + a * b)
    return b / (1.0 - rho * (1.0 - b))


def mmn_mean_jobs(params: FederationParams) -> float:
    """Mean number in system of the untruncated M/M/N queue."""
    rho = params.rho
    return params.n * rho + erlang_c(params.n, rho) * rho / (1.0 - rho)
