"""Backlog Markov chain and First Exit Time (FET).

State ``j`` is the number of backlogged users at the end of a frame.  In
one frame ``t`` thinking users and ``b`` backlogged users transmit and
``s`` of the ``t + b`` packets decode, so the backlog moves to
``i = j + t - s``.  Column ``j`` of the transition matrix is the
distribution of ``i``; columns sum to one.

The reduced chain keeps states ``0 .. n_b_abs - 1`` exactly and lumps
everything at or above ``n_b_abs`` into one absorbing state.  The FET is
the absorption time starting from an empty backlog.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import InvalidConfigurationError, KernelCoverageError, SizeGuardError
from .montecarlo import QTable

MAX_STATES = 2000
ADAPTIVE_MAX_DELTA = 60
FALSE_EXIT_HEADROOM = 40
BINOMIAL_TAIL = 1e-13
POISSON_TAIL = 1e-10


@dataclass(frozen=True)
class FiniteChain:
    M: int
    p0: float
    p_r: float

    def __post_init__(self):
        if self.M < 1 or not 0 <= self.p0 <= 1 or not 0 <= self.p_r <= 1:
            raise InvalidConfigurationError("need M >= 1 and probabilities in [0, 1]")


@dataclass(frozen=True)
class InfiniteChain:
    lam: float
    p_r: float

    def __post_init__(self):
        if self.lam < 0 or not 0 <= self.p_r <= 1:
            raise InvalidConfigurationError("need lam >= 0 and p_r in [0, 1]")


def poisson_t_max(lam: float, tol: float = POISSON_TAIL) -> int:
    """Smallest ``t`` with ``P{Poisson(lam) > t} < tol``."""
    if lam == 0:
        return 0
    t = max(int(stats.poisson.isf(tol, lam)) - 1, 0)
    while stats.poisson.sf(t, lam) >= tol:
        t += 1
    return t


def _binomial_range(n: int, p: float) -> np.ndarray:
    if n == 0 or p == 0.0:
        return np.array([1.0])
    if p == 1.0:
        out = np.zeros(n + 1)
        out[n] = 1.0
        return out
    hi = min(n, int(stats.binom.isf(BINOMIAL_TAIL, n, p)) + 1)
    return stats.binom.pmf(np.arange(hi + 1), n, p)


def _column(j: int, arrivals: np.ndarray, p_r: float, q: QTable) -> np.ndarray:
    """Distribution of the next backlog from ``j`` given the fresh-transmitter pmf."""
    retx = stats.binom.pmf(np.arange(j + 1), j, p_r) if j > 0 else np.array([1.0])
    t_hi = arrivals.size - 1
    if j + t_hi > q.n_max:
        raise KernelCoverageError(
            f"transition from backlog {j} needs q(.|n) up to n={j + t_hi}, table stops at {q.n_max}"
        )
    col = np.zeros(j + t_hi + 1)
    for t in range(t_hi + 1):
        w = arrivals[t]
        if w == 0.0:
            continue
        # decoded-count distribution mixed over the retransmitter count b
        s_dist = q.q[: t + j + 1, t : t + j + 1] @ retx
        col[j + t - np.arange(t + j + 1)] += w * s_dist
    return col


def required_n_max(chain: FiniteChain | InfiniteChain, n_b_abs: int) -> int:
    """Largest transmitter count the columns ``0 .. n_b_abs - 1`` touch."""
    if isinstance(chain, InfiniteChain):
        return n_b_abs - 1 + poisson_t_max(chain.lam)
    return max(j + _binomial_range(chain.M - j, chain.p0).size - 1 for j in range(min(n_b_abs, chain.M + 1)))


def transition_column_finite(j: int, chain: FiniteChain, q: QTable) -> np.ndarray:
    if not 0 <= j <= chain.M:
        raise InvalidConfigurationError(f"backlog {j} outside 0..{chain.M}")
    return _column(j, _binomial_range(chain.M - j, chain.p0), chain.p_r, q)


def transition_column_infinite(j: int, chain: InfiniteChain, q: QTable, t_max: int | None = None) -> np.ndarray:
    t_max = poisson_t_max(chain.lam) if t_max is None else t_max
    arrivals = stats.poisson.pmf(np.arange(t_max + 1), chain.lam) if chain.lam > 0 else np.array([1.0])
    return _column(j, arrivals, chain.p_r, q)


def transition_column(j: int, chain: FiniteChain | InfiniteChain, q: QTable) -> np.ndarray:
    if isinstance(chain, FiniteChain):
        return transition_column_finite(j, chain, q)
    return transition_column_infinite(j, chain, q)


def transition_prob_finite(i: int, j: int, M: int, p0: float, p_r: float, q: QTable) -> float:
    """``P{backlog j -> i}`` for a population of ``M`` users."""
    col = transition_column_finite(j, FiniteChain(M, p0, p_r), q)
    return float(col[i]) if 0 <= i < col.size else 0.0


def transition_prob_infinite(i: int, j: int, lam: float, p_r: float, q: QTable, t_max: int | None = None) -> float:
    """``P{backlog j -> i}`` with Poisson(``lam``) fresh arrivals per frame.

    The retransmitter count is Binomial(j, p_r); the printed infinite-population
    formula's ``(1 - p_r)^(N_B - b)`` is read as ``(1 - p_r)^(j - b)``, the
    only choice that normalizes.
    """
    col = transition_column_infinite(j, InfiniteChain(lam, p_r), q, t_max)
    return float(col[i]) if 0 <= i < col.size else 0.0


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Column-stochastic ``p[i, j] = P{j -> i}``; ``absorbing_index`` may be ``None``."""

    p: np.ndarray
    absorbing_index: int | None

    def __post_init__(self):
        if self.p.shape[0] > MAX_STATES:
            raise SizeGuardError(f"{self.p.shape[0]} states exceed the {MAX_STATES}-state limit")

    @property
    def size(self) -> int:
        return self.p.shape[0]

    def drift(self) -> np.ndarray:
        """Expected one-frame backlog change per source state (absorbing state excluded)."""
        idx = np.arange(self.size)
        return idx @ self.p - idx


def full_matrix(chain: FiniteChain, q: QTable) -> TransitionMatrix:
    """Unreduced ``(M+1) x (M+1)`` chain for a finite population."""
    if chain.M + 1 > MAX_STATES:
        raise SizeGuardError(f"{chain.M + 1} states exceed the {MAX_STATES}-state limit")
    p = np.zeros((chain.M + 1, chain.M + 1))
    for j in range(chain.M + 1):
        col = transition_column_finite(j, chain, q)
        p[: col.size, j] = col[: chain.M + 1]
    return TransitionMatrix(p, None)


def reduced_matrix(
    chain: FiniteChain | InfiniteChain,
    n_b_abs: int,
    q: QTable,
    n_b_unstable: float | None = None,
) -> TransitionMatrix:
    """States ``0 .. n_b_abs - 1`` exact plus absorbing state ``n_b_abs``."""
    if n_b_abs < 1:
        raise InvalidConfigurationError("n_b_abs must be >= 1")
    if n_b_unstable is not None and n_b_abs <= n_b_unstable:
        raise InvalidConfigurationError(
            f"absorbing state {n_b_abs} lies inside the stability region (N_B^U = {n_b_unstable:.2f})"
        )
    if isinstance(chain, FiniteChain) and n_b_abs > chain.M:
        raise InvalidConfigurationError(f"absorbing state {n_b_abs} exceeds the population {chain.M}")
    if n_b_abs + 1 > MAX_STATES:
        raise SizeGuardError(f"{n_b_abs + 1} states exceed the {MAX_STATES}-state limit")
    p = np.zeros((n_b_abs + 1, n_b_abs + 1))
    for j in range(n_b_abs):
        col = transition_column(j, chain, q)
        k = min(col.size, n_b_abs)
        p[:k, j] = col[:k]
        p[n_b_abs, j] = max(0.0, 1.0 - p[:n_b_abs, j].sum())
    p[n_b_abs, n_b_abs] = 1.0
    return TransitionMatrix(p, n_b_abs)


def default_n_b_abs(n_b_unstable: float, delta: int = 0) -> int:
    return int(math.ceil(n_b_unstable)) + 1 + int(delta)


def evolve(matrix: TransitionMatrix, b0, frames: int) -> np.ndarray:
    """State distribution after ``frames`` transitions."""
    b = np.asarray(b0, dtype=float)
    if b.shape != (matrix.size,):
        raise InvalidConfigurationError("state vector does not match the matrix")
    for _ in range(frames):
        b = matrix.p @ b
    return b


@dataclass(frozen=True, eq=False)
class FetResult:
    frames: np.ndarray
    cdf: np.ndarray
    mean: float
    truncation_residual: float
    lower_bound: bool

    def rows(self):
        return list(zip(self.frames.tolist(), self.cdf.tolist()))


def fet_distribution(
    matrix: TransitionMatrix,
    start: int = 0,
    horizon: int = 10**6,
    tol: float = 1e-4,
) -> FetResult:
    """Absorption-time cdf and mean, starting from unit mass on ``start``.

    The mean is the sum of survival probabilities; it stops once the
    unabsorbed mass drops below ``tol`` or at ``horizon``.  If the horizon
    is reached first the mean is only a lower bound.
    """
    if horizon < 1:
        raise InvalidConfigurationError("horizon must be >= 1")
    if matrix.absorbing_index is None:
        raise InvalidConfigurationError("FET needs a matrix with an absorbing state")
    a = matrix.absorbing_index
    keep = np.arange(matrix.size) != a
    sub = matrix.p[np.ix_(keep, keep)]
    b = np.zeros(matrix.size - 1)
    b[start if start < a else start - 1] = 1.0
    survival = [1.0]
    for _ in range(horizon):
        b = sub @ b
        alive = float(b.sum())
        survival.append(alive)
        if alive < tol:
            break
    survival = np.clip(np.asarray(survival), 0.0, 1.0)
    cdf = np.maximum.accumulate(1.0 - survival[1:])
    residual = float(survival[-1])
    return FetResult(
        frames=np.arange(1, cdf.size + 1),
        cdf=cdf,
        mean=float(survival[:-1].sum()),
        truncation_residual=residual,
        lower_bound=residual > tol,
    )


def false_exit_probability(
    chain: FiniteChain | InfiniteChain,
    q: QTable,
    n_b_unstable: float,
    delta: int,
    frames: int = 100,
    headroom: int = FALSE_EXIT_HEADROOM,
) -> float:
    """Probability that a chain sitting at the absorbing level returns to ``<= ceil(N_B^U)`` within ``frames``."""
    c = int(math.ceil(n_b_unstable))
    level = default_n_b_abs(n_b_unstable, delta)
    top = level + headroom
    if isinstance(chain, FiniteChain):
        top = min(top, chain.M)
    m = reduced_matrix(chain, top, q).p.copy()
    for k in range(c + 1):
        m[:, k] = 0.0
        m[k, k] = 1.0
    b = np.zeros(top + 1)
    b[min(level, top)] = 1.0
    for _ in range(frames):
        b = m @ b
    return float(b[: c + 1].sum())


def adaptive_delta(
    chain: FiniteChain | InfiniteChain,
    q: QTable,
    n_b_unstable: float,
    tol: float = 1e-3,
    frames: int = 100,
    max_delta: int = ADAPTIVE_MAX_DELTA,
) -> int | None:
    """Smallest margin above ``ceil(N_B^U) + 1`` whose false-exit probability is below ``tol``.

    Returns ``None`` when no margin up to ``max_delta`` qualifies.
    """
    for delta in range(max_delta + 1):
        if false_exit_probability(chain, q, n_b_unstable, delta, frames) < tol:
            return delta
    return None


def fet_coverage(
    chain: FiniteChain | InfiniteChain,
    n_b_unstable: float,
    deltas=(0,),
    max_delta: int = ADAPTIVE_MAX_DELTA,
) -> int:
    """q-table size that covers every requested margin and the adaptive search."""
    top = default_n_b_abs(n_b_unstable, max(max(deltas), max_delta)) + FALSE_EXIT_HEADROOM
    if isinstance(chain, FiniteChain):
        top = min(top, chain.M)
    return required_n_max(chain, top)
