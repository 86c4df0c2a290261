"""Open-loop Monte Carlo kernels: PLR(G_IN) curves and q(s|n) tables.

Both are estimated by decoding independent random frames with a fixed
number of transmitters.  Every (kernel kind, packet count) pair gets its
own child seed derived from the user seed, so results do not depend on the
order or the process in which columns are computed.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import isotonic_regression

from .errors import InvalidConfigurationError, SizeGuardError
from .sic import DegreeLaw, FramePlacement, _decode_count_samples, sic_decode

_PLR_STREAM = 0
_Q_STREAM = 1

EXACT_Q_LIMIT = 10**6


def stream_seed(seed: int, stream: int, n_packets: int) -> int:
    """Seed for the numba generator for one (stream, n_packets) cell."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream, int(n_packets)))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _samples(n_packets: int, n_slots: int, degree_law: DegreeLaw, i_max: int, n_runs: int, seed: int):
    if degree_law.max_degree > n_slots:
        raise InvalidConfigurationError(
            f"degree {degree_law.max_degree} exceeds the {n_slots} slots of the frame"
        )
    if n_runs < 1:
        raise InvalidConfigurationError("n_runs must be >= 1")
    return _decode_count_samples(int(n_packets), int(n_slots), degree_law.cdf_array(), int(i_max), int(n_runs), seed)


def _plr_from_counts(counts: np.ndarray, n_packets: int) -> tuple[float, float]:
    if n_packets == 0:
        return 0.0, 0.0
    plr = 1.0 - counts.sum() / (n_packets * counts.size)
    plr = min(max(plr, 0.0), 1.0)
    return plr, math.sqrt(plr * (1.0 - plr) / (n_packets * counts.size))


def estimate_plr(
    n_packets: int,
    n_slots: int,
    degree_law: DegreeLaw,
    i_max: int,
    n_runs: int,
    rng: np.random.Generator | int,
) -> tuple[float, float]:
    """Packet loss ratio over ``n_runs`` frames of ``n_packets`` packets.

    Returns ``(plr, std_err)`` where ``std_err`` is the binomial standard
    error of the per-packet loss indicator.
    """
    seed = int(rng.integers(2**32)) if isinstance(rng, np.random.Generator) else int(rng)
    counts = _samples(n_packets, n_slots, degree_law, i_max, n_runs, seed)
    return _plr_from_counts(counts, n_packets)


@dataclass(frozen=True)
class Scenario:
    """Open-loop frame parameters that both kernels are keyed by."""

    n_slots: int = 100
    degree_law: DegreeLaw = field(default_factory=lambda: DegreeLaw.constant(2))
    i_max: int = 20


@dataclass(frozen=True, eq=False)
class PlrCurve:
    n_slots: int
    degree_law: DegreeLaw
    i_max: int
    seed: int
    g_in: np.ndarray
    plr: np.ndarray
    n_runs: np.ndarray
    std_err: np.ndarray

    def __post_init__(self):
        for name, dtype in (("g_in", float), ("plr", float), ("n_runs", np.int64), ("std_err", float)):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=dtype))
        if self.g_in.size and np.any(np.diff(self.g_in) <= 0):
            raise InvalidConfigurationError("PLR grid must be strictly increasing")

    def __eq__(self, other):
        if not isinstance(other, PlrCurve):
            return NotImplemented
        return self.key() == other.key() and all(
            np.array_equal(getattr(self, a), getattr(other, a)) for a in ("plr", "std_err")
        )

    def key(self) -> tuple:
        return (
            "plr",
            self.n_slots,
            self.degree_law.key(),
            self.i_max,
            tuple(self.g_in.tolist()),
            tuple(self.n_runs.tolist()),
            self.seed,
        )

    @property
    def g_max(self) -> float:
        return float(self.g_in[-1]) if self.g_in.size else 0.0

    def monotone_plr(self) -> np.ndarray:
        """Isotonic (non-decreasing) fit of the grid values, weighted by packet samples."""
        if self.g_in.size == 0:
            return self.plr.copy()
        weights = np.maximum(np.rint(self.g_in * self.n_slots) * self.n_runs, 1.0)
        fit = isotonic_regression(self.plr, weights=weights, increasing=True).x
        return np.clip(fit, 0.0, 1.0)

    def knots(self) -> tuple[np.ndarray, np.ndarray]:
        """Interpolation knots, anchored at PLR(0) = 0."""
        g = np.concatenate(([0.0], self.g_in))
        p = np.concatenate(([0.0], self.monotone_plr()))
        if self.g_in.size and self.g_in[0] == 0.0:
            g, p = g[1:], p[1:]
        return g, p

    def plr_at(self, g_in):
        """Monotone piecewise-linear PLR; held constant beyond the last grid point."""
        g, p = self.knots()
        return np.interp(g_in, g, p)


def default_plr_grid(n_slots: int = 100, g_max: float = 5.0) -> list[float]:
    """Every packet count up to 1.5 packets/slot, then steps of 0.05 up to ``g_max``."""
    fine = [k / n_slots for k in range(1, int(round(1.5 * n_slots)) + 1)]
    coarse_start = max(fine) if fine else 0.0
    step = max(0.05, 1.0 / n_slots)
    coarse = []
    g = coarse_start + step
    while g <= g_max + 1e-9:
        coarse.append(round(g, 10))
        g += step
    return fine + coarse


def default_plr_runs(grid: Sequence[float], n_slots: int, n_runs: int = 10**5, tail_runs: int = 10**4) -> list[int]:
    """Full ``n_runs`` up to 1.5 packets/slot; saturated loads get ``tail_runs``."""
    return [n_runs if g <= 1.5 + 1e-9 else min(n_runs, tail_runs) for g in grid]


def _plr_cell(args):
    n, n_slots, degree_key, i_max, runs, seed = args
    counts = _samples(n, n_slots, DegreeLaw.parse(degree_key), i_max, runs, stream_seed(seed, _PLR_STREAM, n))
    return _plr_from_counts(counts, n)


def _map(func, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [func(j) for j in jobs]


def estimate_plr_curve(
    scenario: Scenario,
    g_in_grid: Sequence[float],
    n_runs: int | Sequence[int],
    seed: int,
    workers: int = 1,
) -> PlrCurve:
    """One :func:`estimate_plr` per grid load with ``round(g_in * n_slots)`` packets."""
    grid = [float(g) for g in g_in_grid]
    if any(g < 0 for g in grid):
        raise InvalidConfigurationError("loads must be non-negative")
    runs = [int(n_runs)] * len(grid) if np.isscalar(n_runs) else [int(r) for r in n_runs]
    if len(runs) != len(grid):
        raise InvalidConfigurationError("n_runs list must match the grid length")
    jobs = [
        (int(round(g * scenario.n_slots)), scenario.n_slots, scenario.degree_law.key(), scenario.i_max, r, seed)
        for g, r in zip(grid, runs)
    ]
    results = _map(_plr_cell, jobs, workers)
    return PlrCurve(
        n_slots=scenario.n_slots,
        degree_law=scenario.degree_law,
        i_max=scenario.i_max,
        seed=int(seed),
        g_in=grid,
        plr=[r[0] for r in results],
        n_runs=runs,
        std_err=[r[1] for r in results],
    )


@dataclass(frozen=True, eq=False)
class QTable:
    """``q[s, n]``: probability that ``s`` of ``n`` transmitted packets decode."""

    n_slots: int
    degree_law: DegreeLaw
    i_max: int
    seed: int
    q: np.ndarray
    n_runs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "n_runs", np.asarray(self.n_runs, dtype=np.int64))
        if self.q.ndim != 2 or self.q.shape[0] != self.q.shape[1]:
            raise InvalidConfigurationError("q table must be square")

    def __eq__(self, other):
        if not isinstance(other, QTable):
            return NotImplemented
        return self.key() == other.key() and np.array_equal(self.q, other.q)

    @property
    def n_max(self) -> int:
        return self.q.shape[1] - 1

    def key(self) -> tuple:
        return ("q", self.n_slots, self.degree_law.key(), self.i_max, self.n_max, tuple(self.n_runs.tolist()), self.seed)

    def column(self, n: int) -> np.ndarray:
        return self.q[: n + 1, n]

    def std_err(self) -> np.ndarray:
        """Per-entry multinomial standard error."""
        runs = np.maximum(self.n_runs, 1)[None, :]
        return np.sqrt(self.q * (1.0 - self.q) / runs)

    def plr(self, n: int) -> float:
        """Loss ratio implied by column ``n``: ``1 - sum_s (s/n) q(s|n)``."""
        if n == 0:
            return 0.0
        s = np.arange(n + 1)
        return float(1.0 - np.dot(s, self.column(n)) / n)


def _q_cell(args):
    n, n_slots, degree_key, i_max, runs, seed = args
    counts = _samples(n, n_slots, DegreeLaw.parse(degree_key), i_max, runs, stream_seed(seed, _Q_STREAM, n))
    return np.bincount(counts, minlength=n + 1)


def default_q_runs(n_max: int, n_runs: int = 10**5) -> list[int]:
    return [n_runs] * (n_max + 1)


def estimate_q_table(
    scenario: Scenario,
    n_max: int,
    n_runs: int | Sequence[int],
    seed: int,
    workers: int = 1,
) -> QTable:
    """Empirical distribution of the decoded count for every ``n`` in ``0..n_max``."""
    if n_max < 1:
        raise InvalidConfigurationError("n_max must be >= 1")
    runs = [int(n_runs)] * (n_max + 1) if np.isscalar(n_runs) else [int(r) for r in n_runs]
    if len(runs) != n_max + 1:
        raise InvalidConfigurationError("n_runs list must have n_max + 1 entries")
    q = np.zeros((n_max + 1, n_max + 1))
    q[0, 0] = 1.0
    jobs = [
        (n, scenario.n_slots, scenario.degree_law.key(), scenario.i_max, runs[n], seed) for n in range(1, n_max + 1)
    ]
    for n, hist in zip(range(1, n_max + 1), _map(_q_cell, jobs, workers)):
        q[: n + 1, n] = hist / runs[n]
    return QTable(scenario.n_slots, scenario.degree_law, scenario.i_max, int(seed), q, runs)


def exact_q_small(n_slots: int, d: int, n: int, i_max: int = 20) -> np.ndarray:
    """Exact ``q(.|n)`` by decoding every equally likely placement.

    All ``C(n_slots, d) ** n`` replica placements are enumerated.
    """
    if d > n_slots:
        raise InvalidConfigurationError("degree exceeds slot count")
    choices = list(itertools.combinations(range(n_slots), d))
    total = len(choices) ** n
    if total > EXACT_Q_LIMIT:
        raise SizeGuardError(f"{total} placements exceed the enumeration limit {EXACT_Q_LIMIT}")
    hist = np.zeros(n + 1, dtype=np.int64)
    for placement in itertools.product(choices, repeat=n):
        result = sic_decode(FramePlacement(n_slots, placement), i_max)
        hist[len(result.decoded)] += 1
    return hist / total
