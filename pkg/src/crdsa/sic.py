"""Frame construction and successive interference cancellation (SIC) decoding.

A frame holds ``n_slots`` slots.  Every transmitting user places ``d``
replicas of its packet in ``d`` distinct slots chosen uniformly at random;
each replica points at its twins.  The receiver decodes every packet that
has a replica alone in a slot, cancels that packet's other replicas and
repeats, up to ``i_max`` rounds.

The hot paths (:func:`_peel`, :func:`_random_frame`) are numba kernels that
draw from numba's internal generator, so callers seed them explicitly with
``np.random.seed`` inside jitted code.  The object-level API
(:func:`build_frame`, :func:`sic_decode`) is for inspection and testing.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numba
import numpy as np

from .errors import InvalidConfigurationError


@dataclass(frozen=True)
class DegreeLaw:
    """Distribution of the number of replicas per packet.

    ``pmf[k]`` is the probability of degree ``k + 1``.
    """

    pmf: tuple[float, ...]

    def __post_init__(self):
        pmf = tuple(float(p) for p in self.pmf)
        object.__setattr__(self, "pmf", pmf)
        if not pmf:
            raise InvalidConfigurationError("degree law needs at least one mass")
        if any(p < 0 for p in pmf):
            raise InvalidConfigurationError("degree masses must be non-negative")
        if abs(sum(pmf) - 1.0) > 1e-12:
            raise InvalidConfigurationError(f"degree pmf sums to {sum(pmf)!r}, not 1")
        if pmf[-1] == 0.0:
            raise InvalidConfigurationError("trailing zero mass in degree pmf")

    @classmethod
    def constant(cls, d: int) -> "DegreeLaw":
        if int(d) != d or d < 1:
            raise InvalidConfigurationError(f"degree must be an integer >= 1, got {d!r}")
        return cls(tuple([0.0] * (int(d) - 1) + [1.0]))

    @classmethod
    def distribution(cls, pmf: Sequence[float] | dict[int, float]) -> "DegreeLaw":
        if isinstance(pmf, dict):
            if any(k < 1 for k in pmf):
                raise InvalidConfigurationError("degrees must be >= 1")
            top = max(pmf)
            pmf = [float(pmf.get(k, 0.0)) for k in range(1, top + 1)]
        return cls(tuple(pmf))

    @property
    def max_degree(self) -> int:
        return len(self.pmf)

    @property
    def is_constant(self) -> bool:
        return self.pmf[-1] == 1.0

    @property
    def mean(self) -> float:
        return sum((k + 1) * p for k, p in enumerate(self.pmf))

    def cdf_array(self) -> np.ndarray:
        cdf = np.cumsum(np.asarray(self.pmf, dtype=np.float64))
        cdf[-1] = 1.0
        return cdf

    def key(self) -> str:
        """Stable text form, used in cache keys and config files."""
        if self.is_constant:
            return str(self.max_degree)
        return "pmf:" + ",".join(repr(p) for p in self.pmf)

    @classmethod
    def parse(cls, text: str) -> "DegreeLaw":
        text = str(text).strip()
        try:
            if text.startswith("pmf:"):
                return cls.distribution([float(x) for x in text[4:].split(",")])
            return cls.constant(int(text))
        except ValueError as exc:
            if isinstance(exc, InvalidConfigurationError):
                raise
            raise InvalidConfigurationError(f"cannot parse degree law {text!r}") from exc

    def draw(self, rng: np.random.Generator) -> int:
        if self.is_constant:
            return self.max_degree
        return int(rng.choice(self.max_degree, p=self.pmf)) + 1


class SlotState(str, Enum):
    EMPTY = "empty"
    CLEAN = "clean"
    COLLIDED = "collided"


@dataclass(frozen=True)
class FramePlacement:
    n_slots: int
    packets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.n_slots < 1:
            raise InvalidConfigurationError("a frame needs at least one slot")
        packets = tuple(tuple(int(s) for s in p) for p in self.packets)
        object.__setattr__(self, "packets", packets)
        for idx, replicas in enumerate(packets):
            if not replicas:
                raise InvalidConfigurationError(f"packet {idx} has no replicas")
            if len(set(replicas)) != len(replicas):
                raise InvalidConfigurationError(f"packet {idx} repeats a slot")
            if min(replicas) < 0 or max(replicas) >= self.n_slots:
                raise InvalidConfigurationError(f"packet {idx} has a slot outside the frame")

    @property
    def n_packets(self) -> int:
        return len(self.packets)

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR-style ``(offsets, slots)``; packet k owns ``slots[offsets[k]:offsets[k+1]]``."""
        offsets = np.zeros(self.n_packets + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(p) for p in self.packets])
        slots = np.fromiter((s for p in self.packets for s in p), dtype=np.int64, count=offsets[-1])
        return offsets, slots

    def without(self, removed: set[int] | frozenset[int]) -> "FramePlacement":
        return FramePlacement(self.n_slots, tuple(p for k, p in enumerate(self.packets) if k not in removed))


@dataclass(frozen=True)
class DecodeResult:
    decoded: frozenset[int]
    iterations_used: int
    per_slot_final_state: tuple[SlotState, ...]


def build_frame(n_packets: int, n_slots: int, degree_law: DegreeLaw, rng: np.random.Generator) -> FramePlacement:
    """Place each packet's replicas in distinct uniformly drawn slots."""
    if n_slots < 1:
        raise InvalidConfigurationError("n_slots must be >= 1")
    if degree_law.max_degree > n_slots:
        raise InvalidConfigurationError(
            f"degree {degree_law.max_degree} exceeds the {n_slots} slots of the frame"
        )
    packets = []
    for _ in range(n_packets):
        d = degree_law.draw(rng)
        packets.append(tuple(int(s) for s in rng.choice(n_slots, size=d, replace=False)))
    return FramePlacement(n_slots, tuple(packets))


def sic_decode(frame: FramePlacement, i_max: int) -> DecodeResult:
    """Iterative SIC in synchronous rounds.

    One round decodes every packet seen alone in some slot at the start of
    the round, then cancels all replicas of those packets.  Decoding stops
    when a round makes no progress or after ``i_max`` rounds.
    """
    offsets, slots = frame.to_arrays()
    n = frame.n_packets
    decoded = np.zeros(n, dtype=np.bool_)
    count = np.zeros(frame.n_slots, dtype=np.int64)
    sums = np.zeros(frame.n_slots, dtype=np.int64)
    newly = np.zeros(max(n, 1), dtype=np.int64)
    rounds = _peel(offsets, slots, n, frame.n_slots, i_max, decoded, count, sums, newly)
    states = tuple(
        SlotState.EMPTY if c == 0 else SlotState.CLEAN if c == 1 else SlotState.COLLIDED for c in count
    )
    return DecodeResult(frozenset(np.flatnonzero(decoded).tolist()), int(rounds), states)


def sa_decode(frame: FramePlacement) -> DecodeResult:
    """Slotted Aloha reception: a packet survives iff its single slot is not shared."""
    if any(len(p) != 1 for p in frame.packets):
        raise InvalidConfigurationError("slotted Aloha frames carry exactly one replica per packet")
    occupancy = Counter(p[0] for p in frame.packets)
    decoded = frozenset(k for k, p in enumerate(frame.packets) if occupancy[p[0]] == 1)
    states = tuple(
        SlotState.EMPTY if occupancy[s] <= 1 else SlotState.COLLIDED for s in range(frame.n_slots)
    )
    return DecodeResult(decoded, 1 if decoded else 0, states)


# --------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True)
def _peel(offsets, slots, n_packets, n_slots, i_max, decoded, count, sums, newly):
    """Round-based peeling on a CSR frame; fills ``decoded`` and returns rounds used.

    ``count``/``sums`` hold per-slot residual replica count and packet-id sum,
    so a slot with count 1 names its packet directly.  ``newly`` is scratch
    of length >= n_packets.
    """
    for s in range(n_slots):
        count[s] = 0
        sums[s] = 0
    for k in range(n_packets):
        decoded[k] = False
        for r in range(offsets[k], offsets[k + 1]):
            count[slots[r]] += 1
            sums[slots[r]] += k
    rounds = 0
    while rounds < i_max:
        m = 0
        for s in range(n_slots):
            if count[s] == 1:
                k = sums[s]
                if not decoded[k]:
                    decoded[k] = True
                    newly[m] = k
                    m += 1
        if m == 0:
            break
        rounds += 1
        for q in range(m):
            k = newly[q]
            for r in range(offsets[k], offsets[k + 1]):
                count[slots[r]] -= 1
                sums[slots[r]] -= k
    return rounds


@numba.njit(cache=True)
def _random_frame(n_packets, n_slots, degree_cdf, offsets, slots):
    """Draw degrees and distinct replica slots (Floyd's sampler) into CSR arrays."""
    pos = 0
    dmax = degree_cdf.shape[0]
    for k in range(n_packets):
        offsets[k] = pos
        d = dmax
        # constant laws have zero cdf below the top degree and skip the draw
        if dmax > 1 and degree_cdf[dmax - 2] > 0.0:
            u = np.random.random()
            d = 1
            while d < dmax and u >= degree_cdf[d - 1]:
                d += 1
        start = pos
        for j in range(n_slots - d, n_slots):
            t = np.random.randint(0, j + 1)
            for c in range(start, pos):
                if slots[c] == t:
                    t = j
                    break
            slots[pos] = t
            pos += 1
    offsets[n_packets] = pos


@numba.njit(cache=True)
def _decode_count_samples(n_packets, n_slots, degree_cdf, i_max, n_runs, seed):
    """Decoded-packet count for ``n_runs`` independent random frames."""
    np.random.seed(seed)
    dmax = degree_cdf.shape[0]
    offsets = np.zeros(n_packets + 1, dtype=np.int64)
    slots = np.zeros(max(n_packets * dmax, 1), dtype=np.int64)
    decoded = np.zeros(max(n_packets, 1), dtype=np.bool_)
    count = np.zeros(n_slots, dtype=np.int64)
    sums = np.zeros(n_slots, dtype=np.int64)
    newly = np.zeros(max(n_packets, 1), dtype=np.int64)
    out = np.zeros(n_runs, dtype=np.int64)
    for run in range(n_runs):
        _random_frame(n_packets, n_slots, degree_cdf, offsets, slots)
        _peel(offsets, slots, n_packets, n_slots, i_max, decoded, count, sums, newly)
        c = 0
        for k in range(n_packets):
            if decoded[k]:
                c += 1
        out[run] = c
    return out
