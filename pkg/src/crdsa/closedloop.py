"""Frame-by-frame simulation of the closed retransmission loop.

Each frame: thinking users (or a Poisson stream of new users) send fresh
packets, backlogged users retransmit, the frame is decoded with SIC, and
acknowledgements reach the terminals ``feedback_delay`` frames later.  An
optional control-limit policy watches the backlog:

* ICP denies fresh packets while the backlog is above ``n_hat`` (denied
  packets are dropped and counted);
* RCP lowers the retransmission probability from ``p_r`` to ``p_c``.

The controller decides at the end of every frame from the backlog it
knows; terminals apply the decision ``feedback_delay`` frames later.

The backlog ``N_B`` is the number of undelivered packets that have failed
at least once, as known at the gateway.  With immediate feedback it equals
the number of users in the backlogged state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InvalidConfigurationError
from .sic import DegreeLaw, _peel, _random_frame

THINKING, BACKLOGGED, IN_FLIGHT, DELIVERED = 0, 1, 2, 3

POLICY_CODES = {"none": 0, "icp": 1, "rcp": 2}

# scalar slots of LoopState.scalars
_FRAME, _N_PKTS, _BACKLOG, _REJECTED, _DIVERGED = range(5)
# accumulator slots of LoopState.acc (post-warmup)
_DELAY_SUM, _DELAY_N, _DECODED, _CRIT, _FRAMES, _REJ, _BACKLOG_SUM, _FRESH, _TX = range(9)

DELAY_BINS = 4096


@dataclass(frozen=True)
class ScenarioConfig:
    """Protocol and population parameters.  ``M=None`` means infinite population."""

    n_slots: int = 100
    degree_law: DegreeLaw = field(default_factory=lambda: DegreeLaw.constant(2))
    i_max: int = 20
    M: int | None = 350
    p0: float = 0.143
    lam: float | None = None
    p_r: float = 0.5

    def __post_init__(self):
        if self.n_slots < 1 or self.i_max < 1:
            raise InvalidConfigurationError("n_slots and i_max must be >= 1")
        if self.degree_law.max_degree > self.n_slots:
            raise InvalidConfigurationError("degree exceeds the number of slots")
        if self.M is None:
            if self.lam is None or self.lam < 0:
                raise InvalidConfigurationError("infinite population needs lam >= 0")
        elif self.M < 1:
            raise InvalidConfigurationError("M must be >= 1")
        if not 0.0 <= self.p0 <= 1.0 or not 0.0 <= self.p_r <= 1.0:
            raise InvalidConfigurationError("p0 and p_r must lie in [0, 1]")

    @property
    def is_finite(self) -> bool:
        return self.M is not None


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "none"
    n_hat: int | None = None
    p_c: float | None = None
    feedback_delay: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_CODES:
            raise InvalidConfigurationError(f"unknown policy {self.kind!r}")
        if self.feedback_delay < 0:
            raise InvalidConfigurationError("feedback delay must be >= 0 frames")
        if self.kind != "none" and self.n_hat is None:
            raise InvalidConfigurationError(f"{self.kind} needs a threshold n_hat")
        if self.kind == "rcp" and (self.p_c is None or not 0.0 <= self.p_c <= 1.0):
            raise InvalidConfigurationError("rcp needs p_c in [0, 1]")
        if self.kind == "icp" and self.p_c is not None:
            raise InvalidConfigurationError("icp takes no p_c")

    def check_against(self, scenario: ScenarioConfig, strict: bool = True) -> None:
        """RCP must back off (``p_c < p_r``); ``strict=False`` also admits ``p_c == p_r``."""
        if self.kind == "rcp":
            bad = self.p_c > scenario.p_r if not strict else self.p_c >= scenario.p_r
            if bad:
                raise InvalidConfigurationError(f"rcp needs p_c < p_r, got p_c={self.p_c}, p_r={scenario.p_r}")


@dataclass
class LoopState:
    """Mutable simulator state; arrays are indexed by user (finite) or packet slot (infinite)."""

    state: np.ndarray
    birth: np.ndarray
    ack_frame: np.ndarray
    ack_ok: np.ndarray
    counted: np.ndarray
    history: np.ndarray
    scalars: np.ndarray
    acc: np.ndarray
    delay_hist: np.ndarray

    @classmethod
    def empty(cls, scenario: ScenarioConfig, policy: PolicyConfig, capacity: int = 200_000) -> "LoopState":
        n = scenario.M if scenario.is_finite else capacity
        return cls(
            state=np.zeros(n, dtype=np.int8),
            birth=np.zeros(n, dtype=np.int64),
            ack_frame=np.full(n, -1, dtype=np.int64),
            ack_ok=np.zeros(n, dtype=np.bool_),
            counted=np.zeros(n, dtype=np.bool_),
            history=np.zeros(policy.feedback_delay + 1, dtype=np.int64),
            scalars=np.zeros(5, dtype=np.int64),
            acc=np.zeros(9, dtype=np.float64),
            delay_hist=np.zeros(DELAY_BINS, dtype=np.int64),
        )

    @property
    def frame(self) -> int:
        return int(self.scalars[_FRAME])

    @property
    def backlog(self) -> int:
        return int(self.scalars[_BACKLOG])

    def user_counts(self) -> tuple[int, int, int]:
        """(thinking, backlogged, in flight) user counts for a finite population."""
        live = self.state
        return (
            int(np.count_nonzero(live == THINKING)),
            int(np.count_nonzero(live == BACKLOGGED)),
            int(np.count_nonzero(live == IN_FLIGHT)),
        )


@numba.njit(cache=True)
def _advance(
    finite, lam, p0, p_r, p_c, policy, n_hat, f_d, n_slots, degree_cdf, i_max,
    state, birth, ack_frame, ack_ok, counted, history, scalars, acc, delay_hist,
    n_frames, warmup, stop_backlog, seed,
    tr_backlog, tr_tx, tr_dec, tr_crit, tr_rej, tr_fresh, tr_think, tr_bk, tr_fl,
):
    np.random.seed(seed)
    cap = state.shape[0]
    dmax = degree_cdf.shape[0]
    tx = np.zeros(cap, dtype=np.int64)
    offsets = np.zeros(cap + 1, dtype=np.int64)
    slots = np.zeros(cap * dmax + 1, dtype=np.int64)
    decoded = np.zeros(cap + 1, dtype=np.bool_)
    count = np.zeros(n_slots, dtype=np.int64)
    sums = np.zeros(n_slots, dtype=np.int64)
    newly = np.zeros(cap + 1, dtype=np.int64)
    hlen = history.shape[0]
    nbins = delay_hist.shape[0]
    done = 0
    for r in range(n_frames):
        f = scalars[0]
        n_pkts = scalars[1]
        # policy applied by terminals: controller decision from frame f - 1 - f_d
        crit = False
        if policy != 0 and f - 1 - f_d >= 0:
            crit = history[(f - 1 - f_d) % hlen] > n_hat
        rejected = 0
        fresh = 0
        m = 0
        if finite:
            for k in range(cap):
                s = state[k]
                if s == 0:
                    if np.random.random() < p0:
                        if crit and policy == 1:
                            rejected += 1
                        else:
                            birth[k] = f
                            tx[m] = k
                            m += 1
                            fresh += 1
                elif s == 1:
                    p = p_c if (crit and policy == 2) else p_r
                    if np.random.random() < p:
                        tx[m] = k
                        m += 1
        else:
            for k in range(n_pkts):
                if state[k] == 1:
                    p = p_c if (crit and policy == 2) else p_r
                    if np.random.random() < p:
                        tx[m] = k
                        m += 1
            n_new = np.random.poisson(lam) if lam > 0 else 0
            if crit and policy == 1:
                rejected += n_new
            else:
                if n_pkts + n_new > cap:
                    scalars[4] = 1
                    break
                for k in range(n_pkts, n_pkts + n_new):
                    state[k] = 2
                    birth[k] = f
                    counted[k] = False
                    ack_frame[k] = -1
                    tx[m] = k
                    m += 1
                n_pkts += n_new
                fresh = n_new
        _random_frame(m, n_slots, degree_cdf, offsets, slots)
        _peel(offsets, slots, m, n_slots, i_max, decoded, count, sums, newly)
        n_dec = 0
        measured = f >= warmup
        for q in range(m):
            k = tx[q]
            ok = decoded[q]
            if ok:
                n_dec += 1
                if counted[k]:
                    counted[k] = False
                    scalars[2] -= 1
                if measured:
                    d = f - birth[k] + 1
                    acc[0] += d
                    acc[1] += 1
                    delay_hist[d if d < nbins else nbins - 1] += 1
            elif not counted[k]:
                counted[k] = True
                scalars[2] += 1
            if f_d == 0:
                if ok:
                    state[k] = 0 if finite else 3
                else:
                    state[k] = 1
            else:
                state[k] = 3 if (ok and not finite) else 2
                ack_frame[k] = f + f_d
                ack_ok[k] = ok
        if f_d > 0:
            top = cap if finite else n_pkts
            for k in range(top):
                if state[k] == 2 and ack_frame[k] == f:
                    state[k] = 0 if ack_ok[k] else 1
        if not finite:
            w = 0
            for k in range(n_pkts):
                if state[k] != 3:
                    if w != k:
                        state[w] = state[k]
                        birth[w] = birth[k]
                        ack_frame[w] = ack_frame[k]
                        ack_ok[w] = ack_ok[k]
                        counted[w] = counted[k]
                    w += 1
            n_pkts = w
            scalars[1] = n_pkts
        backlog = scalars[2]
        history[f % hlen] = backlog
        scalars[3] += rejected
        if measured:
            acc[2] += n_dec
            acc[3] += 1.0 if crit else 0.0
            acc[4] += 1
            acc[5] += rejected
            acc[6] += backlog
            acc[7] += fresh
            acc[8] += m
        tr_backlog[r] = backlog
        tr_tx[r] = m
        tr_dec[r] = n_dec
        tr_crit[r] = crit
        tr_rej[r] = rejected
        tr_fresh[r] = fresh
        if finite:
            nt = 0
            nb = 0
            nf = 0
            for k in range(cap):
                if state[k] == 0:
                    nt += 1
                elif state[k] == 1:
                    nb += 1
                else:
                    nf += 1
            tr_think[r] = nt
            tr_bk[r] = nb
            tr_fl[r] = nf
        scalars[0] = f + 1
        done += 1
        if stop_backlog >= 0 and backlog >= stop_backlog:
            break
    return done


TRACE_FIELDS = ("backlog", "transmitted", "decoded", "critical", "rejected", "fresh", "thinking", "backlogged", "in_flight")


def advance(
    loop: LoopState,
    scenario: ScenarioConfig,
    policy: PolicyConfig,
    n_frames: int,
    seed: int,
    warmup: int = 0,
    stop_backlog: int | None = None,
) -> dict[str, np.ndarray]:
    """Run up to ``n_frames`` frames in place; returns the per-frame trace."""
    tr = {name: np.zeros(n_frames, dtype=np.int64) for name in TRACE_FIELDS}
    tr["critical"] = np.zeros(n_frames, dtype=np.bool_)
    n_hat = policy.n_hat if policy.n_hat is not None else np.iinfo(np.int64).max
    p_c = policy.p_c if policy.p_c is not None else scenario.p_r
    done = _advance(
        scenario.is_finite,
        float(scenario.lam or 0.0),
        float(scenario.p0),
        float(scenario.p_r),
        float(p_c),
        POLICY_CODES[policy.kind],
        int(n_hat),
        int(policy.feedback_delay),
        int(scenario.n_slots),
        scenario.degree_law.cdf_array(),
        int(scenario.i_max),
        loop.state, loop.birth, loop.ack_frame, loop.ack_ok, loop.counted,
        loop.history, loop.scalars, loop.acc, loop.delay_hist,
        int(n_frames), int(warmup), -1 if stop_backlog is None else int(stop_backlog), int(seed),
        tr["backlog"], tr["transmitted"], tr["decoded"], tr["critical"], tr["rejected"],
        tr["fresh"], tr["thinking"], tr["backlogged"], tr["in_flight"],
    )
    return {name: arr[:done] for name, arr in tr.items()}


def step(loop: LoopState, scenario: ScenarioConfig, policy: PolicyConfig, rng: np.random.Generator) -> dict:
    """Advance one frame; returns that frame's trace entry."""
    trace = advance(loop, scenario, policy, 1, int(rng.integers(2**32)))
    return {name: arr[0].item() for name, arr in trace.items()} if trace["backlog"].size else {}


@dataclass(eq=False)
class SimStats:
    seed: int
    trace: dict[str, np.ndarray]
    throughput: float
    mean_delay: float
    delay_hist: np.ndarray
    critical_time_fraction: float
    rejected_count: int
    mean_backlog: float
    fresh_load: float
    frames_measured: int
    packets_delivered: int
    diverged: bool
    fet_samples: list[int] = field(default_factory=list)
    n_slots: int = 100

    @property
    def little_delay(self) -> float:
        """Backlog residence ``mean_backlog / (throughput * n_slots)``."""
        return self.mean_backlog / (self.throughput * self.n_slots) if self.throughput > 0 else math.inf


def run(
    scenario: ScenarioConfig,
    policy: PolicyConfig,
    n_frames: int,
    warmup: int = 1000,
    seed: int = 1,
    capacity: int = 200_000,
) -> SimStats:
    """Simulate ``n_frames`` frames and summarize the frames after ``warmup``."""
    if n_frames <= warmup:
        raise InvalidConfigurationError("n_frames must exceed warmup")
    policy.check_against(scenario, strict=False)
    loop = LoopState.empty(scenario, policy, capacity)
    trace = advance(loop, scenario, policy, n_frames, seed, warmup=warmup)
    acc = loop.acc
    frames = int(acc[_FRAMES])
    slots = max(frames, 1) * scenario.n_slots
    return SimStats(
        seed=seed,
        trace=trace,
        throughput=acc[_DECODED] / slots,
        mean_delay=acc[_DELAY_SUM] / acc[_DELAY_N] if acc[_DELAY_N] else math.inf,
        delay_hist=loop.delay_hist.copy(),
        critical_time_fraction=acc[_CRIT] / max(frames, 1),
        rejected_count=int(acc[_REJ]),
        mean_backlog=acc[_BACKLOG_SUM] / max(frames, 1),
        fresh_load=acc[_FRESH] / slots,
        frames_measured=frames,
        packets_delivered=int(acc[_DELAY_N]),
        diverged=bool(loop.scalars[_DIVERGED]),
        n_slots=scenario.n_slots,
    )


@dataclass(frozen=True)
class SweepRow:
    n_hat: int
    throughput: float
    mean_delay: float
    critical_time_fraction: float
    rejected_count: int
    mean_backlog: float
    diverged: bool = False


def sweep_threshold(
    scenario: ScenarioConfig,
    policy: PolicyConfig,
    n_hat_grid,
    n_frames: int,
    warmup: int = 1000,
    seed: int = 1,
    capacity: int = 200_000,
) -> list[SweepRow]:
    """One run per threshold; the policy's ``n_hat`` is replaced by each grid value.

    ``capacity`` bounds the packets held by an infinite population; a run
    that reaches it stops early and is flagged ``diverged``.
    """
    grid = list(n_hat_grid)
    if not grid:
        raise InvalidConfigurationError("empty threshold grid")
    rows = []
    for n_hat in grid:
        pol = PolicyConfig(policy.kind, int(n_hat), policy.p_c, policy.feedback_delay)
        st = run(scenario, pol, n_frames, warmup, seed, capacity)
        rows.append(
            SweepRow(
                int(n_hat), st.throughput, st.mean_delay, st.critical_time_fraction,
                st.rejected_count, st.mean_backlog, st.diverged,
            )
        )
    return rows


@dataclass(frozen=True)
class FetSamples:
    samples: tuple[int, ...]
    exit_level: int
    confirm_level: int
    frames_used: int
    censored_frames: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples)) if self.samples else math.inf

    @property
    def std_err(self) -> float:
        n = len(self.samples)
        return float(np.std(self.samples, ddof=1) / math.sqrt(n)) if n > 1 else math.inf

    def cdf(self, frames) -> np.ndarray:
        s = np.sort(np.asarray(self.samples))
        return np.searchsorted(s, np.asarray(frames), side="right") / max(len(s), 1)


def measure_fet(
    scenario: ScenarioConfig,
    n_frames: int,
    seed: int,
    exit_level: int,
    confirm_level: int | None = None,
    max_samples: int | None = None,
    chunk: int = 100_000,
) -> FetSamples:
    """Empirical First Exit Times from an empty backlog.

    An episode ends when the backlog reaches ``confirm_level``, deep in the
    drift-to-saturation region.  Its FET is the frame of the last upward
    crossing of ``exit_level`` (normally ``ceil(N_B^U)``): excursions that
    come back below the level are discarded and the next exit is awaited.
    Episodes restart from an empty system until ``n_frames`` frames are
    spent; an unfinished final episode is reported as censored.
    """
    confirm_level = 3 * exit_level if confirm_level is None else confirm_level
    if scenario.is_finite:
        confirm_level = min(confirm_level, scenario.M)
    if confirm_level <= exit_level:
        raise InvalidConfigurationError("confirm level must lie above the exit level")
    policy = PolicyConfig()
    ss = np.random.SeedSequence(seed)
    samples: list[int] = []
    used = 0
    censored = 0
    while used < n_frames and (max_samples is None or len(samples) < max_samples):
        loop = LoopState.empty(scenario, policy)
        last_cross = -1
        prev = 0
        elapsed = 0
        finished = False
        while used < n_frames:
            todo = min(chunk, n_frames - used)
            child = int(ss.spawn(1)[0].generate_state(1)[0])
            trace = advance(loop, scenario, policy, todo, child, stop_backlog=confirm_level)
            bl = trace["backlog"]
            before = np.concatenate(([prev], bl[:-1]))
            ups = np.flatnonzero((bl > exit_level) & (before <= exit_level))
            if ups.size:
                last_cross = elapsed + int(ups[-1])
            used += bl.size
            elapsed += bl.size
            prev = int(bl[-1]) if bl.size else prev
            if bl.size and bl[-1] >= confirm_level:
                finished = True
                break
        if finished:
            samples.append(last_cross + 1)
        else:
            censored = elapsed
    return FetSamples(tuple(samples), int(exit_level), int(confirm_level), used, censored)
