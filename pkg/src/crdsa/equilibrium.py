"""Equilibrium contour, channel load line, equilibrium points and design constraints.

The contour is parameterized by the total offered load ``g_in``:

    g_t = g_in * (1 - PLR(g_in))
    n_b = g_in * PLR(g_in) * n_slots / p_r

Because the interpolated PLR is non-decreasing, ``n_b`` grows with
``g_in`` and equilibria come out ordered by backlog.  The residual
``load_line(n_b) - g_t`` is positive where the backlog drifts up and
negative where it drifts down.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidConfigurationError
from .montecarlo import PlrCurve

BISECT_TOL_NB = 0.005
SATURATION_GT_FRACTION = 0.10
SATURATION_NB_FRACTION = 0.90


@dataclass(frozen=True)
class LoadLine:
    """Expected fresh load G_T as a function of backlog.

    Finite population: ``(M - n_b) * p0 / n_slots``.  Infinite population
    (``M is None``): ``lam / n_slots`` for every backlog.
    """

    n_slots: int
    M: int | None = None
    p0: float | None = None
    lam: float | None = None

    def __post_init__(self):
        if self.M is None:
            if self.lam is None or self.lam < 0:
                raise InvalidConfigurationError("infinite population needs lam >= 0")
        else:
            if self.p0 is None or not 0.0 <= self.p0 <= 1.0:
                raise InvalidConfigurationError("finite population needs 0 <= p0 <= 1")
            if self.M < 1:
                raise InvalidConfigurationError("M must be >= 1")

    @classmethod
    def finite(cls, M: int, p0: float, n_slots: int = 100) -> "LoadLine":
        return cls(n_slots=n_slots, M=int(M), p0=float(p0))

    @classmethod
    def infinite(cls, lam: float, n_slots: int = 100) -> "LoadLine":
        return cls(n_slots=n_slots, lam=float(lam))

    @property
    def is_finite(self) -> bool:
        return self.M is not None

    def g_t(self, n_b):
        if self.is_finite:
            return (self.M - np.asarray(n_b, dtype=float)) * self.p0 / self.n_slots
        return np.full_like(np.asarray(n_b, dtype=float), self.lam / self.n_slots)


@dataclass(frozen=True, eq=False)
class Contour:
    """Densified equilibrium contour for one PLR curve and retransmission probability."""

    plr_curve: PlrCurve
    p_r: float
    n_slots: int
    g_in: np.ndarray
    g_t: np.ndarray
    n_b: np.ndarray

    def at(self, g_in):
        g = np.asarray(g_in, dtype=float)
        plr = self.plr_curve.plr_at(g)
        return g * (1.0 - plr), g * plr * self.n_slots / self.p_r

    @property
    def peak_g_t(self) -> float:
        return float(self.g_t.max()) if self.g_t.size else 0.0

    def rows(self):
        return list(zip(self.g_in.tolist(), self.g_t.tolist(), self.n_b.tolist()))


def contour(plr_curve: PlrCurve, p_r: float, n_slots: int | None = None, densify: int = 10) -> Contour:
    """Equilibrium contour sampled at every PLR knot plus ``densify`` points per interval."""
    if not 0.0 < p_r <= 1.0:
        raise InvalidConfigurationError(f"p_r must lie in (0, 1], got {p_r!r}")
    n_slots = plr_curve.n_slots if n_slots is None else n_slots
    knots, _ = plr_curve.knots()
    if knots.size < 2:
        g = knots
    else:
        steps = np.linspace(0.0, 1.0, densify + 1)[:-1]
        g = (knots[:-1, None] + np.diff(knots)[:, None] * steps[None, :]).ravel()
        g = np.append(g, knots[-1])
    plr = plr_curve.plr_at(g)
    return Contour(plr_curve, float(p_r), int(n_slots), g, g * (1.0 - plr), g * plr * n_slots / p_r)


class Kind(str, Enum):
    GLOBALLY_STABLE = "globally_stable"
    LOCALLY_STABLE = "locally_stable"
    UNSTABLE = "unstable"
    SATURATION = "saturation"


@dataclass(frozen=True)
class EquilibriumPoint:
    g_in: float
    g_t: float
    n_b: float
    kind: Kind

    @property
    def is_stable(self) -> bool:
        return self.kind is not Kind.UNSTABLE


def residual(cont: Contour, load_line: LoadLine, g_in):
    g_t, n_b = cont.at(g_in)
    return load_line.g_t(n_b) - g_t


def _bisect(cont: Contour, line: LoadLine, lo: float, hi: float, r_lo: float) -> float:
    while True:
        _, (nb_lo, nb_hi) = cont.at([lo, hi])
        if nb_hi - nb_lo < BISECT_TOL_NB or hi - lo < 1e-12:
            return 0.5 * (lo + hi)
        mid = 0.5 * (lo + hi)
        r_mid = float(residual(cont, line, mid))
        if r_mid == 0.0:
            return mid
        if (r_mid > 0) == (r_lo > 0):
            lo, r_lo = mid, r_mid
        else:
            hi = mid


def saturates_at_infinity(cont: Contour, load_line: LoadLine) -> bool:
    """True when an infinite population keeps drifting up past the end of the contour."""
    if load_line.is_finite or cont.g_in.size == 0:
        return False
    return bool(residual(cont, load_line, cont.g_in[-1]) > 0)


def find_equilibria(cont: Contour, load_line: LoadLine) -> list[EquilibriumPoint]:
    """All crossings of the load line with the contour, ordered by backlog."""
    if cont.g_in.size == 0:
        raise InvalidConfigurationError("empty contour")
    if load_line.is_finite and cont.n_b[-1] < load_line.M:
        raise InvalidConfigurationError(
            f"contour ends at backlog {cont.n_b[-1]:.1f} < M={load_line.M}; "
            "extend the PLR grid to higher loads"
        )
    r = load_line.g_t(cont.n_b) - cont.g_t
    sign = np.sign(r)
    # zero samples take the sign of their predecessor so each crossing counts once
    for k in range(1, sign.size):
        if sign[k] == 0:
            sign[k] = sign[k - 1]
    crossings = []
    for k in np.flatnonzero(sign[:-1] * sign[1:] < 0):
        g = _bisect(cont, load_line, float(cont.g_in[k]), float(cont.g_in[k + 1]), float(r[k]))
        g_t, n_b = cont.at(g)
        crossings.append((g, float(g_t), float(n_b), sign[k] > 0))
    diverges = saturates_at_infinity(cont, load_line)
    unique = len(crossings) == 1 and not diverges
    peak = cont.peak_g_t
    points = []
    for g, g_t, n_b, downward in crossings:
        if not downward:
            kind = Kind.UNSTABLE
        elif _in_saturation(g_t, n_b, peak, load_line):
            kind = Kind.SATURATION
        elif unique:
            kind = Kind.GLOBALLY_STABLE
        else:
            kind = Kind.LOCALLY_STABLE
        points.append(EquilibriumPoint(g, g_t, n_b, kind))
    return points


def _in_saturation(g_t: float, n_b: float, peak: float, line: LoadLine) -> bool:
    if g_t >= SATURATION_GT_FRACTION * peak:
        return False
    return (not line.is_finite) or n_b > SATURATION_NB_FRACTION * line.M


class Verdict(str, Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    OVERLOADED = "overloaded"


@dataclass(frozen=True)
class ChannelClassification:
    verdict: Verdict
    points: tuple[EquilibriumPoint, ...]
    operating_point: EquilibriumPoint | None
    diverges: bool = False

    @property
    def unstable_point(self) -> EquilibriumPoint | None:
        return next((p for p in self.points if p.kind is Kind.UNSTABLE), None)


def classify(points, load_line: LoadLine, diverges: bool | None = None) -> ChannelClassification:
    """Channel verdict from the equilibria of one load line.

    For an infinite population crossings alternate down/up starting from a
    positive residual at zero backlog, so an even count means the backlog
    runs away past the last crossing.
    """
    points = tuple(points)
    if diverges is None:
        diverges = (not load_line.is_finite) and len(points) % 2 == 0
    operating = next((p for p in points if p.is_stable and p.kind is not Kind.SATURATION), None)
    if operating is None:
        verdict = Verdict.OVERLOADED
    elif len(points) == 1 and not diverges:
        verdict = Verdict.STABLE
    else:
        verdict = Verdict.UNSTABLE
    return ChannelClassification(verdict, points, operating, diverges)


def analyze(plr_curve: PlrCurve, p_r: float, load_line: LoadLine) -> ChannelClassification:
    """Contour, equilibria and verdict in one call."""
    cont = contour(plr_curve, p_r, load_line.n_slots)
    points = find_equilibria(cont, load_line)
    return classify(points, load_line, saturates_at_infinity(cont, load_line))


@dataclass(frozen=True)
class Constraints:
    """Design constraints on the (G_T, N_B) plane; unset fields are not checked."""

    n_slots: int = 100
    p0_min: float | None = None
    M: int | None = None
    m_min: float | None = None
    p0: float | None = None
    d_max: float | None = None
    g_out_min: float | None = None

    def __post_init__(self):
        for name in ("p0_min", "m_min", "p0", "d_max", "g_out_min", "M"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise InvalidConfigurationError(f"constraint parameter {name} must be positive")
        if self.p0_min is not None and self.M is None:
            raise InvalidConfigurationError("the p0_min constraint needs M")
        if self.m_min is not None and self.p0 is None:
            raise InvalidConfigurationError("the M_min constraint needs p0")


def admissible(g_t: float, n_b: float, constraints: Constraints) -> dict[str, bool]:
    """Per-constraint verdicts plus ``"all"`` for the intersection of the selected areas."""
    c = constraints
    out: dict[str, bool] = {}
    if c.p0_min is not None:
        out["p0_min"] = n_b < c.M and g_t * c.n_slots / (c.M - n_b) >= c.p0_min
    if c.m_min is not None:
        out["m_min"] = g_t * c.n_slots / c.p0 + n_b >= c.m_min
    if c.d_max is not None:
        out["d_max"] = g_t > 0 and n_b / (g_t * c.n_slots) <= c.d_max
    if c.g_out_min is not None:
        out["g_out_min"] = g_t >= c.g_out_min
    out["all"] = all(out.values())
    return out
