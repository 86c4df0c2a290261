"""Packet delay at the channel operating point.

A packet succeeds on its first attempt with probability ``1 - plr``;
otherwise the user is backlogged and each later frame succeeds with
probability ``a = p_r * (1 - plr)``.  The delay, in whole frames from the
start of the first transmission frame to the end of the success frame, is
therefore ``1`` or ``1 + Geometric(a)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InfiniteDelayError, InvalidConfigurationError


@dataclass(frozen=True)
class DelayModel:
    plr: float
    p_r: float
    n_slots: int = 100

    def __post_init__(self):
        if not 0.0 <= self.plr <= 1.0:
            raise InvalidConfigurationError(f"plr must lie in [0, 1], got {self.plr!r}")
        if not 0.0 < self.p_r <= 1.0:
            raise InvalidConfigurationError(f"p_r must lie in (0, 1], got {self.p_r!r}")

    @property
    def retry_success(self) -> float:
        """Per-frame success probability of a backlogged packet."""
        return self.p_r * (1.0 - self.plr)


def delay_pmf(model: DelayModel, f: int) -> float:
    if f < 1:
        raise InvalidConfigurationError(f"delay is at least one frame, got f={f}")
    if f == 1:
        return 1.0 - model.plr
    a = model.retry_success
    return model.plr * a * (1.0 - a) ** (f - 2)


def delay_cdf(model: DelayModel, f: float) -> float:
    """``P{D <= f}``; ``f = inf`` gives the total mass."""
    if f < 1:
        raise InvalidConfigurationError(f"delay is at least one frame, got f={f}")
    if math.isinf(f):
        return 1.0 if model.retry_success > 0 or model.plr == 0 else 1.0 - model.plr
    return 1.0 - model.plr * (1.0 - model.retry_success) ** (int(f) - 1)


def delay_mean(model: DelayModel) -> float:
    """Closed form of ``sum_f f * P{D = f}``: ``1 + plr / (p_r (1 - plr))``."""
    if model.plr == 0.0:
        return 1.0
    a = model.retry_success
    if a == 0.0:
        raise InfiniteDelayError("no backlogged packet ever succeeds")
    return 1.0 + model.plr / a


def delay_mean_little(n_b: float, g_out: float, n_slots: int = 100) -> float:
    """Mean backlog residence via Little's law, ``n_b / (g_out * n_slots)``.

    At any point of the equilibrium contour this equals
    ``delay_mean - 1``: it counts the frames spent backlogged, not the
    first attempt.
    """
    if g_out <= 0.0:
        raise InfiniteDelayError("zero throughput")
    return n_b / (g_out * n_slots)


def cdf_table(model: DelayModel, f_max: int) -> list[tuple[int, float]]:
    return [(f, delay_cdf(model, f)) for f in range(1, f_max + 1)]
