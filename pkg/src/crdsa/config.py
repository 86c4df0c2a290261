"""Run configuration as ``key = value`` text.

One setting per line; ``#`` starts a comment; lists are comma separated;
``none`` leaves an optional field unset and ``M = inf`` selects an
infinite population.  Defaults reproduce the recurring scenario
(``N_s = 100``, ``I_max = 20``, two replicas).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields

from .closedloop import PolicyConfig, ScenarioConfig
from .errors import InvalidConfigurationError
from .montecarlo import Scenario
from .sic import DegreeLaw


@dataclass(frozen=True)
class RunConfig:
    # frame and kernels
    n_slots: int = 100
    degree: str = "2"
    i_max: int = 20
    seed: int = 1
    plr_runs: int = 100_000
    plr_tail_runs: int = 10_000
    g_max: float = 5.0
    q_runs: int = 100_000
    q_n_max: int | None = None
    # population and retransmission
    M: int | None = 350
    p0: float = 0.143
    lam: float | None = None
    p_r: float = 0.5
    # control policy
    policy: str = "none"
    n_hat: int | None = None
    p_c: float | None = None
    feedback_delay: int = 0
    # delay table
    p_r_list: tuple[float, ...] = ()
    f_max: int = 50
    # first exit time
    delta: tuple[int, ...] = (0,)
    fet_horizon: int = 1_000_000
    fet_tol: float = 1e-4
    fet_frames: int = 0
    # closed loop
    frames: int = 200_000
    warmup: int = 1000
    n_hat_grid: tuple[int, ...] = ()

    def __post_init__(self):
        self.degree_law  # validates the degree text
        if self.n_slots < 1 or self.i_max < 1:
            raise InvalidConfigurationError("n_slots and i_max must be >= 1")
        if self.degree_law.max_degree > self.n_slots:
            raise InvalidConfigurationError("degree exceeds n_slots")
        if min(self.plr_runs, self.plr_tail_runs, self.q_runs) < 1:
            raise InvalidConfigurationError("run counts must be >= 1")
        if self.g_max <= 0:
            raise InvalidConfigurationError("g_max must be positive")
        if any(not 0.0 < p <= 1.0 for p in (self.p_r, *self.p_r_list)):
            raise InvalidConfigurationError("retransmission probabilities must lie in (0, 1]")
        if self.f_max < 1 or self.fet_horizon < 1 or self.frames < 1 or self.warmup < 0:
            raise InvalidConfigurationError("f_max, fet_horizon and frames must be >= 1; warmup >= 0")
        if any(d < 0 for d in self.delta):
            raise InvalidConfigurationError("delta values must be >= 0")
        self.scenario()
        self.policy_config()

    @property
    def degree_law(self) -> DegreeLaw:
        return DegreeLaw.parse(self.degree)

    def kernel_scenario(self) -> Scenario:
        return Scenario(self.n_slots, self.degree_law, self.i_max)

    def scenario(self, p_r: float | None = None) -> ScenarioConfig:
        return ScenarioConfig(
            n_slots=self.n_slots,
            degree_law=self.degree_law,
            i_max=self.i_max,
            M=self.M,
            p0=self.p0,
            lam=self.lam,
            p_r=self.p_r if p_r is None else p_r,
        )

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(self.policy, self.n_hat, self.p_c, self.feedback_delay)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _kind(name: str) -> str:
    t = str(_FIELDS[name].type)
    if t.startswith("tuple"):
        return "int_list" if "int" in t else "float_list"
    if "str" in t:
        return "str"
    return "int" if "int" in t else "float"


def _optional(name: str) -> bool:
    return "None" in str(_FIELDS[name].type)


def convert(name: str, text: str):
    """Convert the text form of one setting to its typed value."""
    if name not in _FIELDS:
        raise InvalidConfigurationError(f"unknown setting {name!r}")
    text = text.strip()
    kind = _kind(name)
    if name == "M" and text.lower() == "inf":
        return None
    if _optional(name) and text.lower() == "none":
        return None
    if name == "degree":
        return DegreeLaw.parse(text).key()
    try:
        if kind == "str":
            if not text:
                raise ValueError("empty value")
            return text
        if kind == "int":
            return _to_int(text)
        if kind == "float":
            value = float(text)
            if not math.isfinite(value):
                raise ValueError("not finite")
            return value
        items = [s.strip() for s in text.split(",") if s.strip()]
        return tuple(_to_int(s) if kind == "int_list" else float(s) for s in items)
    except ValueError as exc:
        raise InvalidConfigurationError(f"bad value {text!r} for {name}: {exc}") from None


def _to_int(text: str) -> int:
    value = float(text.replace("_", ""))
    if value != int(value):
        raise ValueError("not an integer")
    return int(value)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse config text on top of ``base`` (defaults if omitted); errors name the line."""
    values = {}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigurationError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in seen:
            raise InvalidConfigurationError(f"line {lineno}: {key!r} already set on line {seen[key]}")
        try:
            values[key] = convert(key, value)
        except InvalidConfigurationError as exc:
            raise InvalidConfigurationError(f"line {lineno}: {exc}") from None
        seen[key] = lineno
    try:
        return (base or RunConfig()).replace(**values)
    except InvalidConfigurationError as exc:
        raise InvalidConfigurationError(f"config: {exc}") from None


def _format_value(name: str, value) -> str:
    if value is None:
        return "inf" if name == "M" else "none"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    """Text form with every setting; ``parse_config(format_config(c)) == c``."""
    return "".join(f"{name} = {_format_value(name, getattr(cfg, name))}\n" for name in _FIELDS)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
