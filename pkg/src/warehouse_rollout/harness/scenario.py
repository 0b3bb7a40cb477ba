"""Scenario configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from ..dynamics import CostParams
from ..policies import ARRIVAL_MODES
from ..rollout import DEFAULT_MAX_RESHUFFLES
from .mapgen import LayoutParams

PLANNERS = ("MA-Rollout", "MA-Rollout-NoPrecompute", "CoopAStar", "StandardRollout")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    map_file: str | None = None
    layout: LayoutParams = field(default_factory=LayoutParams)
    map_seed: int = 0
    agents: int = 8
    goods: int = 60
    seed: int = 0
    planner: str = "MA-Rollout"
    cost: CostParams = field(default_factory=CostParams)
    max_reshuffles: int = DEFAULT_MAX_RESHUFFLES
    freeze_period: int = 8
    sim_arrival: str = "park"
    park_at_home: bool = True
    sim_follow_on: bool = True
    reserve_homes: bool = True
    malfunction_fraction: float = 0.0
    malfunction_window: int = 0  # 0: first half of the estimated episode length
    max_stages: int = 2000

    def __post_init__(self):
        if self.agents < 1:
            raise ConfigError("agents must be >= 1")
        if self.goods < 1:
            raise ConfigError("goods must be >= 1")
        if self.planner not in PLANNERS:
            raise ConfigError(f"unknown planner {self.planner!r}; expected one of {', '.join(PLANNERS)}")
        if self.sim_arrival not in ARRIVAL_MODES:
            raise ConfigError(f"sim_arrival must be one of {', '.join(ARRIVAL_MODES)}")
        if not 0.0 <= self.malfunction_fraction <= 0.2:
            raise ConfigError("malfunction_fraction must lie in [0, 0.2]")
        if self.max_reshuffles < 0 or self.max_stages < 1 or self.freeze_period < 1:
            raise ConfigError("max_reshuffles >= 0, max_stages >= 1 and freeze_period >= 1 required")

    @property
    def malfunctioning(self) -> int:
        return int(self.malfunction_fraction * self.agents)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


_LAYOUT_KEYS = {f.name for f in fields(LayoutParams)}
_COST_KEYS = {"alpha", "c1", "c2", "swap_conflicts"}


def _coerce(raw: str, kind):
    kind = str(kind)
    if "bool" in kind:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if "int" in kind and "None" not in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    if "None" in kind:
        return None if raw.strip() in ("", "none", "None") else raw.strip()
    return raw.strip()


def parse_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    base = base or ScenarioConfig()
    top: dict = {}
    layout: dict = {}
    cost: dict = {}
    top_types = {f.name: f.type for f in fields(ScenarioConfig) if f.name not in ("layout", "cost")}
    layout_types = {f.name: f.type for f in fields(LayoutParams)}
    cost_types = {f.name: f.type for f in fields(CostParams)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in top_types:
                top[key] = _coerce(value, top_types[key])
            elif key in _LAYOUT_KEYS:
                layout[key] = _coerce(value, layout_types[key])
            elif key in _COST_KEYS:
                cost[key] = _coerce(value, cost_types[key])
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
    if layout:
        top["layout"] = dataclasses.replace(base.layout, **layout)
    if cost:
        top["cost"] = dataclasses.replace(base.cost, **cost)
    return dataclasses.replace(base, **top)


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: ScenarioConfig) -> str:
    lines = []
    for f in fields(ScenarioConfig):
        v = getattr(cfg, f.name)
        if f.name == "layout":
            lines += [f"{k} = {val}" for k, val in dataclasses.asdict(v).items()]
        elif f.name == "cost":
            lines += [f"{k} = {val}" for k, val in dataclasses.asdict(v).items()]
        else:
            lines.append(f"{f.name} = {'' if v is None else v}")
    return "\n".join(lines) + "\n"
