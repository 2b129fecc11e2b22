"""Benchmark configuration: one JSON file, nested by component."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .planner import PlannerConfig
from .sim.episode import EpisodeConfig
from .voxel import GridSpec
from .warp import AggregateConfig, PerceptionConfig


@dataclass(frozen=True)
class PlanSuiteConfig:
    n_objects: int = 3
    n_pushes: int = 3  # policy pushes that produce the target from the start scene
    replan: bool = True
    baseline: bool = True


@dataclass(frozen=True)
class BenchConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    aggregate: AggregateConfig = field(default_factory=lambda: AggregateConfig(overflow="drop_smallest"))
    # centroid error in m^2 is tiny next to IoU; weight it up for pushing tasks
    planner: PlannerConfig = field(default_factory=lambda: PlannerConfig(lam=(100.0,), n_samples=200, clearance=3.0))
    plan_suite: PlanSuiteConfig = field(default_factory=PlanSuiteConfig)
    seeds: tuple = (0, 100)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["grid"] = self.grid.to_dict()
        return _jsonable(d)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        d = dict(d)
        d.pop("schema_version", None)
        kw = {}
        if "grid" in d:
            kw["grid"] = GridSpec.from_dict(d["grid"])
        if "episode" in d:
            kw["episode"] = EpisodeConfig.from_dict(d["episode"])
        if "aggregate" in d:
            agg = dict(d["aggregate"])
            agg["perception"] = PerceptionConfig(**agg.get("perception", {}))
            kw["aggregate"] = AggregateConfig(**{**dataclasses.asdict(AggregateConfig(overflow="drop_smallest")), **agg})
        if "planner" in d:
            kw["planner"] = PlannerConfig(**{**dataclasses.asdict(BenchConfig().planner), **d["planner"]})
        if "plan_suite" in d:
            kw["plan_suite"] = PlanSuiteConfig(**d["plan_suite"])
        if "seeds" in d:
            kw["seeds"] = tuple(d["seeds"])
        unknown = set(d) - {"grid", "episode", "aggregate", "planner", "plan_suite", "seeds"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        return cls(**kw)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def load_config(path=None) -> BenchConfig:
    if path is None:
        return BenchConfig()
    return BenchConfig.from_dict(json.loads(Path(path).read_text()))


def apply_overrides(cfg: BenchConfig, items) -> BenchConfig:
    """Apply ``section.field=value`` overrides; values parse as JSON, else stay strings."""
    d = cfg.to_dict()
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        *path, last = key.split(".")
        for part in path:
            if not isinstance(node.get(part), dict):
                raise ValueError(f"unknown config key {key!r}")
            node = node[part]
        if last not in node:
            raise ValueError(f"unknown config key {key!r}")
        node[last] = value
    return BenchConfig.from_dict(d)


def parse_seed_range(text: str) -> tuple[int, int]:
    """``"a:b"`` is the half-open range [a, b); a single integer is one seed."""
    if ":" in text:
        a, b = text.split(":", 1)
        lo, hi = int(a), int(b)
    else:
        lo = int(text)
        hi = lo + 1
    if hi <= lo:
        raise ValueError(f"empty seed range {text!r}")
    return lo, hi
