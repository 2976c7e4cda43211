"""Experiment configuration documents (JSON in, JSON out)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .aggregate import AggregatorSpec
from .attack import AttackSpec
from .errors import InvalidSpec
from .graph import MixingSpec, TopologySpec
from .objective import ObjectiveSpec

_KEYS = {"run_id", "topology", "mixing", "aggregator", "attack", "objective", "init", "x0",
         "eta", "alpha", "bucketing", "rounds", "seed"}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def short_hash(obj, n: int = 16) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:n]


@dataclass
class ExperimentConfig:
    topology: TopologySpec
    mixing: MixingSpec = field(default_factory=MixingSpec)
    aggregator: AggregatorSpec = field(default_factory=AggregatorSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    objective: ObjectiveSpec | None = None
    init: dict | None = None
    x0: object = 0.0
    eta: float = 0.1
    alpha: float = 1.0
    bucketing: int | None = None
    rounds: int = 100
    seed: int = 0
    run_id: str | None = None

    @property
    def mode(self) -> str:
        return "consensus" if self.objective is None else "training"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise InvalidSpec("experiment config must be a JSON object")
        unknown = set(d) - _KEYS
        if unknown:
            raise InvalidSpec(f"unknown config keys: {sorted(unknown)}")
        if "topology" not in d:
            raise InvalidSpec("config needs a 'topology'")
        try:
            cfg = cls(
                topology=TopologySpec.from_dict(d["topology"]),
                mixing=MixingSpec.from_dict(d.get("mixing")),
                aggregator=AggregatorSpec.from_dict(d.get("aggregator", {"kind": "gossip"})),
                attack=AttackSpec.from_dict(d.get("attack")),
                objective=None if d.get("objective") is None else ObjectiveSpec.from_dict(d["objective"]),
                init=d.get("init"),
                x0=d.get("x0", 0.0),
                eta=float(d.get("eta", 0.1)),
                alpha=float(d.get("alpha", 1.0)),
                bucketing=None if d.get("bucketing") is None else int(d["bucketing"]),
                rounds=int(d.get("rounds", 100)),
                seed=int(d.get("seed", 0)),
                run_id=d.get("run_id"),
            )
        except (TypeError, ValueError, KeyError) as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(f"malformed config: {exc}") from None
        cfg.validate()
        return cfg

    def validate(self):
        if self.rounds < 0:
            raise InvalidSpec("rounds must be >= 0")
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidSpec("alpha must lie in (0, 1]")
        if self.eta < 0:
            raise InvalidSpec("eta must be >= 0")
        if self.bucketing is not None and self.bucketing < 1:
            raise InvalidSpec("bucket size must be >= 1")
        if self.mode == "consensus" and self.aggregator.kind == "mozi":
            raise InvalidSpec("mozi needs a training objective")

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "topology": self.topology.to_dict(),
            "mixing": self.mixing.to_dict(),
            "aggregator": self.aggregator.to_dict(),
            "attack": self.attack.to_dict(),
            "objective": None if self.objective is None else self.objective.to_dict(),
            "init": self.init,
            "x0": self.x0,
            "eta": self.eta,
            "alpha": self.alpha,
            "bucketing": self.bucketing,
            "rounds": self.rounds,
            "seed": self.seed,
        }

    def resolved_run_id(self) -> str:
        if self.run_id:
            return str(self.run_id)
        d = self.to_dict()
        d.pop("run_id")
        return short_hash(d, 12)


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(load_json(path))


PRESET_DIR = Path(__file__).with_name("presets")


def preset_path(name: str) -> Path:
    p = PRESET_DIR / f"{name}.json"
    if not p.exists():
        raise InvalidSpec(f"unknown preset {name!r}; available: {preset_names()}")
    return p


def preset_names() -> list:
    return sorted(p.stem for p in PRESET_DIR.glob("*.json"))
