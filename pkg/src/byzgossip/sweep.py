"""Cartesian parameter sweeps over experiment configs."""
from __future__ import annotations

import copy
import itertools
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import ExperimentConfig, canonical_json, short_hash
from .engine import records_to_csv, run
from .errors import InfeasibleWeights, InvalidSpec, NonFiniteState

log = logging.getLogger(__name__)

INDEX_NAME = "index.json"


@dataclass
class SweepSpec:
    base: dict
    axes: dict = field(default_factory=dict)  # dotted path -> list of values
    repeats: int = 1

    @classmethod
    def from_dict(cls, d) -> "SweepSpec":
        if not isinstance(d, dict):
            raise InvalidSpec("sweep spec must be a JSON object")
        unknown = set(d) - {"base", "axes", "repeats"}
        if unknown:
            raise InvalidSpec(f"unknown sweep keys: {sorted(unknown)}")
        if not isinstance(d.get("base"), dict):
            raise InvalidSpec("sweep spec needs a 'base' config object")
        axes = d.get("axes") or {}
        if not isinstance(axes, dict) or not axes:
            raise InvalidSpec("sweep spec needs at least one axis")
        for path, values in axes.items():
            if not isinstance(values, list) or not values:
                raise InvalidSpec(f"axis {path!r} must be a non-empty list")
        repeats = int(d.get("repeats", 1))
        if repeats < 1:
            raise InvalidSpec("repeats must be >= 1")
        spec = cls(copy.deepcopy(d["base"]), dict(axes), repeats)
        # resolve every path once so typos fail before anything runs
        ExperimentConfig.from_dict(spec.base)
        for path in spec.axes:
            set_path(copy.deepcopy(spec.base), path, spec.axes[path][0])
        return spec

    def points(self):
        """Yield ``(params, repeat, config dict)`` in a fixed order."""
        paths = list(self.axes)
        base_seed = int(self.base.get("seed", 0))
        for combo in itertools.product(*(self.axes[p] for p in paths)):
            params = dict(zip(paths, combo))
            for r in range(self.repeats):
                doc = copy.deepcopy(self.base)
                for p, v in params.items():
                    set_path(doc, p, v)
                doc["seed"] = base_seed + r
                yield params, r, doc


def set_path(doc: dict, path: str, value):
    """Set ``doc[a][b][c] = value`` for ``path = 'a.b.c'``, creating ``params``-style dicts as needed."""
    keys = path.split(".")
    if not all(keys):
        raise InvalidSpec(f"bad parameter path {path!r}")
    node = doc
    for k in keys[:-1]:
        nxt = node.get(k) if isinstance(node, dict) else None
        if nxt is None:
            if not isinstance(node, dict):
                raise InvalidSpec(f"cannot resolve parameter path {path!r}")
            nxt = node[k] = {}
        if isinstance(nxt, str):  # shorthand such as "attack": "dissensus"
            nxt = node[k] = {"kind": nxt}
        if not isinstance(nxt, dict):
            raise InvalidSpec(f"cannot resolve parameter path {path!r}")
        node = nxt
    node[keys[-1]] = value


def point_hash(params: dict, repeat: int) -> str:
    return short_hash({"params": params, "repeat": repeat})


def atomic_write(path: Path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _run_point(params, repeat, doc, out_dir: Path) -> dict:
    h = point_hash(params, repeat)
    entry = {"hash": h, "params": params, "repeat": repeat, "seed": doc["seed"],
             "status": "ok", "reason": None, "file": None}
    try:
        cfg = ExperimentConfig.from_dict(doc)
        run_id = cfg.run_id or h
        text = records_to_csv(run(cfg), run_id)
    except InfeasibleWeights as exc:
        log.info("skipping infeasible point %s %s: %s", h, canonical_json(params), exc)
        entry.update(status="infeasible", reason=str(exc))
        return entry
    except NonFiniteState as exc:
        text = records_to_csv(exc.records or [], run_id, "NonFiniteState", exc.round)
        entry.update(status="nonfinite", reason=str(exc))
    except Exception as exc:  # one bad point must not stop the sweep
        log.warning("point %s failed: %s", h, exc)
        entry.update(status="error", reason=f"{type(exc).__name__}: {exc}")
        return entry
    name = f"{h}.csv"
    atomic_write(out_dir / name, text)
    entry["file"] = name
    return entry


def run_sweep(spec: SweepSpec, out_dir, parallel: int = 1) -> list:
    """Run every point, write one CSV each plus ``index.json``; returns the index entries."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    points = list(spec.points())
    if parallel <= 1:
        entries = [_run_point(p, r, d, out_dir) for p, r, d in points]
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            entries = list(pool.map(lambda a: _run_point(*a, out_dir), points))
    atomic_write(out_dir / INDEX_NAME, json.dumps(entries, indent=2, sort_keys=True) + "\n")
    return entries
