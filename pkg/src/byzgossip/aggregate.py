"""Aggregation rules applied by one regular node to the values it received."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, EmptyAfterTrim, InvalidSpec, ZeroDelta

AGGREGATOR_KINDS = ("gossip", "clipped_gossip", "tm", "median", "gm", "mozi")
TAU_KINDS = ("fixed", "oracle", "adaptive")

# Slack for "cumulative weight <= 1 - delta_max" and for floor(beta * m).
_WEIGHT_SLACK = 1e-12


@dataclass
class NeighborView:
    """What regular node ``self_id`` sees in one round.

    ``received`` maps every neighbor id to the vector it sent on the edge to
    this node.  ``weights`` maps neighbor ids and ``self_id`` to mixing weights.
    """

    self_id: int
    self_value: np.ndarray
    received: Mapping[int, np.ndarray]
    weights: Mapping[int, float]

    def __post_init__(self):
        self.self_value = np.asarray(self.self_value, dtype=float)
        d = self.self_value.shape
        for j, v in self.received.items():
            if np.shape(v) != d:
                raise DimensionMismatch(f"value from {j} has shape {np.shape(v)}, expected {d}")

    @classmethod
    def from_row(cls, self_id, self_value, received, row) -> "NeighborView":
        """Build a view taking weights from a full mixing-matrix row."""
        ids = [self_id, *received]
        return cls(self_id, self_value, dict(received), {j: float(row[j]) for j in ids})

    @property
    def neighbor_ids(self) -> list:
        return sorted(self.received)

    def stacked(self, include_self: bool = True) -> np.ndarray:
        rows = [self.received[j] for j in self.neighbor_ids]
        if include_self:
            rows = [self.self_value, *rows]
        return np.asarray(rows, dtype=float).reshape(len(rows), -1)

    def _csr(self, ids):
        msgs = np.asarray([self.received[j] for j in ids], dtype=float).reshape(len(ids), -1)
        w = np.array([self.weights[j] for j in ids], dtype=float)
        return msgs, np.array([0, len(ids)]), w


def clip(z, tau: float) -> np.ndarray:
    """Scale ``z`` down to norm ``tau`` if it is longer; ``tau`` may be ``inf``."""
    z = np.asarray(z, dtype=float)
    if tau < 0:
        raise ValueError("tau must be non-negative")
    norm = float(np.linalg.norm(z))
    if norm > tau:
        return z * (tau / norm)
    return z.copy()


def gossip_step(view: NeighborView) -> np.ndarray:
    """Plain weighted average over self and neighbors."""
    return clipped_gossip_step(view, math.inf)


def clipped_gossip_step(view: NeighborView, tau: float) -> np.ndarray:
    """``x_i + sum_j W_ij clip(x_j - x_i, tau)``.

    Written in displacement form, which equals ``sum_j W_ij (x_i + clip(...))``
    for a row summing to one and makes ``tau = 0`` return ``x_i`` exactly.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    x = view.self_value.reshape(1, -1)
    msgs, indptr, w = view._csr(view.neighbor_ids)
    out = _kernels.clipped_mix(x, msgs, indptr, w, np.array([float(tau)]))
    return out[0].reshape(view.self_value.shape)


def oracle_tau(view: NeighborView, regular_ids, delta_i: float) -> float:
    """Clipping radius computed from the true regular neighbors (simulator-only).

    ``sqrt( (1/delta_i) * sum_{j regular} W_ij ||x_i - x_j||^2 )`` using the
    realized values.
    """
    if delta_i <= 0:
        raise ZeroDelta("oracle clipping radius needs delta_i > 0; use tau = inf instead")
    regular_ids = set(regular_ids)
    ids = [j for j in view.neighbor_ids if j in regular_ids]
    if not ids:
        return 0.0
    msgs, indptr, w = view._csr(ids)
    s = _kernels.weighted_sq_dist(view.self_value.reshape(1, -1), msgs, indptr, w)[0]
    return math.sqrt(s / delta_i)


def adaptive_tau(view: NeighborView, delta_max: float) -> float:
    """Radius from the nearest neighbors carrying total weight at most ``1 - delta_max``.

    Neighbors are sorted by distance (ties by id) and admitted while the
    cumulative weight stays within budget.
    """
    if not 0.0 <= delta_max < 1.0:
        raise ValueError("delta_max must lie in [0, 1)")
    x = view.self_value
    items = sorted((float(np.sum((view.received[j] - x) ** 2)), j) for j in view.neighbor_ids)
    budget = 1.0 - delta_max + _WEIGHT_SLACK
    cum = 0.0
    total = 0.0
    for sq, j in items:
        w = view.weights[j]
        if cum + w > budget:
            break
        cum += w
        total += w * sq
    return math.sqrt(total)


def trim_count(beta: float, m: int) -> int:
    return int(math.floor(beta * m + 1e-9))


def trimmed_mean(view: NeighborView, beta: float) -> np.ndarray:
    """Coordinate-wise trimmed mean over self and neighbors (unweighted).

    Drops ``floor(beta * m)`` values from each end, ``m`` being the number of
    candidates including self.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    pts = view.stacked()
    m = pts.shape[0]
    k = trim_count(beta, m)
    if 2 * k >= m:
        raise EmptyAfterTrim(f"trimming {k} from each end of {m} values leaves nothing")
    return _kernels.trimmed_mean(pts, k).reshape(view.self_value.shape)


def coordinate_median(view: NeighborView) -> np.ndarray:
    return np.median(view.stacked(), axis=0).reshape(view.self_value.shape)


def geometric_median(view: NeighborView, max_iters: int = 8, tol: float = 1e-10) -> np.ndarray:
    """Smoothed Weiszfeld estimate of the geometric median of self and neighbors."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    return _kernels.weiszfeld(view.stacked(), max_iters, tol).reshape(view.self_value.shape)


def mozi_select(view: NeighborView, keep_ratio: float, loss_eval: Callable[[np.ndarray], float]) -> list:
    """Two-stage screening: nearest neighbors by distance, then loss no worse than self.

    Falls back to the single lowest-loss candidate of the distance screen when
    the loss screen removes everybody.  Returns sorted neighbor ids.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError("keep_ratio must lie in (0, 1]")
    ids = view.neighbor_ids
    if not ids:
        return []
    x = view.self_value
    n_keep = min(len(ids), math.ceil(keep_ratio * len(ids) - 1e-9))
    by_dist = sorted(ids, key=lambda j: (float(np.linalg.norm(view.received[j] - x)), j))
    kept = by_dist[:n_keep]
    own = loss_eval(x)
    losses = {j: loss_eval(view.received[j]) for j in kept}
    chosen = [j for j in kept if losses[j] <= own]
    if not chosen:
        chosen = [min(kept, key=lambda j: (losses[j], j))]
    return sorted(chosen)


# ---------------------------------------------------------------------------
# spec
# ---------------------------------------------------------------------------


def _parse_tau(v):
    if isinstance(v, str) and v.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return float(v)


def _dump_tau(v):
    return "inf" if math.isinf(v) else v


@dataclass
class ClipRule:
    kind: str = "oracle"
    tau: float = math.inf

    @classmethod
    def from_dict(cls, d) -> "ClipRule":
        if isinstance(d, str):
            d = {"kind": d}
        d = dict(d or {})
        kind = d.get("kind", "oracle")
        if kind not in TAU_KINDS:
            raise InvalidSpec(f"unknown tau rule {kind!r}; expected one of {TAU_KINDS}")
        tau = _parse_tau(d.get("tau", "inf"))
        if tau < 0:
            raise InvalidSpec("fixed tau must be >= 0")
        if kind == "fixed" and "tau" not in d:
            raise InvalidSpec("fixed tau rule needs 'tau'")
        return cls(kind, tau)

    def to_dict(self) -> dict:
        if self.kind == "fixed":
            return {"kind": "fixed", "tau": _dump_tau(self.tau)}
        return {"kind": self.kind}


@dataclass
class AggregatorSpec:
    kind: str = "gossip"
    tau_rule: ClipRule = field(default_factory=ClipRule)
    beta: object = "auto"  # float, or "auto" = trim the node's Byzantine-neighbor count per side
    gm_iters: int = 8
    keep_ratio: float = 0.99
    mozi_alpha: float | None = None  # None: 0.5 without attack, 1.0 otherwise

    @classmethod
    def from_dict(cls, d) -> "AggregatorSpec":
        if isinstance(d, str):
            d = {"kind": d}
        if not isinstance(d, dict) or "kind" not in d:
            raise InvalidSpec("aggregator spec must be an object with a 'kind'")
        kind = d["kind"]
        if kind not in AGGREGATOR_KINDS:
            raise InvalidSpec(f"unknown aggregator {kind!r}; expected one of {AGGREGATOR_KINDS}")
        p = dict(d.get("params") or {})
        unknown = set(p) - {"tau_rule", "beta", "gm_iters", "keep_ratio", "mozi_alpha"}
        if unknown:
            raise InvalidSpec(f"unknown aggregator params: {sorted(unknown)}")
        beta = p.get("beta", "auto")
        if beta != "auto":
            beta = float(beta)
            if not 0.0 <= beta < 0.5:
                raise InvalidSpec("beta must lie in [0, 0.5)")
        spec = cls(
            kind=kind,
            tau_rule=ClipRule.from_dict(p.get("tau_rule", {"kind": "oracle"})),
            beta=beta,
            gm_iters=int(p.get("gm_iters", 8)),
            keep_ratio=float(p.get("keep_ratio", 0.99)),
            mozi_alpha=None if p.get("mozi_alpha") is None else float(p["mozi_alpha"]),
        )
        if spec.gm_iters < 1:
            raise InvalidSpec("gm_iters must be >= 1")
        if not 0.0 < spec.keep_ratio <= 1.0:
            raise InvalidSpec("keep_ratio must lie in (0, 1]")
        return spec

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": {
                "tau_rule": self.tau_rule.to_dict(),
                "beta": self.beta,
                "gm_iters": self.gm_iters,
                "keep_ratio": self.keep_ratio,
                "mozi_alpha": self.mozi_alpha,
            },
        }
