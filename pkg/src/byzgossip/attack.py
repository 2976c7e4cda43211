"""Omniscient Byzantine message generators.

Each generator sees the full network state of the current round and returns
the vector a Byzantine node sends along one edge.  Nothing here mutates regular
state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import (
    DegenerateQuantile,
    InvalidSpec,
    NoByzantineNeighbor,
    NoRegularNeighbor,
    UnsupportedAttackForMode,
)
from .graph import MixingMatrix, Topology
from .messages import RoundMessages

ATTACK_KINDS = ("none", "dissensus", "zero_sum", "alie", "ipm", "bit_flip", "label_flip")

DEFAULT_EPSILON = {
    ("dissensus", "consensus"): 0.05,
    ("dissensus", "training"): 1.5,
    ("ipm", "consensus"): 0.1,
    ("ipm", "training"): 0.1,
}


@dataclass
class AttackSpec:
    kind: str = "none"
    epsilon: float | None = None
    z_override: float | None = None
    per_target: dict = field(default_factory=dict)  # regular id -> epsilon

    @classmethod
    def from_dict(cls, d) -> "AttackSpec":
        if d is None:
            return cls()
        if isinstance(d, str):
            d = {"kind": d}
        if not isinstance(d, dict):
            raise InvalidSpec("attack spec must be an object")
        unknown = set(d) - {"kind", "epsilon", "z_override", "per_target"}
        if unknown:
            raise InvalidSpec(f"unknown attack keys: {sorted(unknown)}")
        kind = d.get("kind", "none")
        if kind not in ATTACK_KINDS:
            raise InvalidSpec(f"unknown attack {kind!r}; expected one of {ATTACK_KINDS}")
        eps = d.get("epsilon")
        if eps is not None:
            eps = float(eps)
            if eps <= 0:
                raise InvalidSpec("epsilon must be positive")
        per = {int(k): float(v) for k, v in (d.get("per_target") or {}).items()}
        if any(v <= 0 for v in per.values()):
            raise InvalidSpec("per-target epsilon must be positive")
        z = d.get("z_override")
        return cls(kind, eps, None if z is None else float(z), per)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "epsilon": self.epsilon,
            "z_override": self.z_override,
            "per_target": {str(k): v for k, v in sorted(self.per_target.items())},
        }

    def epsilon_for(self, i: int, mode: str) -> float:
        if i in self.per_target:
            return self.per_target[i]
        if self.epsilon is not None:
            return self.epsilon
        return DEFAULT_EPSILON[(self.kind, mode)]


@dataclass
class OmniscientState:
    """Everything an attacker may read in one round.

    ``half_step`` is indexed by regular id (row ``i`` is node ``i``).  The
    objective-related fields are only set in training mode.
    """

    round: int
    half_step: np.ndarray
    weights: MixingMatrix
    topology: Topology
    regular_momenta: np.ndarray | None = None
    objectives: dict | None = None
    eta: float = 0.0
    seed: int = 0

    @property
    def mode(self) -> str:
        return "consensus" if self.objectives is None else "training"


def _regular_displacement(i: int, state: OmniscientState):
    """``sum_{k in N_i ∩ V_R} W_ik (x_k - x_i)`` and the regular weight total."""
    W = state.weights.weights
    x = state.half_step
    acc = np.zeros_like(x[i])
    wsum = 0.0
    for k in state.topology.regular_neighbors(i):
        acc = acc + W[i, k] * (x[k] - x[i])
        wsum += W[i, k]
    return acc, wsum


def dissensus_message(i: int, epsilon_i: float, state: OmniscientState) -> np.ndarray:
    """``x_i - eps_i * sum_R W_ik (x_k - x_i) / sum_B W_ij``.

    With ``eps_i = 1`` plain gossip at ``i`` returns ``x_i`` unchanged.
    """
    W = state.weights.weights
    byz = state.topology.byzantine_neighbors(i)
    byz_weight = sum(W[i, j] for j in byz)
    if not byz or byz_weight <= 0:
        raise NoByzantineNeighbor(f"regular node {i} has no Byzantine neighbor")
    disp, _ = _regular_displacement(i, state)
    return state.half_step[i] - epsilon_i * disp / byz_weight


def zero_sum_message(i: int, state: OmniscientState) -> np.ndarray:
    """``- sum_{k in N_i ∩ V_R} x_k / |N_i ∩ V_B|``."""
    byz = state.topology.byzantine_neighbors(i)
    if not byz:
        raise NoByzantineNeighbor(f"regular node {i} has no Byzantine neighbor")
    x = state.half_step
    total = np.zeros_like(x[i])
    for k in state.topology.regular_neighbors(i):
        total = total + x[k]
    return -total / len(byz)


def alie_z(n: int, b: int) -> float:
    """Largest ``z`` with ``Phi(z) < (n - b - s) / (n - b)``, ``s = floor(n/2 + 1) - b``.

    The supremum of the strict inequality is the standard-normal quantile.
    """
    if not n > b >= 0:
        raise DegenerateQuantile("need n > b >= 0")
    s = math.floor(n / 2 + 1) - b
    q = (n - b - s) / (n - b)
    if not 0.0 < q < 1.0:
        raise DegenerateQuantile(f"target probability {q} is outside (0, 1)")
    return float(ndtri(q))


def alie_message(i: int, z: float, state: OmniscientState) -> np.ndarray:
    """``mu - z * sigma`` over the regular neighborhood of ``i`` (self included).

    ``sigma`` uses the population divisor.
    """
    x = state.half_step
    ids = [i, *state.topology.regular_neighbors(i)]
    vals = x[ids]
    return vals.mean(axis=0) - z * vals.std(axis=0)


def ipm_message(i: int, epsilon: float, state: OmniscientState) -> np.ndarray:
    """Gossip-form inner-product manipulation centred at the target.

    ``x_i - eps * sum_R W_ik (x_k - x_i) / sum_R W_ik``.
    """
    disp, wsum = _regular_displacement(i, state)
    if wsum <= 0:
        raise NoRegularNeighbor(f"regular node {i} has no regular neighbor")
    return state.half_step[i] - epsilon * disp / wsum


def _neighbor_mean(j: int, state: OmniscientState) -> np.ndarray:
    nbrs = state.topology.regular_neighbors(j)
    if not nbrs:
        return np.zeros(state.half_step.shape[1:])
    return state.half_step[list(nbrs)].mean(axis=0)


def benign_message(j: int, state: OmniscientState) -> np.ndarray:
    """Control arm: the Byzantine node echoes its regular neighbors' mean."""
    return _neighbor_mean(j, state)


def bit_flip_message(j: int, state: OmniscientState) -> np.ndarray:
    """Sign-flipped stand-in model (mean of the regular neighbors' half-steps)."""
    return -_neighbor_mean(j, state)


def label_flip_gradient(objective, x, rng=None) -> np.ndarray:
    """Gradient of ``objective`` at ``x`` computed against flipped labels/targets."""
    if objective is None:
        raise UnsupportedAttackForMode("label flipping needs a training objective")
    return objective.stochastic_gradient(x, rng, flipped=True)


def label_flip_message(j: int, state: OmniscientState) -> np.ndarray:
    """Stand-in model after one SGD step on label-flipped data."""
    if state.objectives is None:
        raise UnsupportedAttackForMode("label_flip is not defined in consensus mode")
    ref = _neighbor_mean(j, state)
    rng = np.random.default_rng([state.seed, 4, j, state.round])
    return ref - state.eta * label_flip_gradient(state.objectives[j], ref, rng)


def forge_messages(spec: AttackSpec, state: OmniscientState) -> RoundMessages:
    """One vector per Byzantine -> regular edge.

    Target-specific attacks (dissensus, zero_sum, alie, ipm) send each target
    its own message; sender-specific ones (none, bit_flip, label_flip) send the
    same vector on all edges of the sender.
    """
    topo = state.topology
    mode = state.mode
    if spec.kind == "label_flip" and mode == "consensus":
        raise UnsupportedAttackForMode("label_flip is not defined in consensus mode")
    out = RoundMessages()
    if topo.n_byzantine == 0:
        return out

    if spec.kind in ("none", "bit_flip", "label_flip"):
        make = {"none": benign_message, "bit_flip": bit_flip_message, "label_flip": label_flip_message}[spec.kind]
        for j in topo.byzantine:
            msg = make(j, state)
            for i in topo.regular_neighbors(j):
                out[(j, i)] = msg
        return out

    z = None
    if spec.kind == "alie":
        z = spec.z_override if spec.z_override is not None else alie_z(topo.n_total, topo.n_byzantine)
    for i in topo.regular:
        byz = topo.byzantine_neighbors(i)
        if not byz:
            continue
        if spec.kind == "dissensus":
            msg = dissensus_message(i, spec.epsilon_for(i, mode), state)
        elif spec.kind == "zero_sum":
            msg = zero_sum_message(i, state)
        elif spec.kind == "alie":
            msg = alie_message(i, z, state)
        elif spec.kind == "ipm":
            msg = ipm_message(i, spec.epsilon_for(i, mode), state)
        else:  # pragma: no cover - guarded by AttackSpec validation
            raise InvalidSpec(spec.kind)
        for j in byz:
            out[(j, i)] = msg
    return out
