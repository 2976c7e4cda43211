"""Synchronous simulation loops: pure consensus and momentum SGD with robust aggregation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .aggregate import (
    AggregatorSpec,
    NeighborView,
    adaptive_tau,
    clipped_gossip_step,
    coordinate_median,
    geometric_median,
    mozi_select,
    oracle_tau,
    trimmed_mean,
)
from .attack import AttackSpec, OmniscientState, forge_messages
from .config import ExperimentConfig
from .errors import InvalidSpec, NonFiniteState
from .graph import EffectiveMixing, MixingMatrix, Topology, build_mixing, build_topology, effective_mixing
from .messages import RoundMessages
from .objective import build_objectives, global_gradient, global_value, quadratic_optimum

CSV_HEADER = ("run_id", "round", "grad_norm_sq", "consensus_dist", "mse_to_true_avg", "suboptimality", "mean_tau")

# rng stream tags: (seed, tag, worker, round)
_INIT_GRAD, _GRAD, _MOZI, _BUCKET = 0, 1, 2, 3


@dataclass
class WorkerState:
    x: np.ndarray
    m: np.ndarray


@dataclass
class MetricsRecord:
    round: int
    grad_norm_sq: float | None = None
    consensus_dist: float = 0.0
    mse_to_true_avg: float | None = None
    suboptimality: float | None = None
    mean_tau: float | None = None

    def row(self, run_id: str) -> list:
        return [run_id, str(self.round)] + [
            _fmt(v) for v in (self.grad_norm_sq, self.consensus_dist, self.mse_to_true_avg, self.suboptimality, self.mean_tau)
        ]


def _fmt(v) -> str:
    return "" if v is None else format(float(v), ".17g")


def consensus_distance(X: np.ndarray) -> float:
    """Mean squared distance of the rows of ``X`` to their average."""
    dev = X - X.mean(axis=0)
    return float((dev ** 2).sum(axis=1).mean())


def compute_metrics(states, objectives=None, round: int = 0, true_avg=None, f_star=None, taus=None) -> MetricsRecord:
    """Round summary; gradients are exact (noise-free) at the regular average."""
    X = np.asarray(states, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    xbar = X.mean(axis=0)
    rec = MetricsRecord(round=round, consensus_dist=consensus_distance(X))
    if objectives:
        g = global_gradient(objectives, xbar)
        rec.grad_norm_sq = float(g @ g)
        if f_star is not None:
            rec.suboptimality = global_value(objectives, xbar) - f_star
    if true_avg is not None:
        rec.mse_to_true_avg = float(((X - true_avg) ** 2).sum(axis=1).mean())
    if taus is not None:
        finite = [t for t in taus if math.isfinite(t)]
        rec.mean_tau = float(np.mean(finite)) if finite else None
    return rec


def apply_bucketing(view: NeighborView, s: int, rng) -> NeighborView:
    """Average randomly formed groups of at most ``s`` received values.

    Each bucket is keyed by its smallest member id and weighted by the sum of
    its members' weights; the node's own value is left alone.
    """
    if s < 1:
        raise ValueError("bucket size must be >= 1")
    ids = view.neighbor_ids
    if s == 1 or not ids:
        return NeighborView(view.self_id, view.self_value, dict(view.received), dict(view.weights))
    perm = [ids[k] for k in rng.permutation(len(ids))]
    received = {}
    weights = {view.self_id: view.weights[view.self_id]}
    for start in range(0, len(perm), s):
        group = perm[start:start + s]
        key = min(group)
        received[key] = np.mean([view.received[j] for j in group], axis=0)
        weights[key] = float(sum(view.weights[j] for j in group))
    return NeighborView(view.self_id, view.self_value, received, weights)


class Network:
    """Topology, mixing weights and the per-receiver edge layout used every round."""

    def __init__(self, topology: Topology, mixing: MixingMatrix):
        self.topology = topology
        self.mixing = mixing
        self.effective: EffectiveMixing = effective_mixing(mixing, topology)
        W = mixing.weights
        n_r = topology.n_regular
        indptr, send, wts, reg_ptr, reg_send, reg_w = [0], [], [], [0], [], []
        for i in range(n_r):
            for j in topology.neighbors(i):
                send.append(j)
                wts.append(W[i, j])
                if not topology.is_byzantine(j):
                    reg_send.append(j)
                    reg_w.append(W[i, j])
            indptr.append(len(send))
            reg_ptr.append(len(reg_send))
        self.indptr = np.array(indptr, dtype=np.int64)
        self.send = np.array(send, dtype=np.int64)
        self.edge_w = np.array(wts, dtype=float)
        self.recv = np.repeat(np.arange(n_r), np.diff(self.indptr))
        self.byz_edge = np.array([topology.is_byzantine(j) for j in send], dtype=bool)
        self.reg_ptr = np.array(reg_ptr, dtype=np.int64)
        self.reg_send = np.array(reg_send, dtype=np.int64)
        self.reg_w = np.array(reg_w, dtype=float)

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "Network":
        topo = build_topology(cfg.topology)
        return cls(topo, build_mixing(cfg.mixing, topo))

    @property
    def n_regular(self) -> int:
        return self.topology.n_regular

    def edge_messages(self, X: np.ndarray, byz: RoundMessages) -> np.ndarray:
        msgs = np.empty((len(self.send), X.shape[1]))
        reg = ~self.byz_edge
        msgs[reg] = X[self.send[reg]]
        for e in np.flatnonzero(self.byz_edge):
            msgs[e] = byz[(int(self.send[e]), int(self.recv[e]))]
        return msgs

    def round_messages(self, X: np.ndarray, byz: RoundMessages) -> RoundMessages:
        """Full snapshot of every edge into a regular receiver."""
        out = RoundMessages()
        msgs = self.edge_messages(X, byz)
        for e in range(len(self.send)):
            out[(int(self.send[e]), int(self.recv[e]))] = msgs[e]
        return out

    def view(self, i: int, X: np.ndarray, msgs: np.ndarray) -> NeighborView:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        received = {int(self.send[e]): msgs[e] for e in range(lo, hi)}
        weights = {int(self.send[e]): float(self.edge_w[e]) for e in range(lo, hi)}
        weights[i] = float(self.mixing.weights[i, i])
        return NeighborView(i, X[i], received, weights)

    def oracle_taus(self, X: np.ndarray) -> np.ndarray:
        s = _kernels.weighted_sq_dist(X, X[self.reg_send], self.reg_ptr, self.reg_w)
        delta = self.effective.delta
        taus = np.full(self.n_regular, np.inf)
        pos = delta > 0
        taus[pos] = np.sqrt(s[pos] / delta[pos])
        return taus


def aggregate_round(net: Network, X: np.ndarray, byz: RoundMessages, agg: AggregatorSpec,
                    bucketing: int | None = None, rng_for=None):
    """Apply ``agg`` at every regular node; returns (new states, per-node tau or None).

    ``X`` holds the values regular nodes broadcast (half-steps in training).
    ``rng_for(i)`` supplies the bucketing rng of node ``i``.
    """
    msgs = net.edge_messages(X, byz)
    n_r = net.n_regular
    taus = None

    if agg.kind in ("gossip", "clipped_gossip"):
        rule = agg.tau_rule
        if agg.kind == "gossip":
            taus = np.full(n_r, np.inf)
        elif rule.kind == "fixed":
            taus = np.full(n_r, rule.tau)
        elif rule.kind == "oracle":
            taus = net.oracle_taus(X)
        else:
            taus = np.array([adaptive_tau(net.view(i, X, msgs), net.effective.delta_max) for i in range(n_r)])
        if bucketing is None or bucketing == 1:
            return _kernels.clipped_mix(X, msgs, net.indptr, net.edge_w, taus), taus
        out = np.empty_like(X)
        for i in range(n_r):
            view = apply_bucketing(net.view(i, X, msgs), bucketing, rng_for(i))
            if agg.kind == "clipped_gossip" and rule.kind == "adaptive":
                taus[i] = adaptive_tau(view, net.effective.delta_max)
            out[i] = clipped_gossip_step(view, taus[i])
        return out, taus

    out = np.empty_like(X)
    topo = net.topology
    for i in range(n_r):
        view = net.view(i, X, msgs)
        if bucketing is not None and bucketing > 1:
            view = apply_bucketing(view, bucketing, rng_for(i))
        if agg.kind == "tm":
            m = len(view.received) + 1
            beta = len(topo.byzantine_neighbors(i)) / m if agg.beta == "auto" else agg.beta
            out[i] = trimmed_mean(view, beta)
        elif agg.kind == "median":
            out[i] = coordinate_median(view)
        elif agg.kind == "gm":
            out[i] = geometric_median(view, agg.gm_iters)
        else:
            raise InvalidSpec(f"aggregator {agg.kind!r} cannot run as a plain aggregation step")
    return out, taus


def consensus_round(net: Network, X: np.ndarray, agg: AggregatorSpec, attack: AttackSpec, round: int = 0,
                    bucketing: int | None = None, seed: int = 0):
    """One synchronous consensus round; returns (new states, taus, Byzantine messages)."""
    state = OmniscientState(round=round, half_step=X, weights=net.mixing, topology=net.topology)
    byz = forge_messages(attack, state)
    new, taus = aggregate_round(net, X, byz, agg, bucketing,
                                lambda i: np.random.default_rng([seed, _BUCKET, i, round]))
    return new, taus, byz


def _initial_values(cfg: ExperimentConfig, n_r: int) -> np.ndarray:
    init = cfg.init or {"kind": "gaussian", "dim": 1, "scale": 1.0}
    if "values" in init:
        vals = np.asarray(init["values"], dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != n_r:
            raise InvalidSpec(f"init has {vals.shape[0]} values for {n_r} regular nodes")
        return vals
    if init.get("kind", "gaussian") != "gaussian":
        raise InvalidSpec("init must give 'values' or be {'kind': 'gaussian', ...}")
    rng = np.random.default_rng([cfg.seed, 9])
    return rng.normal(0.0, float(init.get("scale", 1.0)), size=(n_r, int(init.get("dim", 1))))


def _check_finite(records, round, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteState(f"non-finite regular state at round {round}", records, round)


def _append_checked(records, rec: MetricsRecord):
    vals = (rec.grad_norm_sq, rec.consensus_dist, rec.mse_to_true_avg, rec.suboptimality, rec.mean_tau)
    if not all(v is None or math.isfinite(v) for v in vals):
        raise NonFiniteState(f"metrics overflowed at round {rec.round}", records, rec.round)
    records.append(rec)


def run_consensus(cfg: ExperimentConfig, init=None, network: Network | None = None, on_round=None) -> list:
    """Iterate the configured aggregator on fixed initial values.

    ``init`` maps regular id -> vector and overrides ``cfg.init``.
    ``on_round(t, X)`` is called with a copy of the regular states after every
    round, including round 0.
    """
    if cfg.objective is not None:
        raise InvalidSpec("run_consensus expects a config without an objective")
    net = network or Network.from_config(cfg)
    n_r = net.n_regular
    if init is not None:
        missing = set(range(n_r)) - set(init)
        if missing:
            raise InvalidSpec(f"init misses regular nodes {sorted(missing)}")
        X = np.array([np.atleast_1d(np.asarray(init[i], dtype=float)) for i in range(n_r)])
    else:
        X = _initial_values(cfg, n_r)
    true_avg = X.mean(axis=0)
    records = [compute_metrics(X, round=0, true_avg=true_avg)]
    if on_round is not None:
        on_round(0, X.copy())
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is detected explicitly
        for t in range(cfg.rounds):
            X, taus, _ = consensus_round(net, X, cfg.aggregator, cfg.attack, t, cfg.bucketing, cfg.seed)
            _check_finite(records, t + 1, X)
            _append_checked(records, compute_metrics(X, round=t + 1, true_avg=true_avg, taus=taus))
            if on_round is not None:
                on_round(t + 1, X.copy())
    return records


def _x0(cfg: ExperimentConfig, d: int) -> np.ndarray:
    x0 = np.asarray(cfg.x0, dtype=float)
    if x0.ndim == 0:
        return np.full(d, float(x0))
    if x0.shape != (d,):
        raise InvalidSpec(f"x0 must be a scalar or have {d} entries")
    return x0.copy()


def _byzantine_objectives(topo: Topology, objectives: dict) -> dict:
    # each label-flipping Byzantine node borrows the data of its lowest-id regular neighbor
    out = {}
    for j in topo.byzantine:
        nbrs = topo.regular_neighbors(j)
        out[j] = objectives[nbrs[0]] if nbrs else next(iter(objectives.values()))
    return out


def run_training(cfg: ExperimentConfig, network: Network | None = None, on_round=None) -> list:
    """Momentum SGD with exchange-and-aggregate rounds (robust decentralized training).

    Per round and regular worker: ``m <- (1-alpha) m + alpha g(x)``,
    ``x_half = x - eta m``, exchange half-steps, aggregate.  Mozi replaces the
    last three steps with its own screened update.  ``on_round`` is as in
    :func:`run_consensus`.
    """
    if cfg.objective is None:
        raise InvalidSpec("run_training needs an objective")
    net = network or Network.from_config(cfg)
    topo = net.topology
    n_r = net.n_regular
    objs = build_objectives(cfg.objective, topo.regular)
    d = cfg.objective.params["d"]
    f_star = quadratic_optimum(objs)[1] if cfg.objective.kind == "quadratic" else None
    byz_objs = _byzantine_objectives(topo, objs) if cfg.attack.kind == "label_flip" else {}
    seed = cfg.seed

    def rng(tag, i, t):
        return np.random.default_rng([seed, tag, i, t])

    x0 = _x0(cfg, d)
    X = np.tile(x0, (n_r, 1))
    M = np.array([objs[i].stochastic_gradient(x0, rng(_INIT_GRAD, i, 0)) for i in range(n_r)])
    records = [compute_metrics(X, objs, 0, f_star=f_star)]
    if on_round is not None:
        on_round(0, X.copy())

    agg = cfg.aggregator
    mozi_alpha = agg.mozi_alpha
    if mozi_alpha is None:
        mozi_alpha = 0.5 if cfg.attack.kind == "none" or topo.n_byzantine == 0 else 1.0

    with np.errstate(over="ignore", invalid="ignore"):  # divergence is detected explicitly
        for t in range(cfg.rounds):
            if agg.kind == "mozi":
                samples = [objs[i].draw_sample(rng(_MOZI, i, t)) for i in range(n_r)]
                G = np.array([objs[i].stochastic_gradient(X[i], sample=samples[i]) for i in range(n_r)])
                state = OmniscientState(t, X, net.mixing, topo, M, byz_objs, cfg.eta, seed)
                msgs = net.edge_messages(X, forge_messages(cfg.attack, state))
                new = np.empty_like(X)
                for i in range(n_r):
                    view = net.view(i, X, msgs)
                    if cfg.bucketing is not None and cfg.bucketing > 1:
                        view = apply_bucketing(view, cfg.bucketing, rng(_BUCKET, i, t))
                    chosen = mozi_select(view, agg.keep_ratio,
                                         lambda v, o=objs[i], s=samples[i]: o.stochastic_loss(v, s))
                    mixed = np.mean([view.received[j] for j in chosen], axis=0) if chosen else X[i]
                    new[i] = mozi_alpha * X[i] + (1.0 - mozi_alpha) * mixed - cfg.eta * G[i]
                X, taus = new, None
            else:
                G = np.array([objs[i].stochastic_gradient(X[i], rng(_GRAD, i, t)) for i in range(n_r)])
                M = (1.0 - cfg.alpha) * M + cfg.alpha * G
                H = X - cfg.eta * M
                state = OmniscientState(t, H, net.mixing, topo, M, byz_objs, cfg.eta, seed)
                byz = forge_messages(cfg.attack, state)
                X, taus = aggregate_round(net, H, byz, agg, cfg.bucketing, lambda i, t=t: rng(_BUCKET, i, t))
            _check_finite(records, t + 1, X, M)
            _append_checked(records, compute_metrics(X, objs, t + 1, f_star=f_star, taus=taus))
            if on_round is not None:
                on_round(t + 1, X.copy())
    return records


def run(cfg: ExperimentConfig) -> list:
    return run_consensus(cfg) if cfg.mode == "consensus" else run_training(cfg)


def records_to_csv(records, run_id: str, error: str | None = None, error_round: int | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row(run_id))
    if error is not None:
        w.writerow([run_id, "" if error_round is None else str(error_round), error, "", "", "", ""])
    return buf.getvalue()
