"""Topologies with Byzantine attachments, mixing weights and spectral quantities.

Node ids are integers.  Regular nodes always come first (``0..n_regular-1``)
followed by Byzantine nodes, so a regular node's id doubles as its row index in
the effective mixing matrix.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Any

import networkx as nx
import numpy as np

from .errors import DegreeExceedsBound, DisconnectedRegularSubgraph, InfeasibleWeights, InvalidSpec

TOPOLOGY_KINDS = ("complete", "ring", "torus", "small_world", "dumbbell", "custom")
MIXING_RULES = ("metropolis_hastings", "equal", "target_spectrum")

_ROW_TOL = 1e-12


def _seed_int(seed) -> int:
    return int(seed) & 0xFFFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# topology
# ---------------------------------------------------------------------------


@dataclass
class TopologySpec:
    kind: str
    params: dict = field(default_factory=dict)
    byz_attach: Any = None  # list of [byz_id, [targets]] or {"random": {"count", "degree"}}
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "TopologySpec":
        if not isinstance(d, dict) or "kind" not in d:
            raise InvalidSpec("topology spec must be an object with a 'kind'")
        unknown = set(d) - {"kind", "params", "byz_attach", "seed"}
        if unknown:
            raise InvalidSpec(f"unknown topology keys: {sorted(unknown)}")
        byz = d.get("byz_attach")
        if isinstance(byz, list):
            byz = [[int(b), [int(t) for t in targets]] for b, targets in byz]
        return cls(kind=d["kind"], params=dict(d.get("params") or {}), byz_attach=byz, seed=int(d.get("seed", 0)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "byz_attach": self.byz_attach, "seed": self.seed}


@dataclass(frozen=True, eq=False)
class Topology:
    n_total: int
    regular: tuple
    byzantine: tuple
    edges: tuple  # sorted (a, b) pairs with a < b

    def __post_init__(self):
        nbrs = [[] for _ in range(self.n_total)]
        for a, b in self.edges:
            nbrs[a].append(b)
            nbrs[b].append(a)
        object.__setattr__(self, "_nbrs", tuple(tuple(sorted(n)) for n in nbrs))
        object.__setattr__(self, "_byz", frozenset(self.byzantine))

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    @property
    def n_regular(self) -> int:
        return len(self.regular)

    @property
    def n_byzantine(self) -> int:
        return len(self.byzantine)

    def is_byzantine(self, i: int) -> bool:
        return i in self._byz

    def neighbors(self, i: int) -> tuple:
        return self._nbrs[i]

    def regular_neighbors(self, i: int) -> tuple:
        return tuple(j for j in self._nbrs[i] if j not in self._byz)

    def byzantine_neighbors(self, i: int) -> tuple:
        return tuple(j for j in self._nbrs[i] if j in self._byz)

    def degree(self, i: int) -> int:
        return len(self._nbrs[i])

    def regular_subgraph_connected(self) -> bool:
        g = nx.Graph()
        g.add_nodes_from(self.regular)
        g.add_edges_from((a, b) for a, b in self.edges if a not in self._byz and b not in self._byz)
        return g.number_of_nodes() > 0 and nx.is_connected(g)

    def to_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "regular": list(self.regular),
            "byzantine": list(self.byzantine),
            "edges": [list(e) for e in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_edges(cls, n_regular: int, edges, byzantine_count: int = 0, check: bool = True) -> "Topology":
        n_total = n_regular + byzantine_count
        clean = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise InvalidSpec(f"self-loop at node {a}")
            if not (0 <= a < n_total and 0 <= b < n_total):
                raise InvalidSpec(f"edge ({a}, {b}) references unknown node")
            clean.add((min(a, b), max(a, b)))
        topo = cls(
            n_total=n_total,
            regular=tuple(range(n_regular)),
            byzantine=tuple(range(n_regular, n_total)),
            edges=tuple(sorted(clean)),
        )
        if check and not topo.regular_subgraph_connected():
            raise DisconnectedRegularSubgraph("the regular subgraph is not connected")
        return topo


def _need(params, key, minimum=1):
    if key not in params:
        raise InvalidSpec(f"missing topology parameter '{key}'")
    try:
        v = params[key]
        if isinstance(v, bool) or int(v) != v:
            raise ValueError
        v = int(v)
    except (TypeError, ValueError):
        raise InvalidSpec(f"topology parameter '{key}' must be an integer") from None
    if v < minimum:
        raise InvalidSpec(f"topology parameter '{key}' must be >= {minimum}")
    return v


def _regular_edges(spec: TopologySpec, seed: int):
    p = spec.params
    kind = spec.kind
    if kind == "complete":
        n = _need(p, "n")
        return n, list(itertools.combinations(range(n), 2))
    if kind == "ring":
        n = _need(p, "n", 2)
        return n, [(i, (i + 1) % n) for i in range(n) if i != (i + 1) % n]
    if kind == "torus":
        rows, cols = _need(p, "rows"), _need(p, "cols")
        g = nx.grid_2d_graph(rows, cols, periodic=True)
        label = {(r, c): r * cols + c for r in range(rows) for c in range(cols)}
        return rows * cols, [(label[a], label[b]) for a, b in g.edges() if a != b]
    if kind == "small_world":
        n, k = _need(p, "n", 3), _need(p, "k_neighbors")
        prob = float(p.get("rewire_prob", 0.0))
        if not 0.0 <= prob <= 1.0:
            raise InvalidSpec("rewire_prob must lie in [0, 1]")
        if k >= n:
            raise InvalidSpec("k_neighbors must be smaller than n")
        nx_seed = int(np.random.SeedSequence([seed, 0]).generate_state(1)[0])
        try:
            g = nx.connected_watts_strogatz_graph(n, k, prob, tries=100, seed=nx_seed)
        except nx.NetworkXError as exc:
            raise DisconnectedRegularSubgraph(f"small-world rewiring stayed disconnected after 100 tries: {exc}") from None
        return n, list(g.edges())
    if kind == "dumbbell":
        a, b = _need(p, "clique_a"), _need(p, "clique_b")
        cut = _need(p, "extra_cut_edges", 0)
        if cut > min(a, b):
            raise InvalidSpec("extra_cut_edges cannot exceed the smaller clique size")
        edges = list(itertools.combinations(range(a), 2))
        edges += [(a + i, a + j) for i, j in itertools.combinations(range(b), 2)]
        # cut edge k joins the k-th node of each clique, starting from the facing ends
        edges += [(a - 1 - k, a + k) for k in range(cut)]
        return a + b, edges
    if kind == "custom":
        n = _need(p, "n")
        edges = p.get("edges")
        if edges is None:
            raise InvalidSpec("custom topology needs 'edges'")
        for e in edges:
            if len(e) != 2:
                raise InvalidSpec(f"malformed edge {e!r}")
            if not all(0 <= int(v) < n for v in e):
                raise InvalidSpec(f"custom edge {e!r} references a non-regular node")
        return n, [(int(x), int(y)) for x, y in edges]
    raise InvalidSpec(f"unknown topology kind {kind!r}; expected one of {TOPOLOGY_KINDS}")


def build_topology(spec: TopologySpec, seed: int | None = None) -> Topology:
    """Build the graph described by ``spec``; ``seed`` overrides ``spec.seed``."""
    if isinstance(spec, dict):
        spec = TopologySpec.from_dict(spec)
    seed = _seed_int(spec.seed if seed is None else seed)
    n_reg, edges = _regular_edges(spec, seed)

    attach = spec.byz_attach
    byz_edges = []
    n_byz = 0
    if attach is None or attach == []:
        pass
    elif isinstance(attach, dict):
        if set(attach) != {"random"}:
            raise InvalidSpec("byz_attach object form must be {'random': {...}}")
        r = attach["random"]
        count, degree = _need(r, "count", 0), _need(r, "degree")
        if degree > n_reg:
            raise InvalidSpec("Byzantine degree exceeds the number of regular nodes")
        rng = np.random.default_rng([seed, 1])
        for k in range(count):
            targets = sorted(int(t) for t in rng.choice(n_reg, size=degree, replace=False))
            byz_edges += [(n_reg + k, t) for t in targets]
        n_byz = count
    elif isinstance(attach, (list, tuple)):
        for k, item in enumerate(attach):
            try:
                byz_id, targets = item
            except (TypeError, ValueError):
                raise InvalidSpec(f"malformed byz_attach entry {item!r}") from None
            if int(byz_id) != n_reg + k:
                raise InvalidSpec(f"Byzantine ids must be consecutive after the regular ids; expected {n_reg + k}, got {byz_id}")
            if not targets:
                raise InvalidSpec(f"Byzantine node {byz_id} has no targets")
            for t in targets:
                if not 0 <= int(t) < n_reg:
                    raise InvalidSpec(f"Byzantine node {byz_id} targets non-regular node {t}")
                byz_edges.append((int(byz_id), int(t)))
        n_byz = len(attach)
    else:
        raise InvalidSpec("byz_attach must be a list or {'random': {...}}")

    return Topology.from_edges(n_reg, edges + byz_edges, n_byz)


# ---------------------------------------------------------------------------
# mixing weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    weights: np.ndarray  # (n_total, n_total); only regular rows are meaningful

    def row(self, i: int) -> np.ndarray:
        return self.weights[i]


def _fill_diagonal(w: np.ndarray) -> np.ndarray:
    np.fill_diagonal(w, 0.0)
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return w


def apply_overrides(w: MixingMatrix, topology: Topology, overrides) -> MixingMatrix:
    """Set explicit symmetric edge weights and rebalance the self-weights."""
    mat = w.weights.copy()
    edge_set = set(topology.edges)
    for i, j, val in overrides:
        i, j = int(i), int(j)
        if (min(i, j), max(i, j)) not in edge_set:
            raise InvalidSpec(f"override ({i}, {j}) is not an edge")
        if val <= 0:
            raise InvalidSpec("edge weight overrides must be positive")
        mat[i, j] = mat[j, i] = float(val)
    return MixingMatrix(_fill_diagonal(mat))


def metropolis_hastings_weights(topology: Topology, byzantine_degree_one: bool = False) -> MixingMatrix:
    """``W_ij = 1 / (max(d_i, d_j) + 1)`` on edges, self-weight takes the rest.

    With ``byzantine_degree_one`` Byzantine nodes report degree 1, the largest
    weight they can extract from a neighbor.
    """
    n = topology.n_total
    deg = np.array([topology.degree(i) for i in range(n)], dtype=float)
    if byzantine_degree_one:
        for b in topology.byzantine:
            deg[b] = 1.0
    w = np.zeros((n, n))
    for a, b in topology.edges:
        w[a, b] = w[b, a] = 1.0 / (max(deg[a], deg[b]) + 1.0)
    return MixingMatrix(_fill_diagonal(w))


def equal_weights(topology: Topology, d_max: int) -> MixingMatrix:
    """All edges get ``1 / (d_max + 1)``; ``d_max`` is a public degree bound."""
    n = topology.n_total
    for i in range(n):
        if topology.degree(i) > d_max:
            raise DegreeExceedsBound(f"node {i} has degree {topology.degree(i)} > d_max={d_max}")
    w = np.zeros((n, n))
    for a, b in topology.edges:
        w[a, b] = w[b, a] = 1.0 / (d_max + 1.0)
    return MixingMatrix(_fill_diagonal(w))


def target_spectrum_weights(topology: Topology, target_p: float, target_delta: float, fixed_edges=()) -> MixingMatrix:
    """Weights hitting a prescribed ``p = 1 - (1 - gamma)^2`` and Byzantine weight.

    Every regular node with Byzantine neighbors puts total weight
    ``target_delta`` on them (split evenly).  Regular edges listed in
    ``fixed_edges`` as ``[i, j, w]`` keep their weight; all remaining regular
    edges share one common weight, found by bisection so that the effective
    matrix has the requested ``p``.  Raises :class:`InfeasibleWeights` when no
    positive self-weights are compatible with the targets.
    """
    if not 0.0 < target_p <= 1.0:
        raise InvalidSpec("target_p must lie in (0, 1]")
    if not 0.0 <= target_delta < 1.0:
        raise InvalidSpec("target_delta must lie in [0, 1)")
    n = topology.n_total
    base = np.zeros((n, n))
    fixed = set()
    for i, j, val in fixed_edges:
        i, j = int(i), int(j)
        key = (min(i, j), max(i, j))
        if key not in set(topology.edges) or topology.is_byzantine(i) or topology.is_byzantine(j):
            raise InvalidSpec(f"fixed edge ({i}, {j}) is not a regular edge")
        base[i, j] = base[j, i] = float(val)
        fixed.add(key)
    for i in topology.regular:
        byz = topology.byzantine_neighbors(i)
        for j in byz:
            base[i, j] = target_delta / len(byz)
            base[j, i] = base[i, j]
    tuned = [(a, b) for a, b in topology.edges
             if (a, b) not in fixed and not topology.is_byzantine(a) and not topology.is_byzantine(b)]
    if not tuned:
        raise InvalidSpec("target_spectrum needs at least one tunable regular edge")
    mask = np.zeros((n, n))
    for a, b in tuned:
        mask[a, b] = mask[b, a] = 1.0

    reg = list(topology.regular)
    fixed_load = base[reg].sum(axis=1)
    tuned_count = mask[reg].sum(axis=1)
    with np.errstate(divide="ignore"):
        caps = np.where(tuned_count > 0, (1.0 - fixed_load) / tuned_count, np.inf)
    if np.any(fixed_load >= 1.0) or caps.min() <= 0:
        raise InfeasibleWeights(f"delta={target_delta} leaves no room for positive self-weights")
    a_max = caps.min() * (1.0 - 1e-9)

    def p_of(a):
        eff = effective_mixing(MixingMatrix(_fill_diagonal(base + a * mask)), topology)
        return eff.p

    grid = np.linspace(0.0, a_max, 401)[1:]
    lo, hi = 0.0, None
    for a in grid:
        if p_of(a) >= target_p:
            hi = a
            break
        lo = a
    if hi is None:
        raise InfeasibleWeights(f"p={target_p} is unreachable with delta={target_delta}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if p_of(mid) >= target_p:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-16 * max(hi, 1e-300):
            break
    return MixingMatrix(_fill_diagonal(base + hi * mask))


@dataclass
class MixingSpec:
    rule: str = "metropolis_hastings"
    d_max: int | None = None
    byzantine_degree_one: bool = False
    overrides: list = field(default_factory=list)
    target_p: float | None = None
    target_delta: float | None = None
    fixed_edges: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict | None) -> "MixingSpec":
        d = dict(d or {})
        unknown = set(d) - {"rule", "d_max", "byzantine_degree_one", "overrides", "target_p", "target_delta", "fixed_edges"}
        if unknown:
            raise InvalidSpec(f"unknown mixing keys: {sorted(unknown)}")
        spec = cls(**d)
        if spec.rule not in MIXING_RULES:
            raise InvalidSpec(f"unknown mixing rule {spec.rule!r}; expected one of {MIXING_RULES}")
        spec.overrides = [list(o) for o in spec.overrides]
        spec.fixed_edges = [list(o) for o in spec.fixed_edges]
        return spec

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "d_max": self.d_max,
            "byzantine_degree_one": self.byzantine_degree_one,
            "overrides": [list(o) for o in self.overrides],
            "target_p": self.target_p,
            "target_delta": self.target_delta,
            "fixed_edges": [list(o) for o in self.fixed_edges],
        }


def build_mixing(spec: MixingSpec | dict | None, topology: Topology) -> MixingMatrix:
    if not isinstance(spec, MixingSpec):
        spec = MixingSpec.from_dict(spec)
    if spec.rule == "metropolis_hastings":
        w = metropolis_hastings_weights(topology, spec.byzantine_degree_one)
    elif spec.rule == "equal":
        if spec.d_max is None:
            raise InvalidSpec("equal weights need d_max")
        w = equal_weights(topology, int(spec.d_max))
    else:
        if spec.target_p is None or spec.target_delta is None:
            raise InvalidSpec("target_spectrum needs target_p and target_delta")
        w = target_spectrum_weights(topology, float(spec.target_p), float(spec.target_delta), spec.fixed_edges)
    if spec.overrides:
        w = apply_overrides(w, topology, spec.overrides)
    return w


# ---------------------------------------------------------------------------
# effective mixing matrix and spectral gap
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EffectiveMixing:
    matrix: np.ndarray  # (n_regular, n_regular)
    gamma: float
    delta: np.ndarray  # per regular node
    delta_max: float

    @property
    def p(self) -> float:
        return 1.0 - (1.0 - self.gamma) ** 2


def spectral_gap(matrix: np.ndarray) -> float:
    """``1 - max_{k>=2} |lambda_k|`` for a symmetric stochastic matrix."""
    if matrix.shape[0] == 1:
        return 1.0
    eig = np.linalg.eigvalsh(matrix)  # ascending; eig[-1] is the Perron value 1
    return float(1.0 - max(abs(eig[0]), abs(eig[-2])))


def effective_mixing(w: MixingMatrix, topology: Topology) -> EffectiveMixing:
    reg = np.array(topology.regular, dtype=int)
    byz = np.array(topology.byzantine, dtype=int)
    full = w.weights
    delta = full[np.ix_(reg, byz)].sum(axis=1) if len(byz) else np.zeros(len(reg))
    mat = full[np.ix_(reg, reg)].copy()
    mat[np.diag_indices_from(mat)] += delta
    return EffectiveMixing(
        matrix=mat,
        gamma=spectral_gap(mat),
        delta=delta,
        delta_max=float(delta.max()) if len(delta) else 0.0,
    )


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    index: Any = None
    detail: str = ""


@dataclass
class AssumptionReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def check_assumptions(w: MixingMatrix, topology: Topology) -> AssumptionReport:
    """Report (never raise) on regular-subgraph connectivity and the mixing-weight rules."""
    mat = w.weights
    checks = [AssumptionCheck("connectivity", topology.regular_subgraph_connected(),
                              detail="regular subgraph must be connected")]

    bad = None
    for i in topology.regular:
        support = set(topology.neighbors(i)) | {i}
        for j in range(topology.n_total):
            if (mat[i, j] > 0) != (j in support) or mat[i, j] < 0:
                bad = (i, j)
                break
        if bad:
            break
    checks.append(AssumptionCheck("support", bad is None, bad, "W_ij > 0 iff j is i or a neighbor"))

    bad = None
    for i in topology.regular:
        if abs(mat[i].sum() - 1.0) > _ROW_TOL:
            bad = i
            break
    checks.append(AssumptionCheck("row_sums", bad is None, bad, "regular rows sum to 1"))

    bad = None
    for i, j in itertools.combinations(topology.regular, 2):
        if mat[i, j] != mat[j, i]:
            bad = (i, j)
            break
    checks.append(AssumptionCheck("symmetry", bad is None, bad, "W_ij == W_ji between regular nodes"))
    return AssumptionReport(checks)


def inspection_rows(topology: Topology, eff: EffectiveMixing):
    """Rows of ``node_id, is_byzantine, degree, delta_i`` (delta blank for Byzantine nodes)."""
    rows = []
    for i in range(topology.n_total):
        byz = topology.is_byzantine(i)
        rows.append((i, int(byz), topology.degree(i), None if byz else float(eff.delta[i])))
    return rows


# ---------------------------------------------------------------------------
# named fixtures
# ---------------------------------------------------------------------------


def consensus_fixture_spec() -> TopologySpec:
    """Four regular nodes on a path, one Byzantine node on each middle node."""
    return TopologySpec(
        kind="custom",
        params={"n": 4, "edges": [[0, 1], [1, 2], [2, 3]]},
        byz_attach=[[4, [1]], [5, [2]]],
    )


def _two_cliques(a, b, offset=0):
    e = [[offset + i, offset + j] for i, j in itertools.combinations(range(a), 2)]
    e += [[offset + a + i, offset + a + j] for i, j in itertools.combinations(range(b), 2)]
    return e


def dumbbell_center_spec(n_byzantine: int = 0) -> TopologySpec:
    """Two 5-cliques bridged through a central regular node; Byzantines attach to the center."""
    edges = _two_cliques(5, 5) + [[4, 10], [10, 5]]
    return TopologySpec(
        kind="custom",
        params={"n": 11, "edges": edges},
        byz_attach=[[11 + k, [10]] for k in range(n_byzantine)],
    )


def dumbbell_offcut_spec() -> TopologySpec:
    """Two 5-cliques with one cut edge; Byzantines sit away from the cut."""
    return TopologySpec(
        kind="custom",
        params={"n": 10, "edges": _two_cliques(5, 5) + [[4, 5]]},
        byz_attach=[[10, [0]], [11, [9]]],
    )


def dumbbell_clique_attack_spec() -> TopologySpec:
    """Two 5-cliques with one cut edge and one Byzantine node inside each clique."""
    return TopologySpec(
        kind="custom",
        params={"n": 10, "edges": _two_cliques(5, 5) + [[4, 5]]},
        byz_attach=[[10, [0, 1]], [11, [8, 9]]],
    )


FIXTURES = {
    "consensus_fixture": consensus_fixture_spec,
    "dumbbell_center": dumbbell_center_spec,
    "dumbbell_offcut": dumbbell_offcut_spec,
    "dumbbell_clique_attack": dumbbell_clique_attack_spec,
}
