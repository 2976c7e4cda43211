import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from byzgossip.errors import DegreeExceedsBound, DisconnectedRegularSubgraph, InfeasibleWeights, InvalidSpec
from byzgossip.graph import (
    FIXTURES,
    MixingMatrix,
    Topology,
    TopologySpec,
    apply_overrides,
    build_mixing,
    build_topology,
    check_assumptions,
    consensus_fixture_spec,
    effective_mixing,
    equal_weights,
    inspection_rows,
    metropolis_hastings_weights,
    spectral_gap,
    target_spectrum_weights,
)


def spec(kind, byz=None, seed=0, **params):
    return TopologySpec(kind=kind, params=params, byz_attach=byz, seed=seed)


# --- topology -------------------------------------------------------------


def test_complete4_edges():
    t = build_topology(spec("complete", n=4))
    assert len(t.edges) == 6
    assert t.regular == (0, 1, 2, 3) and t.byzantine == ()


def test_dumbbell_edge_count():
    t = build_topology(spec("dumbbell", clique_a=10, clique_b=10, extra_cut_edges=1))
    assert len(t.edges) == 2 * math.comb(10, 2) + 1
    assert t.regular_subgraph_connected()


def test_small_world_with_random_byzantines():
    s = spec("small_world", {"random": {"count": 2, "degree": 2}}, seed=7, n=10, k_neighbors=2, rewire_prob=0.15)
    t = build_topology(s)
    assert t.n_total == 12
    assert [t.degree(j) for j in t.byzantine] == [2, 2]
    assert all(not t.is_byzantine(k) for j in t.byzantine for k in t.neighbors(j))


def test_same_seed_same_topology():
    s = spec("small_world", {"random": {"count": 3, "degree": 2}}, seed=11, n=16, k_neighbors=4, rewire_prob=0.3)
    assert build_topology(s).to_json() == build_topology(s).to_json()
    assert build_topology(s) == build_topology(s)


def test_torus_is_four_regular():
    t = build_topology(spec("torus", rows=3, cols=3))
    assert t.n_total == 9
    assert all(t.degree(i) == 4 for i in t.regular)


def test_dumbbell_without_cut_is_disconnected():
    with pytest.raises(DisconnectedRegularSubgraph):
        build_topology(spec("dumbbell", clique_a=3, clique_b=3, extra_cut_edges=0))


@pytest.mark.parametrize("bad", [
    spec("complete"),
    spec("complete", n=0),
    spec("ring", n=2.5),
    spec("custom", n=3, edges=[[0, 5]]),
    spec("complete", [[7, [0]]], n=3),
    spec("complete", [[3, [9]]], n=3),
    spec("hypercube", n=3),
])
def test_malformed_specs_rejected(bad):
    with pytest.raises(InvalidSpec):
        build_topology(bad)


def test_topology_spec_roundtrip():
    s = consensus_fixture_spec()
    assert TopologySpec.from_dict(s.to_dict()).to_dict() == s.to_dict()


# --- weights --------------------------------------------------------------


def test_mh_formula_on_path():
    # degrees: d_0=1, d_1=2, d_2=3
    t = Topology.from_edges(5, [(0, 1), (1, 2), (2, 3), (2, 4)])
    w = metropolis_hastings_weights(t).weights
    assert w[1, 2] == pytest.approx(1 / 4)
    assert w[0, 1] == pytest.approx(1 / 3)


def test_mh_ring4():
    w = metropolis_hastings_weights(build_topology(spec("ring", n=4))).weights
    for i in range(4):
        assert w[i, i] == pytest.approx(1 / 3)
        assert w[i, (i + 1) % 4] == pytest.approx(1 / 3)


def test_mh_single_edge():
    w = metropolis_hastings_weights(Topology.from_edges(2, [(0, 1)])).weights
    assert w[0, 1] == 0.5 and w[0, 0] == 0.5


def test_mh_byzantine_degree_one_flag():
    # ring(6): node 0 has degree 3 with the Byzantine node, which itself has degree 4
    t = build_topology(spec("ring", [[6, [0, 1, 2, 3]]], n=6))
    assert metropolis_hastings_weights(t).weights[0, 6] == pytest.approx(1 / 5)
    # a Byzantine node claiming degree 1 gets the largest weight allowed, 1/(d_i + 1)
    assert metropolis_hastings_weights(t, byzantine_degree_one=True).weights[0, 6] == pytest.approx(1 / 4)


def test_equal_weights_examples():
    w = equal_weights(build_topology(spec("ring", n=4)), 2).weights
    assert w[0, 1] == pytest.approx(1 / 3) and w[0, 0] == pytest.approx(1 / 3)
    star = Topology.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    assert equal_weights(star, 3).weights[1, 1] == pytest.approx(0.75)
    with pytest.raises(DegreeExceedsBound):
        equal_weights(build_topology(spec("complete", n=3)), 1)


def test_effective_diagonal_absorbs_delta():
    t = build_topology(spec("ring", [[4, [0]]], n=4))
    w = metropolis_hastings_weights(t).weights.copy()
    # make node 0: W_00 = 0.4, Byzantine weight 0.1
    w[0, 4] = w[4, 0] = 0.1
    w[0, 0] = 1 - w[0, 1] - w[0, 3] - 0.1
    eff = effective_mixing(MixingMatrix(w), t)
    assert eff.delta[0] == pytest.approx(0.1)
    assert eff.matrix[0, 0] == pytest.approx(w[0, 0] + 0.1)


def test_complete_uniform_gap_is_one():
    t = build_topology(spec("complete", n=6))
    eff = effective_mixing(metropolis_hastings_weights(t), t)
    assert eff.gamma == pytest.approx(1.0, abs=1e-10)
    assert eff.p == pytest.approx(1.0)


def test_ring4_gap_matches_circulant_closed_form():
    t = build_topology(spec("ring", n=4))
    eff = effective_mixing(metropolis_hastings_weights(t), t)
    # circulant eigenvalues 1/3 + (2/3) cos(2 pi k / 4)
    lam = [1 / 3 + 2 / 3 * math.cos(2 * math.pi * k / 4) for k in range(4)]
    expected = 1 - max(abs(v) for v in lam[1:])
    assert eff.gamma == pytest.approx(expected, abs=1e-10)
    assert expected == pytest.approx(2 / 3)


def test_gap_decreases_with_cut_weight():
    t = build_topology(spec("dumbbell", clique_a=4, clique_b=4, extra_cut_edges=1))
    base = metropolis_hastings_weights(t)
    gaps = [effective_mixing(apply_overrides(base, t, [[3, 4, c]]), t).gamma for c in (0.2, 0.1, 0.05, 0.01)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


def test_assumption_report():
    t = build_topology(spec("torus", rows=3, cols=3))
    w = metropolis_hastings_weights(t)
    assert check_assumptions(w, t).ok
    bad = w.weights.copy()
    bad[2, 2] += 0.01
    rep = check_assumptions(MixingMatrix(bad), t)
    assert not rep["row_sums"].passed and rep["row_sums"].index == 2


def test_assumption_report_flags_disconnection():
    tri = list(itertools.combinations(range(3), 2))
    t = Topology.from_edges(6, tri + [(a + 3, b + 3) for a, b in tri], check=False)
    w = metropolis_hastings_weights(t)
    assert not check_assumptions(w, t)["connectivity"].passed


def test_inspection_rows_report_byzantine_weight():
    t = build_topology(consensus_fixture_spec())
    w = build_mixing({"rule": "target_spectrum", "target_p": 0.01, "target_delta": 0.2,
                      "fixed_edges": [[1, 2, 0.5]]}, t)
    rows = inspection_rows(t, effective_mixing(w, t))
    assert rows[1][3] == pytest.approx(0.2) and rows[2][3] == pytest.approx(0.2)
    assert rows[0][3] == 0.0 and rows[4][3] is None


# --- target spectrum solver ----------------------------------------------


@pytest.mark.parametrize("p", [0.06, 0.01, 1e-4])
@pytest.mark.parametrize("delta", [0.05, 0.2, 0.4])
def test_target_spectrum_hits_targets(p, delta):
    t = build_topology(consensus_fixture_spec())
    w = target_spectrum_weights(t, p, delta, [[1, 2, 0.5]])
    eff = effective_mixing(w, t)
    assert eff.p == pytest.approx(p, rel=1e-6)
    assert eff.delta_max == pytest.approx(delta)
    assert check_assumptions(w, t).ok


def test_target_spectrum_infeasible():
    t = build_topology(consensus_fixture_spec())
    with pytest.raises(InfeasibleWeights):
        target_spectrum_weights(t, 0.06, 0.5, [[1, 2, 0.5]])


def test_fixtures_build():
    for name, make in FIXTURES.items():
        t = build_topology(make())
        assert t.regular_subgraph_connected(), name
        assert check_assumptions(metropolis_hastings_weights(t), t).ok


# --- properties ------------------------------------------------------------


topologies = st.one_of(
    st.builds(lambda n: spec("ring", n=n), st.integers(3, 12)),
    st.builds(lambda n: spec("complete", n=n), st.integers(2, 8)),
    st.builds(lambda r, c: spec("torus", rows=r, cols=c), st.integers(3, 5), st.integers(3, 5)),
    st.builds(lambda a, b, s: spec("small_world", {"random": {"count": 2, "degree": 2}}, seed=s,
                                   n=a, k_neighbors=b, rewire_prob=0.2),
              st.integers(6, 14), st.sampled_from([2, 4]), st.integers(0, 1000)),
)


@settings(max_examples=40, deadline=None)
@given(topologies)
def test_mh_rows_and_symmetry(s):
    t = build_topology(s)
    w = metropolis_hastings_weights(t).weights
    for i in t.regular:
        assert abs(w[i].sum() - 1) <= 1e-12
        for j in t.regular:
            assert w[i, j] == w[j, i]
    eff = effective_mixing(MixingMatrix(w), t)
    assert np.all(np.abs(eff.matrix.sum(axis=0) - 1) <= 1e-12)
    assert np.all(np.abs(eff.matrix.sum(axis=1) - 1) <= 1e-12)
    assert 0 < eff.gamma <= 1 + 1e-12


@settings(max_examples=25, deadline=None)
@given(topologies, st.integers(0, 2**32 - 1))
def test_effective_matrix_contracts(s, seed):
    t = build_topology(s)
    eff = effective_mixing(metropolis_hastings_weights(t), t)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        x = rng.normal(size=t.n_regular)
        xbar = x.mean()
        lhs = np.linalg.norm(eff.matrix @ x - xbar)
        assert lhs <= (1 - eff.gamma) * np.linalg.norm(x - xbar) + 1e-9


def test_spectral_gap_single_node():
    assert spectral_gap(np.ones((1, 1))) == 1.0
