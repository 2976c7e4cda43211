import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from byzgossip.errors import InvalidSpec
from byzgossip.objective import (
    ObjectiveSpec,
    QuadraticObjective,
    build_objectives,
    global_gradient,
    logistic_smoothness,
    measure_heterogeneity,
    quadratic_optimum,
    smoothness_constant,
)


def quad(d=3, spread=1.0, eigs=1.0, sigma=0.0, layout="lattice", seed=0):
    return ObjectiveSpec("quadratic", {"d": d, "hessian_eigs": eigs, "center_spread": spread,
                                       "center_layout": layout, "seed": seed}, sigma)


def logistic(d=3, noniid=False, seed=0, l2=1e-2):
    return ObjectiveSpec("logistic", {"d": d, "samples_per_worker": 24, "class_separation": 2.0,
                                      "noniid_split": noniid, "l2": l2, "seed": seed})


def test_zero_spread_means_zero_heterogeneity():
    objs = build_objectives(quad(spread=0.0), range(5))
    probes = [np.zeros(3), np.ones(3), np.arange(3.0)]
    assert measure_heterogeneity(objs, probes) == pytest.approx(0.0, abs=1e-24)


def test_identity_hessian_gradient():
    objs = build_objectives(quad(spread=2.0), range(4))
    x = np.array([0.5, -1.0, 2.0])
    for o in objs.values():
        np.testing.assert_allclose(o.gradient(x), x - o.center)


def test_build_is_deterministic():
    for spec in (quad(eigs={"min": 1, "max": 5}, sigma=0.3, seed=4), logistic(seed=2)):
        a, b = build_objectives(spec, range(4)), build_objectives(spec, range(4))
        x = np.linspace(-1, 1, 3)
        for i in range(4):
            np.testing.assert_array_equal(a[i].gradient(x), b[i].gradient(x))
            np.testing.assert_array_equal(a[i].stochastic_gradient(x, np.random.default_rng(9)),
                                          b[i].stochastic_gradient(x, np.random.default_rng(9)))


def test_noiseless_quadratic_gradient_example():
    o = QuadraticObjective(0, np.eye(2), np.zeros(2))
    np.testing.assert_allclose(o.stochastic_gradient(np.array([1.0, 2.0]), np.random.default_rng(0)), [1.0, 2.0])


def test_noise_monte_carlo():
    d, sigma, draws = 4, 0.7, 100_000
    o = build_objectives(quad(d=d, sigma=sigma), [0])[0]
    x = np.ones(d)
    g0 = o.gradient(x)
    rng = np.random.default_rng(123)
    noise = np.array([o.stochastic_gradient(x, rng) - g0 for _ in range(draws)])
    assert np.all(np.abs(noise.mean(axis=0)) <= 3 * sigma / np.sqrt(draws * d))
    assert (noise ** 2).sum(axis=1).mean() == pytest.approx(sigma ** 2, rel=0.05)


def _central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("spec", [quad(d=4, spread=1.5, eigs={"min": 0.5, "max": 3.0}), logistic(d=4)])
def test_gradient_matches_finite_differences(spec):
    objs = build_objectives(spec, range(3))
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.normal(size=4)
        for flipped in (False, True):
            o = objs[int(rng.integers(3))]
            g = o.gradient(x, flipped)
            fd = _central_diff(lambda v: o.value(v, flipped), x)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


def test_logistic_optimum_has_zero_gradient():
    objs = build_objectives(logistic(d=3), range(4))
    f = lambda x: np.mean([o.value(x) for o in objs.values()])  # noqa: E731
    res = minimize(f, np.zeros(3), method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000})
    assert np.linalg.norm(global_gradient(objs, res.x)) <= 1e-5


def test_heterogeneity_examples():
    a = 1.7
    objs = {0: QuadraticObjective(0, np.eye(1), np.array([-a])), 1: QuadraticObjective(1, np.eye(1), np.array([a]))}
    assert measure_heterogeneity(objs, [np.array([0.3])]) == pytest.approx(a ** 2)
    objs = {k: QuadraticObjective(k, np.eye(1), np.array([c])) for k, c in enumerate([0.0, 0.0, 3.0])}
    assert measure_heterogeneity(objs, [np.array([10.0])]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        measure_heterogeneity(objs, [])


def test_smoothness_examples():
    assert smoothness_constant(quad(d=2, eigs=[1.0, 4.0])) == 4.0
    assert smoothness_constant(quad(d=2, eigs=1.0)) == 1.0
    assert logistic_smoothness(2.0, 0.1) == pytest.approx(1.1)
    spec = logistic()
    objs = build_objectives(spec, range(3))
    r = max(np.linalg.norm(o.features, axis=1).max() for o in objs.values())
    assert smoothness_constant(spec, objs) == pytest.approx(r ** 2 / 4 + 1e-2)


def test_quadratic_optimum_is_stationary():
    objs = build_objectives(quad(d=5, spread=3.0, eigs={"min": 0.2, "max": 2.0}), range(7))
    x_star, _ = quadratic_optimum(objs)
    assert np.linalg.norm(global_gradient(objs, x_star)) <= 1e-10


def test_split_layout_two_groups():
    objs = build_objectives(quad(d=2, spread=1.0, layout="split"), range(6))
    centers = np.array([o.center for o in objs.values()])
    assert len({tuple(c) for c in centers}) == 2
    np.testing.assert_allclose(centers.mean(axis=0), np.ones(2))


def test_noniid_logistic_labels_partitioned():
    objs = build_objectives(logistic(noniid=True), range(4))
    assert [set(o.labels) for o in objs.values()] == [{0.0}, {0.0}, {1.0}, {1.0}]


@pytest.mark.parametrize("bad", [
    {"kind": "cnn", "params": {"d": 2}},
    {"kind": "quadratic", "params": {"d": 0}},
    {"kind": "quadratic", "params": {"d": 2, "hessian_eigs": [1.0, -1.0]}},
    {"kind": "quadratic", "params": {"d": 2}, "noise_sigma": -1},
    {"kind": "quadratic", "params": {"d": 2, "center_layout": "spiral"}},
    {"kind": "logistic", "params": {"d": 2, "samples_per_worker": 0}},
])
def test_spec_rejects(bad):
    with pytest.raises(InvalidSpec):
        ObjectiveSpec.from_dict(bad)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 5.0))
def test_lattice_heterogeneity_is_closed_form(seed, spread):
    # H = I, lattice offsets k - (n-1)/2 along a unit vector: zeta^2 = spread^2 (n^2 - 1) / 12
    n = 5
    objs = build_objectives(quad(d=3, spread=spread, seed=seed), range(n))
    assert measure_heterogeneity(objs, [np.zeros(3)]) == pytest.approx(spread ** 2 * (n ** 2 - 1) / 12)
