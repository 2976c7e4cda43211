"""Synthetic local objectives with controllable smoothness, noise and heterogeneity."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InvalidSpec

OBJECTIVE_KINDS = ("quadratic", "logistic")
CENTER_LAYOUTS = ("lattice", "split")


@dataclass
class ObjectiveSpec:
    kind: str
    params: dict = field(default_factory=dict)
    noise_sigma: float = 0.0

    @classmethod
    def from_dict(cls, d) -> "ObjectiveSpec":
        if not isinstance(d, dict) or "kind" not in d:
            raise InvalidSpec("objective spec must be an object with a 'kind'")
        unknown = set(d) - {"kind", "params", "noise_sigma"}
        if unknown:
            raise InvalidSpec(f"unknown objective keys: {sorted(unknown)}")
        spec = cls(d["kind"], dict(d.get("params") or {}), float(d.get("noise_sigma", 0.0)))
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "noise_sigma": self.noise_sigma}

    def validate(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise InvalidSpec(f"unknown objective {self.kind!r}; expected one of {OBJECTIVE_KINDS}")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be >= 0")
        d = self.params.get("d")
        if not isinstance(d, int) or isinstance(d, bool) or d < 1:
            raise InvalidSpec("objective dimension 'd' must be a positive integer")
        if self.kind == "quadratic":
            eigs = hessian_eigenvalues(self)
            if np.any(eigs <= 0):
                raise InvalidSpec("hessian eigenvalues must be positive")
            if self.params.get("center_layout", "lattice") not in CENTER_LAYOUTS:
                raise InvalidSpec(f"center_layout must be one of {CENTER_LAYOUTS}")
            if float(self.params.get("center_spread", 0.0)) < 0:
                raise InvalidSpec("center_spread must be >= 0")
        else:
            m = self.params.get("samples_per_worker", 32)
            if not isinstance(m, int) or m < 1:
                raise InvalidSpec("samples_per_worker must be a positive integer")
            if int(self.params.get("batch_size", 8)) < 1:
                raise InvalidSpec("batch_size must be >= 1")


def hessian_eigenvalues(spec: ObjectiveSpec) -> np.ndarray:
    d = spec.params["d"]
    eigs = spec.params.get("hessian_eigs", 1.0)
    if isinstance(eigs, dict):
        out = np.linspace(float(eigs["min"]), float(eigs["max"]), d)
    elif np.ndim(eigs) == 0:
        out = np.full(d, float(eigs))
    else:
        out = np.asarray(eigs, dtype=float)
        if out.shape != (d,):
            raise InvalidSpec(f"hessian_eigs must have {d} entries")
    return out


class QuadraticObjective:
    """``f_i(x) = 1/2 (x - c_i)^T H (x - c_i)`` with additive Gaussian gradient noise.

    The noise has per-coordinate variance ``sigma^2 / d`` so that its expected
    squared norm is ``sigma^2``.  The matching stochastic loss is
    ``f_i(x) + xi^T x``.
    """

    kind = "quadratic"

    def __init__(self, worker_id, hessian, center, noise_sigma=0.0):
        self.worker_id = worker_id
        self.hessian = hessian
        self.center = center
        self.noise_sigma = float(noise_sigma)
        self.dim = center.shape[0]

    def _target(self, flipped):
        return -self.center if flipped else self.center

    def value(self, x, flipped=False):
        r = np.asarray(x, dtype=float) - self._target(flipped)
        return 0.5 * float(r @ self.hessian @ r)

    def gradient(self, x, flipped=False):
        return self.hessian @ (np.asarray(x, dtype=float) - self._target(flipped))

    def draw_sample(self, rng):
        if self.noise_sigma == 0.0 or rng is None:
            return np.zeros(self.dim)
        return rng.normal(0.0, self.noise_sigma / np.sqrt(self.dim), size=self.dim)

    def stochastic_gradient(self, x, rng=None, flipped=False, sample=None):
        if sample is None:
            sample = self.draw_sample(rng)
        return self.gradient(x, flipped) + sample

    def stochastic_loss(self, x, sample):
        return self.value(x) + float(sample @ np.asarray(x, dtype=float))

    def smoothness(self):
        return float(np.linalg.eigvalsh(self.hessian).max())


class LogisticObjective:
    """L2-regularized logistic regression on a local dataset with labels in {0, 1}."""

    kind = "logistic"

    def __init__(self, worker_id, features, labels, l2=1e-2, batch_size=8):
        self.worker_id = worker_id
        self.features = features
        self.labels = labels
        self.l2 = float(l2)
        self.batch_size = int(batch_size)
        self.dim = features.shape[1]

    def _loss(self, x, X, y):
        z = X @ x
        return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * self.l2 * (x @ x))

    def _grad(self, x, X, y):
        z = X @ x
        return X.T @ (expit(z) - y) / len(y) + self.l2 * x

    def _labels(self, flipped):
        return 1.0 - self.labels if flipped else self.labels

    def value(self, x, flipped=False):
        return self._loss(np.asarray(x, dtype=float), self.features, self._labels(flipped))

    def gradient(self, x, flipped=False):
        return self._grad(np.asarray(x, dtype=float), self.features, self._labels(flipped))

    def draw_sample(self, rng):
        m = len(self.labels)
        if rng is None:
            return np.arange(m)
        return np.sort(rng.choice(m, size=min(self.batch_size, m), replace=False))

    def stochastic_gradient(self, x, rng=None, flipped=False, sample=None):
        if sample is None:
            sample = self.draw_sample(rng)
        y = self._labels(flipped)[sample]
        return self._grad(np.asarray(x, dtype=float), self.features[sample], y)

    def stochastic_loss(self, x, sample):
        return self._loss(np.asarray(x, dtype=float), self.features[sample], self.labels[sample])

    def smoothness(self):
        r = float(np.sqrt((self.features ** 2).sum(axis=1)).max())
        return logistic_smoothness(r, self.l2)


def logistic_smoothness(max_norm: float, l2: float) -> float:
    return max_norm ** 2 / 4.0 + l2


def _rotation(d, rng):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def center_offsets(layout: str, n: int) -> np.ndarray:
    """Scalar lattice coordinate of each worker (multiplied by ``center_spread``)."""
    k = np.arange(n, dtype=float)
    if layout == "split":
        return np.where(k < n // 2, -1.0, 1.0) if n > 1 else np.zeros(1)
    return k - (n - 1) / 2.0


def build_objectives(spec: ObjectiveSpec, worker_ids, seed: int | None = None) -> dict:
    """One objective per worker id; deterministic given ``(spec, ids, seed)``.

    ``seed`` defaults to ``spec.params['seed']`` (0 if absent).
    """
    if isinstance(spec, dict):
        spec = ObjectiveSpec.from_dict(spec)
    spec.validate()
    ids = sorted(int(i) for i in worker_ids)
    if seed is None:
        seed = int(spec.params.get("seed", 0))
    p = spec.params
    d = p["d"]

    if spec.kind == "quadratic":
        eigs = hessian_eigenvalues(spec)
        if np.all(eigs == eigs[0]):
            H = np.eye(d) * eigs[0]
        else:
            Q = _rotation(d, np.random.default_rng([seed, 5]))
            H = (Q * eigs) @ Q.T
            H = 0.5 * (H + H.T)
        u = np.ones(d) / np.sqrt(d)
        offsets = center_offsets(p.get("center_layout", "lattice"), len(ids))
        spread = float(p.get("center_spread", 0.0))
        base = float(p.get("center_mean", 1.0))
        return {
            i: QuadraticObjective(i, H, base * np.ones(d) + spread * offsets[k] * u, spec.noise_sigma)
            for k, i in enumerate(ids)
        }

    m = int(p.get("samples_per_worker", 32))
    sep = float(p.get("class_separation", 2.0))
    noniid = bool(p.get("noniid_split", False))
    u = np.random.default_rng([seed, 8]).normal(size=d)
    u /= np.linalg.norm(u)
    out = {}
    for k, i in enumerate(ids):
        rng = np.random.default_rng([seed, 7, i])
        if noniid:
            y = np.full(m, 0.0 if k < len(ids) // 2 else 1.0)
        else:
            y = (np.arange(m) % 2).astype(float)
        X = ((2 * y - 1) * sep / 2)[:, None] * u + rng.normal(size=(m, d))
        out[i] = LogisticObjective(i, X, y, p.get("l2", 1e-2), p.get("batch_size", 8))
    return out


def stochastic_gradient(obj, x, rng):
    return obj.stochastic_gradient(x, rng)


def global_gradient(objs, x) -> np.ndarray:
    return np.mean([o.gradient(x) for o in objs.values()], axis=0)


def global_value(objs, x) -> float:
    return float(np.mean([o.value(x) for o in objs.values()]))


def measure_heterogeneity(objs, probe_points) -> float:
    """Max over probes of the mean squared gap between local and global exact gradients."""
    probe_points = list(probe_points)
    if not probe_points:
        raise ValueError("need at least one probe point")
    worst = 0.0
    for x in probe_points:
        grads = np.array([o.gradient(x) for o in objs.values()])
        dev = grads - grads.mean(axis=0)
        worst = max(worst, float((dev ** 2).sum(axis=1).mean()))
    return worst


def smoothness_constant(spec: ObjectiveSpec, objectives: dict | None = None) -> float:
    """Quadratic: largest Hessian eigenvalue.  Logistic: ``r^2/4 + l2`` over the built data."""
    if isinstance(spec, dict):
        spec = ObjectiveSpec.from_dict(spec)
    if spec.kind == "quadratic":
        return float(hessian_eigenvalues(spec).max())
    if not objectives:
        raise InvalidSpec("logistic smoothness needs the built objectives")
    return max(o.smoothness() for o in objectives.values())


def quadratic_optimum(objs):
    """Minimizer and minimum of the average of quadratics sharing one Hessian."""
    centers = np.array([o.center for o in objs.values()])
    x_star = centers.mean(axis=0)
    return x_star, global_value(objs, x_star)
