"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time.  Set ``BYZGOSSIP_NUMBA=0`` to force
the numpy implementations (useful for debugging and for the benchmark).
"""
import os

import numpy as np

_WANT_NUMBA = os.environ.get("BYZGOSSIP_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    if not _WANT_NUMBA:
        raise ImportError("numba disabled by BYZGOSSIP_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------


def _clipped_mix_np(x_self, msgs, indptr, weights, tau):
    n, d = x_self.shape
    out = x_self.copy()
    counts = np.diff(indptr)
    if msgs.shape[0] == 0:
        return out
    recv = np.repeat(np.arange(n), counts)
    diffs = msgs - x_self[recv]
    norms = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    t = tau[recv]
    scale = np.ones_like(norms)
    clip = norms > t
    scale[clip] = t[clip] / norms[clip]
    scale[t == 0.0] = 0.0  # also covers norms that underflow to zero
    contrib = diffs * (weights * scale)[:, None]
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        acc = out[i]
        for e in range(lo, hi):
            acc = acc + contrib[e]
        out[i] = acc
    return out


def _weighted_sq_dist_np(x_self, others, indptr, weights):
    n = x_self.shape[0]
    out = np.zeros(n)
    counts = np.diff(indptr)
    if others.shape[0] == 0:
        return out
    recv = np.repeat(np.arange(n), counts)
    diffs = others - x_self[recv]
    sq = np.einsum("ij,ij->i", diffs, diffs) * weights
    for i in range(n):
        s = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            s += sq[e]
        out[i] = s
    return out


def _trimmed_mean_np(points, k):
    m = points.shape[0]
    srt = np.sort(points, axis=0)
    return srt[k : m - k].mean(axis=0)


def _weiszfeld_np(points, max_iters, tol, eps):
    v = points.mean(axis=0)
    for _ in range(max_iters):
        dist = np.sqrt(((points - v) ** 2).sum(axis=1)) + eps
        w = 1.0 / dist
        nv = (w[:, None] * points).sum(axis=0) / w.sum()
        step = np.sqrt(((nv - v) ** 2).sum())
        v = nv
        if step < tol:
            break
    return v


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def _clipped_mix_nb(x_self, msgs, indptr, weights, tau):
        n, d = x_self.shape
        out = x_self.copy()
        diff = np.empty(d)
        for i in range(n):
            ti = tau[i]
            if ti == 0.0:
                continue
            for e in range(indptr[i], indptr[i + 1]):
                sq = 0.0
                for k in range(d):
                    diff[k] = msgs[e, k] - x_self[i, k]
                    sq += diff[k] * diff[k]
                norm = np.sqrt(sq)
                scale = 1.0
                if norm > ti:
                    scale = ti / norm
                c = weights[e] * scale
                for k in range(d):
                    out[i, k] = out[i, k] + diff[k] * c
        return out

    @njit(cache=True, nogil=True)
    def _weighted_sq_dist_nb(x_self, others, indptr, weights):
        n, d = x_self.shape
        out = np.zeros(n)
        for i in range(n):
            s = 0.0
            for e in range(indptr[i], indptr[i + 1]):
                sq = 0.0
                for k in range(d):
                    t = others[e, k] - x_self[i, k]
                    sq += t * t
                s += sq * weights[e]
            out[i] = s
        return out

    @njit(cache=True, nogil=True)
    def _trimmed_mean_nb(points, k):
        m, d = points.shape
        out = np.empty(d)
        col = np.empty(m)
        for c in range(d):
            # insertion sort into one buffer; neighborhoods are small
            for r in range(m):
                v = points[r, c]
                q = r - 1
                while q >= 0 and col[q] > v:
                    col[q + 1] = col[q]
                    q -= 1
                col[q + 1] = v
            s = 0.0
            for r in range(k, m - k):
                s += col[r]
            out[c] = s / (m - 2 * k)
        return out

    @njit(cache=True, nogil=True)
    def _weiszfeld_nb(points, max_iters, tol, eps):
        m, d = points.shape
        v = np.zeros(d)
        for r in range(m):
            for k in range(d):
                v[k] += points[r, k]
        for k in range(d):
            v[k] /= m
        nv = np.empty(d)
        for _ in range(max_iters):
            wsum = 0.0
            for k in range(d):
                nv[k] = 0.0
            for r in range(m):
                sq = 0.0
                for k in range(d):
                    t = points[r, k] - v[k]
                    sq += t * t
                w = 1.0 / (np.sqrt(sq) + eps)
                wsum += w
                for k in range(d):
                    nv[k] += w * points[r, k]
            step = 0.0
            for k in range(d):
                nv[k] /= wsum
                t = nv[k] - v[k]
                step += t * t
                v[k] = nv[k]
            if np.sqrt(step) < tol:
                break
        return v


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def clipped_mix(x_self, msgs, indptr, weights, tau):
    """Per-receiver ``x_i + sum_e w_e * clip(m_e - x_i, tau_i)`` over CSR edge blocks.

    ``x_self`` is (n, d); ``msgs`` and ``weights`` are indexed by edge, with the
    edges of receiver ``i`` stored in ``indptr[i]:indptr[i+1]``.  ``tau`` may hold
    ``inf`` (no clipping) or 0 (output equals ``x_self``).
    """
    args = (_f64(x_self), _f64(msgs).reshape(-1, np.shape(x_self)[1]), np.ascontiguousarray(indptr, dtype=np.int64),
            _f64(weights), _f64(tau))
    if HAS_NUMBA:
        return _clipped_mix_nb(*args)
    return _clipped_mix_np(*args)


def weighted_sq_dist(x_self, others, indptr, weights):
    """Per-receiver ``sum_e w_e * ||o_e - x_i||^2`` over CSR edge blocks."""
    args = (_f64(x_self), _f64(others).reshape(-1, np.shape(x_self)[1]), np.ascontiguousarray(indptr, dtype=np.int64),
            _f64(weights))
    if HAS_NUMBA:
        return _weighted_sq_dist_nb(*args)
    return _weighted_sq_dist_np(*args)


def trimmed_mean(points, k):
    """Coordinate-wise mean after dropping ``k`` values from each end."""
    points = _f64(points)
    if HAS_NUMBA:
        return _trimmed_mean_nb(points, int(k))
    return _trimmed_mean_np(points, int(k))


def weiszfeld(points, max_iters=8, tol=1e-10, eps=1e-8):
    """Smoothed Weiszfeld iteration started from the coordinate-wise mean."""
    points = _f64(points)
    if HAS_NUMBA:
        return _weiszfeld_nb(points, int(max_iters), float(tol), float(eps))
    return _weiszfeld_np(points, int(max_iters), float(tol), float(eps))


NUMPY_IMPLS = {
    "clipped_mix": _clipped_mix_np,
    "weighted_sq_dist": _weighted_sq_dist_np,
    "trimmed_mean": _trimmed_mean_np,
    "weiszfeld": _weiszfeld_np,
}

NUMBA_IMPLS = (
    {
        "clipped_mix": _clipped_mix_nb,
        "weighted_sq_dist": _weighted_sq_dist_nb,
        "trimmed_mean": _trimmed_mean_nb,
        "weiszfeld": _weiszfeld_nb,
    }
    if HAS_NUMBA
    else {}
)


def warmup():
    """Trigger JIT compilation so later timings exclude it."""
    x = np.zeros((2, 2))
    clipped_mix(x, np.ones((2, 2)), np.array([0, 1, 2]), np.ones(2), np.array([np.inf, 0.5]))
    weighted_sq_dist(x, np.ones((2, 2)), np.array([0, 1, 2]), np.ones(2))
    trimmed_mean(np.ones((3, 2)), 1)
    weiszfeld(np.ones((3, 2)), 2)
