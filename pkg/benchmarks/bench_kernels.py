"""Time the numba kernels against the numpy reference implementations.

    python benchmarks/bench_kernels.py [--repeat 20]

Also times one full consensus run per backend (each in a fresh interpreter,
since the backend is fixed at import time).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from byzgossip import _kernels

RUN_SNIPPET = """
import time
from byzgossip import _kernels
from byzgossip.config import ExperimentConfig
from byzgossip.engine import run
_kernels.warmup()
cfg = ExperimentConfig.from_dict({
    "topology": {"kind": "torus", "params": {"rows": 10, "cols": 10}, "byz_attach": {"random": {"count": 10, "degree": 3}}},
    "aggregator": {"kind": "clipped_gossip", "params": {"tau_rule": {"kind": "oracle"}}},
    "attack": {"kind": "dissensus"}, "init": {"kind": "gaussian", "dim": 50}, "rounds": 200})
t0 = time.perf_counter()
run(cfg)
print(time.perf_counter() - t0)
"""


def kernel_cases(rng):
    n, d, deg = 200, 64, 6
    indptr = np.arange(0, n * deg + 1, deg, dtype=np.int64)
    x = rng.normal(size=(n, d))
    msgs = rng.normal(size=(n * deg, d))
    w = np.full(n * deg, 1.0 / (deg + 1))
    tau = rng.uniform(0.5, 2.0, size=n)
    pts = rng.normal(size=(15, d))
    return {
        "clipped_mix": (x, msgs, indptr, w, tau),
        "weighted_sq_dist": (x, msgs, indptr, w),
        "trimmed_mean": (pts, 3),
        "weiszfeld": (pts, 8, 1e-10, 1e-8),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    if not _kernels.HAS_NUMBA:
        sys.exit("numba backend unavailable (is BYZGOSSIP_NUMBA=0 set?)")
    _kernels.warmup()
    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, call_args in cases.items():
        t_np = min(timeit.repeat(lambda: _kernels.NUMPY_IMPLS[name](*call_args), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: _kernels.NUMBA_IMPLS[name](*call_args), number=1, repeat=args.repeat))
        print(f"{name:<18}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")

    print("\nend-to-end consensus run (100 regular + 10 Byzantine nodes, d=50, 200 rounds)")
    for flag in ("0", "1"):
        env = {**os.environ, "BYZGOSSIP_NUMBA": flag}
        out = subprocess.run([sys.executable, "-c", RUN_SNIPPET], env=env, capture_output=True, text=True, check=True)
        label = "numba" if flag == "1" else "numpy"
        print(f"  {label:<6} {float(out.stdout):.3f}s")


if __name__ == "__main__":
    main()
