"""Time the numba kernels against their numpy fallbacks.

Kernel timings call both implementations in one process.  The end-to-end
timing runs a calibration-tree fit twice in subprocesses, once with
``CALIBRA_NO_JIT=1``.

    python3 benchmarks/bench_kernels.py [--n 20000] [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from calibra import _kernels as K
from calibra.logitboost import P_CLIP, W_MIN, Z_MAX


def best_of(fn, repeat):
    fn()  # warm-up (includes JIT compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, rng):
    X = rng.normal(size=(n, 4))
    y = rng.integers(0, 2, n)
    Y = np.eye(2)[y]
    z = rng.normal(size=n)
    w = rng.uniform(0.1, 1.0, n)
    order = np.argsort(X, axis=0, kind="stable").astype(np.int64)
    mask = np.ones(n, dtype=np.bool_)
    xs = np.sort(X[:, 0])
    ys = np.ascontiguousarray(y[np.argsort(X[:, 0], kind="stable")])
    F0 = np.zeros((n, 2))
    attrs, slopes, icpts, _, _ = K.boost_linear_np(X, Y, F0, 50, Z_MAX, W_MIN, P_CLIP)
    return {
        "pav": (lambda k: k(np.sort(rng.random(n))[::-1].copy() + z * 0.1, w), "pav"),
        "linear_fit": (lambda k: k(X, z, w), "linear_fit"),
        "boost_linear(50 it)": (lambda k: k(X, Y, F0, 50, Z_MAX, W_MIN, P_CLIP), "boost_linear"),
        "eval_linear": (lambda k: k(X, attrs, slopes, icpts, F0), "eval_linear"),
        "linear_rmse_path": (lambda k: k(X, Y, attrs, slopes, icpts), "linear_rmse_path"),
        "entropy_split": (lambda k: k(xs, ys, 2, 2), "entropy_split"),
        "sse_split": (lambda k: k(X, order, mask, z, w, 1), "sse_split"),
    }


END_TO_END = """
import time, numpy as np
from calibra.caltree import ScoreRecords, fit_pct
from calibra.data import Attribute
rng = np.random.default_rng(0)
n = {n}
A = rng.random((n, 3)); S = rng.normal(size=(n, 1)) * 2
y = (rng.random(n) < np.where(A[:, 0] < 0.5, 0.9, 1 / (1 + np.exp(-S[:, 0])))).astype(int)
r = ScoreRecords(tuple(Attribute(f"a{{k}}") for k in range(3)), A, S, y, 2)
fit_pct(r, seed=0, max_iter=20)
t0 = time.perf_counter(); fit_pct(r, seed=0, max_iter=50); print(time.perf_counter() - t0)
"""


def end_to_end(n, no_jit):
    env = dict(os.environ)
    env.pop("CALIBRA_NO_JIT", None)
    if no_jit:
        env["CALIBRA_NO_JIT"] = "1"
    out = subprocess.run([sys.executable, "-c", END_TO_END.format(n=n)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--fit-n", type=int, default=2000)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        sys.exit("numba is unavailable (or CALIBRA_NO_JIT is set); nothing to compare")
    rng = np.random.default_rng(1)
    print(f"{'kernel':<22}{'numba [ms]':>12}{'numpy [ms]':>12}{'speed-up':>10}")
    for label, (call, name) in cases(args.n, rng).items():
        t_nb = best_of(lambda: call(getattr(K, name + "_nb")), args.repeat)
        t_np = best_of(lambda: call(getattr(K, name + "_np")), args.repeat)
        print(f"{label:<22}{t_nb * 1e3:12.3f}{t_np * 1e3:12.3f}{t_np / t_nb:10.1f}")
    t_jit = end_to_end(args.fit_n, False)
    t_np = end_to_end(args.fit_n, True)
    print(f"{'fit_pct end to end':<22}{t_jit * 1e3:12.1f}{t_np * 1e3:12.1f}{t_np / t_jit:10.1f}")


if __name__ == "__main__":
    main()
