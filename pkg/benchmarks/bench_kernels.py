"""Compare the compiled and numpy kernel backends on the two hot paths:
MMD kernel sums and analytic mixture evaluation (score + Hessian).

    python3 benchmarks/bench_kernels.py [--n 4000] [--repeat 3] [--threads 1]
"""

import argparse
import os
import time

import numpy as np

from mmgibbs._kernels import backends
from mmgibbs.evaluation import DEFAULT_BANDWIDTHS
from mmgibbs.models import corner_mog


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4000, help="points per sample set")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1, help="RUN_THREADS for the compiled kernels")
    args = ap.parse_args()
    threads = max(1, args.threads)
    os.environ["RUN_THREADS"] = str(threads)

    rng = np.random.default_rng(0)
    mog = corner_mog()
    X = mog.sample(args.n, rng)
    Y = mog.sample(args.n, rng)
    coef = 0.5 / np.asarray(DEFAULT_BANDWIDTHS) ** 2
    noisy = mog.noisy(0.2)
    log_w = np.log(noisy.weights)
    var = noisy.component_std**2
    pts = noisy.sample(50 * args.n, rng)

    impls = backends()
    results = {}
    print(f"{'kernel':<22}{'backend':<10}{'seconds':>10}")
    for name, impl in impls.items():
        t_k, k_out = best_of(lambda: impl.kernel_sums(X, Y, coef, False, threads), args.repeat)
        t_m, m_out = best_of(lambda: impl.mog_eval(pts, noisy.means, log_w, var, True), args.repeat)
        results[name] = (k_out, m_out)
        print(f"{'kernel_sums':<22}{name:<10}{t_k:>10.4f}")
        print(f"{'mog_eval (+Hessian)':<22}{name:<10}{t_m:>10.4f}")

    if len(results) == 2:
        (ka, ma), (kb, mb) = results["python"], results["cython"]
        dk = float(np.max(np.abs(np.asarray(ka) - np.asarray(kb)) / np.abs(np.asarray(ka))))
        dm = max(float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in zip(ma, mb))
        print(f"max relative difference kernel_sums={dk:.2e}, max abs difference mog_eval={dm:.2e}")
    else:
        print("compiled extension not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
