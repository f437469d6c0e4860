"""Time the ranking-metric kernels under both backends.

    python benchmarks/bench_kernels.py [--docs 2000] [--labels 500] [--repeat 5]
"""

import argparse
import time

import numpy as np

from conceptaug import _kernels


def bench(fn, repeat):
    fn()  # warm-up (includes numba compilation)
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--docs", type=int, default=2000)
    ap.add_argument("--labels", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    scores = rng.random((args.docs, args.labels))
    gold = (rng.random((args.docs, args.labels)) < 0.05).astype(np.float64)
    gold[0] = 1.0
    gold[1] = 0.0
    kernels = {
        "auc_columns": lambda: _kernels.auc_columns(scores, gold),
        "ap_columns": lambda: _kernels.ap_columns(scores, gold),
        "topk_hits(k=8)": lambda: _kernels.topk_hits(scores, gold, 8),
    }
    backends = _kernels.available_backends()
    print(f"{args.docs} docs x {args.labels} labels, best of {args.repeat}")
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends))
    old = _kernels.BACKEND
    for name, fn in kernels.items():
        row = []
        for b in backends:
            _kernels.set_backend(b)
            row.append(bench(fn, args.repeat))
        print(f"{name:<16}" + "".join(f"{t * 1e3:>10.2f}ms" for t in row))
    _kernels.set_backend(old)


if __name__ == "__main__":
    main()
