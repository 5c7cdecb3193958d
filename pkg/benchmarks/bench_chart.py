"""Time the compiled CKY kernels against the pure-Python ones.

    python3 benchmarks/bench_chart.py --lengths 8 16 32 --labels 40
"""
import argparse
import timeit

import numpy as np

from topspan import chart_py

try:
    from topspan import _chart
except ImportError:
    _chart = None


def inputs(rng, n, L, d):
    fence = rng.normal(size=(n + 1, d))
    P = fence @ rng.normal(size=(d, d))
    pre = P[None, :, :] - P[:, None, :] + rng.normal(size=d)
    V = rng.normal(size=(d, L))
    table = np.maximum(pre, 0) @ V
    table[..., 0] = 0.0
    return table, pre, P, V


def best_of(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--lengths", type=int, nargs="+", default=[8, 16, 32])
    ap.add_argument("--labels", type=int, default=40)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _chart is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<8}{'n':>5}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for n in args.lengths:
        table, pre, P, V = inputs(rng, n, args.labels, args.hidden)
        cases = {
            "table": (lambda m: (lambda: m.decode_table(table, None))),
            "split": (lambda m: (lambda: m.decode_split(pre, P, V, None, 0))),
        }
        for name, make in cases.items():
            a = make(chart_py)()
            b = make(_chart)()
            assert all(np.allclose(x, y) for x, y in zip(a, b)), "kernels disagree"
            tp = best_of(make(chart_py), args.repeat) * 1e3
            tc = best_of(make(_chart), args.repeat) * 1e3
            print(f"{name:<8}{n:>5}{tp:>12.3f}{tc:>12.3f}{tp / tc:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
