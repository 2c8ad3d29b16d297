"""Time the compiled and pure-Python kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one row per kernel with the best-of-N time for each backend, the
speedup, and whether the two outputs are bitwise equal.
"""
import argparse
import timeit

import numpy as np

from conceptneuro import _pykernels, kernels

try:
    from conceptneuro import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    adjs = np.tanh(rng.standard_normal((200, 379, 379)))
    adjs = (adjs + adjs.transpose(0, 2, 1)) / 2
    set_a = np.sort(rng.choice(379, 12, replace=False))
    set_b = np.setdiff1d(rng.choice(379, 20, replace=False), set_a)
    binary = (np.abs(adjs[0]) > 0.3).astype(np.uint8)
    np.fill_diagonal(binary, 0)
    return {
        "concept_score (200 x 379^2)": lambda impl: kernels.concept_score(adjs, set_a, set_b, impl=impl),
        "avg_neighbor_degree (379 nodes)": lambda impl: kernels.avg_neighbor_degree(binary, impl=impl),
        "bipartite_block (12 x 20)": lambda impl: kernels.bipartite_block(adjs[0], set_a, set_b, 0.3, impl=impl),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        raise SystemExit("compiled extension not built; run `pip install --no-build-isolation -e .` first")
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'cython ms':>10s} {'python ms':>10s} {'speedup':>8s}  bitwise")
    for name, fn in cases(rng).items():
        t = {}
        for label, impl in (("c", _ckernels), ("py", _pykernels)):
            n = max(1, int(0.2 / max(timeit.timeit(lambda: fn(impl), number=1), 1e-6)))
            t[label] = min(timeit.repeat(lambda: fn(impl), number=n, repeat=args.repeat)) / n * 1e3
        print(f"{name:34s} {t['c']:10.3f} {t['py']:10.3f} {t['py'] / t['c']:7.1f}x  "
              f"{same(fn(_ckernels), fn(_pykernels))}")


if __name__ == "__main__":
    main()
