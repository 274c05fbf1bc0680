"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Shapes mirror a default run: p=62 nodes, d=64 hidden units, a 100-subject
evaluation fold, B=200 bootstrap replicates.
"""

import argparse
import time

import numpy as np

from causal_gcn import _kernels as K
from causal_gcn.graph_data import normalize_adjacency


def best_of(fn, args, repeat):
    fn(*args)  # warm up / compile
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--nodes", type=int, default=62)
    ap.add_argument("--subjects", type=int, default=100)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    p, n, d, dc = args.nodes, args.subjects, 64, 16
    W = np.triu((rng.random((p, p)) < 0.15).astype(float), 1)
    A = normalize_adjacency(W + W.T)
    fwd = (A, rng.normal(size=(n, p)), rng.normal(size=(n, 3)), rng.normal(size=(1, d)), rng.normal(size=d),
           rng.normal(size=(d, d)) / 8, rng.normal(size=d), rng.normal(size=(3, dc)), rng.normal(size=dc),
           rng.normal(size=(d + dc, 3)) / 8, rng.normal(size=3))
    boot = (rng.normal(size=(n, p * 3)), rng.integers(0, n, size=(200, n)))
    roc = (rng.random(2000), rng.random(2000) < 0.3)

    rows = []
    for name, pair, a in (
        ("gcn_forward", (K.gcn_forward_numpy, K.gcn_forward_numba), fwd),
        ("bootstrap_means", (K.bootstrap_means_numpy, K.bootstrap_means_numba), boot),
        ("auc_binary", (K.auc_binary_numpy, K.auc_binary_numba), roc),
    ):
        t_np, t_nb = (best_of(f, a, args.repeat) for f in pair)
        assert np.allclose(pair[0](*a), pair[1](*a), rtol=0, atol=1e-10)
        rows.append((name, t_np * 1e3, t_nb * 1e3, t_np / t_nb))

    print(f"{'kernel':<16}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, a, b, s in rows:
        print(f"{name:<16}{a:>10.3f}{b:>10.3f}{s:>8.2f}x")


if __name__ == "__main__":
    main()
