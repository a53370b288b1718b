"""Phase-1 epoch throughput: compiled kernel vs numpy fallback.

    python benchmarks/bench_kernels.py [--n 60000] [--pairs-per 10] [--epochs 3]
"""

import argparse
import time

import numpy as np

from fastmetric import kernels
from fastmetric.relation import generate_pairs
from fastmetric.targetopt import LossKind, PhaseOneConfig, learn_targets


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=60_000)
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--pairs-per", type=int, default=10, help="similar and dissimilar partners per instance")
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--dim", type=int, default=16)
    args = ap.parse_args()

    labels = [{c} for c in np.random.default_rng(0).integers(0, args.classes, args.n).tolist()]
    pairs = generate_pairs(labels, args.pairs_per, args.pairs_per, seed=0)
    print(f"{args.n} instances, {len(pairs)} pairs, d={args.dim}, {args.epochs} epochs")
    backends = ["numpy"]
    try:
        kernels.get_backend("cython")
        backends.insert(0, "cython")
    except ImportError:
        print("compiled kernel not built; numpy only")
    cfg = PhaseOneConfig(dim=args.dim, epochs=args.epochs)
    results = {}
    for loss in (LossKind.contrastive(), LossKind.dot()):
        for name in backends:
            t0 = time.perf_counter()
            res = learn_targets(pairs, args.n, loss, cfg, backend=name)
            total = time.perf_counter() - t0
            results[loss.tag, name] = res
            print(f"{loss.tag:<12} {name:<7} {res.seconds / args.epochs:8.3f} s/epoch "
                  f"(total incl. objective passes {total:.2f} s)  final objective {res.objectives[-1]:.6g}")
        if len(backends) == 2:
            a, b = results[loss.tag, "cython"], results[loss.tag, "numpy"]
            diff = np.max(np.abs(a.table.vectors - b.table.vectors))
            print(f"{loss.tag:<12} speedup x{b.seconds / a.seconds:.1f}, max |table difference| {diff:.2e}")


if __name__ == "__main__":
    main()
