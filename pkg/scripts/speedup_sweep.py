#!/usr/bin/env python3
"""Sweep BCSR speedup over dense matmul across sparsity levels.

For each (dim, sparsity) the three kernels are timed on the same random
diagonal matrix: dense BLAS, the per-diagonal reference, and the blocked
BCSR product.  The amortized column folds the one-off conversion cost
into the per-product time, which is the honest number for inference
(convert once, multiply many times).
"""

import argparse

from diagsparse.bench import bench_spmm, results_to_csv, results_to_json


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dims", type=int, nargs="+", default=[768])
    parser.add_argument(
        "--sparsities", type=float, nargs="+",
        default=[0.6, 0.7, 0.8, 0.9, 0.95],
    )
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--reps", type=int, default=20)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", help="write results as CSV (or .json)")
    args = parser.parse_args()

    results = bench_spmm(
        args.dims, args.sparsities, batch=args.batch, reps=args.reps,
        threads=args.threads,
    )
    print(f"{'dim':>5s} {'sparsity':>8s} {'kernel':16s} {'median_ms':>10s} "
          f"{'speedup':>8s} {'amortized':>9s}")
    for r in results:
        amort = f"{r.amortized_speedup:9.3f}" if r.amortized_speedup else " " * 9
        print(f"{r.dim:5d} {r.sparsity:8.2f} {r.kernel:16s} "
              f"{r.median_ms:10.4f} {r.speedup:8.3f} {amort}")

    if args.out:
        writer = results_to_json if args.out.endswith(".json") else results_to_csv
        writer(results, args.out)
        print(f"\nwrote {args.out}")


if __name__ == "__main__":
    main()
