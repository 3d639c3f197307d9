#!/usr/bin/env python3
"""Small-world factor of reference graphs and (optionally) a trained layer.

Prints sigma = (C/C_r)/(L/L_r) for a rewired ring lattice (the canonical
small world), an equally sized random bipartite graph (sigma ~ 1), and,
when --checkpoint points at a trained model, each diagonal layer's
connectivity graph.
"""

import argparse

from diagsparse.analysis import (
    layer_to_graph,
    random_bipartite_graph,
    ring_graph,
    small_world_sigma,
)


def report(tag: str, graph, n_random: int, seed: int) -> None:
    rep = small_world_sigma(graph, n_random=n_random, seed=seed)
    print(f"{tag:24s} C={rep.C:.4f} C_r={rep.C_r:.4f} L={rep.L:.3f} "
          f"L_r={rep.L_r:.3f} sigma={rep.sigma:.3f}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=256, help="ring size")
    parser.add_argument("--reach", type=int, default=2)
    parser.add_argument("--rewire", type=float, default=0.1)
    parser.add_argument("--n-random", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--checkpoint", help="trained model JSON bundle")
    args = parser.parse_args()

    ring = ring_graph(args.n, args.reach, args.rewire, args.seed)
    report(f"ring(reach={args.reach},p={args.rewire})", ring,
           args.n_random, args.seed)
    er = random_bipartite_graph(args.n, args.n, ring.edges.shape[0], args.seed)
    report("random bipartite", er, args.n_random, args.seed)

    if args.checkpoint:
        from diagsparse.training import load_checkpoint

        model, _ = load_checkpoint(args.checkpoint)
        for i, matrix in enumerate(model.layer_matrices()):
            if matrix is None:
                continue
            report(f"layer {i} ({matrix.rows}x{matrix.cols})",
                   layer_to_graph(matrix), args.n_random, args.seed)


if __name__ == "__main__":
    main()
