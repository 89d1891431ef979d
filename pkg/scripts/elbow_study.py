#!/usr/bin/env python3
"""Stability study for the elbow heuristic.

Regenerates the archetype corpus across a range of seeds and reports how
often the second-difference rule recommends each k, plus the inertia drop
between k=4 and its neighbors.
"""

import argparse
from collections import Counter

from scrapsig.features import compute_features, zscore_normalize
from scrapsig.segment import elbow_scan
from scrapsig.synth import generate_archetype_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=32, help="codes per archetype")
    ap.add_argument("--seeds", type=int, default=20, help="number of seeds to try")
    args = ap.parse_args()

    votes: Counter[int] = Counter()
    for seed in range(args.seeds):
        corpus = generate_archetype_corpus(args.n, seed=seed)
        matrix = zscore_normalize([compute_features(s) for s in corpus.series])
        curve, recommended = elbow_scan(matrix, seed=seed)
        votes[recommended] += 1
        by_k = dict(curve)
        drop_in = by_k[3] - by_k[4]
        drop_out = by_k[4] - by_k[5]
        print(
            f"seed {seed:>3}: recommended k={recommended}"
            f"  inertia 3->4 drop {drop_in:9.2f}, 4->5 drop {drop_out:8.2f}"
        )

    print("\nvotes:")
    for k in sorted(votes):
        print(f"  k={k}: {votes[k]}/{args.seeds}")


if __name__ == "__main__":
    main()
