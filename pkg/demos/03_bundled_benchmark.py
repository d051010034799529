"""A short benchmark on the bundled datasets with every search mode.

A ranker is trained first from exhaustive one-step look-ahead on a few random
prefixes of each dataset. The run then writes results, learning curves and an
average-rank table under ./demo_results.

Run:  python demos/03_bundled_benchmark.py [episodes]
"""

from __future__ import annotations

import sys

from softpipe.bench import BenchmarkConfig, DatasetEntry, rank_table, run_benchmark
from softpipe.search import MODES, SearchConfig


def main(episodes: int = 30):
    cfg = BenchmarkConfig(
        datasets=[DatasetEntry("wine", "bundled:wine", "class"),
                  DatasetEntry("breast_cancer", "bundled:breast_cancer", "diagnosis"),
                  DatasetEntry("anes96", "bundled:anes96", "vote")],
        modes=list(MODES), seeds=[0, 1],
        search=SearchConfig(T=8, episodes=episodes),
        ltr_oracle_prefixes=4, output_dir="demo_results")
    rows, _ = run_benchmark(cfg)
    print(f"{'dataset':>14} {'mode':>16} seed  best  test  episodes-to-95%")
    for r in rows:
        print(f"{r.dataset:>14} {r.mode:>16} {r.seed:>4}  {r.best_accuracy:.3f} "
              f"{r.best_test_accuracy:.3f}  {r.episodes_to_95}")
    print("\naverage rank (1 is best):")
    for mode, rank in sorted(rank_table(rows).items(), key=lambda kv: kv[1]):
        print(f"  {mode:>16}: {rank:.2f}")
    print("\nfiles written to demo_results/")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 30)
