"""Multi-label benchmark with a sigmoid-head model: MaxLogit vs LogitAvg, LOF, Isolation Forest.

    python3 scripts/run_multilabel.py --seeds 5
"""

import argparse
from pathlib import Path

from oodkit import benchmarks


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    seeds = range(args.first_seed, args.first_seed + args.seeds)
    table = benchmarks.run_seeds(benchmarks.run_multilabel, seeds, benchmarks.MultiLabelConfig())
    print(table.to_markdown())
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "table.md").write_text(table.to_markdown())
        (args.out / "table.csv").write_text(table.to_csv())


if __name__ == "__main__":
    main()
