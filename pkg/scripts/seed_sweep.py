"""Per-seed MaxLogit minus MSP AUROC on the fine-grained benchmark, to see how stable the gap is.

    python3 scripts/seed_sweep.py --seeds 20
"""

import argparse

import numpy as np

from oodkit import benchmarks


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()

    gaps = []
    for seed in range(args.seeds):
        res = benchmarks.run_fine_grained(seed)
        gap = 100 * (res["maxlogit"].auroc - res["msp"].auroc)
        gaps.append(gap)
        print(f"seed {seed:3d}  msp {100 * res['msp'].auroc:6.2f}  maxlogit {100 * res['maxlogit'].auroc:6.2f}  "
              f"gap {gap:+6.2f}")
    gaps = np.array(gaps)
    print(f"mean gap {gaps.mean():+.2f}, MaxLogit ahead on {int((gaps > 0).sum())}/{len(gaps)} seeds")


if __name__ == "__main__":
    main()
