"""Reconciliation efficiency at the three reference SNRs, next to the published values.

    python3 scripts/run_table1.py --blocks 100 --out results/table1
"""

import argparse
import logging
from pathlib import Path

from spinal_recon.bench import DEFAULT_SNRS, ExperimentConfig, run_experiment, table1_reference


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--blocks", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results/table1", help="output prefix")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    cfg = ExperimentConfig(
        snr_list=DEFAULT_SNRS, blocks_per_snr=args.blocks, master_seed=args.seed, workers=args.workers,
        out_csv=f"{args.out}.csv", out_json=f"{args.out}.json", out_records=f"{args.out}.jsonl",
    )
    report, _ = run_experiment(cfg)
    ref = table1_reference()
    print(f"{'snr':>7} {'beta':>7} {'median':>7} {'paper':>7} {'ref18':>7} {'fer':>5} {'L':>6}")
    for r in report.rows:
        proposed, other = ref[r.snr]
        print(f"{r.snr:>7g} {100 * r.beta_mean:>7.2f} {100 * r.beta_median:>7.2f} {proposed:>7.2f} "
              f"{other:>7.2f} {r.fer:>5.2f} {r.L_mean:>6.1f}")


if __name__ == "__main__":
    main()
