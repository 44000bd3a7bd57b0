"""Command-line experiment runner.

Exit status: 0 on completion, 2 on a configuration error, 3 on an I/O error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys

from .bench import ExperimentConfig, check_writable, run_experiment

EXIT_CONFIG = 2
EXIT_IO = 3


def _float_list(text: str) -> list[float]:
    try:
        return [float(s) for s in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spinal-recon", description=__doc__.splitlines()[0])
    p.add_argument("--snr", type=_float_list, default=[0.0277, 0.069, 0.143],
                   help="comma or space separated SNR grid")
    p.add_argument("--blocks", type=int, default=100)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--c", type=int, default=6)
    p.add_argument("--B", type=int, default=256)
    p.add_argument("--imax", type=int, default=50)
    p.add_argument("--beta-trunc", type=float, default=3.0)
    p.add_argument("--lambda", dest="lam", type=int, default=32)
    p.add_argument("--v-a", type=float, default=1.0)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--snr-offset", type=float, default=0.0,
                   help="added to the true SNR when deriving protocol parameters")
    p.add_argument("--zero-noise", action="store_true", help="give Alice Bob's exact raw data")
    p.add_argument("--mode", choices=["inprocess", "listen", "connect"], default="inprocess",
                   help="listen runs Alice, connect runs Bob")
    p.add_argument("--addr", default="127.0.0.1:7788")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-csv")
    p.add_argument("--out-json")
    p.add_argument("--out-records", help="JSON lines, one record per block")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = ExperimentConfig(
            snr_list=tuple(args.snr), blocks_per_snr=args.blocks, n=args.n, k=args.k, c=args.c,
            B=args.B, beta_trunc=args.beta_trunc, lam=args.lam, i_max=args.imax, v_a=args.v_a,
            master_seed=args.seed, snr_offset=args.snr_offset, zero_noise=args.zero_noise,
            mode=args.mode, addr=args.addr, workers=args.workers,
            out_csv=args.out_csv, out_json=args.out_json, out_records=args.out_records,
        )
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        check_writable(cfg.out_csv, cfg.out_json, cfg.out_records)
        report, _ = run_experiment(cfg)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    if not args.quiet:
        print(f"{'snr':>8} {'beta':>8} {'ref':>8} {'fer':>6} {'iters':>7} {'L':>7} {'blocks':>6}")
        for r in report.rows:
            ref = f"{r.reference:.4f}" if r.reference is not None else "-"
            beta = f"{r.beta_mean:.4f}" if not math.isnan(r.beta_mean) else "-"
            print(f"{r.snr:>8g} {beta:>8} {ref:>8} {r.fer:>6.3f} {r.iters_mean:>7.2f} {r.L_mean:>7.2f} {r.blocks:>6}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
