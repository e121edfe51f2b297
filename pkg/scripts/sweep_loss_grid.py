#!/usr/bin/env python3
"""Verdict grid over (timeout factor k, loss probability p).

Runs one Bernoulli-loss transfer per cell and prints whether the estimate
stayed bounded, diverged, or falsely converged.  The interesting ridge is
where the divergence column starts: raising k pushes it to higher p.

Usage:
  python3 scripts/sweep_loss_grid.py
  python3 scripts/sweep_loss_grid.py --k 2,4,8 --p 0.1,0.2,0.3 --seed 7
  python3 scripts/sweep_loss_grid.py --csv grid.csv
"""
import argparse
import csv
import sys

from rtosim.scenarios import loss_threshold_sweep

DEFAULT_K = "1.5,2,4,8"
DEFAULT_P = "0.05,0.10,0.15,0.20,0.25,0.30,0.35,0.40"


def parse_floats(text: str) -> list[float]:
    return [float(piece) for piece in text.split(",") if piece.strip()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Verdict grid over timeout factor and loss probability.")
    parser.add_argument("--k", default=DEFAULT_K, metavar="LIST",
                        help=f"comma-separated k values (default {DEFAULT_K})")
    parser.add_argument("--p", default=DEFAULT_P, metavar="LIST",
                        help=f"comma-separated loss probabilities "
                             f"(default {DEFAULT_P})")
    parser.add_argument("--packets", type=int, default=800,
                        help="packets per cell (default 800)")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--csv", metavar="PATH",
                        help="also write the grid as CSV")
    args = parser.parse_args(argv)

    k_values = parse_floats(args.k)
    p_values = parse_floats(args.p)
    if not k_values or not p_values:
        parser.error("need at least one k and one p")

    grid = {}
    for k in k_values:
        for p, summary in loss_threshold_sweep(
                k, p_values, seed=args.seed, packets=args.packets):
            grid[(k, p)] = summary

    header = "  p\\k   " + "".join(f"{k:>10g}" for k in k_values)
    print(header)
    for p in sorted(p_values):
        cells = "".join(f"{grid[(k, p)].verdict[:8]:>10s}"
                        for k in k_values)
        print(f"  {p:5.2f} {cells}")
    print(f"  ({args.packets} packets per cell, seed {args.seed}; "
          f"escape predicted near p = 1/(1+k))")

    if args.csv:
        with open(args.csv, "w", newline="", encoding="ascii") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "p", "verdict", "final_e", "duplicates"])
            for k in k_values:
                for p in sorted(p_values):
                    summary = grid[(k, p)]
                    writer.writerow([f"{k:g}", f"{p:g}", summary.verdict,
                                     f"{summary.final_e:.6f}",
                                     summary.duplicates_received])
        print(f"  wrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
