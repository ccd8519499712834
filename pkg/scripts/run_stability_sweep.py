#!/usr/bin/env python3
"""Perturbation-size sweep of the self-consistent particle evolution.

Builds the reference King model, evolves seeded perturbations of several
relative sizes for a number of central dynamical times with common random
numbers, and writes a tidy CSV of the orbital-distance time series per size
plus a summary with the fitted growth exponent.

Usage:
  python scripts/run_stability_sweep.py --w0 3 --t-dyn 50 --n 100000 \
      --etas 0 0.0025 0.005 0.01 0.02 --out sweep
"""

import argparse
import csv
import json

from vpstab.evolver import conservation_report, stability_sweep
from vpstab.steady_state import king_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--w0", type=float, default=3.0)
    ap.add_argument("--t-dyn", dest="t_dyn", type=float, default=50.0)
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=12345)
    ap.add_argument("--etas", type=float, nargs="+", default=[0.0, 0.0025, 0.005, 0.01, 0.02])
    ap.add_argument("--field-average", type=int, default=128)
    ap.add_argument("--out", default="sweep")
    args = ap.parse_args()

    model = king_model(args.w0, n_r=400)
    out = stability_sweep(
        model,
        etas=tuple(args.etas),
        n_particles=args.n,
        seed=args.seed,
        n_dynamical_times=args.t_dyn,
        field_average=args.field_average,
    )

    series_path = f"{args.out}_series.csv"
    with open(series_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eta", "t", "orbital_distance", "hamiltonian", "mass"])
        for eta, diag in out["diagnostics"].items():
            for k, t in enumerate(diag.times):
                writer.writerow(
                    [eta, repr(t), repr(diag.orbital[k]), repr(diag.hamiltonian[k]), repr(diag.mass[k])]
                )

    summary = {
        "w0": args.w0,
        "n_particles": args.n,
        "seed": args.seed,
        "exponent": out["exponent"],
        "max_distance": {str(k): v for k, v in out["max_distance"].items()},
        "conservation": {
            str(eta): conservation_report(diag).__dict__ | {"tolerances": None}
            for eta, diag in out["diagnostics"].items()
        },
    }
    for rep in summary["conservation"].values():
        rep.pop("tolerances")
    with open(f"{args.out}_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, default=float)
    print(f"fitted growth exponent: {out['exponent']:.3f}")
    print(f"wrote {series_path} and {args.out}_summary.json")


if __name__ == "__main__":
    main()
