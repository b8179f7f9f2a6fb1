"""Minimum focal-layer count against the near depth bound.

    python scripts/nfmin_table.py --n-u 200 --kb 9 --zmax 100 --out nfmin.csv
"""

import argparse
from pathlib import Path

import numpy as np

from efslab.experiment import write_csv
from efslab.sampling import nfmin_sweep


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-u", type=int, default=200)
    ap.add_argument("--kb", type=float, default=9.0)
    ap.add_argument("--s", type=float, default=1.0)
    ap.add_argument("--zmin", type=float, nargs=3, default=(2.0, 10.0, 0.5), metavar=("START", "STOP", "STEP"))
    ap.add_argument("--zmax", type=float, nargs="+", default=[100.0])
    ap.add_argument("--out", default=None, help="CSV path (table is printed either way)")
    args = ap.parse_args()

    z_mins = np.arange(args.zmin[0], args.zmin[1] + 1e-9, args.zmin[2])
    rows = nfmin_sweep(args.kb, args.n_u, z_mins, np.array(args.zmax), args.s)
    print(f"{'Z_min':>7}{'Z_max':>8}{'Z range':>10}{'N_fmin':>8}")
    for r in rows:
        print(f"{r['z_min']:>7.2f}{r['z_max']:>8.1f}{r['depth_range']:>10.4f}{r['n_f_min']:>8d}")
    if args.out:
        write_csv(Path(args.out), rows, ["z_min", "z_max", "depth_range", "n_f_min", "n_f_min_exact"])


if __name__ == "__main__":
    main()
