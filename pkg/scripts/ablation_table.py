"""Refocus-range and layer-count ablation on a two-layer occluded scene.

Prints one row per setting; the bound row uses the non-aliasing layer count.

    python scripts/ablation_table.py --backend classical --height 32
"""

import argparse
import math

from efslab.experiment import ExperimentSpec, SceneSpec, run_experiment

FACTOR = 15


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--backend", choices=("oracle", "classical"), default="classical")
    ap.add_argument("--height", type=int, default=32)
    ap.add_argument("--width", type=int, default=256)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    d_min, d_max, n_src = -1.6, 3.0, 14
    n_fmin = math.ceil((d_max - d_min) * (n_src - 1) / 2)  # intervals; layers are one more
    scene = SceneSpec(disparities=(0.4 / FACTOR, 1.0 / FACTOR), masks=(("full",), ("left", args.width / 2)),
                      n_views=196, height=args.height, width=args.width)
    spec = ExperimentSpec(name="ablation", scene=scene, downsample=FACTOR, d_min=d_min, d_max=d_max, n_f=n_fmin + 1,
                          backend=args.backend, seed=args.seed,
                          sweep={"range_scale": [0.8, 1.0, 1.2],
                                 "n_f": [math.ceil(n_fmin / 2) + 1, n_fmin + 1, math.ceil(1.5 * n_fmin) + 1]})
    rows = run_experiment(spec, write=False)["sweep"]
    print(f"{'setting':<22}{'d range':>18}{'N_f':>6}{'PSNR':>9}{'SSIM':>9}")
    for r in rows:
        label = f"range x{r['value']:g}" if r["parameter"] == "range_scale" else f"N_f = {int(r['value'])}"
        span = f"[{r['d_min']:.2f}, {r['d_max']:.2f}]"
        print(f"{label:<22}{span:>18}{r['n_f']:>6}{r['mean_psnr']:>9.2f}{r['mean_ssim']:>9.4f}")


if __name__ == "__main__":
    main()
