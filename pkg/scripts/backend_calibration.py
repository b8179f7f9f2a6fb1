"""Oracle, classical and nearest-view-copy PSNR side by side.

The oracle backend is the reconstruction ceiling for a given EFS
configuration; the copy row is the floor any completion should clear.

    python scripts/backend_calibration.py --width 256 --height 32
"""

import argparse
import time

import numpy as np

from efslab.lightfield import LightField, SceneGeometry, downsample_views, synth_lightfield
from efslab.metrics import mean_finite, per_view_scores, psnr
from efslab.refocus import ReconstructionConfig
from efslab.reconstruct import ClassicalBackend, OracleBackend, reconstruct_lightfield, target_positions

FACTOR = 15
SCENES = {
    # name: (disparities per sparse step, masks, range centre)
    "single": ([1.0], None, 1.0),
    "two-layer": ([0.4, 1.0], "left", 0.7),
    "three-layer": ([-0.5, 0.3, 1.1], "stripes", 0.3),
}


def _masks(kind, w):
    if kind == "left":
        return [("full",), ("left", w / 2)]
    if kind == "stripes":
        return [("full",), ("stripe", w * 0.2, w * 0.45), ("stripe", w * 0.6, w * 0.8)]
    return None


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--height", type=int, default=32)
    ap.add_argument("--width", type=int, default=256)
    ap.add_argument("--half-range", type=float, default=6.0)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    print(f"{'scene':<13}{'oracle':>9}{'classical':>11}{'copy':>8}{'secs':>7}")
    for name, (disp, masks, centre) in SCENES.items():
        geom = SceneGeometry.from_disparities([d / FACTOR for d in disp], masks=_masks(masks, args.width))
        dense, _ = synth_lightfield(geom, 196, args.height, args.width, seed=args.seed)
        sparse = downsample_views(dense, FACTOR)
        truth = LightField(dense.views[:, : (sparse.n_u - 1) * FACTOR + 1])
        cfg = ReconstructionConfig.from_delta_alpha(centre - args.half_range, centre + args.half_range,
                                                    2 / (sparse.n_u - 1), n_target=truth.n_u)
        tp = target_positions(sparse.n_u, truth.n_u)
        idx = np.rint(tp).astype(int)
        novel = np.flatnonzero(np.abs(tp - idx) > 1e-9)  # source views are excluded from every column
        t0 = time.perf_counter()
        out = []
        for backend in (OracleBackend(truth), ClassicalBackend()):
            rec = reconstruct_lightfield(sparse, cfg, backend)
            scores = per_view_scores(rec.field.views[0], truth.views[0], validity=rec.validity[0])
            out.append(mean_finite(scores[j].psnr for j in novel))
        copy = mean_finite(psnr(sparse.views[0, idx[j]], truth.views[0, j], rec.validity[0, j]) for j in novel)
        print(f"{name:<13}{out[0]:>9.2f}{out[1]:>11.2f}{copy:>8.2f}{time.perf_counter() - t0:>7.1f}")


if __name__ == "__main__":
    main()
