"""Command-line entry point: ``efslab <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .experiment import ExperimentError, ExperimentSpec, _clean, run_experiment, write_csv, write_json
from .lightfield import LightField, SceneGeometry, downsample_views, extract_epi, synth_lightfield
from .metrics import mean_finite, per_view_scores
from .reconstruct import (
    ClassicalBackend,
    ExternalBackend,
    OracleBackend,
    measure_wedge_loss,
    multi_reference_reconstruct,
    reconstruct_lightfield,
)
from .refocus import ReconstructionConfig, build_focal_stack
from .sampling import max_delta_alpha, nfmin_sweep, sampling_report
from .spectrum import conjugate_symmetry_deviation, detect_view_lines, efs_slice_route, efs_spatial_route


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _config(args, n_src: int, n_target: int | None = None) -> ReconstructionConfig:
    if args.nf is None:
        return ReconstructionConfig.from_delta_alpha(args.dmin, args.dmax, max_delta_alpha(n_src),
                                                     u_ref=args.u_ref, n_target=n_target)
    return ReconstructionConfig(args.dmin, args.dmax, args.nf, args.u_ref, n_target)


def _add_range(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dmin", type=float, required=True, help="minimum disparity, px per view step")
    p.add_argument("--dmax", type=float, required=True, help="maximum disparity, px per view step")
    p.add_argument("--nf", type=int, default=None, help="focal layers (default: non-aliasing spacing)")
    p.add_argument("--u-ref", type=float, default=None, help="reference view (default: centre)")


def _epi(args):
    lf = io.load_lightfield(args.input)
    return lf, extract_epi(lf, args.row, args.v, args.u_ref)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    masks = json.loads(args.masks) if args.masks else None
    masks = [tuple(m) for m in masks] if masks else None
    geom = SceneGeometry.from_disparities(_floats(args.disparities), masks=masks)
    lf, dmaps = synth_lightfield(geom, args.views, args.height, args.width, seed=args.seed, n_v=args.n_v,
                                 cutoff=args.cutoff)
    io.save_lightfield(lf, args.out, args.bit_depth)
    if args.disparity_maps:
        io.save_disparity_maps(dmaps, args.disparity_maps)
    print(f"wrote {lf.n_v}x{lf.n_u} views of {lf.height}x{lf.width} to {args.out}")
    return 0


def cmd_downsample(args) -> int:
    lf = io.load_lightfield(args.input)
    out = downsample_views(lf, args.factor, keep_last=args.keep_last)
    io.save_lightfield(out, args.out, int(lf.meta.get("bit_depth", 16)))
    print(f"kept {out.n_u} of {lf.n_u} views")
    return 0


def cmd_refocus(args) -> int:
    lf, epi = _epi(args)
    cfg = _config(args, lf.n_u)
    fs = build_focal_stack(epi, cfg)
    out = Path(args.out)
    io.save_focal_stack(fs, out / "stack.json")
    io.save_png(fs.data, out / "stack.png")
    if args.layer_previews:
        # one refocused image per layer over all rows
        from .refocus import focal_stack_array

        stacks, _ = focal_stack_array(lf.views[args.v].transpose(1, 0, 2), epi.offsets, cfg.f_values)
        for m in range(cfg.n_f):
            io.save_png(stacks[:, m, :], out / f"layer_{m:04d}.png")
    print(f"{cfg.n_f} layers, delta_alpha={cfg.delta_alpha:.6g}")
    return 0


def cmd_efs_build(args) -> int:
    lf, epi = _epi(args)
    cfg = _config(args, lf.n_u)
    if args.route == "spatial":
        efs = efs_spatial_route(build_focal_stack(epi, cfg))
    else:
        _, efs = efs_slice_route(epi, cfg, interp=args.interp)
    io.save_complex_grid(efs, args.out)
    if args.preview:
        mag = np.log1p(np.abs(efs.data))
        io.save_png(mag / max(mag.max(), 1e-300), args.preview)
    print(f"EFS {efs.shape} written to {args.out}")
    return 0


def cmd_efs_lines(args) -> int:
    grid = io.load_complex_grid(args.grid)
    det = detect_view_lines(grid, args.delta_alpha, args.n_u, u_ref=args.u_ref, tol_deg=args.tol)
    report = {
        "schema_version": 1,
        "n_u": args.n_u,
        "n_detected": det.n_detected,
        "n_matched": det.n_matched,
        "complete": det.complete,
        "lines": [{"angle_deg": ln.angle, "energy": ln.energy, "view": ln.view} for ln in det.lines],
        "predicted_deg": det.predicted.tolist(),
    }
    _emit(report, args.json)
    return 0


def cmd_efs_symmetry(args) -> int:
    grid = io.load_complex_grid(args.grid)
    score = conjugate_symmetry_deviation(grid)
    peak = float(np.max(np.abs(grid.data)))
    _emit({"schema_version": 1, "score": score, "max_magnitude": peak,
           "relative": score / peak if peak > 0 else 0.0}, args.json)
    return 0


def cmd_analyze(args) -> int:
    geom = SceneGeometry(focal_length=args.kb, baseline=1.0, s_factor=args.s,
                         depth_bounds=(args.zmin, args.zmax))
    rep = sampling_report(geom, args.n_u, args.delta_alpha, args.u_ref)
    _emit(rep.to_json(), args.json)
    if args.sweep_csv:
        z_mins = np.arange(args.sweep_zmin[0], args.sweep_zmin[1] + 1e-9, args.sweep_zmin[2])
        rows = nfmin_sweep(args.kb, args.n_u, z_mins, np.array([args.zmax]), args.s)
        write_csv(Path(args.sweep_csv), rows, ["z_min", "z_max", "depth_range", "n_f_min", "n_f_min_exact"])
    return 0


def _backend(args, n_target: int):
    if args.backend == "oracle":
        if not args.truth:
            raise SystemExit("--backend oracle needs --truth DIR with the dense field")
        return OracleBackend(io.load_lightfield(args.truth))
    if args.backend == "classical":
        return ClassicalBackend()
    if not args.external_path:
        raise SystemExit("--backend external needs --external-path DIR")
    return ExternalBackend(Path(args.external_path))


def cmd_reconstruct(args) -> int:
    lf = io.load_lightfield(args.input)
    n_target = args.target_views or lf.n_u
    cfg = _config(args, lf.n_u, n_target)
    cfg = ReconstructionConfig(cfg.d_min, cfg.d_max, cfg.n_f, cfg.u_ref, cfg.n_target, args.aperture)
    backend = _backend(args, n_target)
    if args.refs:
        rec = multi_reference_reconstruct(lf, cfg, _floats(args.refs), backend, passthrough=args.passthrough)
    else:
        rec = reconstruct_lightfield(lf, cfg, backend, passthrough=args.passthrough)
    out = Path(args.out)
    io.save_lightfield(rec.field, out, args.bit_depth)
    np.save(out / "validity.npy", rec.validity)
    report = {"schema_version": 1, "per_view": [], "mean_psnr": None, "mean_ssim": None,
              "efs_symmetry": rec.efs_symmetry, "imag_residue": rec.imag_residue, "wedge_loss": None}
    if args.truth:
        truth = io.load_lightfield(args.truth)
        report.update(_scores(rec.field, truth, rec.validity, args.include_invalid))
        try:
            report["wedge_loss"] = measure_wedge_loss(truth, cfg, lf.n_u)
        except ValueError:
            pass
    write_json(Path(args.metrics) if args.metrics else out / "metrics.json", report)
    print(f"reconstructed {rec.field.n_u} views; mean PSNR {report['mean_psnr']}")
    return 0


def _scores(rec: LightField, truth: LightField, validity, include_invalid: bool) -> dict:
    if truth.views.shape != rec.views.shape:
        raise SystemExit(f"truth shape {truth.views.shape} differs from reconstruction {rec.views.shape}")
    pos = rec.meta.get("target_positions")
    rows = []
    for v in range(rec.n_v):
        for s in per_view_scores(rec.views[v], truth.views[v], pos, None if validity is None else validity[v],
                                 include_invalid):
            rows.append({"u": s.u, "psnr": s.psnr, "ssim": s.ssim} | ({"v": v} if rec.n_v > 1 else {}))
    return {"per_view": rows, "mean_psnr": mean_finite(r["psnr"] for r in rows),
            "mean_ssim": mean_finite(r["ssim"] for r in rows)}


def cmd_eval(args) -> int:
    rec = io.load_lightfield(args.recon)
    truth = io.load_lightfield(args.truth)
    vpath = Path(args.recon) / "validity.npy"
    validity = np.load(vpath) if vpath.exists() and not args.include_invalid else None
    report = {"schema_version": 1} | _scores(rec, truth, validity, args.include_invalid)
    if args.csv:
        write_csv(Path(args.csv), report["per_view"], ["u", "psnr", "ssim"])
    _emit(report, args.json)
    return 0


def cmd_run(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    if args.output_dir:
        from dataclasses import replace

        spec = replace(spec, output_dir=args.output_dir)
    try:
        report = run_experiment(spec)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{spec.name}: mean PSNR {report['mean_psnr']:.2f} dB, mean SSIM {report['mean_ssim']:.4f}")
    return 0


def _emit(obj: dict, path: str | None) -> None:
    if path:
        write_json(Path(path), obj)
    else:
        print(json.dumps(_clean(obj), indent=2, sort_keys=True))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="efslab", description="Epipolar focus spectrum toolkit")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="generate a layered synthetic light field")
    p.add_argument("--disparities", required=True, help="comma-separated px per view step, one per layer")
    p.add_argument("--masks", default=None, help='JSON list of mask descriptors, e.g. [["full"],["left",64]]')
    p.add_argument("--views", type=int, default=200)
    p.add_argument("--n-v", type=int, default=1)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--cutoff", type=float, default=0.125)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bit-depth", type=int, choices=(8, 16), default=16)
    p.add_argument("--disparity-maps", default=None, help="directory for raw float32 disparity maps")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("downsample", help="keep every FACTOR-th view")
    p.add_argument("input")
    p.add_argument("--factor", type=int, required=True)
    p.add_argument("--keep-last", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_downsample)

    p = sub.add_parser("refocus", help="focal stack of one EPI")
    p.add_argument("input")
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--v", type=int, default=0)
    _add_range(p)
    p.add_argument("--layer-previews", action="store_true", help="also write one refocused image per layer")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_refocus)

    efs = sub.add_parser("efs", help="EFS construction and analysis").add_subparsers(dest="efs_cmd", required=True)
    p = efs.add_parser("build")
    p.add_argument("input")
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--v", type=int, default=0)
    _add_range(p)
    p.add_argument("--route", choices=("spatial", "slice"), default="spatial")
    p.add_argument("--interp", choices=("linear", "nearest"), default="linear")
    p.add_argument("--preview", default=None, help="PNG of log magnitude")
    p.add_argument("--out", required=True, help="ComplexGrid header path (.json)")
    p.set_defaults(fn=cmd_efs_build)
    p = efs.add_parser("lines")
    p.add_argument("grid")
    p.add_argument("--delta-alpha", type=float, required=True)
    p.add_argument("--n-u", type=int, required=True)
    p.add_argument("--u-ref", type=float, default=None)
    p.add_argument("--tol", type=float, default=1.5, help="match tolerance in degrees")
    p.add_argument("--json", default=None)
    p.set_defaults(fn=cmd_efs_lines)
    p = efs.add_parser("symmetry")
    p.add_argument("grid")
    p.add_argument("--json", default=None)
    p.set_defaults(fn=cmd_efs_symmetry)

    p = sub.add_parser("analyze", help="closed-form sampling report")
    p.add_argument("--n-u", type=int, required=True)
    p.add_argument("--kb", type=float, required=True)
    p.add_argument("--zmin", type=float, required=True)
    p.add_argument("--zmax", type=float, required=True)
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--delta-alpha", type=float, default=None)
    p.add_argument("--u-ref", type=float, default=None)
    p.add_argument("--json", default=None)
    p.add_argument("--sweep-csv", default=None, help="N_fmin vs Z_min table")
    p.add_argument("--sweep-zmin", type=float, nargs=3, default=(2.0, 10.0, 0.5), metavar=("START", "STOP", "STEP"))
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("reconstruct", help="dense views through the EFS")
    p.add_argument("input")
    p.add_argument("--backend", choices=("oracle", "classical", "external"), default="classical")
    _add_range(p)
    p.add_argument("--target-views", type=int, default=None)
    p.add_argument("--refs", default=None, help="comma-separated reference views (source units)")
    p.add_argument("--aperture", choices=("even", "periodic"), default="even")
    p.add_argument("--passthrough", action="store_true", help="copy source views into the output")
    p.add_argument("--truth", default=None, help="dense ground truth (oracle backend and metrics)")
    p.add_argument("--external-path", default=None)
    p.add_argument("--include-invalid", action="store_true")
    p.add_argument("--bit-depth", type=int, choices=(8, 16), default=16)
    p.add_argument("--metrics", default=None, help="metrics JSON path (default OUT/metrics.json)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("eval", help="per-view PSNR/SSIM of a reconstruction")
    p.add_argument("recon")
    p.add_argument("truth")
    p.add_argument("--include-invalid", action="store_true")
    p.add_argument("--csv", default=None)
    p.add_argument("--json", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("run", help="run an experiment spec (JSON)")
    p.add_argument("spec")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(fn=cmd_run)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return int(args.fn(args) or 0)


if __name__ == "__main__":
    raise SystemExit(main())
