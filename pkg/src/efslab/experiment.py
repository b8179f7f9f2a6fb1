"""Experiment specs and the generate -> downsample -> reconstruct -> evaluate runner."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .lightfield import LightField, SceneGeometry, downsample_views, synth_lightfield
from .metrics import mean_finite, per_view_scores
from .reconstruct import (
    ClassicalBackend,
    ExternalBackend,
    OracleBackend,
    Reconstruction,
    full_parallax_reconstruct,
    measure_wedge_loss,
    multi_reference_reconstruct,
    reconstruct_lightfield,
)
from .refocus import ReconstructionConfig
from .sampling import max_delta_alpha

SCHEMA_VERSION = 1


class ExperimentError(RuntimeError):
    """A stage of :func:`run_experiment` failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class SceneSpec:
    """Layered synthetic scene; disparities are per *dense* view step."""

    disparities: tuple[float, ...] = (0.05,)
    masks: tuple[tuple, ...] | None = None
    n_views: int = 196
    n_v: int = 1
    height: int = 64
    width: int = 128
    cutoff: float = 0.125

    def geometry(self) -> SceneGeometry:
        return SceneGeometry.from_disparities(list(self.disparities), masks=self.masks)


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one run.

    ``d_min``/``d_max`` are in pixels per *source* view step (after
    downsampling).  ``n_f=None`` uses the non-aliasing layer spacing for the
    source view count.  ``refs`` (source-view units) switches on
    multi-reference blending.  ``sweep`` maps ``"range_scale"`` or ``"n_f"``
    to a list of values and writes one CSV row per value.
    """

    name: str = "experiment"
    scene: SceneSpec | None = field(default_factory=SceneSpec)
    input_path: str | None = None
    downsample: int = 15
    downsample_v: int | None = None
    d_min: float = -5.0
    d_max: float = 6.5
    n_f: int | None = None
    u_ref: float | None = None
    aperture: str = "even"
    backend: str = "oracle"
    backend_path: str | None = None
    refs: tuple[float, ...] | None = None
    sweep: dict | None = None
    include_invalid: bool = False
    passthrough: bool = False
    seed: int = 0
    output_dir: str = "runs/experiment"

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        out = asdict(self)
        out["schema_version"] = SCHEMA_VERSION
        return out

    @classmethod
    def from_json(cls, obj: dict) -> ExperimentSpec:
        obj = dict(obj)
        version = obj.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported spec schema_version {version}")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown spec field(s): {', '.join(sorted(unknown))}")
        scene = obj.get("scene")
        if isinstance(scene, dict):
            scene = dict(scene)
            scene["disparities"] = tuple(scene.get("disparities", SceneSpec.disparities))
            if scene.get("masks") is not None:
                scene["masks"] = tuple(tuple(m) for m in scene["masks"])
            obj["scene"] = SceneSpec(**scene)
        if obj.get("refs") is not None:
            obj["refs"] = tuple(float(r) for r in obj["refs"])
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentSpec:
        return cls.from_json(json.loads(Path(path).read_text()))

    # -- derived -----------------------------------------------------------

    def config(self, n_src: int, n_target: int) -> ReconstructionConfig:
        if self.n_f is None:
            return ReconstructionConfig.from_delta_alpha(self.d_min, self.d_max, max_delta_alpha(n_src),
                                                         u_ref=self.u_ref, n_target=n_target, aperture=self.aperture)
        return ReconstructionConfig(self.d_min, self.d_max, self.n_f, self.u_ref, n_target, self.aperture)


def _stage(name: str):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except ExperimentError:
                raise
            except Exception as exc:  # noqa: BLE001 - re-raised with a stage tag
                raise ExperimentError(name, exc) from exc
        return inner
    return wrap


@_stage("load")
def _load_dense(spec: ExperimentSpec) -> LightField:
    if spec.input_path is not None:
        return io.load_lightfield(spec.input_path)
    if spec.scene is None:
        raise ValueError("spec needs either a scene or an input_path")
    s = spec.scene
    lf, _ = synth_lightfield(s.geometry(), s.n_views, s.height, s.width, seed=spec.seed, n_v=s.n_v, cutoff=s.cutoff)
    return lf


def _dense_grid(lf: LightField, factor: int) -> LightField:
    """Views of ``lf`` at the dense positions spanned by the kept views."""
    n_src = len(range(0, lf.n_u, factor))
    return LightField(lf.views[:, : (n_src - 1) * factor + 1], lf.baseline_step, lf.focal_length, dict(lf.meta))


@_stage("downsample")
def _downsample(spec: ExperimentSpec, dense: LightField) -> tuple[LightField, LightField]:
    truth = _dense_grid(dense, spec.downsample)
    sparse = downsample_views(truth, spec.downsample)
    if spec.downsample_v:
        truth = _dense_grid(truth.transposed(), spec.downsample_v).transposed()
        sparse = downsample_views(truth, spec.downsample)
        sparse = downsample_views(sparse.transposed(), spec.downsample_v).transposed()
    return sparse, truth


def _backend(spec: ExperimentSpec, truth: LightField, vertical: bool = False):
    if spec.backend == "oracle":
        return OracleBackend(truth.transposed() if vertical else truth)
    if spec.backend == "classical":
        return ClassicalBackend()
    if spec.backend == "external":
        if spec.backend_path is None:
            raise ValueError("external backend needs backend_path")
        return ExternalBackend(Path(spec.backend_path))
    raise ValueError(f"unknown backend {spec.backend!r}")


@_stage("reconstruct")
def _reconstruct(spec: ExperimentSpec, sparse: LightField, truth: LightField,
                 cfg: ReconstructionConfig) -> Reconstruction:
    if spec.downsample_v:
        rows = truth.views[:: spec.downsample_v]
        oracle_h = LightField(rows, truth.baseline_step, truth.focal_length)
        cfg_v = replace(cfg, n_target=truth.n_v, u_ref=None)
        bh = _backend(spec, oracle_h)
        bv = _backend(spec, truth, vertical=True)
        return full_parallax_reconstruct(sparse, cfg, cfg_v, bh, bv, passthrough=spec.passthrough)
    backend = _backend(spec, truth)
    if spec.refs:
        return multi_reference_reconstruct(sparse, cfg, list(spec.refs), backend, passthrough=spec.passthrough)
    return reconstruct_lightfield(sparse, cfg, backend, passthrough=spec.passthrough)


@_stage("evaluate")
def _evaluate(spec: ExperimentSpec, rec: Reconstruction, truth: LightField, cfg: ReconstructionConfig,
              n_src: int) -> dict:
    positions = np.asarray(rec.field.meta.get("target_positions", np.arange(rec.field.n_u)), dtype=np.float64)
    per_view = []
    for v in range(rec.field.n_v):
        for s in per_view_scores(rec.field.views[v], truth.views[v], positions, rec.validity[v],
                                 spec.include_invalid):
            row = {"u": s.u, "psnr": s.psnr, "ssim": s.ssim}
            if rec.field.n_v > 1:
                row["v"] = v
            per_view.append(row)
    try:
        wedge = measure_wedge_loss(truth, cfg, n_src, cfg.u_ref) if not spec.downsample_v else None
    except ValueError:
        wedge = None
    return {
        "schema_version": SCHEMA_VERSION,
        "name": spec.name,
        "per_view": per_view,
        "mean_psnr": mean_finite(r["psnr"] for r in per_view),
        "mean_ssim": mean_finite(r["ssim"] for r in per_view),
        "efs_symmetry": rec.efs_symmetry,
        "imag_residue": rec.imag_residue,
        "wedge_loss": wedge,
        "config": {"d_min": cfg.d_min, "d_max": cfg.d_max, "n_f": cfg.n_f, "delta_alpha": cfg.delta_alpha,
                   "n_target": cfg.n_target, "aperture": cfg.aperture},
    }


def _clean(x):
    """JSON-safe copy: non-finite floats become ``None``."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k]))
                        for k in columns})


@_stage("write")
def _write_outputs(out: Path, spec: ExperimentSpec, report: dict, rec: Reconstruction, truth: LightField) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "spec.json", spec.to_json())
    write_json(out / "metrics.json", report)
    write_csv(out / "per_view.csv", report["per_view"], ["v", "u", "psnr", "ssim"] if rec.field.n_v > 1
              else ["u", "psnr", "ssim"])
    prev = out / "previews"
    v0 = rec.field.n_v // 2
    j = rec.field.n_u // 2
    io.save_png(rec.field.views[v0, j], prev / "recon_center.png")
    io.save_png(truth.views[v0, j], prev / "truth_center.png")
    io.save_png(np.clip(np.abs(rec.field.views[v0, j] - truth.views[v0, j]) * 10, 0, 1), prev / "error_center_x10.png")
    io.save_png(rec.field.views[v0, :, rec.field.height // 2, :], prev / "epi_recon.png")


def _single(spec: ExperimentSpec, dense: LightField) -> tuple[dict, Reconstruction, LightField]:
    sparse, truth = _downsample(spec, dense)
    cfg = _make_config(spec, sparse, truth)
    rec = _reconstruct(spec, sparse, truth, cfg)
    return _evaluate(spec, rec, truth, cfg, sparse.n_u), rec, truth


@_stage("config")
def _make_config(spec: ExperimentSpec, sparse: LightField, truth: LightField) -> ReconstructionConfig:
    return spec.config(sparse.n_u, truth.n_u)


def _sweep_specs(spec: ExperimentSpec, n_src: int) -> list[tuple[str, float, ExperimentSpec]]:
    out = []
    for key, values in (spec.sweep or {}).items():
        for val in values:
            if key == "range_scale":
                c, h = 0.5 * (spec.d_min + spec.d_max), 0.5 * (spec.d_max - spec.d_min) * float(val)
                n_f = spec.n_f
                if n_f is None:
                    n_f = ReconstructionConfig.from_delta_alpha(spec.d_min, spec.d_max, max_delta_alpha(n_src)).n_f
                out.append((key, float(val), replace(spec, d_min=c - h, d_max=c + h, n_f=n_f, sweep=None)))
            elif key == "n_f":
                out.append((key, float(val), replace(spec, n_f=int(val), sweep=None)))
            else:
                raise ExperimentError("config", ValueError(f"unknown sweep key {key!r}"))
    return out


def run_experiment(spec: ExperimentSpec, write: bool = True) -> dict:
    """Run ``spec`` and return its metrics report (written under ``output_dir`` when ``write``)."""
    dense = _load_dense(spec)
    report, rec, truth = _single(spec, dense)
    out = Path(spec.output_dir)
    if spec.sweep:
        n_src = len(range(0, dense.n_u, spec.downsample))
        rows = []
        for key, val, sub in _sweep_specs(spec, n_src):
            r, _, _ = _single(sub, dense)
            rows.append({"parameter": key, "value": val, "d_min": r["config"]["d_min"], "d_max": r["config"]["d_max"],
                         "n_f": r["config"]["n_f"], "mean_psnr": r["mean_psnr"], "mean_ssim": r["mean_ssim"]})
        report["sweep"] = rows
        if write:
            out.mkdir(parents=True, exist_ok=True)
            write_csv(out / "sweep.csv", rows, ["parameter", "value", "d_min", "d_max", "n_f", "mean_psnr", "mean_ssim"])
    if write:
        _write_outputs(out, spec, report, rec, truth)
    return _clean(report)
