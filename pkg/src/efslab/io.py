"""On-disk containers: light-field directories, disparity maps, focal stacks, complex grids.

All JSON headers carry ``schema_version`` 1 where the format is ours to
define; raw payloads are little-endian and row-major.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .lightfield import LightField, to_luminance
from .refocus import FocalStack
from .spectrum import ComplexGrid

SCHEMA_VERSION = 1
_VIEW_NAME = "view_{v:04d}_{u:04d}.png"


class FormatError(ValueError):
    """Malformed or incomplete on-disk data; the message names the offending file."""


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise FormatError(f"missing metadata file {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed JSON in {path}: {exc}") from exc


def _require(meta: dict, keys: tuple[str, ...], path: Path) -> None:
    missing = [k for k in keys if k not in meta]
    if missing:
        raise FormatError(f"{path} lacks field(s) {', '.join(missing)}")


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# light field directories


def quantize(views: np.ndarray, bit_depth: int) -> np.ndarray:
    """Integer codes for intensities in [0, 1]."""
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    peak = (1 << bit_depth) - 1
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    return np.rint(np.clip(views, 0.0, 1.0) * peak).astype(dtype)


def save_lightfield(lf: LightField, path: str | Path, bit_depth: int = 16) -> Path:
    """Write ``meta.json`` and one grayscale PNG per view."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    codes = quantize(lf.views, bit_depth)
    for v in range(lf.n_v):
        for u in range(lf.n_u):
            Image.fromarray(codes[v, u]).save(path / _VIEW_NAME.format(v=v, u=u))
    meta = {
        "schema_version": SCHEMA_VERSION,
        "n_u": lf.n_u,
        "n_v": lf.n_v,
        "height": lf.height,
        "width": lf.width,
        "baseline_step": float(lf.baseline_step),
        "focal_length": float(lf.focal_length),
        "bit_depth": bit_depth,
    }
    _write_json(path / "meta.json", meta)
    return path


def _load_png(file: Path, bit_depth: int) -> np.ndarray:
    if not file.exists():
        raise FormatError(f"missing view file {file.name} in {file.parent}")
    with Image.open(file) as im:
        if im.mode in ("RGB", "RGBA"):
            return to_luminance(np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0)
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise FormatError(f"{file.name}: expected a grayscale image, got shape {arr.shape}")
    peak = 255.0 if arr.dtype == np.uint8 else float((1 << bit_depth) - 1)
    return arr.astype(np.float64) / peak


def load_lightfield(path: str | Path) -> LightField:
    """Read a directory written by :func:`save_lightfield` (or by hand in the same layout)."""
    path = Path(path)
    meta_path = path / "meta.json"
    meta = _read_json(meta_path)
    _require(meta, ("n_u", "n_v", "height", "width", "baseline_step", "focal_length", "bit_depth"), meta_path)
    if meta.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise FormatError(f"{meta_path}: unsupported schema_version {meta['schema_version']}")
    n_u, n_v, h, w = (int(meta[k]) for k in ("n_u", "n_v", "height", "width"))
    bit_depth = int(meta["bit_depth"])
    if bit_depth not in (8, 16):
        raise FormatError(f"{meta_path}: bit_depth must be 8 or 16")
    views = np.empty((n_v, n_u, h, w))
    for v in range(n_v):
        for u in range(n_u):
            name = _VIEW_NAME.format(v=v, u=u)
            img = _load_png(path / name, bit_depth)
            if img.shape != (h, w):
                raise FormatError(f"{name}: dimensions {img.shape} differ from declared ({h}, {w})")
            views[v, u] = img
    return LightField(views, float(meta["baseline_step"]), float(meta["focal_length"]),
                      {"source": str(path), "bit_depth": bit_depth})


# ---------------------------------------------------------------------------
# raw float payloads


def save_disparity_maps(dmaps: np.ndarray, path: str | Path) -> Path:
    """One ``disp_{v:04d}_{u:04d}.raw`` (float32 LE) per view plus ``disp.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    dmaps = np.asarray(dmaps)
    if dmaps.ndim == 3:
        dmaps = dmaps[None]
    n_v, n_u, h, w = dmaps.shape
    for v in range(n_v):
        for u in range(n_u):
            dmaps[v, u].astype("<f4").tofile(path / f"disp_{v:04d}_{u:04d}.raw")
    _write_json(path / "disp.json", {"height": h, "width": w, "n_u": n_u, "n_v": n_v})
    return path


def load_disparity_map(raw: str | Path) -> np.ndarray:
    """Read one raw disparity map using the ``disp.json`` sidecar next to it."""
    raw = Path(raw)
    side = _read_json(raw.parent / "disp.json")
    _require(side, ("height", "width"), raw.parent / "disp.json")
    return _read_raw(raw, "<f4", (int(side["height"]), int(side["width"])))


def _read_raw(path: Path, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
    if not path.exists():
        raise FormatError(f"missing payload {path}")
    data = np.fromfile(path, dtype=dtype)
    if data.size != int(np.prod(shape)):
        raise FormatError(f"{path.name}: {data.size} values, header implies {shape}")
    return data.reshape(shape).astype(np.float64)


def save_focal_stack(fs: FocalStack, path: str | Path) -> Path:
    """``<stem>.json`` header plus ``<stem>.raw`` float32 LE ``(n_f, width)`` payload."""
    path = Path(path).with_suffix(".json")
    path.parent.mkdir(parents=True, exist_ok=True)
    fs.data.astype("<f4").tofile(path.with_suffix(".raw"))
    _write_json(path, {"n_f": fs.n_f, "width": int(fs.data.shape[-1]), "d_min": float(fs.f_values[0]),
                       "d_max": float(fs.f_values[-1]), "u_ref": float(fs.u_ref)})
    return path


def load_focal_stack(path: str | Path) -> FocalStack:
    """Read a stack written by :func:`save_focal_stack`; validity is not stored and reads as 1."""
    path = Path(path).with_suffix(".json")
    head = _read_json(path)
    _require(head, ("n_f", "width", "d_min", "d_max", "u_ref"), path)
    n_f, w = int(head["n_f"]), int(head["width"])
    data = _read_raw(path.with_suffix(".raw"), "<f4", (n_f, w))
    f_values = np.linspace(float(head["d_min"]), float(head["d_max"]), n_f)
    return FocalStack(data, f_values, float(head["u_ref"]), np.ones((n_f, w)))


def save_complex_grid(grid: ComplexGrid, path: str | Path) -> Path:
    """``<stem>.json`` header plus ``<stem>.bin`` interleaved float64 LE (re, im)."""
    path = Path(path).with_suffix(".json")
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols = grid.shape
    inter = np.empty((rows, cols, 2), dtype="<f8")
    inter[..., 0] = grid.data.real
    inter[..., 1] = grid.data.imag
    inter.tofile(path.with_suffix(".bin"))
    _write_json(path, {"rows": rows, "cols": cols, "axis0": grid.axes[0], "axis1": grid.axes[1],
                       "dc_centered": True})
    return path


def load_complex_grid(path: str | Path) -> ComplexGrid:
    path = Path(path).with_suffix(".json")
    head = _read_json(path)
    _require(head, ("rows", "cols", "axis0", "axis1"), path)
    if not head.get("dc_centered", True):
        raise FormatError(f"{path}: only DC-centred grids are supported")
    rows, cols = int(head["rows"]), int(head["cols"])
    raw = _read_raw(path.with_suffix(".bin"), "<f8", (rows, cols, 2))
    return ComplexGrid(raw[..., 0] + 1j * raw[..., 1], (head["axis0"], head["axis1"]))


def save_png(image: np.ndarray, path: str | Path, bit_depth: int = 8) -> Path:
    """Grayscale preview; values are clipped to [0, 1]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize(np.asarray(image, dtype=np.float64), bit_depth)).save(path)
    return path
