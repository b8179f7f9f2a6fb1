"""Light field container, EPI slicing, view downsampling and the layered-scene generator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

BT601 = (0.299, 0.587, 0.114)


class DegenerateSceneError(ValueError):
    """Raised when a generated scene cannot produce a meaningful light field."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LightField:
    """Grid of grayscale views ``views[v, u, y, x]`` with values in [0, 1].

    ``baseline_step`` is the physical baseline between neighbouring views and
    ``focal_length`` is ``k``; their product converts depth to disparity.
    """

    views: np.ndarray
    baseline_step: float = 1.0
    focal_length: float = 1.0
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.views, dtype=np.float64)
        if v.ndim == 3:
            v = v[None]
        if v.ndim != 4:
            raise ValueError(f"views must be (n_v, n_u, h, w) or (n_u, h, w), got shape {v.shape}")
        if v.shape[1] < 2:
            raise ValueError("a light field needs at least 2 views along u")
        if not np.all(np.isfinite(v)):
            raise ValueError("view intensities must be finite")
        if v.min() < -1e-12 or v.max() > 1 + 1e-12:
            raise ValueError("view intensities must lie in [0, 1]")
        object.__setattr__(self, "views", _frozen(np.clip(v, 0.0, 1.0)))

    @property
    def n_v(self) -> int:
        return self.views.shape[0]

    @property
    def n_u(self) -> int:
        return self.views.shape[1]

    @property
    def height(self) -> int:
        return self.views.shape[2]

    @property
    def width(self) -> int:
        return self.views.shape[3]

    def view(self, u: int, v: int = 0) -> np.ndarray:
        return self.views[v, u]

    def transposed(self) -> LightField:
        """Swap the roles of (u, x) and (v, y), so vertical parallax becomes horizontal."""
        return LightField(
            self.views.transpose(1, 0, 3, 2),
            self.baseline_step,
            self.focal_length,
            dict(self.meta),
        )


@dataclass(frozen=True)
class Epi:
    """Epipolar plane image ``data[u, x]``.

    ``positions`` are the angular coordinates of the rows, in the same units
    as the disparities used to shear the EPI (source view steps by default).
    ``u_ref`` is the reference coordinate; it may fall between two rows when
    the view count is even.
    """

    data: np.ndarray
    u_ref: float
    positions: np.ndarray | None = None
    row: int | None = None
    v: int | None = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"EPI data must be 2-D, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("EPI values must be finite")
        pos = np.arange(d.shape[0], dtype=np.float64) if self.positions is None else np.asarray(self.positions, float)
        if pos.shape != (d.shape[0],):
            raise ValueError("positions must have one entry per EPI row")
        if not pos[0] - 1e-9 <= self.u_ref <= pos[-1] + 1e-9:
            raise ValueError(f"u_ref={self.u_ref} outside the view span [{pos[0]}, {pos[-1]}]")
        object.__setattr__(self, "data", _frozen(d))
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "u_ref", float(self.u_ref))

    @property
    def n_u(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def offsets(self) -> np.ndarray:
        """Angular offset of every row from the reference, ``u - u_ref``."""
        return self.positions - self.u_ref


def extract_epi(lf: LightField, fixed_row: int, fixed_v: int = 0, u_ref: float | None = None) -> Epi:
    """Slice ``E(u, x)`` at ``y = fixed_row`` and ``v = fixed_v``."""
    if not 0 <= fixed_row < lf.height:
        raise IndexError(f"row {fixed_row} out of range for height {lf.height}")
    if not 0 <= fixed_v < lf.n_v:
        raise IndexError(f"v {fixed_v} out of range for n_v {lf.n_v}")
    if u_ref is None:
        u_ref = (lf.n_u - 1) / 2
    if not 0 <= u_ref <= lf.n_u - 1:
        raise IndexError(f"u_ref {u_ref} out of range for n_u {lf.n_u}")
    return Epi(lf.views[fixed_v, :, fixed_row, :], u_ref, row=fixed_row, v=fixed_v)


def extract_epi_vertical(lf: LightField, fixed_col: int, fixed_u: int = 0, v_ref: float | None = None) -> Epi:
    """Slice ``E(v, y)`` at ``x = fixed_col`` and ``u = fixed_u`` (vertical-parallax EPI)."""
    if lf.n_v < 2:
        raise IndexError("vertical EPIs need n_v >= 2")
    return extract_epi(lf.transposed(), fixed_col, fixed_u, v_ref)


def downsample_views(lf: LightField, factor: int, keep_last: bool = False) -> LightField:
    """Keep every ``factor``-th view along u (optionally forcing the last one)."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    idx = list(range(0, lf.n_u, factor))
    if keep_last and idx[-1] != lf.n_u - 1:
        idx.append(lf.n_u - 1)
    if len(idx) < 2:
        raise ValueError(f"downsampling {lf.n_u} views by {factor} leaves fewer than 2 views")
    meta = dict(lf.meta, downsample_factor=factor * lf.meta.get("downsample_factor", 1), kept_views=idx)
    # baseline_step stays meaningful only for uniform spacing; keep_last may break it
    return LightField(lf.views[:, idx], lf.baseline_step * factor, lf.focal_length, meta)


def to_luminance(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma of an (..., 3) array."""
    return np.tensordot(np.asarray(rgb, dtype=np.float64)[..., :3], np.array(BT601), axes=([-1], [0]))


# ---------------------------------------------------------------------------
# layered scene generator


@dataclass(frozen=True)
class Layer:
    """Fronto-parallel textured plane.

    ``mask`` describes the opaque support in reference-view coordinates:
    ``("full",)``, ``("left", x_edge)``, ``("right", x_edge)``,
    ``("stripe", x0, x1)`` or ``("disk", cx, cy, r)``.
    """

    depth: float
    seed: int = 0
    mask: tuple = ("full",)
    contrast: float = 0.35
    mean: float | None = None


class DomainError(ValueError):
    """Raised for physically meaningless inputs such as a zero depth."""


@dataclass(frozen=True)
class SceneGeometry:
    """Depth layout of a scene.

    Depth bounds come from ``depth_bounds`` when given, otherwise from the
    layers.  ``s_factor`` is the caller-supplied scene distribution factor.
    """

    layers: tuple[Layer, ...] = ()
    focal_length: float = 1.0
    baseline: float = 1.0
    s_factor: float = 1.0
    convergence_depth: float | None = None
    depth_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers and self.depth_bounds is None:
            raise ValueError("scene needs layers or explicit depth bounds")
        if self.s_factor < 1:
            raise ValueError("s_factor must be >= 1")
        if not (self.z_min > 0):
            raise DomainError(f"depths must be positive, got Z_min={self.z_min}")
        if self.z_min > self.z_max:
            raise DomainError(f"Z_min={self.z_min} exceeds Z_max={self.z_max}")

    @property
    def z_min(self) -> float:
        if self.depth_bounds is not None:
            return float(self.depth_bounds[0])
        return min(lay.depth for lay in self.layers)

    @property
    def z_max(self) -> float:
        if self.depth_bounds is not None:
            return float(self.depth_bounds[1])
        return max(lay.depth for lay in self.layers)

    @property
    def kb(self) -> float:
        return self.focal_length * self.baseline

    def disparity(self, depth: float) -> float:
        """Disparity in pixels per view step, ``kB/Z`` minus the convergence-plane offset."""
        d = self.kb / depth
        if self.convergence_depth is not None:
            d -= self.kb / self.convergence_depth
        return d

    @classmethod
    def from_disparities(cls, disparities: Sequence[float], masks: Sequence[tuple] | None = None,
                         seeds: Sequence[int] | None = None, kb: float = 1.0, **kw) -> SceneGeometry:
        """Build a scene whose layers sit at the given disparities.

        Zero or negative disparities are reached through a convergence plane
        placed behind the farthest layer.
        """
        disparities = list(disparities)
        masks = list(masks) if masks is not None else [("full",)] * len(disparities)
        seeds = list(seeds) if seeds is not None else list(range(len(disparities)))
        offset = 0.0
        if min(disparities) <= 0:
            offset = 1.0 - min(disparities)
        layers = tuple(
            Layer(depth=kb / (d + offset), seed=s, mask=m) for d, m, s in zip(disparities, masks, seeds)
        )
        conv = kb / offset if offset else None
        return cls(layers, focal_length=kb, baseline=1.0, convergence_depth=conv, **kw)


def _texture(seed: int, h: int, w: int, cutoff: float, contrast: float, mean: float | None) -> np.ndarray:
    """Periodic band-limited noise in [0, 1]; ``cutoff`` in cycles per pixel."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    spec = np.fft.fft2(noise) * (np.hypot(fy, fx) <= cutoff)
    tex = np.fft.ifft2(spec).real
    tex /= max(np.abs(tex).max(), 1e-12)
    if mean is None:
        mean = 0.5 + 0.1 * rng.uniform(-1, 1)
    return mean + contrast * tex


def _mask_values(desc: tuple, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    kind = desc[0]
    if kind == "full":
        return np.ones(np.broadcast(xs, ys).shape, dtype=bool)
    if kind == "left":
        return np.broadcast_to(xs < desc[1], np.broadcast(xs, ys).shape)
    if kind == "right":
        return np.broadcast_to(xs >= desc[1], np.broadcast(xs, ys).shape)
    if kind == "stripe":
        return np.broadcast_to((xs >= desc[1]) & (xs < desc[2]), np.broadcast(xs, ys).shape)
    if kind == "disk":
        return (xs - desc[1]) ** 2 + (ys - desc[2]) ** 2 < desc[3] ** 2
    raise ValueError(f"unknown mask descriptor {desc!r}")


def synth_lightfield(geom: SceneGeometry, n_views: int, h: int, w: int, seed: int = 0,
                     n_v: int = 1, u_ref: float | None = None, v_ref: float | None = None,
                     cutoff: float = 0.125) -> tuple[LightField, np.ndarray]:
    """Render a Lambertian layered scene.

    Each layer's texture is shifted by ``d * (u - u_ref)`` (and ``d * (v - v_ref)``
    vertically) with an exact Fourier shift, then layers are composited
    front to back through their opacity masks.  Returns the light field and
    the per-view ground-truth disparity maps, shape ``(n_v, n_u, h, w)``.
    """
    if n_views < 2:
        raise ValueError("n_views must be >= 2")
    u_ref = (n_views - 1) / 2 if u_ref is None else u_ref
    v_ref = (n_v - 1) / 2 if v_ref is None else v_ref
    disp = np.array([geom.disparity(lay.depth) for lay in geom.layers])
    if not np.all(np.isfinite(disp)):
        raise DegenerateSceneError("non-finite layer disparity")
    for d in disp:
        if abs(d) * (n_views - 1) >= w or (n_v > 1 and abs(d) * (n_v - 1) >= h):
            raise DegenerateSceneError(f"layer disparity {d:.3g} moves the texture out of frame in every view")

    cu = np.arange(n_views) - u_ref
    cv = np.arange(n_v) - v_ref
    # canvas large enough that periodic wrap never becomes visible
    pad_x = int(np.ceil(np.abs(disp).max() * np.abs(cu).max())) + 8
    pad_y = int(np.ceil(np.abs(disp).max() * np.abs(cv).max())) + 8 if n_v > 1 else 0
    ch, cw = h + 2 * pad_y, w + 2 * pad_x
    fx = np.fft.fftfreq(cw)
    fy = np.fft.fftfreq(ch)
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]

    order = np.argsort(-disp, kind="stable")  # nearest (largest disparity) first
    rng = np.random.default_rng(seed)
    layer_seeds = rng.integers(0, 2**31, size=len(geom.layers))
    views = np.zeros((n_v, n_views, h, w))
    dmaps = np.full((n_v, n_views, h, w), np.nan)

    for k in order:
        lay, d = geom.layers[k], disp[k]
        tex = _texture(int(layer_seeds[k]) ^ lay.seed, ch, cw, cutoff, lay.contrast, lay.mean)
        spec = np.fft.fft2(tex)
        for iv in range(n_v):
            sy = d * cv[iv]
            rows = np.fft.ifft(spec * np.exp(-2j * np.pi * fy * sy)[:, None], axis=0)[pad_y:pad_y + h]
            for iu in range(n_views):
                sx = d * cu[iu]
                shifted = np.fft.ifft(rows * np.exp(-2j * np.pi * fx * sx)[None, :], axis=1).real
                img = shifted[:, pad_x:pad_x + w]
                m = _mask_values(lay.mask, xs - sx, ys - sy)
                free = m & np.isnan(dmaps[iv, iu])
                views[iv, iu][free] = img[free]
                dmaps[iv, iu][free] = d
    if np.isnan(dmaps).any():
        raise DegenerateSceneError("layer masks leave pixels uncovered; add a full background layer")
    lf = LightField(np.clip(views, 0, 1), geom.baseline, geom.focal_length,
                    {"generator": "layered", "seed": seed, "disparities": disp.tolist()})
    return lf, dmaps
