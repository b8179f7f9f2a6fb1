"""EPI shearing, focal stack integration and refocus-range derivation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .lightfield import DomainError, Epi, SceneGeometry, _frozen

_EPS = 1e-9


class DegenerateConfigError(ValueError):
    """Raised when a configuration yields an empty focal layer."""


@dataclass(frozen=True)
class ReconstructionConfig:
    """Refocus grid and target density for the reconstruction pipeline.

    Disparities are in pixels per *source* view step.  ``u_ref`` is the
    reference coordinate in source view units; ``None`` means the centre.
    ``aperture`` picks how the finite view aperture is treated when the
    dense EPI is rebuilt: ``"periodic"`` inverts the wedge directly on an
    ``n_target``-periodic grid, ``"even"`` (default) mirrors the EPI about
    its last view first, which suppresses ringing at the marginal views.
    """

    d_min: float
    d_max: float
    n_f: int
    u_ref: float | None = None
    n_target: int | None = None
    aperture: str = "even"

    def __post_init__(self):
        if self.aperture not in ("even", "periodic"):
            raise ValueError(f"unknown aperture mode {self.aperture!r}")
        if not (np.isfinite(self.d_min) and np.isfinite(self.d_max)):
            raise ValueError("disparity bounds must be finite")
        if not self.d_min < self.d_max:
            raise ValueError(f"need d_min < d_max, got [{self.d_min}, {self.d_max}]")
        if self.n_f < 2:
            raise ValueError("n_f must be >= 2")

    @property
    def delta_alpha(self) -> float:
        return (self.d_max - self.d_min) / (self.n_f - 1)

    @property
    def f_values(self) -> np.ndarray:
        return self.d_min + self.delta_alpha * np.arange(self.n_f)

    @classmethod
    def from_delta_alpha(cls, d_min: float, d_max: float, delta_alpha: float, **kw) -> ReconstructionConfig:
        """Smallest grid whose spacing does not exceed ``delta_alpha``; the range is kept."""
        n_f = int(np.ceil((d_max - d_min) / delta_alpha - 1e-9)) + 1
        return cls(d_min, d_max, max(n_f, 2), **kw)

    def resolve_u_ref(self, n_u: int) -> float:
        u = (n_u - 1) / 2 if self.u_ref is None else float(self.u_ref)
        if not 0 <= u <= n_u - 1:
            raise ValueError(f"u_ref={u} outside [0, {n_u - 1}]")
        return u

    def scaled(self, range_scale: float = 1.0, n_f: int | None = None) -> ReconstructionConfig:
        """Same config with the refocus range scaled about its centre."""
        c = 0.5 * (self.d_min + self.d_max)
        h = 0.5 * (self.d_max - self.d_min) * range_scale
        return replace(self, d_min=c - h, d_max=c + h, n_f=n_f or self.n_f)


@dataclass(frozen=True)
class FocalStack:
    """Refocused stack ``data[m, x]`` at disparities ``f_values[m]``.

    ``validity[m, x]`` is the fraction of views that contributed an
    in-bounds sample.
    """

    data: np.ndarray
    f_values: np.ndarray
    u_ref: float
    validity: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f_values, dtype=np.float64)
        if f.ndim != 1 or len(f) < 2:
            raise ValueError("need at least two focal layers")
        step = np.diff(f)
        if np.any(step <= 0) or np.max(np.abs(step - step.mean())) > 1e-9 * max(abs(step.mean()), 1e-300) + 1e-12:
            raise ValueError("f_values must be strictly increasing and uniformly spaced")
        object.__setattr__(self, "f_values", _frozen(f))
        object.__setattr__(self, "data", _frozen(np.asarray(self.data, dtype=np.float64)))
        object.__setattr__(self, "validity", _frozen(np.asarray(self.validity, dtype=np.float64)))

    @property
    def n_f(self) -> int:
        return len(self.f_values)

    @property
    def delta_alpha(self) -> float:
        return float(self.f_values[1] - self.f_values[0])


def shift_rows(data: np.ndarray, shifts: np.ndarray, kernel: str = "linear") -> tuple[np.ndarray, np.ndarray]:
    """Resample every row ``r`` of ``data[..., r, x]`` at ``x + shifts[r]``.

    Out-of-bounds samples are zero and flagged invalid in the returned
    ``(rows, width)`` boolean mask.
    """
    data = np.asarray(data, dtype=np.float64)
    n, w = data.shape[-2:]
    pos = np.arange(w, dtype=np.float64)[None, :] + np.asarray(shifts, dtype=np.float64)[:, None]
    valid = (pos >= -_EPS) & (pos <= w - 1 + _EPS)
    rows = np.arange(n)[:, None]
    x0 = np.clip(np.floor(pos), 0, w - 2).astype(np.intp)
    t = np.clip(pos - x0, 0.0, 1.0)
    if kernel == "linear":
        out = data[..., rows, x0] * (1 - t) + data[..., rows, x0 + 1] * t
    elif kernel == "cubic":
        out = np.zeros(data.shape[:-2] + (n, w))
        for k in (-1, 0, 1, 2):
            wk = _keys(t - k)
            out += data[..., rows, np.clip(x0 + k, 0, w - 1)] * wk
    else:
        raise ValueError(f"unknown interpolation kernel {kernel!r}")
    return np.where(valid, out, 0.0), valid


def _keys(s: np.ndarray, a: float = -0.5) -> np.ndarray:
    s = np.abs(s)
    return np.where(
        s <= 1,
        (a + 2) * s**3 - (a + 3) * s**2 + 1,
        np.where(s < 2, a * s**3 - 5 * a * s**2 + 8 * a * s - 4 * a, 0.0),
    )


def shear_epi(epi: Epi, d: float, kernel: str = "linear") -> tuple[Epi, np.ndarray]:
    """Sheared EPI ``E_d(u, x) = E(u, x + d (u - u_ref))`` and its validity mask."""
    if not np.isfinite(d):
        raise ValueError("shear disparity must be finite")
    out, valid = shift_rows(epi.data, d * epi.offsets, kernel)
    return Epi(out, epi.u_ref, epi.positions, epi.row, epi.v), valid


def focal_stack_array(data: np.ndarray, offsets: np.ndarray, f_values: np.ndarray,
                      kernel: str = "linear") -> tuple[np.ndarray, np.ndarray]:
    """Batched focal stack.

    ``data[..., u, x]`` -> ``(stack[..., m, x], validity[m, x])`` where each
    layer is the mean of the valid sheared samples.
    """
    data = np.asarray(data, dtype=np.float64)
    n_u, w = data.shape[-2:]
    stack = np.empty(data.shape[:-2] + (len(f_values), w))
    validity = np.empty((len(f_values), w))
    for m, f in enumerate(f_values):
        vals, valid = shift_rows(data, f * offsets, kernel)
        count = valid.sum(axis=0)
        stack[..., m, :] = vals.sum(axis=-2) / np.maximum(count, 1)
        validity[m] = count / n_u
    return stack, validity


def build_focal_stack(epi: Epi, cfg: ReconstructionConfig, kernel: str = "linear") -> FocalStack:
    """Integrate the sheared EPI over views for every layer of ``cfg``."""
    f_values = cfg.f_values
    data, validity = focal_stack_array(epi.data, epi.offsets, f_values, kernel)
    empty = ~np.any(validity > 0, axis=1)
    if np.any(empty):
        m = int(np.argmax(empty))
        raise DegenerateConfigError(f"focal layer f={f_values[m]:.4g} has no valid sample at any x")
    return FocalStack(data, f_values, epi.u_ref, validity)


def refocus_range_from_depth(geom: SceneGeometry, k: float | None = None,
                             baseline: float | None = None) -> tuple[float, float]:
    """Refocus range ``(kB/Z_max, kB/Z_min)``, shifted by any convergence plane."""
    kb = (geom.focal_length if k is None else k) * (geom.baseline if baseline is None else baseline)
    if not kb > 0:
        raise DomainError("k*B must be positive")
    if geom.z_min <= 0:
        raise DomainError("Z_min must be positive")
    d_min, d_max = kb / geom.z_max, kb / geom.z_min
    if geom.convergence_depth is not None:
        off = kb / geom.convergence_depth
        d_min, d_max = d_min - off, d_max - off
    return d_min, d_max


def gradient_energy(stack: np.ndarray, validity: np.ndarray | None = None) -> np.ndarray:
    """Per-layer focus measure: squared x-gradient summed over fully valid columns."""
    g = np.diff(stack, axis=-1) ** 2
    if validity is not None:
        g = g * ((validity[:, 1:] >= 1 - _EPS) & (validity[:, :-1] >= 1 - _EPS))
    return g.sum(axis=-1)
