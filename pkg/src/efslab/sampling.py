"""Closed-form sampling analysis of the focal stack and its spectrum."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .lightfield import DomainError, SceneGeometry
from .refocus import refocus_range_from_depth

VERTICAL = math.inf


def apex_angle(n_u: int, delta_alpha: float | None = None) -> float:
    """Opening angle (radians) of the defocus cone.

    Without ``delta_alpha`` this is the continuous-stack form
    ``2 atan((n_u - 1) / 2)``; with it, the discrete form
    ``2 atan(delta_alpha (n_u - 1) / 2)``.
    """
    if n_u < 2:
        raise ValueError("n_u must be >= 2")
    scale = 1.0 if delta_alpha is None else float(delta_alpha)
    return 2.0 * math.atan(0.5 * scale * (n_u - 1))


def defocus_diameter(alpha: float, n_u: int) -> float:
    """Blur (or ghost-spread) diameter in pixels for a focus error ``alpha``."""
    return abs(alpha * (n_u - 1))


def is_aliased(alpha: float) -> bool:
    """Ghost samples separate (gaps appear) once neighbouring views land more than a pixel apart."""
    return abs(alpha) > 1


def aliasing_line_slope(u_i: float, u_ref: float, delta_alpha: float | None = None) -> float:
    """Slope of the ghost line traced by view ``u_i`` across the focal stack.

    Returns :data:`VERTICAL` (``inf``) for the reference view itself.
    """
    c = u_i - u_ref
    if c == 0:
        return VERTICAL
    scale = 1.0 if delta_alpha is None else delta_alpha
    return 1.0 / (scale * c)


def max_delta_alpha(n_u: int) -> float:
    """Largest layer spacing that keeps every view's line continuous."""
    if n_u < 2:
        raise ValueError("n_u must be >= 2")
    return 2.0 / (n_u - 1)


def n_focal_layers(d_min: float, d_max: float, delta_alpha: float) -> float:
    """Layer count ``(d_max - d_min) / delta_alpha`` (real valued)."""
    if delta_alpha <= 0:
        raise DomainError("delta_alpha must be positive")
    return (d_max - d_min) / delta_alpha


def min_focal_layers_exact(geom: SceneGeometry, n_u: int, k: float | None = None,
                           baseline: float | None = None) -> float:
    """Real-valued lower bound ``S kB (Z_max - Z_min)(n_u - 1) / (2 Z_max Z_min)``."""
    if geom.z_min <= 0:
        raise DomainError("Z_min must be positive")
    kb = (geom.focal_length if k is None else k) * (geom.baseline if baseline is None else baseline)
    return geom.s_factor * kb * (geom.z_max - geom.z_min) * (n_u - 1) / (2 * geom.z_max * geom.z_min)


def min_focal_layers(geom: SceneGeometry, n_u: int, k: float | None = None, baseline: float | None = None) -> int:
    """Minimum focal layer count, rounded up and never below 1."""
    return max(1, math.ceil(min_focal_layers_exact(geom, n_u, k, baseline) - 1e-9))


@dataclass(frozen=True)
class SamplingReport:
    n_u: int
    delta_alpha: float
    d_min: float
    d_max: float
    apex_angle_continuous: float
    apex_angle_discrete: float
    line_slopes: list[float]
    delta_alpha_max: float
    n_f: float
    n_f_min: int
    cone_energy_fraction: float | None = None

    def to_json(self) -> dict:
        out = asdict(self)
        out["line_slopes"] = [s if math.isfinite(s) else "vertical" for s in self.line_slopes]
        out["schema_version"] = 1
        return out


def sampling_report(geom: SceneGeometry, n_u: int, delta_alpha: float | None = None,
                    u_ref: float | None = None, k: float | None = None, baseline: float | None = None,
                    cone_energy: float | None = None) -> SamplingReport:
    """Collect every closed-form quantity for one configuration.

    ``delta_alpha`` defaults to the largest non-aliasing spacing.
    """
    d_min, d_max = refocus_range_from_depth(geom, k, baseline)
    da = max_delta_alpha(n_u) if delta_alpha is None else delta_alpha
    u_ref = (n_u - 1) / 2 if u_ref is None else u_ref
    slopes = [aliasing_line_slope(u, u_ref, da) for u in range(n_u)]
    n_f = n_focal_layers(d_min, d_max, da) if d_max > d_min else 0.0
    return SamplingReport(
        n_u=n_u, delta_alpha=da, d_min=d_min, d_max=d_max,
        apex_angle_continuous=apex_angle(n_u), apex_angle_discrete=apex_angle(n_u, da),
        line_slopes=slopes, delta_alpha_max=max_delta_alpha(n_u), n_f=n_f,
        n_f_min=min_focal_layers(geom, n_u, k, baseline), cone_energy_fraction=cone_energy,
    )


def nfmin_sweep(kb: float, n_u: int, z_mins: np.ndarray, z_maxs: np.ndarray, s_factor: float = 1.0) -> list[dict]:
    """Rows of ``(Z_min, Z_max, N_fmin)`` over a grid of depth bounds."""
    rows = []
    for z0 in z_mins:
        for z1 in z_maxs:
            if z1 < z0:
                continue
            g = SceneGeometry(focal_length=kb, baseline=1.0, s_factor=s_factor, depth_bounds=(float(z0), float(z1)))
            rows.append({"z_min": float(z0), "z_max": float(z1), "depth_range": float(z1 - z0),
                         "n_f_min": min_focal_layers(g, n_u),
                         "n_f_min_exact": min_focal_layers_exact(g, n_u)})
    return rows
