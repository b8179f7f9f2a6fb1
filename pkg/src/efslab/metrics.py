"""Image-quality metrics with optional validity masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage.metrics import structural_similarity

PSNR_CAP = 99.0
SSIM_WIN = 11


def _check(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Peak-1 PSNR in dB, capped at :data:`PSNR_CAP`; ``mask`` restricts the pixels."""
    a, b = _check(a, b)
    d = (a - b) ** 2
    if mask is not None:
        d = d[np.broadcast_to(mask, d.shape)]
    if d.size == 0:
        return float("nan")
    mse = float(d.mean())
    if mse <= 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return float(min(PSNR_CAP, 10 * np.log10(1.0 / mse)))


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Local SSIM (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, L=1)."""
    a, b = _check(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WIN:
        raise ValueError(f"SSIM needs 2-D images of at least {SSIM_WIN}x{SSIM_WIN}, got {a.shape}")
    _, smap = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, K1=0.01, K2=0.03, full=True)
    return smap


def ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean local SSIM over the window-complete interior (and ``mask`` if given)."""
    smap = ssim_map(a, b)
    r = SSIM_WIN // 2
    keep = np.zeros(smap.shape, dtype=bool)
    keep[r:-r, r:-r] = True
    if mask is not None:
        keep &= np.broadcast_to(mask, smap.shape)
    if not keep.any():
        return float("nan")
    return float(smap[keep].mean())


@dataclass(frozen=True)
class ViewScore:
    u: float
    psnr: float
    ssim: float


def per_view_scores(recon: np.ndarray, truth: np.ndarray, positions: np.ndarray | None = None,
                    validity: np.ndarray | None = None, include_invalid: bool = False) -> list[ViewScore]:
    """Scores for every view of ``(n_views, h, w)`` stacks.

    Views with no valid pixel get ``nan`` scores; ``include_invalid`` ignores
    the validity mask entirely.
    """
    recon, truth = _check(recon, truth)
    n = recon.shape[0]
    pos = np.arange(n, dtype=np.float64) if positions is None else np.asarray(positions, dtype=np.float64)
    out = []
    for j in range(n):
        m = None if include_invalid or validity is None else validity[j]
        out.append(ViewScore(float(pos[j]), psnr(recon[j], truth[j], m), ssim(recon[j], truth[j], m)))
    return out


def mean_finite(values) -> float:
    v = np.asarray(list(values), dtype=np.float64)
    v = v[np.isfinite(v)]
    return float(v.mean()) if v.size else float("nan")
