"""Complex spectrum engine: DC-centred FFTs, the two EFS routes, symmetry and energy metrics, view-line detection.

Conventions: forward transforms use the ``exp(-j 2 pi ...)`` kernel and are
unnormalised; inverses carry ``1/N`` per axis.  Frequency axes are stored
DC-centred, so bin ``i`` of an ``n``-point axis holds ``(i - n // 2) / n``
cycles per sample.

Geometric predicates on an EFS are evaluated in the frame
``(omega_x [cycles/pixel], omega_f [cycles/layer])``.  A source view at
offset ``c = u - u_ref`` contributes the line ``omega_f = delta_alpha * c *
omega_x``, i.e. the orientation ``atan(delta_alpha * c)`` measured from the
``omega_x`` axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal

from .lightfield import DomainError, Epi
from .refocus import FocalStack, ReconstructionConfig
from .sampling import apex_angle


@dataclass(frozen=True)
class ComplexGrid:
    """Dense complex 2-D grid; ``axes`` labels rows then columns."""

    data: np.ndarray
    axes: tuple[str, str] = ("omega_f", "omega_x")
    dc_centered: bool = True

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.complex128)
        if d.ndim != 2:
            raise ValueError(f"ComplexGrid must be 2-D, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("ComplexGrid values must be finite")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "axes", tuple(self.axes))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2))


def centered_freqs(n: int) -> np.ndarray:
    """Frequencies in cycles/sample of a DC-centred ``n``-point axis."""
    return (np.arange(n) - n // 2) / n


def _as_array(g) -> np.ndarray:
    return g.data if isinstance(g, ComplexGrid) else np.asarray(g)


def fft2(x, axes: tuple[str, str] = ("omega_u", "omega_x")) -> ComplexGrid:
    x = np.asarray(_as_array(x))
    if x.ndim != 2 or min(x.shape) < 2:
        raise ValueError("fft2 needs a 2-D grid with both dimensions >= 2")
    return ComplexGrid(np.fft.fftshift(np.fft.fft2(x)), axes)


def ifft2_complex(g) -> np.ndarray:
    return np.fft.ifft2(np.fft.ifftshift(_as_array(g), axes=(-2, -1)))


def ifft2(g) -> np.ndarray:
    """Inverse of :func:`fft2`; returns the real part."""
    return ifft2_complex(g).real


def fft1_axis(x, axis: int, axes: tuple[str, str] | None = None) -> ComplexGrid:
    """1-D transform along ``axis``, DC-centred along that axis only."""
    arr = _as_array(x)
    if arr.ndim != 2 or arr.shape[axis] < 2:
        raise ValueError("fft1_axis needs a 2-D grid with the transformed dimension >= 2")
    out = np.fft.fftshift(np.fft.fft(arr, axis=axis), axes=axis)
    if axes is None:
        axes = x.axes if isinstance(x, ComplexGrid) else ("rows", "cols")
    return ComplexGrid(out, axes)


def ifft1_axis(g, axis: int, axes: tuple[str, str] | None = None) -> ComplexGrid:
    arr = _as_array(g)
    out = np.fft.ifft(np.fft.ifftshift(arr, axes=axis), axis=axis)
    if axes is None:
        axes = g.axes if isinstance(g, ComplexGrid) else ("rows", "cols")
    return ComplexGrid(out, axes)


# ---------------------------------------------------------------------------
# EFS construction


def efs_spatial_route(fs: FocalStack) -> ComplexGrid:
    """EFS as the 2-D spectrum of the focal stack."""
    return fft2(fs.data, axes=("omega_f", "omega_x"))


def hybrid_from_stack(fs: FocalStack) -> ComplexGrid:
    """``F(f, omega_x)``: the focal stack transformed along x only."""
    return fft1_axis(fs.data, axis=1, axes=("f", "omega_x"))


def epi_spectrum(epi: Epi, oversample: int = 1) -> tuple[ComplexGrid, float]:
    """Spectrum of the EPI with the angular phase referred to ``u_ref``.

    The angular axis is zero-padded to ``oversample * n_u`` bins.  Returns the
    grid and the residual sub-sample reference offset, which callers apply as
    a phase when sampling between bins.
    """
    pos = epi.positions
    step = _uniform_step(pos)
    n_u, w = epi.data.shape
    m = max(1, int(oversample)) * n_u
    j = (epi.u_ref - pos[0]) / step
    j_int = int(np.round(j))
    buf = np.zeros((m, w))
    buf[(np.arange(n_u) - j_int) % m] = epi.data
    spec = np.fft.fftshift(np.fft.fft2(buf))
    return ComplexGrid(spec, ("omega_u", "omega_x")), j - j_int


def _uniform_step(pos: np.ndarray) -> float:
    if len(pos) < 2:
        raise ValueError("need at least two views")
    steps = np.diff(pos)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * abs(steps[0]):
        raise ValueError("angular positions must be uniformly spaced")
    return float(steps[0])


def efs_slice_route(epi: Epi, cfg: ReconstructionConfig, interp: str = "linear",
                    oversample: int = 8) -> tuple[ComplexGrid, ComplexGrid]:
    """EFS through slicing the EPI spectrum along ``omega_u = -f * omega_x``.

    The angular spectrum is zero-padded ``oversample`` times so that linear
    interpolation between bins tracks the underlying continuous spectrum.
    The hybrid slice is divided by ``n_u`` so that it matches the
    mean-normalised focal stack.  Returns ``(hybrid, efs)``.
    """
    spec, frac = epi_spectrum(epi, oversample)
    step = _uniform_step(epi.positions)
    m, w = spec.shape
    f = cfg.f_values[:, None]
    wx = centered_freqs(w)[None, :]
    nu = -f * wx * step  # cycles per angular sample
    b = nu * m + m // 2
    cols = np.arange(w)[None, :]
    if interp == "linear":
        b0 = np.floor(b)
        t = b - b0
        i0 = b0.astype(np.intp) % m
        vals = spec.data[i0, cols] * (1 - t) + spec.data[(i0 + 1) % m, cols] * t
    elif interp == "nearest":
        vals = spec.data[np.round(b).astype(np.intp) % m, cols]
    else:
        raise ValueError(f"unknown slice interpolation {interp!r}")
    vals = vals * np.exp(2j * np.pi * nu * frac)
    vals[np.abs(nu) > 0.5 + 1e-12] = 0
    hybrid = ComplexGrid(vals / epi.n_u, ("f", "omega_x"))
    efs = fft1_axis(hybrid, axis=0, axes=("omega_f", "omega_x"))
    return hybrid, efs


# ---------------------------------------------------------------------------
# symmetry and energy


def negate_frequencies(a: np.ndarray) -> np.ndarray:
    """``a(-omega)`` for a DC-centred array (all axes)."""
    out = np.fft.ifftshift(a)
    for ax in range(out.ndim):
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return np.fft.fftshift(out)


def conjugate_symmetry_deviation(g) -> float:
    """Mean of ``|g(omega) - conj(g(-omega))|`` over all bins."""
    a = _as_array(g)
    return float(np.mean(np.abs(a - np.conj(negate_frequencies(a)))))


def symmetrize(g) -> ComplexGrid:
    """Closest conjugate-symmetric grid: average of ``g`` and its conjugate mirror."""
    a = _as_array(g)
    axes = g.axes if isinstance(g, ComplexGrid) else ("omega_f", "omega_x")
    return ComplexGrid(0.5 * (a + np.conj(negate_frequencies(a))), axes)


def spectral_energy_loss(reference, test) -> float:
    """Fraction of reference energy not carried by ``test`` on their common support."""
    r, t = _as_array(reference), _as_array(test)
    if r.shape != t.shape:
        raise ValueError(f"shape mismatch {r.shape} vs {t.shape}")
    total = np.sum(np.abs(r) ** 2)
    if total <= 0:
        raise DomainError("reference spectrum has zero energy")
    support = (t != 0) & (r != 0)
    return float(1 - np.sum(np.abs(t[support]) ** 2) / total)


def wedge_energy_loss(spectrum, mask: np.ndarray, exclude_dc: bool = False) -> float:
    """Fraction of spectrum energy outside a reconstructable-bin mask."""
    a = np.abs(_as_array(spectrum)) ** 2
    if exclude_dc:
        a = a.copy()
        a[a.shape[0] // 2, a.shape[1] // 2] = 0
    total = a.sum()
    if total <= 0:
        raise DomainError("spectrum has zero energy")
    return float(a[~mask].sum() / total)


# ---------------------------------------------------------------------------
# view lines

N_ANGLE_BINS = 1024
DC_SKIP_BINS = 3.0


def predicted_angles(delta_alpha: float, offsets: np.ndarray) -> np.ndarray:
    """Orientation in degrees of the EFS line of each view offset."""
    return np.degrees(np.arctan(delta_alpha * np.asarray(offsets, dtype=np.float64)))


def angle_bins(n_bins: int = N_ANGLE_BINS) -> np.ndarray:
    return -90.0 + (np.arange(n_bins) + 0.5) * 180.0 / n_bins


def angular_energy(efs, n_bins: int = N_ANGLE_BINS, dc_skip: float = DC_SKIP_BINS) -> np.ndarray:
    """Energy of ``|EFS|^2`` per orientation through DC.

    The power is resampled on a polar grid (bilinear, radius up to 0.5 in
    normalised frequency, both half-lines) and accumulated with the polar
    area weight ``rho``, so each bin measures the energy of a thin angular
    wedge.  Samples within ``dc_skip`` bins of DC are ignored.
    """
    p = np.abs(_as_array(efs)) ** 2
    nf, w = p.shape
    theta = np.radians(angle_bins(n_bins))
    rho = np.linspace(0.0, 0.5, max(nf, w) + 1)[1:]
    total = np.zeros(n_bins)
    for sgn in (1.0, -1.0):
        rows = nf // 2 + sgn * np.sin(theta)[:, None] * rho[None, :] * nf
        cols = w // 2 + sgn * np.cos(theta)[:, None] * rho[None, :] * w
        ok = ((np.hypot(rows - nf // 2, cols - w // 2) >= dc_skip)
              & (rows >= 0) & (rows <= nf - 1) & (cols >= 0) & (cols <= w - 1))
        vals = ndimage.map_coordinates(p, [rows.ravel(), cols.ravel()], order=1, mode="nearest")
        total += np.sum(np.where(ok, vals.reshape(rows.shape), 0.0) * rho[None, :], axis=1)
    return total * (rho[1] - rho[0])


@dataclass(frozen=True)
class ViewLine:
    angle: float
    energy: float
    view: int | None


@dataclass(frozen=True)
class LineDetection:
    lines: list[ViewLine]
    predicted: np.ndarray
    histogram: np.ndarray = field(repr=False)
    complete: bool = False

    @property
    def n_detected(self) -> int:
        return len(self.lines)

    @property
    def n_matched(self) -> int:
        return sum(ln.view is not None for ln in self.lines)

    @property
    def angles(self) -> np.ndarray:
        return np.array([ln.angle for ln in self.lines])


def detect_view_lines(efs, delta_alpha: float, n_u: int, u_ref: float | None = None,
                      offsets: np.ndarray | None = None, tol_deg: float = 1.5,
                      min_prominence: float = 0.02, axis_guard_deg: float = 1.0,
                      n_bins: int = N_ANGLE_BINS) -> LineDetection:
    """Find the EFS line orientations and match them to views.

    Local maxima of the angular energy histogram whose prominence exceeds
    ``min_prominence`` times the histogram maximum are candidate lines; they
    are matched greedily (closest first) to the predicted orientations
    within ``tol_deg``.  ``complete`` is true when every view is matched and
    no candidate is left over.
    """
    if n_u < 2:
        raise ValueError("n_u must be >= 2")
    if offsets is None:
        u_ref = (n_u - 1) / 2 if u_ref is None else u_ref
        offsets = np.arange(n_u) - u_ref
    pred = predicted_angles(delta_alpha, offsets)
    hist = angular_energy(efs, n_bins)
    ang = angle_bins(n_bins)
    # circular padding so maxima near +-90 degrees are seen
    pad = n_bins // 8
    ext = np.concatenate([hist[-pad:], hist, hist[:pad]])
    peaks, props = signal.find_peaks(ext, prominence=min_prominence * hist.max())
    peaks = peaks - pad
    peaks = np.unique(peaks[(peaks >= 0) & (peaks < n_bins)])
    peaks = peaks[np.abs(ang[peaks]) < 90 - axis_guard_deg]
    cand = [(float(_refine(hist, i, ang)), float(hist[i])) for i in peaks]

    pairs = sorted(
        ((abs(a - p), ci, vi) for ci, (a, _) in enumerate(cand) for vi, p in enumerate(pred) if abs(a - p) <= tol_deg)
    )
    cand_to_view: dict[int, int] = {}
    used: set[int] = set()
    for _, ci, vi in pairs:
        if ci in cand_to_view or vi in used:
            continue
        cand_to_view[ci] = vi
        used.add(vi)
    lines = [ViewLine(a, e, cand_to_view.get(i)) for i, (a, e) in enumerate(cand)]
    complete = len(used) == len(pred) and len(cand) == len(pred)
    return LineDetection(lines, pred, hist, complete)


def _refine(hist: np.ndarray, i: int, ang: np.ndarray) -> float:
    """Parabolic sub-bin peak position."""
    n = len(hist)
    y0, y1, y2 = hist[(i - 1) % n], hist[i], hist[(i + 1) % n]
    den = y0 - 2 * y1 + y2
    off = 0.5 * (y0 - y2) / den if den < 0 else 0.0
    return ang[i] + np.clip(off, -0.5, 0.5) * (ang[1] - ang[0])


def cone_energy_fraction(efs, delta_alpha: float, n_u: int, margin_bins: float = 2.0) -> float:
    """Fraction of EFS energy inside the double cone of half-angle ``atan(delta_alpha (n_u - 1) / 2)``.

    The DC cross (``omega_f = 0`` row and ``omega_x = 0`` column) is
    excluded; a bin counts as inside if it lies within ``margin_bins``
    layer-frequency bins of the cone.
    """
    p = np.abs(_as_array(efs)) ** 2
    nf, w = p.shape
    wf = centered_freqs(nf)[:, None]
    wx = centered_freqs(w)[None, :]
    slope = np.tan(0.5 * apex_angle(n_u, delta_alpha))
    inside = np.abs(wf) <= slope * np.abs(wx) + margin_bins / nf
    cross = (wf == 0) | (wx == 0)
    total = p[~cross].sum()
    if total <= 0:
        raise DomainError("EFS has no energy off the DC cross")
    return float(p[inside & ~cross].sum() / total)



def aliased_energy_fraction(fs: FocalStack, margin_bins: float = 1.0) -> float:
    """Fraction of EFS energy outside the non-aliasing cone ``|omega_f| <= |omega_x|``.

    In layer units a view line has slope ``delta_alpha * (u - u_ref)``; any
    line steeper than one wraps around the layer Nyquist limit, so energy
    beyond the unit-slope cone is aliased.  The stack is tapered along f
    with a Hann window first so that truncation of the refocus range does
    not leak energy across the cone.  The DC cross is excluded.
    """
    n_f, w = fs.data.shape
    taper = np.hanning(n_f + 2)[1:-1, None]
    p = np.abs(np.fft.fftshift(np.fft.fft2(fs.data * taper))) ** 2
    wf = centered_freqs(n_f)[:, None]
    wx = centered_freqs(w)[None, :]
    inside = np.abs(wf) <= np.abs(wx) + margin_bins / n_f
    cross = (wf == 0) | (wx == 0)
    total = p[~cross].sum()
    if total <= 0:
        raise DomainError("EFS has no energy off the DC cross")
    return float(p[~inside & ~cross].sum() / total)
