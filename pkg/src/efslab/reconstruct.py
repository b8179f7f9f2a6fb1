"""Dense-view reconstruction through the EFS.

The chain per EPI is: focal stack -> aliased EFS -> completed EFS -> inverse
transform along f -> back-projection into the EPI spectrum over the
reconstructable wedge -> inverse 2-D transform.  All stages are batched over
EPIs sharing the same angular layout, which is what
:func:`reconstruct_lightfield` feeds them.
"""

from __future__ import annotations

import os
from functools import lru_cache
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .lightfield import Epi, LightField
from .refocus import ReconstructionConfig, focal_stack_array, shift_rows
from .spectrum import ComplexGrid, centered_freqs

_EPS = 1e-9


class BackendMismatchError(ValueError):
    """Raised when a completion backend cannot serve the requested configuration."""


# ---------------------------------------------------------------------------
# completion backends


@dataclass(frozen=True)
class OracleBackend:
    """Completes with the EFS of the ground-truth dense field.

    ``dense`` must hold ``n_target`` views spanning the same baseline as the
    sparse input (views at the target positions).  ``kernel`` is the shear
    interpolator for the ground-truth stack; ``"fourier"`` shifts each row
    exactly (circularly) in the frequency domain, so the oracle carries no
    interpolation loss and bounds the other backends from above.
    """

    dense: LightField
    kernel: str = "fourier"

    def __post_init__(self):
        if self.kernel not in ("fourier", "linear", "cubic"):
            raise ValueError(f"unknown oracle kernel {self.kernel!r}")


@dataclass(frozen=True)
class ClassicalBackend:
    """Per-view decomposition plus complex linear interpolation between views.

    ``model="exact"`` inverts the zero-filled shear-and-average operator that
    produced the aliased stack (sparse least squares over all layers);
    ``model="circular"`` fits each ``omega_x`` column independently under the
    circular-shift model, which ignores boundary effects.  ``ridge`` is the
    Tikhonov weight relative to the mean normal-matrix diagonal; ``None``
    picks 1e-6 (exact) or 1e-4 (circular).
    """

    ridge: float | None = None
    model: str = "exact"

    def __post_init__(self):
        if self.model not in ("exact", "circular"):
            raise ValueError(f"unknown classical model {self.model!r}")

    @property
    def effective_ridge(self) -> float:
        if self.ridge is not None:
            return float(self.ridge)
        return 1e-6 if self.model == "exact" else 1e-4


@dataclass(frozen=True)
class ExternalBackend:
    """Loads completed EFS grids written by an outside tool.

    ``path`` is a directory holding ``efs_v{v:04d}_y{row:04d}.json`` and the
    matching ``.bin`` payloads in the ComplexGrid container format.
    """

    path: Path


CompletionBackend = Union[OracleBackend, ClassicalBackend, ExternalBackend]


# ---------------------------------------------------------------------------
# geometry helpers


def target_positions(n_src: int, n_target: int) -> np.ndarray:
    """Uniform target positions spanning the source views, in source units."""
    if n_target < n_src:
        raise ValueError(f"n_target={n_target} is below the source view count {n_src}")
    return np.linspace(0.0, n_src - 1.0, n_target)


@dataclass(frozen=True)
class WedgeMask:
    """Bins of the dense EPI spectrum that the EFS can reconstruct.

    ``omega_u`` is in cycles per source view step and ``omega_x`` in cycles
    per pixel; a bin with ``omega_x != 0`` is reconstructable iff
    ``-omega_u / omega_x`` lies in ``[d_min, d_max]``.  On the ``omega_x = 0``
    column only DC is kept.  Unpaired Nyquist rows/columns (even sizes) are
    dropped so that the result stays real.
    """

    d_min: float
    d_max: float
    omega_u: np.ndarray
    omega_x: np.ndarray
    mask: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, d_min: float, d_max: float, n_views: int, width: int, spacing: float) -> WedgeMask:
        wu = centered_freqs(n_views) / spacing
        wx = centered_freqs(width)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = -wu[:, None] / wx[None, :]
        mask = (wx[None, :] != 0) & (f >= d_min - _EPS) & (f <= d_max + _EPS)
        mask[n_views // 2, width // 2] = True
        if n_views % 2 == 0:
            mask[0, :] = False
        if width % 2 == 0:
            mask[:, 0] = False
        return cls(d_min, d_max, wu, wx, mask)

    def slope(self) -> np.ndarray:
        """``-omega_u / omega_x`` for every bin (nan on the DC column)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return -self.omega_u[:, None] / self.omega_x[None, :]


# ---------------------------------------------------------------------------
# batched stages


def _fft2c(a: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(a, axes=(-2, -1)), axes=(-2, -1))


def _ifft2c(a: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(np.fft.ifftshift(a, axes=(-2, -1)), axes=(-2, -1))


def _ifft_f(a: np.ndarray) -> np.ndarray:
    return np.fft.ifft(np.fft.ifftshift(a, axes=-2), axis=-2)


def _fft_f(a: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft(a, axis=-2), axes=-2)


def _symmetrize_batch(a: np.ndarray) -> np.ndarray:
    mirrored = np.fft.ifftshift(a, axes=(-2, -1))
    for ax in (-2, -1):
        mirrored = np.roll(np.flip(mirrored, axis=ax), 1, axis=ax)
    mirrored = np.fft.fftshift(mirrored, axes=(-2, -1))
    return 0.5 * (a + np.conj(mirrored))


def _hybrid_from_views(spectra: np.ndarray, offsets: np.ndarray, f_values: np.ndarray) -> np.ndarray:
    """``F(f, omega_x) = mean_i G_i(omega_x) exp(j 2 pi omega_x f c_i)`` for row spectra ``G``."""
    w = spectra.shape[-1]
    wx = centered_freqs(w)
    out = np.empty(spectra.shape[:-2] + (len(f_values), w), dtype=np.complex128)
    for m, f in enumerate(f_values):
        phase = np.exp(2j * np.pi * wx[None, :] * f * offsets[:, None])
        out[..., m, :] = np.mean(spectra * phase, axis=-2)
    return out


def _decompose_views(hybrid: np.ndarray, offsets: np.ndarray, f_values: np.ndarray, ridge: float) -> np.ndarray:
    """Least-squares per-view row spectra from a hybrid slice (inverse of :func:`_hybrid_from_views`)."""
    *batch, n_f, w = hybrid.shape
    n_u = len(offsets)
    wx = centered_freqs(w)
    out = np.empty(tuple(batch) + (n_u, w), dtype=np.complex128)
    flat = hybrid.reshape(-1, n_f, w)
    out_flat = out.reshape(-1, n_u, w)
    for q in range(w):
        a = np.exp(2j * np.pi * wx[q] * f_values[:, None] * offsets[None, :]) / n_u
        gram = a.conj().T @ a
        lam = ridge * np.trace(gram).real / n_u
        rhs = a.conj().T @ flat[:, :, q].T
        out_flat[:, :, q] = np.linalg.solve(gram + lam * np.eye(n_u), rhs).T
    return out


def _stack_operator(offsets: np.ndarray, f_values: np.ndarray, w: int) -> sps.csr_matrix:
    """Sparse matrix of :func:`focal_stack_array` for one EPI: ``(n_f * w, n_u * w)``."""
    n_u = len(offsets)
    xs = np.arange(w)
    rows, cols, vals = [], [], []
    for m, f in enumerate(f_values):
        pos = xs[None, :] + f * offsets[:, None]
        valid = (pos >= -_EPS) & (pos <= w - 1 + _EPS)
        count = np.maximum(valid.sum(axis=0), 1)
        x0 = np.clip(np.floor(pos), 0, w - 2).astype(np.intp)
        t = np.clip(pos - x0, 0.0, 1.0)
        for i in range(n_u):
            ok = valid[i]
            r = m * w + xs[ok]
            rows += [r, r]
            cols += [i * w + x0[i, ok], i * w + x0[i, ok] + 1]
            vals += [(1 - t[i, ok]) / count[ok], t[i, ok] / count[ok]]
    return sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(len(f_values) * w, n_u * w))


@lru_cache(maxsize=8)
def _stack_solver(offsets: tuple, f_values: tuple, w: int, ridge: float):
    a = _stack_operator(np.array(offsets), np.array(f_values), w)
    normal = (a.T @ a).tocsc()
    lam = ridge * normal.diagonal().mean()
    return a, spla.splu(normal + lam * sps.identity(normal.shape[0], format="csc"))


def _decompose_stack(stack: np.ndarray, offsets: np.ndarray, f_values: np.ndarray, ridge: float) -> np.ndarray:
    """Source views ``(..., n_u, w)`` from zero-filled stacks ``(..., n_f, w)`` by regularised least squares."""
    *batch, n_f, w = stack.shape
    a, lu = _stack_solver(tuple(offsets.tolist()), tuple(f_values.tolist()), w, ridge)
    rhs = a.T @ stack.reshape(-1, n_f * w).T
    return lu.solve(np.ascontiguousarray(rhs)).T.reshape(tuple(batch) + (len(offsets), w))


def _interp_views(spectra: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Complex linear interpolation between the two nearest source views."""
    i1 = np.clip(np.searchsorted(src, dst, side="right"), 1, len(src) - 1)
    i0 = i1 - 1
    t = ((dst - src[i0]) / (src[i1] - src[i0]))[:, None]
    return spectra[..., i0, :] * (1 - t) + spectra[..., i1, :] * t


def _sample_hybrid(hybrid: np.ndarray, cfg: ReconstructionConfig, wedge: WedgeMask, shift: float = 0.0) -> np.ndarray:
    """``hybrid`` at ``f = shift - omega_u / omega_x`` on the wedge bins (linear in f), zero elsewhere."""
    n_f = cfg.n_f
    w = hybrid.shape[-1]
    slope = wedge.slope() + shift
    slope = np.where(wedge.mask & np.isfinite(slope), slope, cfg.d_min)
    pos = np.where(wedge.mask, (slope - cfg.d_min) / cfg.delta_alpha, 0.0)
    assert np.all(pos[wedge.mask] >= -1e-6) and np.all(pos[wedge.mask] <= n_f - 1 + 1e-6)
    m0 = np.clip(np.floor(pos), 0, n_f - 2).astype(np.intp)
    t = np.clip(pos - m0, 0.0, 1.0)
    cols = np.broadcast_to(np.arange(w)[None, :], m0.shape)
    vals = hybrid[..., m0, cols] * (1 - t) + hybrid[..., m0 + 1, cols] * t
    return np.where(wedge.mask, vals, 0.0)


def _back_project(hybrid: np.ndarray, cfg: ReconstructionConfig, wedge: WedgeMask) -> np.ndarray:
    """Dense EPI spectrum (sum-normalised) from a hybrid slice, linear in f."""
    n_t = len(wedge.omega_u)
    w = hybrid.shape[-1]
    out = _sample_hybrid(hybrid, cfg, wedge) * n_t
    out[..., n_t // 2, w // 2] = hybrid[..., :, w // 2].mean(axis=-1) * n_t
    return out


def _flip_u(a: np.ndarray) -> np.ndarray:
    """``a[-p]`` along the centred angular axis."""
    out = np.fft.ifftshift(a, axes=-2)
    out = np.roll(np.flip(out, axis=-2), 1, axis=-2)
    return np.fft.fftshift(out, axes=-2)


def _even_extension_epi(hybrid: np.ndarray, lay: _Layout) -> np.ndarray:
    """Dense EPI (complex, ``(..., n_t, w)``) through the even u-extension of the sheared EPI.

    The EPI is sheared to the centre ``c`` of the refocus range, mirrored
    along u to length ``2 n_t`` and rebuilt from the symmetric wedge
    ``[-h, h]``.  Both halves of the mirrored spectrum are samples of the
    same hybrid slice, so no information beyond the periodic route is used;
    the mirror only removes the wrap-around jump between the first and last
    target views.
    """
    cfg = lay.cfg
    c = 0.5 * (cfg.d_min + cfg.d_max)
    h = 0.5 * (cfg.d_max - cfg.d_min)
    n_t, w = len(lay.tgt_pos), hybrid.shape[-1]
    n2 = 2 * n_t
    wedge = WedgeMask.build(-h, h, n2, w, lay.spacing)
    j_ref = (lay.u_ref - lay.tgt_pos[0]) / lay.spacing
    p = np.arange(n2) - n_t
    a = _sample_hybrid(hybrid, cfg, wedge, shift=c) * n_t
    a[..., n_t, w // 2] = hybrid[..., :, w // 2].mean(axis=-1) * n_t
    a = a * np.exp(-2j * np.pi * p * j_ref / n2)[:, None]
    g = a + np.exp(2j * np.pi * p / n2)[:, None] * _flip_u(a)
    g = np.where(wedge.mask, g, 0.0)
    rows = np.fft.ifft(np.fft.ifftshift(g, axes=-2), axis=-2)[..., :n_t, :]
    wx = centered_freqs(w)
    rows = rows * np.exp(-2j * np.pi * wx[None, :] * c * lay.tgt_off[:, None])
    return np.fft.ifft(np.fft.ifftshift(rows, axes=-1), axis=-1)


def _output_validity(stack_validity: np.ndarray, f_values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Target pixels whose refocus footprint stays inside fully valid stack columns."""
    n_t = len(offsets)
    w = stack_validity.shape[-1]
    ok = np.ones((n_t, w), dtype=bool)
    full = (stack_validity >= 1 - _EPS).astype(np.float64)
    for m, f in enumerate(f_values):
        vals, inb = shift_rows(np.broadcast_to(full[m], (n_t, w)), -f * offsets)
        ok &= inb & (vals >= 1 - 1e-6)
    return ok


@dataclass(frozen=True)
class _Layout:
    cfg: ReconstructionConfig
    src_pos: np.ndarray
    tgt_pos: np.ndarray
    u_ref: float

    @property
    def src_off(self) -> np.ndarray:
        return self.src_pos - self.u_ref

    @property
    def tgt_off(self) -> np.ndarray:
        return self.tgt_pos - self.u_ref

    @property
    def spacing(self) -> float:
        return float(self.tgt_pos[1] - self.tgt_pos[0]) if len(self.tgt_pos) > 1 else 1.0


def _layout(n_src: int, cfg: ReconstructionConfig, u_ref: float | None = None) -> _Layout:
    n_t = cfg.n_target or n_src
    u = cfg.resolve_u_ref(n_src) if u_ref is None else float(u_ref)
    return _Layout(cfg, np.arange(n_src, dtype=np.float64), target_positions(n_src, n_t), u)


@dataclass
class _BatchResult:
    epis: np.ndarray
    validity: np.ndarray
    imag_residue: float
    efs_symmetry: float
    wedge: WedgeMask
    completed: np.ndarray | None = None


def _complete_batch(aliased: np.ndarray, hybrid_ali: np.ndarray, lay: _Layout, backend: CompletionBackend,
                    rows: Sequence[int], v: int) -> np.ndarray:
    cfg = lay.cfg
    f_values = cfg.f_values
    n_t = len(lay.tgt_pos)
    if isinstance(backend, OracleBackend):
        dense = backend.dense
        if dense.n_u != n_t:
            raise BackendMismatchError(f"oracle field has {dense.n_u} views, config targets {n_t}")
        if dense.width != aliased.shape[-1]:
            raise BackendMismatchError("oracle field width differs from the input")
        d = dense.views[v][:, list(rows), :].transpose(1, 0, 2)
        if backend.kernel == "fourier":
            spectra = np.fft.fftshift(np.fft.fft(d, axis=-1), axes=-1)
            return _symmetrize_batch(_fft_f(_hybrid_from_views(spectra, lay.tgt_off, f_values)))
        stack, _ = focal_stack_array(d, lay.tgt_off, f_values, backend.kernel)
        return _symmetrize_batch(_fft2c(stack))
    if isinstance(backend, ClassicalBackend):
        if backend.model == "exact":
            stack = _ifft2c(aliased).real
            views = _decompose_stack(stack, lay.src_off, f_values, backend.effective_ridge)
            per_view = np.fft.fftshift(np.fft.fft(views, axis=-1), axes=-1)
        else:
            per_view = _decompose_views(hybrid_ali, lay.src_off, f_values, backend.effective_ridge)
        dense = _interp_views(per_view, lay.src_pos, lay.tgt_pos)
        return _symmetrize_batch(_fft_f(_hybrid_from_views(dense, lay.tgt_off, f_values)))
    if isinstance(backend, ExternalBackend):
        from .io import load_complex_grid

        out = []
        for r in rows:
            g = load_complex_grid(Path(backend.path) / f"efs_v{v:04d}_y{r:04d}.json")
            if g.shape != aliased.shape[-2:]:
                raise BackendMismatchError(f"external grid for row {r} has shape {g.shape}, expected {aliased.shape[-2:]}")
            out.append(g.data)
        return _symmetrize_batch(np.stack(out))
    raise BackendMismatchError(f"unknown backend {backend!r}")


def _run_batch(src: np.ndarray, lay: _Layout, backend: CompletionBackend, rows: Sequence[int], v: int = 0,
               keep_efs: bool = False) -> _BatchResult:
    cfg = lay.cfg
    f_values = cfg.f_values
    stack, stack_valid = focal_stack_array(src, lay.src_off, f_values)
    aliased = _fft2c(stack)
    hybrid_ali = np.fft.fftshift(np.fft.fft(stack, axis=-1), axes=-1)
    completed = _complete_batch(aliased, hybrid_ali, lay, backend, rows, v)
    sym = float(np.max(np.mean(np.abs(completed - np.conj(_mirror(completed))), axis=(-2, -1))))
    hybrid = _ifft_f(completed)
    n_t, w = len(lay.tgt_pos), src.shape[-1]
    wedge = WedgeMask.build(cfg.d_min, cfg.d_max, n_t, w, lay.spacing)
    if cfg.aperture == "even":
        out = _even_extension_epi(hybrid, lay)
    else:
        spec = _back_project(hybrid, cfg, wedge)
        j_ref = (lay.u_ref - lay.tgt_pos[0]) / lay.spacing
        p = np.arange(n_t) - n_t // 2
        spec = spec * np.exp(-2j * np.pi * p * j_ref / n_t)[:, None]
        out = _ifft2c(spec)
    scale = max(float(np.max(np.abs(out.real))), 1e-300)
    residue = float(np.max(np.abs(out.imag)) / scale)
    validity = _output_validity(stack_valid, f_values, lay.tgt_off)
    return _BatchResult(out.real, validity, residue, sym, wedge, completed if keep_efs else None)


def _mirror(a: np.ndarray) -> np.ndarray:
    out = np.fft.ifftshift(a, axes=(-2, -1))
    for ax in (-2, -1):
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return np.fft.fftshift(out, axes=(-2, -1))


# ---------------------------------------------------------------------------
# public per-EPI stages


def complete_efs(aliased: ComplexGrid, cfg: ReconstructionConfig, backend: CompletionBackend,
                 epi: Epi) -> ComplexGrid:
    """Replace the aliased EFS of ``epi`` with a dense-view EFS.

    ``epi`` supplies the source layout and, for the oracle, the row
    provenance.  The output is conjugate symmetric by construction.
    """
    if aliased.shape != (cfg.n_f, epi.width):
        raise BackendMismatchError(f"aliased EFS shape {aliased.shape} != ({cfg.n_f}, {epi.width})")
    lay = _layout(epi.n_u, cfg, epi.u_ref)
    hybrid = _ifft_f(aliased.data)
    out = _complete_batch(aliased.data[None], hybrid[None], lay, backend, [epi.row or 0], epi.v or 0)
    return ComplexGrid(out[0], ("omega_f", "omega_x"))


def ifft_along_f(efs: ComplexGrid) -> ComplexGrid:
    """``F(f, omega_x)`` from the EFS: inverse transform along the layer axis with ``1/N_f``."""
    return ComplexGrid(_ifft_f(efs.data), ("f", "omega_x"))


def fft_along_f(hybrid: ComplexGrid) -> ComplexGrid:
    return ComplexGrid(_fft_f(hybrid.data), ("omega_f", "omega_x"))


def back_project(hybrid: ComplexGrid, mask: WedgeMask, cfg: ReconstructionConfig) -> ComplexGrid:
    """Dense EPI spectrum ``E(omega_u, omega_x) = n_t * F(-omega_u / omega_x, omega_x)`` on the wedge.

    The angular phase is referred to ``u_ref``; multiply by the reference
    phase (see :func:`reconstruct_dense_epi`) before inverting on a grid
    whose first row is not the reference.
    """
    if hybrid.shape[0] != cfg.n_f:
        raise ValueError(f"hybrid has {hybrid.shape[0]} rows, config has n_f={cfg.n_f}")
    return ComplexGrid(_back_project(hybrid.data, cfg, mask), ("omega_u", "omega_x"))


@dataclass(frozen=True)
class DenseEpi:
    epi: Epi
    validity: np.ndarray
    imag_residue: float
    efs_symmetry: float
    wedge: WedgeMask


def reconstruct_dense_epi(epi: Epi, cfg: ReconstructionConfig, backend: CompletionBackend) -> DenseEpi:
    """Run the full chain on one EPI; the result has ``cfg.n_target`` rows."""
    lay = _layout(epi.n_u, cfg, epi.u_ref)
    res = _run_batch(epi.data[None], lay, backend, [epi.row or 0], epi.v or 0)
    out = Epi(res.epis[0], lay.u_ref, lay.tgt_pos, epi.row, epi.v)
    return DenseEpi(out, res.validity, res.imag_residue, res.efs_symmetry, res.wedge)


# ---------------------------------------------------------------------------
# whole light fields


@dataclass(frozen=True)
class Reconstruction:
    """Dense field plus per-view validity ``(n_v, n_target, h, w)`` and diagnostics."""

    field: LightField
    validity: np.ndarray
    imag_residue: float
    efs_symmetry: float
    wedge_loss: float | None = None
    meta: dict = field(default_factory=dict)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EFSLAB_THREADS", "1")))
    except ValueError:
        return 1


def reconstruct_lightfield(lf: LightField, cfg: ReconstructionConfig, backend: CompletionBackend,
                           u_ref: float | None = None, passthrough: bool = False,
                           chunk: int = 32) -> Reconstruction:
    """Reconstruct every horizontal EPI of ``lf`` (all ``v`` rows independently)."""
    lay = _layout(lf.n_u, cfg, u_ref)
    n_t = len(lay.tgt_pos)
    views = np.empty((lf.n_v, n_t, lf.height, lf.width))
    valid = np.empty((lf.n_v, n_t, lf.width), dtype=bool)
    residue = sym = 0.0
    jobs = [(v, list(range(y, min(y + chunk, lf.height)))) for v in range(lf.n_v) for y in range(0, lf.height, chunk)]

    def work(job):
        v, rows = job
        src = lf.views[v][:, rows, :].transpose(1, 0, 2)
        return v, rows, _run_batch(src, lay, backend, rows, v)

    n_threads = _threads()
    if n_threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(n_threads) as ex:
            results = list(ex.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    for v, rows, res in results:
        views[v][:, rows, :] = res.epis.transpose(1, 0, 2)
        valid[v] = res.validity
        residue = max(residue, res.imag_residue)
        sym = max(sym, res.efs_symmetry)
    if passthrough:
        for i, p in enumerate(lay.src_pos):
            j = int(np.argmin(np.abs(lay.tgt_pos - p)))
            if abs(lay.tgt_pos[j] - p) < 1e-9:
                views[:, j] = lf.views[:, i]
    validity = np.broadcast_to(valid[:, :, None, :], views.shape).copy()
    spacing = lay.spacing
    out = LightField(np.clip(views, 0.0, 1.0), lf.baseline_step * spacing, lf.focal_length,
                     dict(lf.meta, reconstructed=True, u_ref=lay.u_ref, target_positions=lay.tgt_pos.tolist()))
    return Reconstruction(out, validity, residue, sym, None, {})


def measure_wedge_loss(dense: LightField, cfg: ReconstructionConfig, n_src: int, u_ref: float | None = None) -> float:
    """Energy fraction of the ground-truth dense EPIs outside the reconstructable wedge.

    The DC bin is excluded so that the mean brightness does not dilute the
    figure.  Energies are pooled over every row of every ``v``.
    """
    lay = _layout(n_src, cfg, u_ref)
    if dense.n_u != len(lay.tgt_pos):
        raise BackendMismatchError(f"dense field has {dense.n_u} views, config targets {len(lay.tgt_pos)}")
    wedge = WedgeMask.build(cfg.d_min, cfg.d_max, dense.n_u, dense.width, lay.spacing)
    outside = total = 0.0
    for v in range(dense.n_v):
        spec = np.abs(_fft2c(dense.views[v].transpose(1, 0, 2))) ** 2
        spec[..., dense.n_u // 2, dense.width // 2] = 0.0
        outside += float(spec[..., ~wedge.mask].sum())
        total += float(spec.sum())
    return outside / total if total > 0 else 0.0


# ---------------------------------------------------------------------------
# multi-reference and full parallax


def _tent_weights(positions: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Piecewise-linear partition of unity with nodes at the sorted ``refs``: ``(n_refs, n_pos)``."""
    order = np.argsort(refs)
    r = refs[order]
    w = np.zeros((len(r), len(positions)))
    if len(r) == 1:
        w[0] = 1.0
    else:
        for k in range(len(r)):
            basis = np.zeros(len(r))
            basis[k] = 1.0
            w[k] = np.interp(positions, r, basis)
    out = np.empty_like(w)
    out[order] = w
    return out


def blend_weights(positions: np.ndarray, refs: Sequence[float], validity: np.ndarray) -> np.ndarray:
    """Per-reference blend weights ``(n_refs, n_t, ..., w)`` for validity maps ``(n_refs, n_t, ..., w)``.

    Triangular weights peak at each reference and fall to zero at its
    neighbours; a small floor keeps every valid reference usable, so the
    weights sum to one wherever at least one reference is valid.  Where none
    is, the plain triangular weights are returned.
    """
    refs = np.asarray(refs, dtype=np.float64)
    tent = _tent_weights(np.asarray(positions, dtype=np.float64), refs) + 1e-3
    tent = tent.reshape(tent.shape + (1,) * (validity.ndim - 2))
    w = tent * validity
    s = w.sum(axis=0)
    fallback = np.broadcast_to(tent / tent.sum(axis=0), validity.shape)
    return np.where(s > 0, w / np.where(s > 0, s, 1.0), fallback)


def multi_reference_reconstruct(lf: LightField, cfg: ReconstructionConfig, refs: Sequence[float],
                                backend: CompletionBackend, passthrough: bool = False) -> Reconstruction:
    """Run the pipeline once per reference (source-view units) and blend per output view."""
    refs = [float(r) for r in refs]
    if not refs:
        raise ValueError("need at least one reference view")
    for r in refs:
        if not 0 <= r <= lf.n_u - 1:
            raise ValueError(f"reference {r} outside [0, {lf.n_u - 1}]")
    runs = [reconstruct_lightfield(lf, cfg, backend, u_ref=r, passthrough=passthrough) for r in refs]
    if len(runs) == 1:
        return runs[0]
    lay = _layout(lf.n_u, cfg, refs[0])
    valid = np.stack([r.validity for r in runs]).transpose(0, 2, 1, 3, 4)  # (refs, n_t, n_v, h, w)
    w = blend_weights(lay.tgt_pos, refs, valid.astype(np.float64)).transpose(0, 2, 1, 3, 4)
    views = np.sum(w * np.stack([r.field.views for r in runs]), axis=0)
    validity = np.any(valid, axis=0).transpose(1, 0, 2, 3)
    base = runs[0].field
    meta = dict(base.meta, u_ref=refs)
    field_ = LightField(np.clip(views, 0.0, 1.0), base.baseline_step, base.focal_length, meta)
    return Reconstruction(field_, validity, max(r.imag_residue for r in runs),
                          max(r.efs_symmetry for r in runs), None, {"refs": refs})


def full_parallax_reconstruct(lf: LightField, cfg_h: ReconstructionConfig, cfg_v: ReconstructionConfig,
                              backend_h: CompletionBackend, backend_v: CompletionBackend | None = None,
                              passthrough: bool = False, vertical_first: bool = False) -> Reconstruction:
    """Densify horizontally on every source row of views, then vertically on the result.

    ``backend_v`` defaults to ``backend_h``.  Each backend sees its pass in
    the frame where that pass is horizontal, so an oracle for the second
    pass holds the dense grid transposed (see :meth:`LightField.transposed`).
    ``vertical_first`` swaps the order; ``backend_v`` then serves the first
    pass.
    """
    if lf.n_v < 2 or lf.n_u < 2:
        raise ValueError("full parallax needs n_u >= 2 and n_v >= 2; use reconstruct_lightfield for a single row")
    if vertical_first:
        inner = full_parallax_reconstruct(lf.transposed(), cfg_v, cfg_h, backend_v or backend_h, backend_h,
                                          passthrough)
        return Reconstruction(inner.field.transposed(), inner.validity.transpose(1, 0, 3, 2), inner.imag_residue,
                              inner.efs_symmetry, None, {"order": ["vertical", "horizontal"]})
    first = reconstruct_lightfield(lf, cfg_h, backend_h, passthrough=passthrough)
    second = reconstruct_lightfield(first.field.transposed(), cfg_v, backend_v or backend_h, passthrough=passthrough)
    out = second.field.transposed()
    # pass-1 validity over (u_t, x) must hold for every source row of views
    v1 = first.validity.all(axis=(0, 2))  # (n_t_u, w)
    v2 = second.validity.transpose(1, 0, 3, 2)  # (n_t_v, n_t_u, h, w)
    validity = v2 & v1[None, :, None, :]
    meta = dict(out.meta, full_parallax=True)
    field_ = LightField(out.views, out.baseline_step, out.focal_length, meta)
    return Reconstruction(field_, validity, max(first.imag_residue, second.imag_residue),
                          max(first.efs_symmetry, second.efs_symmetry), None, {"order": ["horizontal", "vertical"]})
