"""Acceptance criteria 1-11.

Each test prints one ``ACCEPTANCE <k> PASS|FAIL`` line (visible without
``-s``) and then asserts the same condition.  Run alone with::

    pytest tests/test_acceptance.py -v
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import gaussian_impulse_epi
from efslab.experiment import ExperimentSpec, SceneSpec, run_experiment
from efslab.lightfield import Epi, LightField, SceneGeometry, downsample_views, extract_epi, synth_lightfield
from efslab.metrics import mean_finite, per_view_scores, psnr
from efslab.refocus import ReconstructionConfig, build_focal_stack
from efslab.reconstruct import (
    ClassicalBackend,
    OracleBackend,
    WedgeMask,
    back_project,
    complete_efs,
    full_parallax_reconstruct,
    measure_wedge_loss,
    multi_reference_reconstruct,
    reconstruct_lightfield,
    target_positions,
)
from efslab.sampling import apex_angle, min_focal_layers
from efslab.spectrum import (
    aliased_energy_fraction,
    conjugate_symmetry_deviation,
    detect_view_lines,
    efs_slice_route,
    efs_spatial_route,
    epi_spectrum,
)

FACTOR = 15


@pytest.fixture
def announce(capsys):
    def _say(k: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nACCEPTANCE {k:>2} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return _say


def _scene(disparities, masks=None, n_dense=196, h=16, w=256, seed=0, cutoff=0.125):
    """Dense field and its 15x-sparse input; disparities are per sparse view step."""
    geom = SceneGeometry.from_disparities([d / FACTOR for d in disparities], masks=masks)
    dense, _ = synth_lightfield(geom, n_dense, h, w, seed=seed, cutoff=cutoff)
    sparse = downsample_views(dense, FACTOR)
    return LightField(dense.views[:, : (sparse.n_u - 1) * FACTOR + 1]), sparse


def _cfg(n_src, centre, half=6.0, n_target=None):
    n_target = (n_src - 1) * FACTOR + 1 if n_target is None else n_target
    return ReconstructionConfig.from_delta_alpha(centre - half, centre + half, 2 / (n_src - 1), n_target=n_target)


def _psnrs(rec, truth):
    return np.array([s.psnr for s in per_view_scores(rec.field.views[0], truth.views[0], validity=rec.validity[0])])


def _central(n, frac=0.8):
    k = int(round(n * (1 - frac) / 2))
    return slice(k, n - k)


# -- 1 ----------------------------------------------------------------------


def test_1_dual_route_equivalence(announce):
    t0 = time.perf_counter()
    worst = 0.0
    n_u = 50
    for seed, d in enumerate((-0.6, -0.2, 0.1, 0.4, 0.8)):
        lf, _ = synth_lightfield(SceneGeometry.from_disparities([d]), n_u, 128, 128, seed=seed)
        cfg = ReconstructionConfig.from_delta_alpha(-1.0, 1.0, 2 / (n_u - 1))
        num = den = 0.0
        for row in range(lf.height):
            epi = extract_epi(lf, row)
            a = efs_spatial_route(build_focal_stack(epi, cfg)).data
            b = efs_slice_route(epi, cfg)[1].data
            num += np.sum(np.abs(a - b) ** 2)
            den += np.sum(np.abs(a) ** 2)
        worst = max(worst, math.sqrt(num / den))
    dt = time.perf_counter() - t0
    announce(1, worst <= 0.05 and dt <= 60, f"worst relative L2 {worst:.4f} (<= 0.05), runtime {dt:.1f} s (<= 60)")


# -- 2 ----------------------------------------------------------------------


def test_2_conjugate_symmetry(announce):
    worst = 0.0
    for seed, d in enumerate((-0.5, 0.3, 0.9)):
        lf, _ = synth_lightfield(SceneGeometry.from_disparities([d]), 20, 8, 128, seed=seed)
        cfg = ReconstructionConfig.from_delta_alpha(-1.0, 1.5, 2 / 19)
        for row in range(lf.height):
            g = efs_spatial_route(build_focal_stack(extract_epi(lf, row), cfg))
            worst = max(worst, conjugate_symmetry_deviation(g) / np.abs(g.data).max())
    dense, sparse = _scene([1.0], h=12, w=128)
    cfg = _cfg(sparse.n_u, 1.0)
    for backend in (OracleBackend(dense), ClassicalBackend()):
        for row in range(0, sparse.height, 3):
            epi = extract_epi(sparse, row)
            done = complete_efs(efs_spatial_route(build_focal_stack(epi, cfg)), cfg, backend, epi)
            worst = max(worst, conjugate_symmetry_deviation(done) / np.abs(done.data).max())
    announce(2, worst <= 1e-9, f"worst relative asymmetry {worst:.2e} (<= 1e-9)")


# -- 3 ----------------------------------------------------------------------


def _impulse_efs(epi, half=4.0):
    n = len(epi.positions)
    span = epi.positions[-1] - epi.positions[0]
    cfg = ReconstructionConfig.from_delta_alpha(-half, half, 2 / span if n > 1 else 1.0)
    return efs_spatial_route(build_focal_stack(epi, cfg)), cfg


def test_3_view_line_census(announce):
    msgs, ok = [], True
    for n_u in (5, 14, 25):
        efs, cfg = _impulse_efs(Epi(gaussian_impulse_epi(n_u, 256, 0.5), (n_u - 1) / 2))
        det = detect_view_lines(efs, cfg.delta_alpha, n_u)
        err = max(abs(ln.angle - det.predicted[ln.view]) for ln in det.lines if ln.view is not None)
        good = det.complete and det.n_detected == n_u and err <= 1.5
        ok &= good
        msgs.append(f"N_u={n_u}: {det.n_detected} lines, max err {err:.2f} deg")
    # keep every second view of the 25-view scene at the original positions
    full = gaussian_impulse_epi(25, 256, 0.5)
    pos = np.arange(0, 25, 2, dtype=float)
    sub = Epi(full[::2], 12.0, pos)
    efs_full, cfg = _impulse_efs(Epi(full, 12.0))
    efs_sub, _ = _impulse_efs(sub)
    apex = math.degrees(apex_angle(25, cfg.delta_alpha))
    spans = []
    for efs, offsets in ((efs_full, np.arange(25) - 12.0), (efs_sub, sub.offsets)):
        det = detect_view_lines(efs, cfg.delta_alpha, len(offsets), offsets=offsets)
        spans.append((det.n_detected, float(det.angles.max() - det.angles.min())))
    env = spans[1][0] == 13 and spans[0][0] == 25 and all(abs(s - apex) <= 2.0 for _, s in spans)
    ok &= env
    msgs.append(f"downsampled 25->13: lines {spans[0][0]}->{spans[1][0]}, envelope "
                f"{spans[0][1]:.2f}/{spans[1][1]:.2f} vs apex {apex:.2f} deg (<= 2)")
    announce(3, ok, "; ".join(msgs))


# -- 4 ----------------------------------------------------------------------


def test_4_depth_invariance(announce):
    n_u, sets = 14, []
    cfg = ReconstructionConfig.from_delta_alpha(-8.0, 8.0, 2 / (n_u - 1))
    for d in (0.3, 0.8):
        lf, _ = synth_lightfield(SceneGeometry.from_disparities([d]), n_u, 8, 256, seed=1, cutoff=0.5)
        det = detect_view_lines(efs_spatial_route(build_focal_stack(extract_epi(lf, 4), cfg)), cfg.delta_alpha, n_u)
        sets.append((det.complete, np.sort(det.angles)))
    same = sets[0][0] and sets[1][0] and len(sets[0][1]) == len(sets[1][1])
    diff = float(np.max(np.abs(sets[0][1] - sets[1][1]))) if same else float("inf")
    announce(4, same and diff <= 1.5, f"both complete: {same}, max pairwise orientation difference {diff:.3f} deg (<= 1.5)")


# -- 5 ----------------------------------------------------------------------


def test_5_sampling_bound(announce):
    geom = SceneGeometry(focal_length=9.0, baseline=1.0, s_factor=1.0, depth_bounds=(4.0, 100.0))
    n215 = min_focal_layers(geom, 200)
    # many thin layers spanning Z in [4, 40] approximate a continuous depth range
    n_u = 14
    z = np.linspace(4.0, 40.0, 12)
    disp = 9.0 / z
    masks = [("full",)] + [("stripe", float(8 + 20 * i), float(20 + 20 * i)) for i in range(1, len(z))]
    lf, _ = synth_lightfield(SceneGeometry.from_disparities(list(disp[::-1]), masks=masks), n_u, 8, 256, seed=3,
                             cutoff=0.5)
    sub = SceneGeometry(focal_length=9.0, baseline=1.0, s_factor=1.0, depth_bounds=(4.0, 40.0))
    n_fmin = min_focal_layers(sub, n_u)
    d_min, d_max = 9.0 / 40.0, 9.0 / 4.0
    frac = {}
    for n_f in (n_fmin, math.ceil(n_fmin / 2)):
        cfg = ReconstructionConfig(d_min, d_max, n_f + 1)  # n_f intervals
        frac[n_f] = np.mean([aliased_energy_fraction(build_focal_stack(extract_epi(lf, r), cfg)) for r in range(8)])
    lo, hi = frac[n_fmin], frac[math.ceil(n_fmin / 2)]
    announce(5, n215 == 215 and lo <= hi,
             f"N_fmin(200 views) = {n215} (== 215); aliased energy {lo:.4f} at N_f={n_fmin} "
             f"<= {hi:.4f} at N_f={math.ceil(n_fmin / 2)}")


# -- 6 ----------------------------------------------------------------------


def test_6_projection_chain(announce):
    geom = SceneGeometry.from_disparities([0.3, 0.7], masks=[("full",), ("stripe", 30.0, 90.0)])
    lf, _ = synth_lightfield(geom, 41, 4, 128, seed=2)
    epi = extract_epi(lf, 1)
    n_fmin = math.ceil((1.5 - (-0.5)) * 40 / 2)
    rels, zero = [], True
    for n_f in (n_fmin + 1, 2 * n_fmin):
        cfg = ReconstructionConfig(-0.5, 1.5, n_f)
        hybrid, _ = efs_slice_route(epi, cfg)
        wedge = WedgeMask.build(cfg.d_min, cfg.d_max, epi.n_u, epi.width, 1.0)
        est = back_project(hybrid, wedge, cfg).data
        ref, _ = epi_spectrum(epi)
        m = wedge.mask
        rels.append(np.linalg.norm(est[m] - ref.data[m]) / np.linalg.norm(ref.data[m]))
        zero &= bool(np.all(est[~m] == 0))
    geom3 = SceneGeometry.from_disparities([-0.6, 0.1, 0.8], masks=[("full",), ("stripe", 20.0, 60.0),
                                                                     ("disk", 90.0, 4.0, 20.0)])
    dense, _ = synth_lightfield(geom3, 41, 8, 128, seed=7)
    loss = measure_wedge_loss(dense, ReconstructionConfig(-1.0, 1.0, 41, n_target=41), n_src=41)
    ok = max(rels) <= 0.02 and zero and 0.0 < loss <= 0.10
    announce(6, ok, f"round trip {max(rels):.4f} (<= 0.02), out-of-wedge zero: {zero}, "
                    f"wedge loss {100 * loss:.2f}% in (0, 10]")


# -- 7 ----------------------------------------------------------------------


def _copy_psnr(sparse, truth, validity):
    tp = target_positions(sparse.n_u, truth.n_u)
    idx = np.rint(tp).astype(int)
    inter = np.abs(tp - idx) > 1e-9
    vals = [psnr(sparse.views[0, idx[j]], truth.views[0, j], validity[0, j]) for j in np.flatnonzero(inter)]
    return inter, mean_finite(vals)


def test_7_end_to_end_reconstruction(announce):
    msgs, ok = [], True
    scenes = {
        "single": (_scene([1.0]), 1.0),
        "two-layer": (_scene([0.4, 1.0], masks=[("full",), ("left", 128.0)], seed=5), 0.7),
    }
    for name, ((truth, sparse), centre) in scenes.items():
        cfg = _cfg(sparse.n_u, centre)
        p = _psnrs(reconstruct_lightfield(sparse, cfg, OracleBackend(truth)), truth)[_central(truth.n_u)]
        ok &= bool(np.nanmin(p) >= 35.0)
        msgs.append(f"oracle {name} min central {np.nanmin(p):.1f} dB (>= 35)")
    (truth, sparse), centre = scenes["single"]
    cla = reconstruct_lightfield(sparse, _cfg(sparse.n_u, centre), ClassicalBackend())
    inter, copy = _copy_psnr(sparse, truth, cla.validity)
    pc = mean_finite(_psnrs(cla, truth)[inter])
    ok &= pc >= copy + 3.0
    msgs.append(f"classical {pc:.1f} dB vs copy {copy:.1f} dB (+3)")
    # runtime at full size: 200 dense views of 256x256, 15x down
    geom = SceneGeometry.from_disparities([1.0 / FACTOR])
    dense, _ = synth_lightfield(geom, 200, 256, 256, seed=0)
    sparse = downsample_views(dense, FACTOR)
    t0 = time.perf_counter()
    rec = reconstruct_lightfield(sparse, _cfg(sparse.n_u, 1.0, n_target=200), ClassicalBackend())
    dt = time.perf_counter() - t0
    ok &= dt <= 300 and rec.field.views.shape == (1, 200, 256, 256)
    msgs.append(f"200-view 256x256 classical in {dt:.1f} s (<= 300)")
    announce(7, ok, "; ".join(msgs))


# -- 8 ----------------------------------------------------------------------


def test_8_parameter_sweep_shape(announce, tmp_path):
    n_src, d_lo, d_hi = 14, -1.6, 3.0
    n_fmin = math.ceil((d_hi - d_lo) * (n_src - 1) / 2)  # intervals; layers are one more
    scene = SceneSpec(disparities=(0.4 / FACTOR, 1.0 / FACTOR), masks=(("full",), ("left", 128.0)),
                      n_views=196, height=16, width=256)
    spec = ExperimentSpec(name="sweep", scene=scene, downsample=FACTOR, d_min=d_lo, d_max=d_hi, n_f=n_fmin + 1,
                          backend="classical", seed=5, output_dir=str(tmp_path),
                          sweep={"range_scale": [0.8, 1.0],
                                 "n_f": [math.ceil(n_fmin / 2) + 1, n_fmin + 1, math.ceil(1.5 * n_fmin) + 1]})
    rows = run_experiment(spec, write=False)["sweep"]
    rng = {r["value"]: r["mean_psnr"] for r in rows if r["parameter"] == "range_scale"}
    nf = [r["mean_psnr"] for r in rows if r["parameter"] == "n_f"]
    ok = rng[0.8] < rng[1.0] and nf[0] < nf[1] and abs(nf[2] - nf[1]) <= 1.0
    announce(8, ok, f"range 0.8x {rng[0.8]:.2f} < 1.0x {rng[1.0]:.2f}; N_f half {nf[0]:.2f} < bound {nf[1]:.2f}; "
                    f"|1.5x {nf[2]:.2f} - bound| <= 1 dB")


# -- 9 ----------------------------------------------------------------------


def test_9_multi_reference(announce):
    msgs, ok = [], True
    scenes = {
        "single": (_scene([1.0]), 1.0),
        "two-layer": (_scene([0.4, 1.0], masks=[("full",), ("left", 128.0)], seed=5), 0.7),
    }
    for name, ((truth, sparse), centre) in scenes.items():
        cfg = _cfg(sparse.n_u, centre)
        backend = ClassicalBackend()
        one = _psnrs(reconstruct_lightfield(sparse, cfg, backend), truth)
        three = _psnrs(multi_reference_reconstruct(sparse, cfg, [4.5, 6.5, 8.5], backend), truth)
        k = int(round(0.1 * truth.n_u))
        outer = np.r_[0:k, truth.n_u - k:truth.n_u]
        a, b = mean_finite(one[outer]), mean_finite(three[outer])
        ok &= b >= a
        msgs.append(f"{name}: marginal {b:.2f} dB (3 refs) vs {a:.2f} dB (1 ref)")
    announce(9, ok, "; ".join(msgs))


# -- 10 ---------------------------------------------------------------------


def test_10_full_parallax(announce):
    size = 64
    geom = SceneGeometry.from_disparities([0.25, 0.6], masks=[("full",), ("disk", 32.0, 32.0, 12.8)])
    dense, _ = synth_lightfield(geom, 17, size, size, seed=4, n_v=17)
    sparse = LightField(dense.views[::2, ::2])
    cfg = ReconstructionConfig.from_delta_alpha(-1.0, 2.5, 0.25, n_target=17)
    # the vertical pass keeps the rows the horizontal pass already produced
    rec = full_parallax_reconstruct(sparse, cfg, cfg, ClassicalBackend(), passthrough=True)
    # horizontal pass only, each missing row copied from the row above it
    h = reconstruct_lightfield(sparse, cfg, ClassicalBackend(), passthrough=True)
    ours, base = [], []
    for v in range(17):
        for u in range(17):
            m = rec.validity[v, u] & h.validity[v // 2, u]
            ours.append(psnr(rec.field.views[v, u], dense.views[v, u], m))
            base.append(psnr(h.field.views[v // 2, u], dense.views[v, u], m))
    ours, base = mean_finite(ours), mean_finite(base)
    ok = rec.field.views.shape == (17, 17, size, size) and ours >= base
    announce(10, ok, f"17x17 mean PSNR {ours:.2f} dB vs horizontal pass plus vertical copy {base:.2f} dB")


# -- 11 ---------------------------------------------------------------------


def test_11_determinism(announce, tmp_path):
    specs = [
        ExperimentSpec(name="a", scene=SceneSpec(disparities=(0.05,), n_views=46, height=24, width=64), downsample=5,
                       d_min=-1.0, d_max=2.0, backend="classical", refs=(3.0, 6.0),
                       sweep={"range_scale": [0.8, 1.2]}),
        ExperimentSpec(name="b", scene=SceneSpec(disparities=(0.1,), n_views=25, height=24, width=64), downsample=5,
                       d_min=-1.0, d_max=2.0, backend="oracle", seed=9),
        ExperimentSpec(name="c", scene=SceneSpec(disparities=(0.2,), n_views=9, n_v=9, height=16, width=16),
                       downsample=2, downsample_v=2, d_min=-1.0, d_max=2.0),
    ]
    same = True
    for spec in specs:
        blobs = []
        for rep in ("r1", "r2"):
            out = tmp_path / spec.name / rep
            run_experiment(ExperimentSpec.from_json(spec.to_json() | {"output_dir": str(out)}))
            blobs.append([(out / f).read_bytes() for f in ("metrics.json", "per_view.csv")
                          + (("sweep.csv",) if spec.sweep else ())])
        same &= blobs[0] == blobs[1]
        json.loads(blobs[0][0])
    announce(11, same, f"{len(specs)} specs re-run with byte-identical reports: {same}")
