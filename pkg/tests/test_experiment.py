import csv
import json
import time

import numpy as np
import pytest

from efslab.experiment import ExperimentError, ExperimentSpec, SceneSpec, run_experiment

SMOKE_SCENE = SceneSpec(disparities=(0.1,), n_views=25, height=64, width=64)


def smoke(tmp_path, **kw):
    base = dict(name="smoke", scene=SMOKE_SCENE, downsample=5, d_min=-1.0, d_max=2.0, backend="oracle",
                output_dir=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentSpec(**base)


def validate_report(rep: dict) -> None:
    """Schema v1 of a metrics report."""
    required = {"schema_version": int, "name": str, "per_view": list, "mean_psnr": (float, type(None)),
                "mean_ssim": (float, type(None)), "efs_symmetry": float, "imag_residue": float,
                "wedge_loss": (float, type(None)), "config": dict}
    for key, typ in required.items():
        assert key in rep, key
        assert isinstance(rep[key], typ), (key, type(rep[key]))
    assert rep["schema_version"] == 1
    for row in rep["per_view"]:
        assert {"u", "psnr", "ssim"} <= set(row)
        assert isinstance(row["u"], float)
        for k in ("psnr", "ssim"):
            assert row[k] is None or isinstance(row[k], float)
    assert {"d_min", "d_max", "n_f", "delta_alpha", "n_target", "aperture"} <= set(rep["config"])


def test_spec_round_trip(tmp_path):
    spec = smoke(tmp_path, refs=(1.0, 2.0), sweep={"n_f": [4, 7]},
                 scene=SceneSpec(disparities=(0.1, 0.3), masks=(("full",), ("left", 20.0))))
    text = json.dumps(spec.to_json())
    back = ExperimentSpec.from_json(json.loads(text))
    assert back == spec
    assert json.loads(text)["schema_version"] == 1


@pytest.mark.parametrize("patch, match", [({"bogus": 1}, "unknown"), ({"schema_version": 3}, "schema_version")])
def test_spec_validation(tmp_path, patch, match):
    obj = smoke(tmp_path).to_json() | patch
    with pytest.raises(ValueError, match=match):
        ExperimentSpec.from_json(obj)


def test_smoke_run_budget_and_outputs(tmp_path):
    t0 = time.perf_counter()
    rep = run_experiment(smoke(tmp_path))
    assert time.perf_counter() - t0 < 10.0
    validate_report(rep)
    out = tmp_path / "out"
    for name in ("spec.json", "metrics.json", "per_view.csv", "previews/recon_center.png",
                 "previews/truth_center.png", "previews/error_center_x10.png", "previews/epi_recon.png"):
        assert (out / name).exists(), name
    validate_report(json.loads((out / "metrics.json").read_text()))
    with (out / "per_view.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 21 and list(rows[0]) == ["u", "psnr", "ssim"]
    assert rep["mean_psnr"] > 30
    assert ExperimentSpec.load(out / "spec.json") == smoke(tmp_path)


def test_identical_specs_give_identical_bytes(tmp_path):
    a = smoke(tmp_path, output_dir=str(tmp_path / "a"), sweep={"range_scale": [0.8, 1.0]})
    b = smoke(tmp_path, output_dir=str(tmp_path / "b"), sweep={"range_scale": [0.8, 1.0]})
    run_experiment(a)
    run_experiment(b)
    for name in ("metrics.json", "per_view.csv", "sweep.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_range_sweep_table(tmp_path):
    rep = run_experiment(smoke(tmp_path, sweep={"range_scale": [0.8, 1.0, 1.2]}))
    with (tmp_path / "out" / "sweep.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert list(rows[0]) == ["parameter", "value", "d_min", "d_max", "n_f", "mean_psnr", "mean_ssim"]
    widths = [float(r["d_max"]) - float(r["d_min"]) for r in rows]
    np.testing.assert_allclose(widths, [2.4, 3.0, 3.6])
    assert len({r["n_f"] for r in rows}) == 1
    assert [r["value"] for r in rep["sweep"]] == [0.8, 1.0, 1.2]


def test_stage_tagged_errors(tmp_path):
    with pytest.raises(ExperimentError) as exc:
        run_experiment(smoke(tmp_path, scene=None, input_path=str(tmp_path / "missing")), write=False)
    assert exc.value.stage == "load"
    assert str(exc.value).startswith("[load] FormatError")
    with pytest.raises(ExperimentError) as exc:
        run_experiment(smoke(tmp_path, d_min=2.0, d_max=1.0), write=False)
    assert exc.value.stage == "config"
    with pytest.raises(ExperimentError) as exc:
        run_experiment(smoke(tmp_path, backend="neural"), write=False)
    assert exc.value.stage == "reconstruct"
    with pytest.raises(ExperimentError) as exc:
        run_experiment(smoke(tmp_path, downsample=30), write=False)
    assert exc.value.stage == "downsample"
    with pytest.raises(ExperimentError) as exc:
        run_experiment(smoke(tmp_path, sweep={"gamma": [1]}), write=False)
    assert exc.value.stage == "config"


def test_classical_and_multi_reference_runs(tmp_path):
    rep = run_experiment(smoke(tmp_path, backend="classical", refs=(1.0, 2.0, 3.0)), write=False)
    validate_report(rep)
    assert rep["mean_psnr"] > 30


def test_full_parallax_run(tmp_path):
    scene = SceneSpec(disparities=(0.2,), n_views=9, n_v=9, height=24, width=24)
    spec = ExperimentSpec(name="fp", scene=scene, downsample=2, downsample_v=2, d_min=-1.0, d_max=2.0,
                          output_dir=str(tmp_path / "fp"))
    rep = run_experiment(spec)
    validate_report(rep)
    assert {r["v"] for r in rep["per_view"]} == set(range(9))
    assert rep["wedge_loss"] is None
    with (tmp_path / "fp" / "per_view.csv").open() as fh:
        assert fh.readline().strip() == "v,u,psnr,ssim"


def test_input_path_run(tmp_path):
    from efslab.io import save_lightfield
    from efslab.lightfield import synth_lightfield

    lf, _ = synth_lightfield(SMOKE_SCENE.geometry(), 25, 32, 32, seed=4)
    save_lightfield(lf, tmp_path / "lf")
    rep = run_experiment(smoke(tmp_path, scene=None, input_path=str(tmp_path / "lf")), write=False)
    validate_report(rep)
