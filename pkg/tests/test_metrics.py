import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from efslab.metrics import PSNR_CAP, ViewScore, mean_finite, per_view_scores, psnr, ssim, ssim_map

images = arrays(np.float64, (16, 16), elements=st.floats(0, 1, allow_nan=False))


def test_psnr_examples():
    a = np.full((8, 8), 0.3)
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    board = (np.indices((8, 8)).sum(axis=0) % 2).astype(float)
    assert psnr(board, 1 - board) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        psnr(a, np.zeros((8, 9)))


def test_psnr_mask():
    a = np.zeros((4, 4))
    b = a.copy()
    b[0, 0] = 1.0
    m = np.ones((4, 4), bool)
    m[0, 0] = False
    assert psnr(a, b, m) == PSNR_CAP
    assert np.isnan(psnr(a, b, np.zeros((4, 4), bool)))


@given(images, images)
def test_symmetry(a, b):
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


@given(images)
def test_identical_ssim_is_one(a):
    assert ssim(a, a) == pytest.approx(1.0)


def test_ssim_constants():
    a = np.full((20, 20), 0.5)
    c1 = 0.01 ** 2
    expected = (2 * 0.5 * 0.6 + c1) / (0.5 ** 2 + 0.6 ** 2 + c1)
    assert ssim(a, a + 0.1) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(0.98361, abs=1e-5)


def test_ssim_inverted_noise():
    rng = np.random.default_rng(0)
    a = rng.random((64, 64))  # mean 0.5, so luminance and contrast terms are ~1
    # structure term (-var + C2/2) / (var + C2/2) with var ~ 1/12
    assert ssim(a, 1 - a) < -0.95


def test_ssim_size_check():
    with pytest.raises(ValueError):
        ssim_map(np.zeros((10, 40)), np.zeros((10, 40)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))


def test_per_view_scores_and_mask_policy():
    truth = np.zeros((3, 12, 12))
    recon = truth.copy()
    recon[1, :, :6] = 0.5
    valid = np.ones((3, 12, 12), bool)
    valid[1, :, :6] = False
    valid[2] = False
    scores = per_view_scores(recon, truth, positions=np.array([0, 0.5, 1.0]), validity=valid)
    assert scores[0] == ViewScore(0.0, PSNR_CAP, pytest.approx(1.0))
    assert scores[1].psnr == PSNR_CAP
    assert np.isnan(scores[2].psnr)
    inc = per_view_scores(recon, truth, validity=valid, include_invalid=True)
    assert inc[1].psnr == pytest.approx(10 * np.log10(1 / 0.125))
    assert mean_finite([s.psnr for s in scores]) == PSNR_CAP
    assert np.isnan(mean_finite([]))
