import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nldf.metrics import MetricError, MetricReport, psnr, psnr_capped, ssim
from nldf.render import Image


def img(arr):
    return Image(np.asarray(arr, dtype=np.float64))


def test_psnr_identical():
    a = img(np.random.default_rng(0).random((8, 8, 3)))
    assert psnr(a, a) == math.inf
    assert psnr_capped(psnr(a, a)) == 99.0


def test_psnr_zero_db():
    assert psnr(img(np.zeros((4, 4, 3))), img(np.ones((4, 4, 3)))) == 0.0


def test_psnr_twenty_db():
    a = np.random.default_rng(1).uniform(0.2, 0.8, (6, 6, 3))
    assert psnr(img(a), img(a + 0.1)) == pytest.approx(20.0, abs=1e-9)


def test_psnr_shape_mismatch():
    with pytest.raises(MetricError):
        psnr(img(np.zeros((4, 4, 3))), img(np.zeros((4, 5, 3))))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_psnr_symmetric_and_ssim_bounded(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((16, 16, 3)), r.random((16, 16, 3))
    assert psnr(img(a), img(b)) == psnr(img(b), img(a))
    s = ssim(img(a), img(b))
    assert -1.0 <= s <= 1.0
    assert ssim(img(a), img(a)) == pytest.approx(1.0, abs=1e-12)


def test_ssim_identical_is_one():
    a = img(np.random.default_rng(2).random((32, 32, 3)))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_image_and_its_negative():
    a = np.full((16, 16, 3), 0.5)
    assert ssim(img(a), img(1.0 - a)) == pytest.approx(1.0, abs=1e-12)


def test_ssim_too_small():
    with pytest.raises(MetricError):
        ssim(img(np.zeros((10, 10, 3))), img(np.zeros((10, 10, 3))))


def oracle_pair():
    r = np.random.default_rng(42)
    yy, xx = np.mgrid[0:48, 0:48] / 47.0
    base = np.stack([np.sin(3 * xx + yy), xx * yy, np.cos(2 * yy)], axis=-1) * 0.4 + 0.5
    noisy = np.clip(base + r.normal(0, 0.05, base.shape), 0, 1)
    return base, noisy


# Computed once with skimage.metrics.structural_similarity(gaussian_weights=True,
# sigma=1.5, use_sample_covariance=False, data_range=1, channel_axis=-1), after
# cropping its reflect-padded map to the fully contained windows.
SSIM_ORACLE_PAIR = 0.3993101805


def test_ssim_frozen_reference_value():
    a, b = oracle_pair()
    assert ssim(img(a), img(b)) == pytest.approx(SSIM_ORACLE_PAIR, abs=1e-4)


def test_ssim_matches_skimage_live():
    sk = pytest.importorskip("skimage.metrics")
    a, b = oracle_pair()
    _, full = sk.structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                       data_range=1.0, channel_axis=-1, full=True)
    pad = 5
    ref = full[pad:-pad, pad:-pad].mean()
    assert ssim(img(a), img(b)) == pytest.approx(ref, abs=1e-4)


def test_report_caps_identical():
    a = img(np.random.default_rng(3).random((12, 12, 3)))
    rep = MetricReport()
    rep.add(a, a)
    d = rep.to_dict()
    assert d["psnr_db"] == [99.0] and d["identical"] == [True]
    assert d["mean_ssim"] == pytest.approx(1.0)
    assert rep.csv_rows()[-1][0] == "mean"
