import numpy as np
import pytest

from mrstct import metrics
from mrstct.imaging import ConfigError


def test_roi_shapes():
    m = metrics.circular_roi(9, 9, 1.0)
    assert m[4, 0] and m[0, 4] and not m[0, 0]
    tiny = metrics.circular_roi(3, 3, 0.01)
    assert tiny.sum() == 1 and tiny[1, 1]
    big = metrics.circular_roi(512, 512, 1.0)
    assert big.mean() == pytest.approx(np.pi / 4, rel=0.02)
    with pytest.raises(ConfigError):
        metrics.circular_roi(4, 4, 0.0)


def test_rmse_examples(rng):
    a = np.array([[1.0, 2.0]])
    assert metrics.rmse(a, a) == 0
    assert metrics.rmse(np.array([[1.0, 2.0]]), np.zeros((1, 2))) == pytest.approx(np.sqrt(2.5))
    x, y = rng.normal(size=(2, 6, 6))
    perm = rng.permutation(36)
    assert metrics.rmse(x, y) == pytest.approx(
        metrics.rmse(x.ravel()[perm].reshape(6, 6), y.ravel()[perm].reshape(6, 6)))
    assert metrics.rmse(x, y) == pytest.approx(metrics.rmse(y, x))
    assert metrics.rmse(x + 5, y + 5) == pytest.approx(metrics.rmse(x, y))
    with pytest.raises(ConfigError):
        metrics.rmse(x, y[:5])


def test_psnr_examples(rng):
    ref = np.full((4, 4), 1000.0)
    ref[0, 0] = 2000.0
    noise = rng.normal(size=(4, 4))
    noise *= 20 / np.sqrt(np.mean(noise ** 2))
    assert metrics.psnr(ref, ref + noise) == pytest.approx(40.0)
    assert metrics.psnr(ref, ref + noise / 2) - metrics.psnr(ref, ref + noise) == \
        pytest.approx(20 * np.log10(2))
    assert metrics.psnr(ref, ref) == float("inf")


def test_ssim_identity_and_range(rng):
    a = rng.normal(size=(20, 20))
    assert metrics.ssim(a, a) == 1.0
    for _ in range(10):
        b = rng.normal(size=(20, 20))
        assert -1 <= metrics.ssim(a, b) <= 1


def test_ssim_negated_zero_mean_is_negative():
    # checkerboard windows have zero mean, so only the structure term acts
    a = np.indices((16, 16)).sum(axis=0) % 2 * 2.0 - 1.0
    assert metrics.ssim(a, -a) < 0


def test_ssim_symmetric_with_fixed_range(rng):
    a, b = rng.normal(size=(2, 16, 16))
    assert metrics.ssim(a, b, data_range=4.0) == pytest.approx(
        metrics.ssim(b, a, data_range=4.0), abs=1e-15)


def test_ssim_window_by_hand():
    # one 8x8 image and the full-window statistics at its centre pixel
    rng = np.random.default_rng(1)
    a = rng.normal(size=(8, 8))
    b = a + rng.normal(scale=0.3, size=(8, 8))
    L = a.max() - a.min()
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(), b.var()
    cov = np.mean((a - ma) * (b - mb))
    expected = (2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2))
    got = metrics.ssim_map(a, b, L)[4, 4]
    assert got == pytest.approx(expected, rel=1e-10)
