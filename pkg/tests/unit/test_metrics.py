import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

import math

import numpy as np
import pytest
import torch

from evaluation.metrics import PSNR_CEILING_DB, batch_psnr, batch_ssim, psnr, ssim


@pytest.fixture
def image():
    return np.random.default_rng(0).uniform(0.2, 0.8, size=(32, 32, 3))


@pytest.mark.parametrize("seed", range(5))
def test_psnr_falls_as_mse_grows(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.0, 1.0, size=(16, 16, 3))
    direction = rng.normal(size=a.shape)
    scales = np.sort(rng.uniform(1e-4, 0.5, size=12))
    scores = [psnr(a, a + s * direction) for s in scales]
    mses = [np.mean((s * direction) ** 2) for s in scales]
    assert np.all(np.diff(mses) > 0)
    assert np.all(np.diff(scores) < 0)


def test_psnr_uniform_offset(image):
    assert psnr(image, image + 10.0 / 255.0) == pytest.approx(28.1308, abs=1e-3)


def test_psnr_identical_is_infinite(image):
    assert psnr(image, image) == math.inf


def test_psnr_zero_db():
    assert psnr(np.zeros((8, 8, 3)), np.ones((8, 8, 3))) == pytest.approx(0.0)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))


def test_ssim_identity_is_exactly_one(image):
    assert ssim(image, image) == 1.0


def test_ssim_symmetry(image):
    other = np.clip(image + np.random.default_rng(1).normal(0, 0.05, image.shape), 0, 1)
    assert abs(ssim(image, other) - ssim(other, image)) <= 1e-6


def test_ssim_of_independent_noise_is_small():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 1, size=(64, 64, 3))
    b = rng.uniform(0, 1, size=(64, 64, 3))
    assert abs(ssim(a, b)) < 0.1


def test_ssim_decreases_with_noise(image):
    rng = np.random.default_rng(3)
    scores = [ssim(image, np.clip(image + rng.normal(0, sigma, image.shape), 0, 1)) for sigma in (0.01, 0.05, 0.2)]
    assert scores[0] > scores[1] > scores[2]


def test_ssim_rejects_tiny_images():
    with pytest.raises(ValueError):
        ssim(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))


def test_batch_metrics_on_chw_tensors():
    generator = torch.Generator().manual_seed(4)
    pred = torch.rand(3, 3, 16, 16, generator=generator)
    target = pred.clone()
    target[1] = (target[1] + 10.0 / 255.0)
    psnrs = batch_psnr(pred, target)
    assert psnrs[0] == PSNR_CEILING_DB
    assert psnrs[1] == pytest.approx(28.1308, abs=1e-2)
    assert np.allclose(batch_ssim(pred, pred), 1.0)
