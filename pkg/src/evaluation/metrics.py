"""
PSNR and block SSIM

SSIM variant: channel-mean grayscale, non-overlapping 8x8 windows, global
constants C1=(0.01*peak)^2 and C2=(0.03*peak)^2, mean over windows.
"""
import math
from typing import Union

import numpy as np
import torch

ArrayLike = Union[np.ndarray, torch.Tensor]

SSIM_WINDOW = 8
# per-sample PSNR ceiling for aggregated scores (MSE floor of 1e-10 at peak 1)
PSNR_CEILING_DB = 100.0
SSIM_VARIANT = "block-8x8 non-overlapping, channel-mean grayscale, C1=(0.01*peak)^2, C2=(0.03*peak)^2"


def _as_float64(image: ArrayLike) -> np.ndarray:
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
    return np.asarray(image, dtype=np.float64)


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a: ArrayLike, b: ArrayLike, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); math.inf when the images are identical"""
    a, b = _as_float64(a), _as_float64(b)
    _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def to_gray(image: np.ndarray, channel_axis: int = -1) -> np.ndarray:
    if image.ndim == 2:
        return image
    if image.ndim != 3:
        raise ValueError(f"expected a 2-D or 3-D image, got shape {image.shape}")
    return image.mean(axis=channel_axis)


def ssim(a: ArrayLike, b: ArrayLike, peak: float = 1.0, channel_axis: int = -1) -> float:
    """
    Args:
        a, b: images of identical shape, [H,W], [H,W,C] or (channel_axis=0) [C,H,W]

    Returns:
        mean local SSIM in [-1, 1]
    """
    a, b = _as_float64(a), _as_float64(b)
    _check_pair(a, b)
    ga, gb = to_gray(a, channel_axis), to_gray(b, channel_axis)
    h, w = ga.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    h8, w8 = h - h % SSIM_WINDOW, w - w % SSIM_WINDOW

    def blocks(g: np.ndarray) -> np.ndarray:
        return g[:h8, :w8].reshape(h8 // SSIM_WINDOW, SSIM_WINDOW, w8 // SSIM_WINDOW, SSIM_WINDOW)

    ba, bb = blocks(ga), blocks(gb)
    mu_a = ba.mean(axis=(1, 3), keepdims=True)
    mu_b = bb.mean(axis=(1, 3), keepdims=True)
    da, db = ba - mu_a, bb - mu_b
    var_a = (da * da).mean(axis=(1, 3))
    var_b = (db * db).mean(axis=(1, 3))
    cov = (da * db).mean(axis=(1, 3))
    mu_a, mu_b = mu_a[:, 0, :, 0], mu_b[:, 0, :, 0]

    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    local = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return float(local.mean())


def batch_psnr(pred: torch.Tensor, target: torch.Tensor, peak: float = 1.0) -> np.ndarray:
    """Per-sample PSNR of [N,3,H,W] batches, capped at PSNR_CEILING_DB"""
    scores = np.array([psnr(p, t, peak) for p, t in zip(pred, target)], dtype=np.float64)
    return np.minimum(scores, PSNR_CEILING_DB)


def batch_ssim(pred: torch.Tensor, target: torch.Tensor, peak: float = 1.0) -> np.ndarray:
    return np.array([ssim(p, t, peak, channel_axis=0) for p, t in zip(pred, target)], dtype=np.float64)
