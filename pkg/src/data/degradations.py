"""
Ten parameterized synthetic degradations

Every operator takes an HQ image in [0,1] (float, [H,W,3]) and a numpy
Generator and returns the degraded image plus a JSON-serializable record of
the sampled parameters. Operators draw from the generator in a fixed order, so
(image, seed) fully determines the output.
"""
import io
import logging
from enum import IntEnum
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np
from matplotlib.path import Path as PolygonPath
from PIL import Image
from scipy import ndimage

from utils.config import DEGRADATION_LABELS, DegradationRanges

logger = logging.getLogger(__name__)

Params = Dict[str, Any]


class DegradationType(IntEnum):
    BLURRY = 0
    HAZY = 1
    JPEG = 2
    LOW_LIGHT = 3
    NOISY = 4
    RAINDROP = 5
    RAINY = 6
    SHADOWED = 7
    SNOWY = 8
    INPAINTING = 9

    @property
    def label(self) -> str:
        return DEGRADATION_LABELS[self.value]

    @classmethod
    def from_label(cls, label: str) -> "DegradationType":
        try:
            return cls(DEGRADATION_LABELS.index(label))
        except ValueError:
            raise ValueError(f"unknown degradation label '{label}'") from None

    @classmethod
    def coerce(cls, value: Union[int, str, "DegradationType"]) -> "DegradationType":
        if isinstance(value, str):
            return cls.from_label(value)
        try:
            return cls(int(value))
        except ValueError:
            raise ValueError(f"unknown degradation code {value!r}") from None


def degradation_text(d: Union[int, str, DegradationType]) -> str:
    """Classification prompt, e.g. 'a noisy photo'"""
    return f"a {DegradationType.coerce(d).label} photo"


def all_degradation_texts() -> Tuple[str, ...]:
    return tuple(degradation_text(d) for d in DegradationType)


def _uniform(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    return float(rng.uniform(bounds[0], bounds[1]))


def _randint(rng: np.random.Generator, bounds: Tuple[int, int]) -> int:
    return int(rng.integers(bounds[0], bounds[1] + 1))


def gaussian_kernel1d(kernel_size: int, sigma: float) -> np.ndarray:
    x = np.arange(kernel_size, dtype=np.float64) - kernel_size // 2
    kernel = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_blur(image: np.ndarray, kernel_size: int, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; kernel size 1 is the identity"""
    if kernel_size == 1:
        return image.copy()
    kernel = gaussian_kernel1d(kernel_size, sigma)
    out = ndimage.convolve1d(image.astype(np.float64), kernel, axis=0, mode="reflect")
    return ndimage.convolve1d(out, kernel, axis=1, mode="reflect")


def jpeg_compress(image: np.ndarray, quality: int) -> np.ndarray:
    """Encode/decode through the JPEG codec at the given quality"""
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    buffer = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buffer, format="JPEG", quality=int(quality))
    buffer.seek(0)
    with Image.open(buffer) as decoded:
        return np.asarray(decoded.convert("RGB"), dtype=np.float64) / 255.0


def _grid(shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    h, w = shape
    return np.meshgrid(np.arange(w, dtype=np.float64) + 0.5, np.arange(h, dtype=np.float64) + 0.5)


def _blurry(hq: np.ndarray, rng: np.random.Generator, ranges: DegradationRanges) -> Tuple[np.ndarray, Params]:
    kernel_size = int(rng.choice(ranges.blur_kernel_sizes))
    sigma = _uniform(rng, ranges.blur_sigma)
    return gaussian_blur(hq, kernel_size, sigma), {"kernel_size": kernel_size, "sigma": sigma}


def _hazy(hq: np.ndarray, rng: np.random.Generator, ranges: DegradationRanges) -> Tuple[np.ndarray, Params]:
    beta = _uniform(rng, ranges.haze_beta)
    airlight = _uniform(rng, ranges.haze_airlight)
    angle = _uniform(rng, (0.0, 2.0 * np.pi))
    xx, yy = _grid(hq.shape[:2])
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
    depth = 0.3 + ramp
    transmission = np.exp(-beta * depth)[..., None]
    lq = hq * transmission + airlight * (1.0 - transmission)
    return lq, {"beta": beta, "airlight": airlight, "angle": angle}


def _jpeg(hq: np.ndarray, rng: np.random.Generator, ranges: DegradationRanges) -> Tuple[np.ndarray, Params]:
    return jpeg_compress(hq, ranges.jpeg_quality), {"quality": int(ranges.jpeg_quality)}


def _low_light(hq: np.ndarray, rng: np.random.Generator, ranges: DegradationRanges) -> Tuple[np.ndarray, Params]:
    scale = _uniform(rng, ranges.lowlight_scale)
    gamma = _uniform(rng, ranges.lowlight_gamma)
    noise = rng.normal(0.0, ranges.lowlight_noise_sigma, size=hq.shape)
    lq = scale * np.power(hq.astype(np.float64), gamma) + noise
    return lq, {"scale": scale, "gamma": gamma, "noise_sigma": float(ranges.lowlight_noise_sigma)}


def _noisy(hq: np.ndarray, rng: np.random.Generator, ranges: DegradationRanges) -> Tuple[np.ndarray, Params]:
    sigma = float(ranges.noise_sigma)
    return hq + rng.normal(0.0, sigma, size=hq.shape), {"sigma": sigma}


def _raindrop(hq: np.ndarray, rng: np.random.Generator, ranges: DegradationRanges) -> Tuple[np.ndarray, Params]:
    h, w = hq.shape[:2]
    xx, yy = _grid((h, w))
    count = _randint(rng, ranges.raindrop_count)
    alpha = np.zeros((h, w))
    drops = []
    for _ in range(count):
        rx = _uniform(rng, ranges.raindrop_radius) * w
        ry = rx * _uniform(rng, (0.6, 1.0))
        cx, cy = _uniform(rng, (0.0, w)), _uniform(rng, (0.0, h))
        theta = _uniform(rng, (0.0, np.pi))
        dx, dy = xx - cx, yy - cy
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        inside = (u / rx) ** 2 + (v / ry) ** 2
        alpha = np.maximum(alpha, np.clip(1.5 - inside, 0.0, 1.0))
        drops.append([cx, cy, rx, ry, theta])
    alpha = ndimage.gaussian_filter(alpha, sigma=1.0)[..., None]
    background = np.stack([ndimage.gaussian_filter(hq[..., c].astype(np.float64), sigma=2.0) for c in range(3)], axis=-1)
    drop_look = np.clip(0.7 * background + 0.35, 0.0, 1.0)
    lq = (1.0 - alpha) * hq + alpha * drop_look
    return lq, {"count": count, "drops": drops}


def _streak_kernel(length: int, angle_deg: float) -> np.ndarray:
    size = length if length % 2 == 1 else length + 1
    kernel = np.zeros((size, size))
    center = size // 2
    theta = np.deg2rad(angle_deg)
    for t in np.linspace(-length / 2.0, length / 2.0, 4 * length):
        col = int(round(center + t * np.sin(theta)))
        row = int(round(center + t * np.cos(theta)))
        if 0 <= row < size and 0 <= col < size:
            kernel[row, col] = 1.0
    return kernel


def _rainy(hq: np.ndarray, rng: np.random.Generator, ranges: DegradationRanges) -> Tuple[np.ndarray, Params]:
    angle = _uniform(rng, ranges.rain_angle_deg)
    density = _uniform(rng, ranges.rain_density)
    length = _randint(rng, ranges.rain_length)
    intensity = _uniform(rng, ranges.rain_intensity)
    seeds = (rng.random(hq.shape[:2]) < density).astype(np.float64)
    streaks = ndimage.convolve(seeds, _streak_kernel(length, angle), mode="wrap")
    streaks = ndimage.gaussian_filter(np.clip(streaks, 0.0, 1.0), sigma=0.5) * intensity
    lq = hq + streaks[..., None]
    return lq, {"angle": angle, "density": density, "length": length, "intensity": intensity}


def _shadowed(hq: np.ndarray, rng: np.random.Generator, ranges: DegradationRanges) -> Tuple[np.ndarray, Params]:
    h, w = hq.shape[:2]
    factor = _uniform(rng, ranges.shadow_factor)
    n_vertices = _randint(rng, (5, 8))
    cx, cy = _uniform(rng, (0.25 * w, 0.75 * w)), _uniform(rng, (0.25 * h, 0.75 * h))
    rx, ry = _uniform(rng, (0.25, 0.5)) * w, _uniform(rng, (0.25, 0.5)) * h
    # vertices on an ellipse in angular order form a convex polygon
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=n_vertices))
    vertices = np.stack([cx + rx * np.cos(angles), cy + ry * np.sin(angles)], axis=1)
    xx, yy = _grid((h, w))
    points = np.stack([xx.ravel(), yy.ravel()], axis=1)
    mask = PolygonPath(vertices).contains_points(points).reshape(h, w)
    lq = np.where(mask[..., None], hq * factor, hq)
    return lq, {"factor": factor, "vertices": vertices.tolist()}


def _snowy(hq: np.ndarray, rng: np.random.Generator, ranges: DegradationRanges) -> Tuple[np.ndarray, Params]:
    h, w = hq.shape[:2]
    density = _uniform(rng, ranges.snow_density)
    count = max(1, int(round(density * h * w)))
    alpha = np.zeros((h, w))
    for _ in range(count):
        radius = _uniform(rng, ranges.snow_radius)
        cx, cy = _uniform(rng, (0.0, w)), _uniform(rng, (0.0, h))
        opacity = _uniform(rng, (0.6, 1.0))
        x0, x1 = max(int(cx - radius - 1), 0), min(int(cx + radius + 2), w)
        y0, y1 = max(int(cy - radius - 1), 0), min(int(cy + radius + 2), h)
        if x0 >= x1 or y0 >= y1:
            continue
        lx, ly = np.meshgrid(np.arange(x0, x1) + 0.5, np.arange(y0, y1) + 0.5)
        dist = np.sqrt((lx - cx) ** 2 + (ly - cy) ** 2)
        flake = np.clip(radius + 0.5 - dist, 0.0, 1.0) * opacity
        alpha[y0:y1, x0:x1] = np.maximum(alpha[y0:y1, x0:x1], flake)
    alpha = alpha[..., None]
    lq = hq * (1.0 - alpha) + alpha
    return lq, {"density": density, "count": count}


def _segment_distance(xx: np.ndarray, yy: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = q - p
    denom = max(float(d @ d), 1e-12)
    t = np.clip(((xx - p[0]) * d[0] + (yy - p[1]) * d[1]) / denom, 0.0, 1.0)
    return np.hypot(xx - (p[0] + t * d[0]), yy - (p[1] + t * d[1]))


def _inpainting(hq: np.ndarray, rng: np.random.Generator, ranges: DegradationRanges) -> Tuple[np.ndarray, Params]:
    h, w = hq.shape[:2]
    xx, yy = _grid((h, w))
    strokes = _randint(rng, ranges.inpaint_strokes)
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(strokes):
        width = _randint(rng, ranges.inpaint_width)
        points = rng.uniform(0.0, 1.0, size=(_randint(rng, (2, 4)), 2)) * np.array([w, h])
        for p, q in zip(points[:-1], points[1:]):
            mask |= _segment_distance(xx, yy, p, q) <= width / 2.0
    lq = np.where(mask[..., None], 0.0, hq)
    return lq, {"strokes": strokes, "mask_shape": [h, w], "mask_bits": encode_mask(mask)}


def encode_mask(mask: np.ndarray) -> str:
    return np.packbits(mask.astype(bool).ravel()).tobytes().hex()


def decode_mask(params: Params) -> np.ndarray:
    """Rebuild the boolean inpainting mask stored in the params record"""
    h, w = params["mask_shape"]
    bits = np.unpackbits(np.frombuffer(bytes.fromhex(params["mask_bits"]), dtype=np.uint8))
    return bits[: h * w].reshape(h, w).astype(bool)


OPERATORS: Dict[DegradationType, Callable[..., Tuple[np.ndarray, Params]]] = {
    DegradationType.BLURRY: _blurry,
    DegradationType.HAZY: _hazy,
    DegradationType.JPEG: _jpeg,
    DegradationType.LOW_LIGHT: _low_light,
    DegradationType.NOISY: _noisy,
    DegradationType.RAINDROP: _raindrop,
    DegradationType.RAINY: _rainy,
    DegradationType.SHADOWED: _shadowed,
    DegradationType.SNOWY: _snowy,
    DegradationType.INPAINTING: _inpainting,
}


def apply_degradation(hq: np.ndarray, d: Union[int, str, DegradationType],
                      rng: np.random.Generator,
                      ranges: Optional[DegradationRanges] = None) -> Tuple[np.ndarray, Params]:
    """
    Corrupt an HQ image with one degradation

    Args:
        hq: float image [H,W,3] in [0,1]
        d: degradation type, code or label
        rng: seeded numpy generator
        ranges: parameter ranges, defaults to DegradationRanges()

    Returns:
        (lq float32 image in [0,1] of the same shape, sampled parameter record)
    """
    degradation = DegradationType.coerce(d)
    if hq.ndim != 3 or hq.shape[-1] != 3:
        raise ValueError(f"hq must be [H,W,3], got {hq.shape}")
    if hq.min() < 0.0 or hq.max() > 1.0:
        raise ValueError("hq values must lie in [0,1]")

    lq, params = OPERATORS[degradation](hq, rng, ranges or DegradationRanges())
    lq = np.clip(lq, 0.0, 1.0).astype(np.float32)
    params = {"degradation": degradation.label, **params}
    return lq, params
