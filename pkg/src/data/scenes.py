"""
Procedural clean scenes with known captions

Each scene is a textured background with one dominant geometric object and up
to two small distractors. The descriptor names the dominant object only, so the
caption describes clean content and nothing else.
"""
from dataclasses import dataclass, asdict
from typing import Dict, Tuple, Union

import numpy as np

from utils.config import SCENE_SIZES
from utils.errors import ConfigError

OBJECT_COLORS: Dict[str, Tuple[float, float, float]] = {
    "red": (0.86, 0.12, 0.12),
    "green": (0.15, 0.70, 0.20),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.92, 0.85, 0.15),
    "purple": (0.58, 0.20, 0.70),
    "orange": (0.95, 0.55, 0.10),
}
SHAPES: Tuple[str, ...] = ("circle", "square", "triangle", "cross")
TEXTURES: Tuple[str, ...] = ("plain", "striped", "checkered", "dotted")
BACKGROUND_TONES: Tuple[Tuple[float, float, float], ...] = (
    (0.55, 0.55, 0.55),
    (0.70, 0.66, 0.58),
    (0.45, 0.52, 0.60),
    (0.62, 0.68, 0.60),
)
CAPTION_TEMPLATE = "a photo of a {color} {shape} on a {texture} background"


@dataclass(frozen=True)
class SceneDescriptor:
    """Dominant object shape/color and background texture"""
    shape: str
    color: str
    texture: str

    def to_dict(self) -> Dict[str, str]:
        return asdict(self)


@dataclass
class CleanScene:
    image: np.ndarray
    descriptor: SceneDescriptor
    seed: int


def _shape_mask(shape: str, xx: np.ndarray, yy: np.ndarray,
                cx: float, cy: float, r: float) -> np.ndarray:
    dx, dy = xx - cx, yy - cy
    if shape == "circle":
        return dx * dx + dy * dy <= r * r
    if shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= 0.85 * r
    if shape == "triangle":
        # upward equilateral triangle inscribed in radius r
        h = 0.866 * r
        inside_base = dy <= 0.5 * r
        left = (dy + r) * h >= -dx * 1.5 * r
        right = (dy + r) * h >= dx * 1.5 * r
        return inside_base & left & right
    if shape == "cross":
        arm = 0.3 * r
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= r))
    raise ValueError(f"unknown shape '{shape}'")


def _background(texture: str, size: int, rng: np.random.Generator,
                xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
    tone = np.asarray(BACKGROUND_TONES[rng.integers(len(BACKGROUND_TONES))])
    contrast = rng.uniform(0.15, 0.25)
    period = size / 8.0 * rng.uniform(0.8, 1.25)
    if texture == "plain":
        pattern = np.zeros_like(xx)
    elif texture == "striped":
        coord = xx if rng.integers(2) == 0 else yy
        pattern = np.where((coord // (period / 2.0)) % 2 == 0, 1.0, -1.0)
    elif texture == "checkered":
        pattern = np.where(((xx // period) + (yy // period)) % 2 == 0, 1.0, -1.0)
    elif texture == "dotted":
        fx = (xx % period) - period / 2.0
        fy = (yy % period) - period / 2.0
        pattern = np.where(fx * fx + fy * fy <= (period * 0.22) ** 2, 1.0, -1.0)
    else:
        raise ValueError(f"unknown texture '{texture}'")
    return tone[None, None, :] * (1.0 + contrast * pattern[..., None] * 0.5)


def generate_scene(seed: int, size: int) -> CleanScene:
    """
    Deterministically render a clean scene

    Args:
        seed: 64-bit scene seed
        size: side length, one of 32/64/128/256

    Returns:
        CleanScene with float32 image in [0,1] of shape [size, size, 3]
    """
    if size not in SCENE_SIZES:
        raise ConfigError(f"scene size must be one of {SCENE_SIZES}, got {size}", key="size")

    rng = np.random.default_rng(int(seed))
    shape = SHAPES[rng.integers(len(SHAPES))]
    color = list(OBJECT_COLORS)[rng.integers(len(OBJECT_COLORS))]
    texture = TEXTURES[rng.integers(len(TEXTURES))]

    coords = np.arange(size, dtype=np.float64) + 0.5
    xx, yy = np.meshgrid(coords, coords)
    image = _background(texture, size, rng, xx, yy)

    for _ in range(int(rng.integers(0, 3))):
        d_shape = SHAPES[rng.integers(len(SHAPES))]
        d_color = np.asarray(list(OBJECT_COLORS.values())[rng.integers(len(OBJECT_COLORS))])
        r = size * rng.uniform(0.06, 0.11)
        cx, cy = rng.uniform(r, size - r, size=2)
        mask = _shape_mask(d_shape, xx, yy, cx, cy, r)
        image[mask] = d_color * rng.uniform(0.85, 1.0)

    r = size * rng.uniform(0.22, 0.30)
    cx, cy = rng.uniform(0.4 * size, 0.6 * size, size=2)
    mask = _shape_mask(shape, xx, yy, cx, cy, r)
    image[mask] = np.asarray(OBJECT_COLORS[color]) * rng.uniform(0.85, 1.0)

    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return CleanScene(image=image, descriptor=SceneDescriptor(shape, color, texture), seed=int(seed))


def caption_for(scene: Union[CleanScene, SceneDescriptor]) -> str:
    """Template caption of the dominant clean content"""
    descriptor = scene.descriptor if isinstance(scene, CleanScene) else scene
    return CAPTION_TEMPLATE.format(color=descriptor.color, shape=descriptor.shape,
                                   texture=descriptor.texture)


def caption_vocabulary() -> Tuple[str, ...]:
    """All words a caption can contain"""
    words = CAPTION_TEMPLATE.replace("{color}", "").replace("{shape}", "").replace("{texture}", "").split()
    return tuple(dict.fromkeys(words + list(OBJECT_COLORS) + list(SHAPES) + list(TEXTURES)))
