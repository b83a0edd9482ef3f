"""
PNG image storage (8-bit RGB)
"""
import os
from typing import Union

import numpy as np
from PIL import Image

PathLike = Union[str, os.PathLike]


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path: PathLike, image: np.ndarray) -> None:
    """Write a float [H,W,3] image in [0,1] as 8-bit RGB PNG"""
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")


def load_png(path: PathLike) -> np.ndarray:
    """Read an RGB image as float32 [H,W,3] in [0,1]"""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
