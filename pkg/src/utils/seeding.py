"""
Seed control and device resolution
"""
import os
import random
import logging

import numpy as np
import torch

logger = logging.getLogger(__name__)


def set_seed(seed: int, deterministic: bool = True) -> None:
    """Seed python, numpy and torch; optionally force deterministic kernels"""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if torch.cuda.is_available():
        torch.cuda.manual_seed_all(seed)
    if deterministic:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.use_deterministic_algorithms(True, warn_only=True)
        if hasattr(torch.backends, "cudnn"):
            torch.backends.cudnn.benchmark = False


def make_generator(seed: int) -> torch.Generator:
    """CPU generator; random draws are made on CPU then moved to the device"""
    generator = torch.Generator(device="cpu")
    generator.manual_seed(int(seed))
    return generator


def resolve_device(name: str = "cpu") -> torch.device:
    if name.startswith("cuda") and not torch.cuda.is_available():
        logger.warning(f"Device {name} requested but CUDA is unavailable, using cpu")
        return torch.device("cpu")
    return torch.device(name)
