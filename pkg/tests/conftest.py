import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

import pytest  # noqa: E402
import torch  # noqa: E402

from utils.config import load_config  # noqa: E402

CONFIG_DIR = os.path.join(os.path.dirname(__file__), '..', 'config')


@pytest.fixture
def tiny_config():
    """Smallest configuration that still touches every stage"""
    return load_config(os.path.join(CONFIG_DIR, 'tiny_run.json'))


@pytest.fixture
def tiny_clip(tiny_config):
    from models.pretrain import build_clip

    torch.manual_seed(0)
    return build_clip(tiny_config).eval()


@pytest.fixture
def tiny_dataset(tiny_config, tmp_path):
    """Generated train/test splits of the tiny config; returns the dataset root"""
    from data.dataset_builder import build_all

    root = tmp_path / 'data'
    build_all(tiny_config.dataset, root, seed=tiny_config.seed)
    return root
