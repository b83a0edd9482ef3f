import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

import pytest
import torch
import torch.nn.functional as F

from models.pretrain import load_clip, retrieval_accuracy, save_clip
from data.datasets import CleanPairs


def test_embeddings_are_unit_norm(tiny_config, tiny_clip):
    size = tiny_config.dataset.size
    images = torch.rand(5, 3, size, size, generator=torch.Generator().manual_seed(0))
    content, activations = tiny_clip.encode_image(images)
    assert content.shape == (5, tiny_config.clip.embed_dim)
    assert torch.allclose(content.norm(dim=-1), torch.ones(5), atol=1e-6)
    assert len(activations) == tiny_config.clip.depth
    text = tiny_clip.encode_texts(["a noisy photo", "", "a photo of a red circle on a plain background"])
    assert torch.allclose(text.norm(dim=-1), torch.ones(3), atol=1e-6)


def test_zero_controls_change_nothing(tiny_config, tiny_clip):
    size = tiny_config.dataset.size
    images = torch.rand(2, 3, size, size, generator=torch.Generator().manual_seed(1))
    plain, activations = tiny_clip.encode_image(images)
    controls = [torch.zeros_like(a) for a in activations]
    controlled, _ = tiny_clip.encode_image(images, controls)
    assert torch.equal(plain, controlled)


@pytest.mark.parametrize("seed", range(3))
def test_tiny_perturbation_keeps_direction(tiny_config, tiny_clip, seed):
    size = tiny_config.dataset.size
    generator = torch.Generator().manual_seed(seed)
    images = torch.rand(4, 3, size, size, generator=generator)
    nudged = images + 1e-6 * torch.randn(images.shape, generator=generator)
    with torch.no_grad():
        a, _ = tiny_clip.encode_image(images)
        b, _ = tiny_clip.encode_image(nudged)
    assert torch.all(F.cosine_similarity(a, b, dim=-1) > 0.999)


def test_wrong_input_shape(tiny_clip):
    with pytest.raises(ValueError):
        tiny_clip.encode_image(torch.zeros(1, 3, 16, 16))
    with pytest.raises(ValueError):
        tiny_clip.encode_image(torch.zeros(1, 3, 32, 32), controls=[])


def test_encoder_state_excludes_temperature(tiny_clip):
    state = tiny_clip.encoder_state()
    assert "log_tau" not in state
    assert any(k.startswith("visual.") for k in state)
    assert any(k.startswith("text.") for k in state)


def test_tau_is_clamped(tiny_clip):
    with torch.no_grad():
        tiny_clip.log_tau.fill_(-20.0)
    assert tiny_clip.tau.item() == pytest.approx(tiny_clip.config.tau_min)


def test_checkpoint_round_trip(tiny_config, tiny_clip, tmp_path):
    save_clip(tiny_clip, tmp_path / "clip", tiny_config)
    loaded, config, manifest = load_clip(tmp_path / "clip")
    assert manifest.component == "clip"
    assert config == tiny_config
    for name, tensor in tiny_clip.state_dict().items():
        assert torch.equal(tensor, loaded.state_dict()[name])


def test_retrieval_accuracy_bounds(tiny_config, tiny_clip):
    pairs = CleanPairs.generate(0, 8, tiny_config.dataset.size)
    assert 0.0 <= retrieval_accuracy(tiny_clip, pairs) <= 1.0
