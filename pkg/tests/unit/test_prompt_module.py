import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

import pytest
import torch
import torch.nn.functional as F

from restoration.prompt_module import FiLMPrompt, MLPPrompt, PromptBank, build_prompt_module, prompt_forward


def _embeddings(n, dim=16, seed=0):
    return F.normalize(torch.randn(n, dim, generator=torch.Generator().manual_seed(seed)), dim=-1)


def test_weights_sum_to_one():
    torch.manual_seed(0)
    bank = PromptBank(16, 8, num_prompts=5, prompt_dim=12)
    weights = bank.weights(_embeddings(7))
    assert weights.shape == (7, 5)
    assert torch.allclose(weights.sum(dim=1), torch.ones(7), atol=1e-6)


def test_aligned_key_selects_one_prompt():
    bank = PromptBank(16, 8, num_prompts=4, prompt_dim=12)
    with torch.no_grad():
        bank.keys.copy_(torch.eye(4, 16) * 50.0)
    weights = bank.weights(torch.eye(4, 16))
    assert torch.allclose(weights, torch.eye(4), atol=1e-6)
    assert torch.allclose(bank.pooled(torch.eye(4, 16)), bank.prompts, atol=1e-6)


def test_pooling_is_permutation_invariant():
    torch.manual_seed(1)
    bank = PromptBank(16, 8, num_prompts=6, prompt_dim=12)
    e_d = _embeddings(3, seed=2)
    before = bank.pooled(e_d)
    perm = torch.randperm(6)
    with torch.no_grad():
        bank.prompts.copy_(bank.prompts[perm])
        bank.keys.copy_(bank.keys[perm])
    assert torch.allclose(bank.pooled(e_d), before, atol=1e-6)


@pytest.mark.parametrize("prompt_type", ["bank", "film", "mlp"])
def test_every_prompt_type_is_identity_at_init(prompt_type):
    module = build_prompt_module(prompt_type, 16, 8, num_prompts=4, prompt_dim=12)
    features = torch.randn(2, 8, 4, 4)
    assert torch.equal(module(features, _embeddings(2)), features)
    tokens = torch.randn(2, 5, 8)
    assert torch.equal(module(tokens, _embeddings(2)), tokens)


def test_trained_bank_conditions_per_sample():
    torch.manual_seed(3)
    bank = PromptBank(16, 8, num_prompts=4, prompt_dim=12)
    with torch.no_grad():
        bank.project.weight.normal_()
    features = torch.zeros(2, 8, 3, 3)
    out = bank(features, _embeddings(2, seed=4))
    # constant per channel within each sample
    assert torch.allclose(out, out[:, :, :1, :1].expand_as(out))
    assert not torch.allclose(out[0], out[1])


def test_unknown_type_and_passthrough():
    with pytest.raises(ValueError):
        build_prompt_module("lora", 16, 8)
    features = torch.randn(1, 8, 2, 2)
    assert prompt_forward(features, _embeddings(1), None) is features
    assert isinstance(build_prompt_module("film", 16, 8), FiLMPrompt)
    assert isinstance(build_prompt_module("mlp", 16, 8), MLPPrompt)
