import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

import pytest
import torch

from restoration.attention import ContentCrossAttention


def test_single_token_attention_rows_are_one():
    torch.manual_seed(0)
    block = ContentCrossAttention(8, 16, heads=2)
    _, attention = block(torch.randn(3, 8, 4, 4), torch.randn(3, 16), return_attention=True)
    assert attention.shape == (3, 2, 16, 1)
    assert torch.allclose(attention, torch.ones_like(attention))


def test_identity_at_init():
    torch.manual_seed(1)
    block = ContentCrossAttention(8, 16, heads=2)
    features = torch.randn(2, 8, 4, 4)
    assert torch.equal(block(features, torch.randn(2, 16)), features)


def test_no_leakage_between_samples():
    torch.manual_seed(2)
    block = ContentCrossAttention(8, 16, heads=2)
    with torch.no_grad():
        block.to_out.weight.normal_()
    features = torch.randn(2, 8, 4, 4)
    context = torch.randn(2, 16)
    out = block(features, context)
    changed = context.clone()
    changed[1] = torch.randn(16)
    out_changed = block(features, changed)
    assert torch.allclose(out[0], out_changed[0], atol=1e-6)
    assert not torch.allclose(out[1], out_changed[1])


def test_multi_token_context():
    torch.manual_seed(3)
    block = ContentCrossAttention(8, 16, heads=4)
    _, attention = block(torch.randn(1, 8, 2, 2), torch.randn(1, 5, 16), return_attention=True)
    assert attention.shape == (1, 4, 4, 5)
    assert torch.allclose(attention.sum(dim=-1), torch.ones(1, 4, 4), atol=1e-6)


def test_heads_must_divide_channels():
    with pytest.raises(ValueError):
        ContentCrossAttention(10, 16, heads=4)
