import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

import pytest
import torch
import torch.nn.functional as F

from restoration.restorer import build_restorer, load_restorer, save_restorer
from restoration.unet import MID_BLOCKS, ConditionalUNet, ResBlock, UNetConfig
from utils.config import config_to_dict, validate_config


def _unet(mode="both", seed=0, **kwargs):
    torch.manual_seed(seed)
    config = UNetConfig(scales=2, base_width=8, attention_heads=2, prompt_size=4, prompt_dim=8,
                        embed_dim=16, mode=mode, **kwargs)
    return ConditionalUNet(config).eval()


def _inputs(n=2, size=16, seed=0):
    generator = torch.Generator().manual_seed(seed)
    x = torch.rand(n, 3, size, size, generator=generator)
    e = F.normalize(torch.randn(n, 16, generator=generator), dim=-1)
    return x, e


def test_output_shape():
    x, e = _inputs()
    assert _unet()(x, x, None, e, e).shape == (2, 3, 16, 16)


@pytest.mark.parametrize("mode", ["degradation", "content", "both"])
def test_conditioning_is_transparent_at_init(mode):
    x, e = _inputs(seed=1)
    plain = _unet("none")
    conditioned = _unet(mode)
    with torch.no_grad():
        assert torch.equal(plain(x, x), conditioned(x, x, None, e, e))


def test_injectors_by_mode():
    assert _unet("none").injector_parameters() == 0
    both = _unet("both")
    assert set(both.prompts) == {"enc0", "enc1", "mid0", "mid1", "dec1", "dec0"}
    # cross-attention defaults to the lowest resolution only
    assert set(both.attentions) == {"enc1", "mid0", "mid1", "dec1"}
    assert _unet("none").backbone_parameters() == both.backbone_parameters()


def test_every_resblock_gets_a_prompt_module():
    net = _unet("degradation")
    resblocks = [m for m in net.modules() if isinstance(m, ResBlock)]
    assert len(net.prompts) == len(resblocks)
    assert len(net.mid_blocks) == MID_BLOCKS

    x, e = _inputs(seed=3)
    with torch.no_grad():
        baseline = net(x, x, None, e, e)
        for p in net.prompts["mid1"].parameters():
            p.normal_()
        assert not torch.allclose(net(x, x, None, e, e), baseline)


def test_injectors_respond_once_trained():
    x, e = _inputs(seed=2)
    net = _unet("both")
    with torch.no_grad():
        baseline = net(x, x, None, e, e)
        for block in net.attentions.values():
            block.to_out.weight.normal_()
        assert not torch.allclose(net(x, x, None, e, e), baseline)


def test_batch_independence():
    x, e = _inputs(n=8, seed=3)
    net = _unet("both")
    with torch.no_grad():
        batched = net(x, x, None, e, e)
        single = net(x[:1], x[:1], None, e[:1], e[:1])
    assert torch.allclose(batched[:1], single, atol=1e-5)


def test_input_validation():
    x, e = _inputs()
    net = _unet("both")
    with pytest.raises(ValueError):
        net(torch.zeros(2, 4, 16, 16), x, None, e, e)
    with pytest.raises(ValueError):
        net(torch.zeros(2, 3, 15, 15), torch.zeros(2, 3, 15, 15), None, e, e)
    with pytest.raises(ValueError):
        net(x, x, None, e, None)
    with pytest.raises(ValueError):
        net(x, x, None, e[:, :8], e)
    timed = _unet("none", time_conditioned=True)
    with pytest.raises(ValueError):
        timed(x, x)


def test_build_restorer_shares_backbone(tiny_config):
    data = config_to_dict(tiny_config)
    data["restorer"]["mode"] = "none"
    plain = build_restorer(validate_config(data))
    conditioned = build_restorer(tiny_config)
    plain_state = plain.state_dict()
    for name, tensor in conditioned.state_dict().items():
        if name.startswith("unet.prompts") or name.startswith("unet.attentions"):
            continue
        assert torch.equal(tensor, plain_state[name])


def test_restorer_checkpoint_round_trip(tiny_config, tmp_path):
    restorer = build_restorer(tiny_config).eval()
    save_restorer(restorer, tmp_path / "restorer", tiny_config, {"embedding_source": "daclip"})
    loaded, config, manifest = load_restorer(tmp_path / "restorer")
    assert config == tiny_config
    assert manifest.metadata["backend"] == "mse"
    size = tiny_config.dataset.size
    lq = torch.rand(2, 3, size, size, generator=torch.Generator().manual_seed(0))
    e = F.normalize(torch.randn(2, tiny_config.clip.embed_dim), dim=-1)
    assert torch.equal(restorer.restore(lq, e, e), loaded.restore(lq, e, e))
