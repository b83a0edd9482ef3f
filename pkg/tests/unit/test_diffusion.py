import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

import pytest
import torch

from restoration.diffusion import ConditionedBatch, DiffusionSchedule, diffusion_train_step, q_sample, sample
from restoration.restorer import Restorer
from restoration.unet import UNetConfig


def _tiny_restorer(T=5, dtype=torch.float32):
    torch.manual_seed(0)
    config = UNetConfig(scales=2, base_width=8, attention_heads=2, prompt_size=4, prompt_dim=8,
                        embed_dim=16, mode="none", time_conditioned=True)
    return Restorer(config, "diffusion", DiffusionSchedule(T)).to(dtype).eval()


def test_schedule_shapes_and_bounds():
    schedule = DiffusionSchedule(200)
    assert schedule.betas.shape == (200,)
    assert schedule.betas[0].item() == pytest.approx(1e-4)
    assert schedule.betas[-1].item() == pytest.approx(0.02)
    assert torch.all(schedule.alpha_bars[1:] < schedule.alpha_bars[:-1])
    with pytest.raises(ValueError):
        DiffusionSchedule(0)


def test_timesteps_out_of_range():
    schedule = DiffusionSchedule(10)
    x = torch.zeros(1, 3, 4, 4)
    with pytest.raises(ValueError):
        q_sample(schedule, x, torch.tensor([0]), x)
    with pytest.raises(ValueError):
        q_sample(schedule, x, torch.tensor([11]), x)


def test_first_step_barely_noises():
    schedule = DiffusionSchedule(200)
    generator = torch.Generator().manual_seed(0)
    hq = torch.rand(4, 3, 8, 8, generator=generator) * 2 - 1
    noise = torch.randn(hq.shape, generator=generator)
    x_t = q_sample(schedule, hq, torch.ones(4, dtype=torch.long), noise)
    assert (x_t - hq).abs().mean().item() < 0.02


def test_noising_variance():
    schedule = DiffusionSchedule(200)
    generator = torch.Generator().manual_seed(1)
    n = 100_000
    hq = (torch.rand(n, 1, generator=generator, dtype=torch.float64) * 2 - 1)
    noise = torch.randn(n, 1, generator=generator, dtype=torch.float64)
    t = torch.full((n,), 100, dtype=torch.long)
    x_t = q_sample(schedule, hq, t, noise)
    alpha_bar = schedule.alpha_bars[99].item()
    expected = alpha_bar * hq.var().item() + (1 - alpha_bar)
    assert abs(x_t.var().item() - expected) / expected < 0.02


def test_oracle_predictor_has_zero_loss():
    schedule = DiffusionSchedule(50)
    generator = torch.Generator().manual_seed(2)
    hq = torch.rand(3, 3, 8, 8, generator=generator, dtype=torch.float64) * 2 - 1
    batch = ConditionedBatch(lq=hq.clone(), hq=hq)

    def oracle(x_t, mu, t, e_c, e_d):
        alpha_bar = schedule.gather(schedule.alpha_bars, t, x_t)
        return (x_t - alpha_bar.sqrt() * hq) / (1 - alpha_bar).sqrt()

    loss = diffusion_train_step(oracle, batch, schedule, generator)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)
    assert batch.t is not None and batch.noise is not None


def test_batch_alignment_checked():
    x = torch.zeros(2, 3, 4, 4)
    with pytest.raises(ValueError):
        ConditionedBatch(lq=x, hq=torch.zeros(3, 3, 4, 4))
    with pytest.raises(ValueError):
        ConditionedBatch(lq=x, hq=x, e_d=torch.zeros(3, 16))


def test_seeded_sampling_is_bit_identical():
    restorer = _tiny_restorer()
    mu = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(3)) * 2 - 1
    a = sample(restorer.eps, mu, restorer.schedule, generator=torch.Generator().manual_seed(7))
    b = sample(restorer.eps, mu, restorer.schedule, generator=torch.Generator().manual_seed(7))
    c = sample(restorer.eps, mu, restorer.schedule, generator=torch.Generator().manual_seed(8))
    assert torch.equal(a, b)
    assert not torch.equal(a, c)
    restored = restorer.restore((mu + 1) / 2, generator=torch.Generator().manual_seed(7))
    assert restored.min() >= 0.0 and restored.max() <= 1.0


def test_train_step_gradient_matches_finite_differences():
    restorer = _tiny_restorer(dtype=torch.float64)
    generator = torch.Generator().manual_seed(4)
    hq = torch.rand(2, 3, 8, 8, generator=generator, dtype=torch.float64) * 2 - 1
    lq = torch.rand(2, 3, 8, 8, generator=generator, dtype=torch.float64) * 2 - 1
    t = torch.tensor([2, 4])
    noise = torch.randn(hq.shape, generator=generator, dtype=torch.float64)

    def loss_fn():
        batch = ConditionedBatch(lq=lq, hq=hq, t=t, noise=noise)
        return diffusion_train_step(restorer.eps, batch, restorer.schedule)

    restorer.zero_grad()
    loss_fn().backward()
    for param in (restorer.unet.out_conv.weight, restorer.unet.in_conv.bias):
        flat_grad = param.grad.flatten()
        for flat in torch.argsort(flat_grad.abs(), descending=True)[:3].tolist():
            analytic = flat_grad[flat].item()
            original = param.data.view(-1)[flat].item()
            with torch.no_grad():
                param.data.view(-1)[flat] = original + 1e-6
                plus = loss_fn().item()
                param.data.view(-1)[flat] = original - 1e-6
                minus = loss_fn().item()
                param.data.view(-1)[flat] = original
            numeric = (plus - minus) / 2e-6
            assert abs(analytic - numeric) <= 1e-3 * max(abs(analytic), abs(numeric)) + 1e-9
