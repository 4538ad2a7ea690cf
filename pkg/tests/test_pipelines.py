import numpy as np
import pytest
import torch

from ldmshield.errors import DomainError, StateError
from ldmshield.models import Condition, ToyLDM, class_condition, null_condition
from ldmshield.pipelines import (denoise_step, generate_samples, run_inpainting,
                                 run_variation, time_grid)
from ldmshield.schedule import build_schedule, diffuse_to, forward_diffuse

from stubs import NoiseEchoDenoiser, stub_ldm


def test_time_grid_even_spacing():
    grid = time_grid(700, 100)
    assert grid[0] == 700 and grid[-1] == 0
    assert len(grid) == 101
    assert all(a > b for a, b in zip(grid, grid[1:]))


def test_time_grid_dedupes_when_oversampled():
    grid = time_grid(3, 10)
    assert grid == [3, 2, 1, 0]


def test_guidance_identities():
    torch.manual_seed(0)
    model = ToyLDM()
    z = torch.randn(2, 4, 8, 8)
    cond = class_condition(2)
    with torch.no_grad():
        eps_c = model.predict_noise(z, 10, cond)
        eps_n = model.predict_noise(z, 10, null_condition())
        one = denoise_step(z, 10, cond, 1.0, model)
        ref_one = denoise_step(z, 10, cond, 1.0, model)  # determinism
        zero = denoise_step(z, 10, cond, 0.0, model)
        null_run = denoise_step(z, 10, null_condition(), 1.0, model)
    assert torch.equal(one, ref_one)
    assert torch.equal(zero, null_run)
    assert not torch.equal(eps_c, eps_n)


def test_denoise_step_recovers_z0_with_oracle_denoiser():
    denoiser = NoiseEchoDenoiser()
    model = stub_ldm(denoiser=denoiser, T=10)
    z0 = torch.randn(1, 4, 8, 8)
    noise = torch.randn_like(z0)
    denoiser.noise = noise
    for t in (1, 7):
        sample = forward_diffuse(z0, t, noise, model.schedule)
        rec = denoise_step(sample.z_t, t, null_condition(), 1.0, model, t_prev=0)
        torch.testing.assert_close(rec, z0, atol=1e-5, rtol=0)


def test_denoise_step_domain_checks():
    model = stub_ldm()
    z = torch.randn(1, 4, 8, 8)
    with pytest.raises(DomainError):
        denoise_step(z, 0, null_condition(), 1.0, model)
    with pytest.raises(DomainError):
        denoise_step(z, 5, null_condition(), 1.0, model, t_prev=6)


def test_variation_requires_trained_model():
    model = ToyLDM()  # trained defaults to False
    with pytest.raises(StateError):
        run_variation(torch.rand(3, 32, 32), null_condition(), 0.7, 10, 1.0, model)


def test_variation_zero_start_is_codec_round_trip():
    model = stub_ldm(T=1000)
    img = torch.rand(3, 32, 32)
    out = run_variation(img, null_condition(), strength=0.0004, steps=10,
                        guidance=1.0, model=model)
    with torch.no_grad():
        ref = model.decode(model.encode(img[None]))[0].clamp(0, 1)
    assert torch.equal(out, ref)


def test_variation_deterministic_per_seed(trained_model):
    img = torch.rand(3, 32, 32)
    a = run_variation(img, class_condition(0), 0.7, 20, 7.5, trained_model, seed=9)
    b = run_variation(img, class_condition(0), 0.7, 20, 7.5, trained_model, seed=9)
    c = run_variation(img, class_condition(0), 0.7, 20, 7.5, trained_model, seed=10)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)
    assert a.min() >= 0 and a.max() <= 1


def test_inpainting_requires_mask(trained_model):
    with pytest.raises(DomainError):
        run_inpainting(torch.rand(3, 32, 32), null_condition(), 10, 1.0, trained_model)


def test_inpainting_zero_mask_is_codec_round_trip(trained_model):
    img = torch.rand(3, 32, 32)
    cond = Condition(kind="null", mask=torch.zeros(32, 32))
    out = run_inpainting(img, cond, 10, 1.0, trained_model, seed=3)
    with torch.no_grad():
        ref = trained_model.decode(trained_model.encode(img[None]))[0].clamp(0, 1)
    assert torch.equal(out, ref)


def test_inpainting_full_mask_blends_nothing(trained_model):
    """All-ones mask must equal the same reverse process with no blending."""
    img = torch.rand(3, 32, 32)
    cond = Condition(kind="null", mask=torch.ones(32, 32))
    out = run_inpainting(img, cond, 10, 1.0, trained_model, seed=4)

    model = trained_model
    with torch.no_grad():
        z0 = model.encode(img[None])
        gen = torch.Generator().manual_seed(4)
        z = torch.randn(z0.shape, generator=gen)
        grid = time_grid(model.T, 10)
        _ = torch.randn(z0.shape, generator=gen)  # blend draw consumed by pipeline
        for t_hi, t_lo in zip(grid[:-1], grid[1:]):
            z = denoise_step(z, t_hi, cond, 1.0, model, t_prev=t_lo)
            _ = torch.randn(z0.shape, generator=gen)
        ref = model.decode(z).clamp(0, 1)[0]
    assert torch.equal(out, ref)


def test_inpainting_half_mask_keeps_unmasked_half(trained_model):
    img = torch.rand(3, 32, 32)
    mask = torch.zeros(32, 32)
    mask[:, 16:] = 1.0
    half = run_inpainting(img, Condition(kind="null", mask=mask), 10, 1.0,
                          trained_model, seed=5)
    keep = run_inpainting(img, Condition(kind="null", mask=torch.zeros(32, 32)),
                          10, 1.0, trained_model, seed=5)
    assert torch.equal(half[:, :, :16], keep[:, :, :16])
    assert not torch.equal(half[:, :, 16:], keep[:, :, 16:])


def test_generate_samples_contracts(trained_model):
    empty = generate_samples(trained_model, null_condition(), 0)
    assert empty.shape == (0, 3, 32, 32)
    a = generate_samples(trained_model, class_condition(1), 2, steps=10, seed=1)
    b = generate_samples(trained_model, class_condition(1), 2, steps=10, seed=1)
    assert torch.equal(a, b)
    assert a.shape == (2, 3, 32, 32)
