import numpy as np
import pytest
import torch

from ldmshield.attacks import (AttackBudget, FusedLossConfig, TargetSpec,
                               TimeStepRange, advdm_attack, chain_attack,
                               encoder_attack, full_range,
                               load_adversarial_example, mist_attack,
                               pgd_ascend, pgd_delta_step,
                               save_adversarial_example, sds_attack)
from ldmshield.data import periodic_target
from ldmshield.errors import ConfigurationError, DomainError, ResourceError
from ldmshield.models import ToyLDM, null_condition

from stubs import (FlatLinearCodec, IdentityCodec, LinearDenoiser,
                   NoiseEchoDenoiser, stub_ldm)

EPS = 8.0 / 255.0
STEP = 1.0 / 255.0


def seeded_image(seed, batch=None, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    shape = (3, 32, 32) if batch is None else (batch, 3, 32, 32)
    return torch.rand(shape, generator=gen, dtype=dtype)


def small_budget(iterations=3):
    return AttackBudget(iterations=iterations)


# ---------------------------------------------------------------- pgd core

def test_pgd_sign_step_from_origin():
    original = torch.full((1, 3, 4, 4), 0.5)
    out = pgd_ascend(original.clone(), torch.ones_like(original), original,
                     AttackBudget())
    torch.testing.assert_close(out - original, torch.full_like(original, STEP))


def test_pgd_ball_projection():
    original = torch.full((1, 3, 2, 2), 0.5)
    current = original + (9.5 / 255.0)  # would reach 10.5/255 after one step
    out = pgd_ascend(current, torch.ones_like(original), original, AttackBudget())
    assert float((out - original).max()) <= EPS


def test_pgd_box_clip_at_one():
    original = torch.ones(1, 3, 2, 2)
    out = pgd_ascend(original.clone(), torch.ones_like(original), original,
                     AttackBudget())
    assert torch.equal(out, original)


def test_pgd_invariants_exact_randomized():
    gen = torch.Generator().manual_seed(0)
    budget = AttackBudget()
    for _ in range(100):
        x = torch.rand((8,), generator=gen)
        x[0], x[1] = 0.0, 1.0  # force box corners
        x[2] = 1.0 - 0.5 / 255.0
        delta = (torch.rand((8,), generator=gen) * 2 - 1) * EPS
        delta = torch.maximum(torch.minimum(delta, 1 - x), -x)
        for _ in range(5):
            g = torch.randn((8,), generator=gen)
            delta = pgd_delta_step(delta, g, x, budget)
            assert float(delta.abs().max()) <= EPS
            adv = x + delta
            assert float(adv.min()) >= 0.0 and float(adv.max()) <= 1.0


def test_budget_validation():
    with pytest.raises(ConfigurationError):
        AttackBudget(epsilon=0.0)
    with pytest.raises(ConfigurationError):
        AttackBudget(step_size=0.1, epsilon=0.01)
    with pytest.raises(ConfigurationError):
        AttackBudget(norm="l2")
    with pytest.raises(ConfigurationError):
        TimeStepRange(5, 5)
    with pytest.raises(ConfigurationError):
        TimeStepRange(-1, 5)


# ---------------------------------------------------------------- advdm

def test_advdm_zero_iterations_is_noop():
    model = stub_ldm(T=100)
    img = seeded_image(20)
    ae = advdm_attack(img, model, budget=AttackBudget(iterations=0))
    assert torch.equal(ae.delta, torch.zeros_like(img))


def test_advdm_range_semantics_and_determinism():
    model = stub_ldm(T=100, denoiser=LinearDenoiser(torch.eye(256) * 0.5))
    img = seeded_image(20)
    rng = TimeStepRange(80, 90)
    ae = advdm_attack(img, model, time_range=rng, budget=small_budget(), seed=5)
    draws = [t for batch in ae.t_draws for t in batch]
    assert draws and all(80 < t <= 90 for t in draws)
    ae2 = advdm_attack(img, model, time_range=rng, budget=small_budget(), seed=5)
    assert torch.equal(ae.delta, ae2.delta)
    assert ae.label(100) == "AdvDM_80^90"


def test_advdm_range_exceeding_horizon_rejected():
    model = stub_ldm(T=50)
    with pytest.raises(ConfigurationError):
        advdm_attack(torch.rand(3, 32, 32), model, time_range=TimeStepRange(0, 60),
                     budget=small_budget())


def test_advdm_raises_heldout_loss_on_trained_model(trained_model):
    from ldmshield.attacks import _diffusion_loss_sum

    img = seeded_image(20)
    ae = advdm_attack(img, trained_model, seed=3)
    assert float(ae.delta.abs().max()) <= EPS

    def heldout_loss(x):
        gen = torch.Generator().manual_seed(999)
        total = 0.0
        with torch.no_grad():
            for _ in range(64):
                t = torch.randint(1, trained_model.T + 1, (1,), generator=gen)
                eps = torch.randn((1, 4, 8, 8), generator=gen)
                _, per = _diffusion_loss_sum(trained_model, x[None], t, eps,
                                             null_condition())
                total += float(per)
        return total / 64

    assert heldout_loss(ae.adversarial) > heldout_loss(img)


def test_advdm_full_range_default_matches_explicit(trained_model):
    img = seeded_image(20)
    a = advdm_attack(img, trained_model, budget=small_budget(), seed=1)
    b = advdm_attack(img, trained_model, time_range=TimeStepRange(0, 1000),
                     budget=small_budget(), seed=1)
    assert torch.equal(a.delta, b.delta)
    assert a.label(1000) == "AdvDM"


# ---------------------------------------------------------------- encoder

def test_encoder_fixed_point_stays_zero():
    model = stub_ldm()
    img = seeded_image(20)
    ae = encoder_attack(img, model, TargetSpec(img.clone()), budget=small_budget())
    assert torch.equal(ae.delta, torch.zeros_like(img))


def test_encoder_zero_iterations():
    model = stub_ldm()
    img = seeded_image(20)
    ae = encoder_attack(img, model, TargetSpec(periodic_target()),
                        budget=AttackBudget(iterations=0))
    assert torch.equal(ae.delta, torch.zeros_like(img))


def test_encoder_distance_decreases_monotonically(trained_model):
    img = seeded_image(20)
    ae = encoder_attack(img, trained_model, TargetSpec(periodic_target()))
    trace = ae.loss_trace
    assert len(trace) == 40
    # non-increasing up to float32 oscillation at the constrained optimum
    assert all(b <= a + 1e-5 * abs(a) for a, b in zip(trace, trace[1:]))
    assert all(b < a for a, b in zip(trace[:8], trace[1:9]))
    assert min(trace) < trace[0]


def test_encoder_target_shape_checked():
    model = stub_ldm()
    with pytest.raises(DomainError):
        encoder_attack(torch.rand(3, 32, 32), model,
                       TargetSpec(torch.rand(3, 16, 16)), budget=small_budget())


# ---------------------------------------------------------------- chain

def test_chain_depth_guard():
    model = stub_ldm(T=1000)
    img = seeded_image(20)
    with pytest.raises(ResourceError):
        chain_attack(img, model, TargetSpec(periodic_target()), depth=6,
                     budget=small_budget())


def test_chain_zero_iterations():
    model = stub_ldm(T=1000)
    img = seeded_image(20)
    ae = chain_attack(img, model, TargetSpec(periodic_target()),
                      budget=AttackBudget(iterations=0))
    assert torch.equal(ae.delta, torch.zeros_like(img))


def test_chain_depth1_gradient_matches_finite_differences():
    """Finite-difference oracle on 10 coordinates of the depth-1 chain loss."""
    torch.manual_seed(0)
    model = ToyLDM()
    model = model.double()
    img = seeded_image(21, dtype=torch.float64)
    target = TargetSpec(periodic_target().double())
    ae = chain_attack(img, model, target, depth=1,
                      budget=AttackBudget(iterations=1), seed=11,
                      record_gradients=True)
    recorded = ae.gradient_trace[0][0]  # ascend gradient = -d(loss)/dx

    from ldmshield.pipelines import denoise_step, time_grid
    from ldmshield.schedule import diffuse_to

    grid = time_grid(700, 100)
    trunc = grid[-2:]
    gen = torch.Generator().manual_seed(11)
    eps = torch.randn((1, 4, 8, 8), generator=gen, dtype=torch.float64)

    def loss_at(x):
        with torch.no_grad():
            z = diffuse_to(model.encode(x[None]), trunc[0], eps, model.schedule)
            z = denoise_step(z, trunc[0], null_condition(), 7.5, model, t_prev=0)
            out = model.decode(z)
            return float((out - target.target_image).square().sum())

    gen2 = torch.Generator().manual_seed(42)
    coords = [tuple(int(v) for v in torch.randint(0, s, (1,), generator=gen2))
              for s in [3] * 10]
    h = 1e-4
    for _ in range(10):
        c = (int(torch.randint(0, 3, (1,), generator=gen2)),
             int(torch.randint(0, 32, (1,), generator=gen2)),
             int(torch.randint(0, 32, (1,), generator=gen2)))
        xp, xm = img.clone(), img.clone()
        xp[c] += h
        xm[c] -= h
        fd = (loss_at(xp) - loss_at(xm)) / (2 * h)
        assert float(recorded[c]) == pytest.approx(-fd, rel=1e-4, abs=1e-9)


# ---------------------------------------------------------------- mist

def test_mist_weight_zero_bit_equals_encoder(trained_model):
    img = seeded_image(20)
    target = TargetSpec(periodic_target())
    m = mist_attack(img, trained_model, target, FusedLossConfig(fuse_weight=0.0),
                    budget=small_budget(), seed=4)
    e = encoder_attack(img, trained_model, target, budget=small_budget(), seed=4)
    assert torch.equal(m.delta, e.delta)
    assert m.label(1000) == "Mist (0)"


def test_mist_paper_weights_accepted(trained_model):
    img = seeded_image(20)
    target = TargetSpec(periodic_target())
    for w in (1.0, 5.0):
        ae = mist_attack(img, trained_model, target, FusedLossConfig(fuse_weight=w),
                         budget=AttackBudget(iterations=1), seed=0)
        ae.check_invariants()


def test_mist_large_weight_converges_to_advdm_direction(trained_model):
    img = seeded_image(20)
    target = TargetSpec(periodic_target())
    rng = TimeStepRange(800, 900)
    one_iter = AttackBudget(iterations=1)
    m = mist_attack(img, trained_model, target,
                    FusedLossConfig(fuse_weight=1e6, time_range=rng),
                    budget=one_iter, seed=8, record_gradients=True)
    a = advdm_attack(img, trained_model, time_range=rng, budget=one_iter,
                     seed=8, record_gradients=True)
    g_m = m.gradient_trace[0].flatten()
    g_a = a.gradient_trace[0].flatten()
    cos = torch.dot(g_m, g_a) / (g_m.norm() * g_a.norm())
    assert float(cos) > 0.99


def test_fused_config_validation():
    with pytest.raises(ConfigurationError):
        FusedLossConfig(fuse_weight=-1.0)


# ---------------------------------------------------------------- sds

def test_sds_zero_iterations():
    model = stub_ldm(T=100)
    img = seeded_image(20)
    ae = sds_attack(img, model, budget=AttackBudget(iterations=0))
    assert torch.equal(ae.delta, torch.zeros_like(img))


def test_sds_vanishes_for_noise_echo_denoiser():
    denoiser = NoiseEchoDenoiser()
    model = stub_ldm(denoiser=denoiser, T=100)

    # the echo stub needs to know the upcoming draw; replay the generator
    class Echo(NoiseEchoDenoiser):
        def forward(self, z, t, cond_emb):
            return self.pending

    model.denoiser = echo = Echo()
    img = seeded_image(20)
    gen = torch.Generator().manual_seed(6)
    _t = torch.randint(1, 101, (1,), generator=gen)
    echo.pending = torch.randn((1, 4, 8, 8), generator=gen)
    ae = sds_attack(img, model, budget=AttackBudget(iterations=1), seed=6)
    assert torch.equal(ae.delta, torch.zeros_like(img))


def test_sds_vs_advdm_linear_closed_form():
    """On a linear codec/denoiser both gradients are explicit: the full
    backprop carries the denoiser Jacobian W^T (and the square's factor 2);
    the score-distillation direction omits exactly that factor."""
    torch.manual_seed(2)
    E = torch.randn(256, 3072, dtype=torch.float64) * 0.02
    W = torch.randn(256, 256, dtype=torch.float64) * 0.1
    model = stub_ldm(codec=FlatLinearCodec(E), denoiser=LinearDenoiser(W), T=10)
    img = seeded_image(21, dtype=torch.float64)
    one = AttackBudget(iterations=1)

    a = advdm_attack(img, model, budget=one, seed=3, record_gradients=True)
    s = sds_attack(img, model, budget=one, seed=3, record_gradients=True)

    gen = torch.Generator().manual_seed(3)
    t = int(torch.randint(1, 11, (1,), generator=gen))
    eps = torch.randn((1, 4, 8, 8), generator=gen, dtype=torch.float64).flatten()
    abar = model.schedule.alpha_bar(t)
    x = img.flatten()
    z_t = np.sqrt(abar) * (E @ x) + np.sqrt(1 - abar) * eps
    rho = W @ z_t - eps
    g_adv_expected = 2 * np.sqrt(abar) * (E.T @ (W.T @ rho))
    g_sds_direction = np.sqrt(abar) * (E.T @ rho)

    torch.testing.assert_close(a.gradient_trace[0].flatten(), g_adv_expected,
                               rtol=1e-8, atol=1e-12)
    torch.testing.assert_close(s.gradient_trace[0].flatten(), -g_sds_direction,
                               rtol=1e-8, atol=1e-12)


# ---------------------------------------------------------------- shared

def test_every_family_keeps_budget_on_batch(trained_model):
    imgs = seeded_image(22, batch=4)
    target = TargetSpec(periodic_target())
    budget = small_budget(2)
    aes = [
        advdm_attack(imgs, trained_model, budget=budget, seed=0),
        encoder_attack(imgs, trained_model, target, budget=budget, seed=0),
        chain_attack(imgs, trained_model, target, depth=2, budget=budget, seed=0),
        mist_attack(imgs, trained_model, target, budget=budget, seed=0),
        sds_attack(imgs, trained_model, budget=budget, seed=0),
    ]
    for ae in aes:
        for st in ae.iteration_stats:
            assert st.max_abs_delta <= EPS
            assert 0.0 <= st.pixel_min and st.pixel_max <= 1.0
        assert ae.delta.shape == imgs.shape


def test_persistence_round_trip(tmp_path, trained_model):
    img = seeded_image(20)
    img = (img * 255).round() / 255  # on the 8-bit grid like PNG sources
    ae = advdm_attack(img, trained_model, time_range=TimeStepRange(100, 200),
                      budget=small_budget(), seed=9, surrogate_id="abc123")
    paths = save_adversarial_example(str(tmp_path), "sample", ae)
    loaded = load_adversarial_example(str(tmp_path), "sample")
    assert loaded.method == "advdm"
    assert loaded.time_range == TimeStepRange(100, 200)
    assert loaded.seed == 9
    assert loaded.surrogate_id == "abc123"
    assert float(loaded.delta.abs().max()) <= EPS
    torch.testing.assert_close(loaded.original, img, atol=1e-6, rtol=0)
    # quantization error of the PNG round trip stays under half a grid step
    assert float((loaded.adversarial - ae.adversarial).abs().max()) <= 0.5 / 255 + 1e-6
