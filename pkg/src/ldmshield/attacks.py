"""PGD attack families against the toy latent diffusion model.

All attacks optimize an l-infinity-bounded pixel perturbation delta with
sign-PGD. The perturbation is carried explicitly across iterations (never
re-derived by subtraction), so after every iteration both invariants hold
bit-exactly: max|delta| <= epsilon and original + delta in [0, 1].

Monte-Carlo attacks draw one (t, eps) pair per image per iteration, with t
uniform over the integers in (a, b] of the configured time-step range.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .data import load_image, save_image
from .errors import ConfigurationError, DomainError, ResourceError
from .models import Condition, ToyLDM, null_condition
from .pipelines import denoise_step, time_grid
from .schedule import diffuse_to

DEFAULT_EPSILON = 8.0 / 255.0
DEFAULT_STEP_SIZE = 1.0 / 255.0
DEFAULT_ITERATIONS = 40
MAX_CHAIN_DEPTH = 5


@dataclass(frozen=True)
class AttackBudget:
    epsilon: float = DEFAULT_EPSILON
    step_size: float = DEFAULT_STEP_SIZE
    iterations: int = DEFAULT_ITERATIONS
    norm: str = "linf"

    def __post_init__(self):
        if self.norm != "linf":
            raise ConfigurationError(f"unsupported norm {self.norm!r}")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if not 0 < self.step_size <= self.epsilon:
            raise ConfigurationError("step_size must lie in (0, epsilon]")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")


@dataclass(frozen=True)
class TimeStepRange:
    """Half-open step interval (a, b]; sampling draws t in {a+1, ..., b}."""

    a: int
    b: int

    def __post_init__(self):
        if self.a < 0 or self.b <= self.a:
            raise ConfigurationError(f"need 0 <= a < b, got ({self.a}, {self.b}]")

    def validate_for(self, T: int) -> None:
        if self.b > T:
            raise ConfigurationError(f"range ({self.a}, {self.b}] exceeds horizon T={T}")

    def sample(self, n: int, gen: torch.Generator) -> torch.Tensor:
        return torch.randint(self.a + 1, self.b + 1, (n,), generator=gen)

    def label(self, T: int) -> str:
        return "" if (self.a, self.b) == (0, T) else f"_{self.a}^{self.b}"


def full_range(model: ToyLDM) -> TimeStepRange:
    return TimeStepRange(0, model.T)


@dataclass
class TargetSpec:
    """Target image for encoder/chain attacks, plus optional condition."""

    target_image: torch.Tensor
    cond: Optional[Condition] = None

    def validate_for(self, image: torch.Tensor) -> None:
        if tuple(self.target_image.shape[-3:]) != tuple(image.shape[-3:]):
            raise DomainError("target image shape does not match attacked image")


@dataclass(frozen=True)
class FusedLossConfig:
    fuse_weight: float = 1.0
    time_range: Optional[TimeStepRange] = None

    def __post_init__(self):
        if self.fuse_weight < 0:
            raise ConfigurationError("fuse weight must be nonnegative")


@dataclass
class IterationStat:
    max_abs_delta: float
    pixel_min: float
    pixel_max: float
    loss: float


@dataclass
class AdversarialExample:
    original: torch.Tensor
    delta: torch.Tensor
    method: str
    budget: AttackBudget
    surrogate_id: str = ""
    time_range: Optional[TimeStepRange] = None
    seed: int = 0
    fuse_weight: Optional[float] = None
    loss_trace: list = field(default_factory=list)
    t_draws: list = field(default_factory=list)
    iteration_stats: list = field(default_factory=list)
    gradient_trace: list = field(default_factory=list)

    @property
    def adversarial(self) -> torch.Tensor:
        return self.original + self.delta

    def label(self, T: Optional[int] = None) -> str:
        names = {"advdm": "AdvDM", "sds": "SDS", "encoder": "Mist (0)",
                 "chain": "Chain", "mist": "Mist"}
        base = names.get(self.method, self.method)
        if self.time_range is not None and T is not None:
            base += self.time_range.label(T)
        if self.method == "mist":
            base += f" ({self.fuse_weight:g})"
        return base

    def check_invariants(self) -> None:
        if float(self.delta.abs().max()) > self.budget.epsilon:
            raise DomainError("perturbation exceeds the l-inf budget")
        adv = self.adversarial
        if float(adv.min()) < 0.0 or float(adv.max()) > 1.0:
            raise DomainError("adversarial image leaves [0, 1]")


def dtype_floor(value: float, dtype: torch.dtype) -> float:
    """Largest number representable in `dtype` that does not exceed `value`.

    epsilon = 8/255 rounds UP in float32; clamping against the rounded-down
    value keeps max|delta| <= epsilon exact in any precision.
    """
    t = torch.tensor(value, dtype=dtype)
    if float(t) > value:
        t = torch.nextafter(t, torch.tensor(0.0, dtype=dtype))
    return float(t)


def pgd_delta_step(delta: torch.Tensor, gradient: torch.Tensor,
                   original: torch.Tensor, budget: AttackBudget) -> torch.Tensor:
    """One maximizing sign step on delta, then exact ball and box projection.

    The box is enforced on delta directly (delta <= 1 - x, delta >= -x), so
    original + delta never leaves [0, 1] even at float32 resolution.
    """
    eps = dtype_floor(budget.epsilon, delta.dtype)
    d = delta + budget.step_size * torch.sign(gradient)
    d = d.clamp(-eps, eps)
    d = torch.minimum(d, 1.0 - original)
    d = torch.maximum(d, -original)
    return d


def pgd_ascend(current: torch.Tensor, gradient: torch.Tensor,
               original: torch.Tensor, budget: AttackBudget) -> torch.Tensor:
    """Spec-level PGD update on the iterate itself (maximization direction)."""
    if current.shape != gradient.shape or current.shape != original.shape:
        raise DomainError("pgd_ascend requires matching shapes")
    return original + pgd_delta_step(current - original, gradient, original, budget)


def _as_batch(image: torch.Tensor):
    if image.dim() == 3:
        return image[None], True
    return image, False


def _mc_draw(model: ToyLDM, batch: int, time_range: TimeStepRange,
             gen: torch.Generator, latent_shape, dtype=torch.float32) -> tuple:
    t = time_range.sample(batch, gen)
    eps = torch.randn((batch,) + tuple(latent_shape), generator=gen, dtype=dtype)
    return t, eps


def _diffusion_loss_sum(model: ToyLDM, x: torch.Tensor, t: torch.Tensor,
                        eps: torch.Tensor, cond: Condition):
    """Summed-over-batch squared MC objective ||eps - eps_theta(x_t, t)||^2."""
    z = model.encode(x)
    abar = torch.as_tensor(model.schedule.alpha_bars, dtype=z.dtype)[t - 1]
    z_t = abar.sqrt()[:, None, None, None] * z + (1 - abar).sqrt()[:, None, None, None] * eps
    pred = model.predict_noise(z_t, t, cond)
    per_sample = (eps - pred).square().flatten(1).sum(dim=1)
    return per_sample.sum(), per_sample


def _encoder_loss_sum(model: ToyLDM, x: torch.Tensor, target_latent: torch.Tensor):
    z = model.encode(x)
    per_sample = (z - target_latent).square().flatten(1).sum(dim=1)
    return per_sample.sum(), per_sample


class _PgdLoop:
    """Shared scaffolding: delta bookkeeping, stats, and gradient recording."""

    def __init__(self, image: torch.Tensor, budget: AttackBudget,
                 record_gradients: bool = False):
        self.x, self.squeeze = _as_batch(image)
        self.budget = budget
        self.delta = torch.zeros_like(self.x)
        self.loss_trace = []
        self.iteration_stats = []
        self.gradient_trace = []
        self.record_gradients = record_gradients

    def current(self) -> torch.Tensor:
        return (self.x + self.delta).detach().requires_grad_(True)

    def step(self, ascend_gradient: torch.Tensor, mean_loss: float) -> None:
        self.delta = pgd_delta_step(self.delta, ascend_gradient.detach(),
                                    self.x, self.budget)
        adv = self.x + self.delta
        self.loss_trace.append(mean_loss)
        self.iteration_stats.append(IterationStat(
            max_abs_delta=float(self.delta.abs().max()),
            pixel_min=float(adv.min()), pixel_max=float(adv.max()),
            loss=mean_loss))
        if self.record_gradients:
            self.gradient_trace.append(ascend_gradient.detach().clone())

    def finish(self, method: str, surrogate_id: str, seed: int,
               time_range=None, fuse_weight=None, t_draws=None) -> AdversarialExample:
        delta = self.delta[0] if self.squeeze else self.delta
        original = self.x[0] if self.squeeze else self.x
        ae = AdversarialExample(
            original=original.detach(), delta=delta.detach(), method=method,
            budget=self.budget, surrogate_id=surrogate_id, time_range=time_range,
            seed=seed, fuse_weight=fuse_weight, loss_trace=self.loss_trace,
            t_draws=t_draws if t_draws is not None else [],
            iteration_stats=self.iteration_stats,
            gradient_trace=self.gradient_trace)
        ae.check_invariants()
        return ae


def advdm_attack(image: torch.Tensor, model: ToyLDM,
                 time_range: Optional[TimeStepRange] = None,
                 budget: AttackBudget = AttackBudget(),
                 cond: Optional[Condition] = None, seed: int = 0,
                 mc_width: int = 1, surrogate_id: str = "",
                 record_gradients: bool = False) -> AdversarialExample:
    """Monte-Carlo attack: maximize E_(t,eps) ||eps - eps_theta(x'_t, t)||^2."""
    time_range = time_range if time_range is not None else full_range(model)
    time_range.validate_for(model.T)
    cond = cond if cond is not None else null_condition()
    gen = torch.Generator().manual_seed(seed)
    loop = _PgdLoop(image, budget, record_gradients)
    t_draws = []
    latent_shape = model.encode(loop.x[:1]).shape[1:]
    for _ in range(budget.iterations):
        x = loop.current()
        grads = torch.zeros_like(x)
        losses = torch.zeros(x.shape[0])
        for _ in range(mc_width):
            t, eps = _mc_draw(model, x.shape[0], time_range, gen, latent_shape, x.dtype)
            t_draws.append(t.tolist())
            total, per_sample = _diffusion_loss_sum(model, x, t, eps, cond)
            g, = torch.autograd.grad(total, x)
            grads += g
            losses += per_sample.detach()
        loop.step(grads / mc_width, float(losses.mean()) / mc_width)
    return loop.finish("advdm", surrogate_id, seed, time_range=time_range,
                       t_draws=t_draws)


def encoder_attack(image: torch.Tensor, model: ToyLDM, target: TargetSpec,
                   budget: AttackBudget = AttackBudget(), seed: int = 0,
                   surrogate_id: str = "",
                   record_gradients: bool = False) -> AdversarialExample:
    """Push the latent of x + delta toward the target image's latent."""
    target.validate_for(image)
    loop = _PgdLoop(image, budget, record_gradients)
    with torch.no_grad():
        target_latent = model.encode(_as_batch(target.target_image)[0])
    for _ in range(budget.iterations):
        x = loop.current()
        total, per_sample = _encoder_loss_sum(model, x, target_latent)
        g, = torch.autograd.grad(total, x)
        loop.step(-g, float(per_sample.mean()))  # descend on encoder distance
    return loop.finish("encoder", surrogate_id, seed)


def chain_attack(image: torch.Tensor, model: ToyLDM, target: TargetSpec,
                 depth: int = MAX_CHAIN_DEPTH,
                 budget: AttackBudget = AttackBudget(), seed: int = 0,
                 strength: float = 0.7, steps: int = 100, guidance: float = 7.5,
                 max_depth: int = MAX_CHAIN_DEPTH, surrogate_id: str = "",
                 record_gradients: bool = False) -> AdversarialExample:
    """Differentiate through a truncated inference chain.

    The truncated graph keeps the last `depth` denoising steps of the full
    generation grid: the input is encoded and forward-diffused directly to
    the depth-th step from the end, denoised through those steps, and
    decoded, all differentiably.
    """
    if depth < 1:
        raise ConfigurationError("chain depth must be >= 1")
    if depth > max_depth:
        raise ResourceError(f"chain depth {depth} exceeds the resource guard {max_depth}")
    target.validate_for(image)
    cond = target.cond if target.cond is not None else null_condition()
    gen = torch.Generator().manual_seed(seed)
    grid = time_grid(int(round(strength * model.T)), steps)
    trunc = grid[-(depth + 1):]
    loop = _PgdLoop(image, budget, record_gradients)
    x_targ = _as_batch(target.target_image)[0]
    latent_shape = model.encode(loop.x[:1]).shape[1:]
    for _ in range(budget.iterations):
        x = loop.current()
        eps = torch.randn((x.shape[0],) + tuple(latent_shape), generator=gen, dtype=x.dtype)
        z = diffuse_to(model.encode(x), trunc[0], eps, model.schedule)
        for t_hi, t_lo in zip(trunc[:-1], trunc[1:]):
            z = denoise_step(z, t_hi, cond, guidance, model, t_prev=t_lo)
        out = model.decode(z)
        per_sample = (out - x_targ).square().flatten(1).sum(dim=1)
        g, = torch.autograd.grad(per_sample.sum(), x)
        loop.step(-g, float(per_sample.mean()))  # descend toward the target
    return loop.finish("chain", surrogate_id, seed)


def mist_attack(image: torch.Tensor, model: ToyLDM, target: TargetSpec,
                fused: FusedLossConfig = FusedLossConfig(),
                budget: AttackBudget = AttackBudget(),
                cond: Optional[Condition] = None, seed: int = 0,
                surrogate_id: str = "",
                record_gradients: bool = False) -> AdversarialExample:
    """Fused attack: ascend w * (MC objective) - (encoder distance).

    fuse weight 0 skips the Monte-Carlo term entirely, which makes the run
    bit-identical to encoder_attack under the same seed.
    """
    target.validate_for(image)
    time_range = fused.time_range if fused.time_range is not None else full_range(model)
    time_range.validate_for(model.T)
    w = fused.fuse_weight
    cond = cond if cond is not None else null_condition()
    gen = torch.Generator().manual_seed(seed)
    loop = _PgdLoop(image, budget, record_gradients)
    with torch.no_grad():
        target_latent = model.encode(_as_batch(target.target_image)[0])
    t_draws = []
    latent_shape = model.encode(loop.x[:1]).shape[1:]
    for _ in range(budget.iterations):
        x = loop.current()
        enc_total, enc_per = _encoder_loss_sum(model, x, target_latent)
        if w == 0.0:
            g, = torch.autograd.grad(enc_total, x)
            loop.step(-g, float(enc_per.mean()))
            continue
        t, eps = _mc_draw(model, x.shape[0], time_range, gen, latent_shape, x.dtype)
        t_draws.append(t.tolist())
        mc_total, mc_per = _diffusion_loss_sum(model, x, t, eps, cond)
        objective = w * mc_total - enc_total
        g, = torch.autograd.grad(objective, x)
        loop.step(g, float((w * mc_per - enc_per).mean()))
    return loop.finish("mist", surrogate_id, seed, time_range=time_range,
                       fuse_weight=w, t_draws=t_draws)


def sds_attack(image: torch.Tensor, model: ToyLDM,
               time_range: Optional[TimeStepRange] = None,
               budget: AttackBudget = AttackBudget(),
               cond: Optional[Condition] = None, seed: int = 0,
               surrogate_id: str = "",
               record_gradients: bool = False) -> AdversarialExample:
    """Score-distillation attack, applied with gradient descent.

    The update direction is (eps_theta(x'_t, t) - eps) back-propagated only
    through the forward-diffusion map: the denoiser Jacobian is skipped by
    detaching the residual.
    """
    time_range = time_range if time_range is not None else full_range(model)
    time_range.validate_for(model.T)
    cond = cond if cond is not None else null_condition()
    gen = torch.Generator().manual_seed(seed)
    loop = _PgdLoop(image, budget, record_gradients)
    t_draws = []
    latent_shape = model.encode(loop.x[:1]).shape[1:]
    for _ in range(budget.iterations):
        x = loop.current()
        t, eps = _mc_draw(model, x.shape[0], time_range, gen, latent_shape, x.dtype)
        t_draws.append(t.tolist())
        z = model.encode(x)
        abar = torch.as_tensor(model.schedule.alpha_bars, dtype=z.dtype)[t - 1]
        z_t = abar.sqrt()[:, None, None, None] * z + (1 - abar).sqrt()[:, None, None, None] * eps
        with torch.no_grad():
            pred = model.predict_noise(z_t, t, cond)
            residual = pred - eps
        surrogate = (z_t * residual).flatten(1).sum(dim=1)
        g, = torch.autograd.grad(surrogate.sum(), x)
        mc_loss = float(residual.square().flatten(1).sum(dim=1).mean())
        loop.step(-g, mc_loss)  # gradient descent on the SDS direction
    return loop.finish("sds", surrogate_id, seed, time_range=time_range,
                       t_draws=t_draws)


ATTACK_FAMILIES = ("advdm", "encoder", "chain", "mist", "sds")


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def save_adversarial_example(directory: str, stem: str, ae: AdversarialExample) -> dict:
    """Persist the AE as lossless PNGs plus a JSON sidecar; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    if ae.original.dim() != 3:
        raise DomainError("persistence expects a single image, not a batch")
    adv_path = os.path.join(directory, f"{stem}_adv.png")
    orig_path = os.path.join(directory, f"{stem}_orig.png")
    meta_path = os.path.join(directory, f"{stem}_ae.json")
    save_image(adv_path, ae.adversarial)
    save_image(orig_path, ae.original)
    meta = {
        "method": ae.method,
        "budget": {"epsilon": ae.budget.epsilon, "step_size": ae.budget.step_size,
                   "iterations": ae.budget.iterations, "norm": ae.budget.norm},
        "time_range": [ae.time_range.a, ae.time_range.b] if ae.time_range else None,
        "fuse_weight": ae.fuse_weight,
        "seed": ae.seed,
        "surrogate_checkpoint_hash": ae.surrogate_id,
    }
    with open(meta_path, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return {"adv": adv_path, "orig": orig_path, "meta": meta_path}


def load_adversarial_example(directory: str, stem: str) -> AdversarialExample:
    adv = load_image(os.path.join(directory, f"{stem}_adv.png"))
    orig = load_image(os.path.join(directory, f"{stem}_orig.png"))
    with open(os.path.join(directory, f"{stem}_ae.json")) as f:
        meta = json.load(f)
    budget = AttackBudget(**meta["budget"])
    # 8-bit grid arithmetic keeps |delta| <= epsilon; re-clamp kills the
    # last-ulp float32 rounding of the subtraction.
    delta = (adv - orig).clamp(-budget.epsilon, budget.epsilon)
    delta = torch.minimum(delta, 1.0 - orig)
    delta = torch.maximum(delta, -orig)
    tr = meta.get("time_range")
    ae = AdversarialExample(
        original=orig, delta=delta, method=meta["method"], budget=budget,
        surrogate_id=meta.get("surrogate_checkpoint_hash", ""),
        time_range=TimeStepRange(*tr) if tr else None,
        seed=meta.get("seed", 0), fuse_weight=meta.get("fuse_weight"))
    ae.check_invariants()
    return ae
