"""Measurement and theory machinery: smoothness profiling, loss-gradient
similarity, transferability estimators, the lower-bound arithmetic, and
numerical checkers for the proof's two key inequalities.

The per-step surrogate loss is the UNSQUARED l2 norm
L(x, eps) = ||eps - eps_theta(sqrt(abar_t) E(x) + sqrt(1-abar_t) eps, t)||_2,
with the gradient at a zero loss defined as zero.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .errors import DomainError, EstimationError
from .models import Condition, ToyLDM, null_condition


# --------------------------------------------------------------------------
# gradients of the per-time-step surrogate loss
# --------------------------------------------------------------------------

def loss_value(model: ToyLDM, t: int, x: torch.Tensor, noise: torch.Tensor,
               cond: Optional[Condition] = None) -> torch.Tensor:
    """Per-sample unsquared loss; accepts (3,H,W) or batched input."""
    cond = cond if cond is not None else null_condition()
    single = x.dim() == 3
    xb = x[None] if single else x
    nb = noise[None] if noise.dim() == 3 else noise
    z = model.encode(xb)
    abar = model.schedule.alpha_bar(t)
    z_t = math.sqrt(abar) * z + math.sqrt(1.0 - abar) * nb
    pred = model.predict_noise(z_t, t, cond)
    sq = (nb - pred).square().flatten(1).sum(dim=1)
    out = sq.sqrt()
    return out[0] if single else out


def loss_gradient(model: ToyLDM, t: int, x: torch.Tensor, noise: torch.Tensor,
                  cond: Optional[Condition] = None) -> torch.Tensor:
    """Exact pixel-space gradient of the unsquared loss.

    Computed as grad(||r||^2) / (2 ||r||), which avoids the sqrt
    singularity; samples with exactly zero loss get a zero gradient.
    """
    if not 1 <= t <= model.T:
        raise DomainError(f"time step {t} outside [1, {model.T}]")
    cond = cond if cond is not None else null_condition()
    single = x.dim() == 3
    xb = (x[None] if single else x).detach().requires_grad_(True)
    nb = noise[None] if noise.dim() == 3 else noise
    z = model.encode(xb)
    abar = model.schedule.alpha_bar(t)
    z_t = math.sqrt(abar) * z + math.sqrt(1.0 - abar) * nb
    pred = model.predict_noise(z_t, t, cond)
    sq = (nb - pred).square().flatten(1).sum(dim=1)
    if sq.requires_grad:
        # allow_unused covers models whose prediction ignores the input
        grad_sq, = torch.autograd.grad(sq.sum(), xb, allow_unused=True)
        if grad_sq is None:
            grad_sq = torch.zeros_like(xb)
    else:
        grad_sq = torch.zeros_like(xb)
    norms = sq.detach().sqrt()
    scale = torch.where(norms > 0, 0.5 / norms.clamp_min(1e-38),
                        torch.zeros_like(norms))
    grad = grad_sq * scale[:, None, None, None]
    return grad[0] if single else grad


# --------------------------------------------------------------------------
# smoothness profile and gradient-similarity matrix
# --------------------------------------------------------------------------

@dataclass
class SmoothnessProfile:
    t_grid: list
    values: np.ndarray       # E_{x,eps} ||grad_x L||_2 per t
    std_errors: np.ndarray
    sample_counts: np.ndarray

    def __post_init__(self):
        n = len(self.t_grid)
        if not (len(self.values) == len(self.std_errors) == len(self.sample_counts) == n):
            raise DomainError("profile arrays must share the grid length")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.std_errors)):
            raise DomainError("profile values must be nonnegative with finite errors")

    def is_decreasing(self, fraction: float = 0.2, z: float = 2.0) -> bool:
        """Decreasing-in-t decision: the high-t end's mean lies at least
        z pooled standard errors below the low-t end's mean."""
        k = max(1, int(len(self.t_grid) * fraction))
        lo, hi = self.values[:k], self.values[-k:]
        se = math.sqrt(float(np.mean(self.std_errors[:k] ** 2) / k
                             + np.mean(self.std_errors[-k:] ** 2) / k))
        return float(np.mean(hi)) < float(np.mean(lo)) - z * se


def smoothness_profile(model: ToyLDM, images: torch.Tensor, t_grid: Sequence[int],
                       noise_samples_per_point: int = 4, seed: int = 0,
                       cond: Optional[Condition] = None) -> SmoothnessProfile:
    """Gradient-norm smoothness proxy per time step, with standard errors."""
    if images.dim() == 3:
        images = images[None]
    if len(images) == 0:
        raise EstimationError("empty image set")
    for t in t_grid:
        if not 1 <= t <= model.T:
            raise DomainError(f"grid step {t} outside [1, {model.T}]")
    gen = torch.Generator().manual_seed(seed)
    values, errors, counts = [], [], []
    latent_shape = model.encode(images[:1]).shape[1:]
    for t in t_grid:
        norms = []
        for _ in range(noise_samples_per_point):
            noise = torch.randn((images.shape[0],) + tuple(latent_shape),
                                generator=gen, dtype=images.dtype)
            g = loss_gradient(model, int(t), images, noise, cond)
            norms.extend(g.flatten(1).norm(dim=1).tolist())
        arr = np.asarray(norms)
        values.append(arr.mean())
        errors.append(arr.std(ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else 0.0)
        counts.append(len(arr))
    return SmoothnessProfile(t_grid=list(t_grid), values=np.asarray(values),
                             std_errors=np.asarray(errors),
                             sample_counts=np.asarray(counts))


def cosine_similarity(u: torch.Tensor, v: torch.Tensor) -> float:
    nu, nv = float(u.norm()), float(v.norm())
    if nu == 0.0 or nv == 0.0:
        raise EstimationError("cosine undefined for a zero gradient")
    return float(torch.dot(u.flatten(), v.flatten())) / (nu * nv)


@dataclass
class GradSimMatrix:
    t_grid: list
    entries: np.ndarray
    skipped_zero_pairs: int = 0

    def __post_init__(self):
        if np.any(np.abs(self.entries) > 1.0 + 1e-9):
            raise DomainError("similarity entries must lie in [-1, 1]")


def grad_similarity_matrix(model: ToyLDM, images: torch.Tensor,
                           t_grid: Sequence[int], draws: int = 4, seed: int = 0,
                           cond: Optional[Condition] = None) -> GradSimMatrix:
    """Mean cosine similarity of loss gradients across time-step pairs.

    For every draw, one shared image batch and two independent noises are
    used; entry (i, j) pairs gradients at t_i (first noise) with t_j (second
    noise). Entries are mirrored, so the matrix is symmetric by construction.
    Zero-gradient pairs are skipped and counted.
    """
    if len(t_grid) == 0:
        raise EstimationError("empty time-step grid")
    if images.dim() == 3:
        images = images[None]
    gen = torch.Generator().manual_seed(seed)
    n = len(t_grid)
    sums = np.zeros((n, n))
    counts = np.zeros((n, n), dtype=int)
    skipped = 0
    latent_shape = model.encode(images[:1]).shape[1:]
    for _ in range(draws):
        eps1 = torch.randn((images.shape[0],) + tuple(latent_shape),
                           generator=gen, dtype=images.dtype)
        eps2 = torch.randn((images.shape[0],) + tuple(latent_shape),
                           generator=gen, dtype=images.dtype)
        grads1 = {t: loss_gradient(model, int(t), images, eps1, cond) for t in t_grid}
        grads2 = {t: loss_gradient(model, int(t), images, eps2, cond) for t in t_grid}
        for i, ti in enumerate(t_grid):
            for j, tj in enumerate(t_grid):
                if j < i:
                    continue
                for b in range(images.shape[0]):
                    u, v = grads1[ti][b], grads2[tj][b]
                    if float(u.norm()) == 0.0 or float(v.norm()) == 0.0:
                        skipped += 1
                        continue
                    c = cosine_similarity(u, v)
                    sums[i, j] += c
                    counts[i, j] += 1
                    if i != j:
                        sums[j, i] += c
                        counts[j, i] += 1
    if counts.sum() == 0:
        raise EstimationError("all gradient pairs were zero")
    with np.errstate(invalid="ignore"):
        entries = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return GradSimMatrix(t_grid=list(t_grid), entries=np.clip(entries, -1.0, 1.0),
                         skipped_zero_pairs=skipped)


# --------------------------------------------------------------------------
# beta-smoothness estimation
# --------------------------------------------------------------------------

def estimate_beta_from_grads(grad_fn: Callable[[np.ndarray], np.ndarray],
                             points: np.ndarray, pair_count: int,
                             pair_radius: float, seed: int = 0) -> float:
    """Empirical sup of ||grad(x1) - grad(x2)|| / ||x1 - x2|| over sampled
    pairs with ||x1 - x2|| <= pair_radius. A LOWER estimate of the true
    smoothness constant. Coincident pairs are resampled."""
    if pair_count < 1:
        raise DomainError("pair_count must be >= 1")
    rng = np.random.default_rng(seed)
    points = np.asarray(points, dtype=np.float64)
    sup = 0.0
    for _ in range(pair_count):
        x1 = points[rng.integers(0, len(points))]
        while True:
            direction = rng.standard_normal(x1.shape)
            norm = np.linalg.norm(direction)
            if norm > 0:
                break
        step = rng.uniform(0.0, 1.0) * pair_radius
        while step == 0.0:
            step = rng.uniform(0.0, 1.0) * pair_radius
        x2 = x1 + direction / norm * step
        g1, g2 = grad_fn(x1), grad_fn(x2)
        ratio = np.linalg.norm(g1 - g2) / np.linalg.norm(x2 - x1)
        sup = max(sup, float(ratio))
    return sup


def estimate_beta(model: ToyLDM, t: int, images: torch.Tensor, pair_count: int,
                  pair_radius: float, seed: int = 0,
                  cond: Optional[Condition] = None) -> float:
    """Pairwise-ratio smoothness estimate of the time-t surrogate loss."""
    if images.dim() == 3:
        images = images[None]
    gen = torch.Generator().manual_seed(seed)
    latent_shape = model.encode(images[:1]).shape[1:]
    shape = images.shape[1:]
    sup = 0.0
    for _ in range(pair_count):
        i = int(torch.randint(0, images.shape[0], (1,), generator=gen))
        noise = torch.randn((1,) + tuple(latent_shape), generator=gen,
                            dtype=images.dtype)
        x1 = images[i]
        while True:
            direction = torch.randn(shape, generator=gen, dtype=images.dtype)
            if float(direction.norm()) > 0:
                break
        step = float(torch.rand((), generator=gen)) * pair_radius
        if step == 0.0:
            step = 0.5 * pair_radius
        x2 = x1 + direction / direction.norm() * step
        g1 = loss_gradient(model, t, x1, noise[0], cond)
        g2 = loss_gradient(model, t, x2, noise[0], cond)
        ratio = float((g1 - g2).norm()) / float((x1 - x2).norm())
        sup = max(sup, ratio)
    return sup


# --------------------------------------------------------------------------
# scalar estimators over loss values
# --------------------------------------------------------------------------

def risk_from_losses(losses, L: float) -> float:
    """Fraction of losses strictly above the threshold."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise EstimationError("empty loss list")
    return float(np.mean(losses > L))


def empirical_risk_from_losses(losses) -> float:
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise EstimationError("empty loss list")
    return float(losses.mean())


def alpha_from_losses(adv_losses, L: float) -> float:
    """Smallest alpha consistent with (alpha, F)-effectiveness: the fraction
    of adversarial losses at or below the threshold."""
    adv_losses = np.asarray(adv_losses, dtype=np.float64)
    if adv_losses.size == 0:
        raise EstimationError("empty adversarial-example set")
    return float(np.mean(adv_losses <= L))


def wilson_radius(successes: int, n: int, z: float = 1.959963984540054) -> float:
    """Half-width of the Wilson score interval (nonzero even at p in {0,1})."""
    if n == 0:
        raise EstimationError("no samples")
    phat = successes / n
    denom = 1.0 + z * z / n
    half = (z / denom) * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n))
    return half


def transfer_rate_from_losses(clean_f, clean_g, adv_f, adv_g,
                              L1: float, L2: float) -> tuple:
    """Empirical mean of the four-way transfer indicator plus a 95% binomial
    confidence radius (Wilson)."""
    arrays = [np.asarray(a, dtype=np.float64) for a in (clean_f, clean_g, adv_f, adv_g)]
    n = arrays[0].size
    if n == 0:
        raise EstimationError("empty loss lists")
    if any(a.size != n for a in arrays):
        raise DomainError("loss lists must have equal length")
    cf, cg, af, ag = arrays
    hits = (cf <= L1) & (cg <= L2) & (af > L1) & (ag > L2)
    k = int(hits.sum())
    return k / n, wilson_radius(k, n)


def estimate_risk(loss_fn, xs, ys, L: float) -> float:
    return risk_from_losses([loss_fn(x, y) for x, y in zip(xs, ys)], L)


def empirical_risk(loss_fn, xs, ys) -> float:
    return empirical_risk_from_losses([loss_fn(x, y) for x, y in zip(xs, ys)])


def effectiveness_alpha(loss_fn, adv_xs, ys, L: float) -> float:
    return alpha_from_losses([loss_fn(x, y) for x, y in zip(adv_xs, ys)], L)


def estimate_transfer_rate(loss_f, loss_g, xs, adv_xs, ys1, ys2,
                           L1: float, L2: float) -> tuple:
    clean_f = [loss_f(x, y) for x, y in zip(xs, ys1)]
    clean_g = [loss_g(x, y) for x, y in zip(xs, ys2)]
    adv_f = [loss_f(x, y) for x, y in zip(adv_xs, ys1)]
    adv_g = [loss_g(x, y) for x, y in zip(adv_xs, ys2)]
    return transfer_rate_from_losses(clean_f, clean_g, adv_f, adv_g, L1, L2)


# --------------------------------------------------------------------------
# the lower bound
# --------------------------------------------------------------------------

@dataclass
class BoundInputs:
    alpha: float
    beta: float
    gamma_f: float
    gamma_g: float
    c_f: float
    c_g: float
    L1: float
    L2: float
    s_inf: float
    radius: float   # l2 perturbation radius epsilon

    def validate(self) -> None:
        for name, v in (("alpha", self.alpha), ("gamma_f", self.gamma_f),
                        ("gamma_g", self.gamma_g)):
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {v}")
        if not -1.0 <= self.s_inf <= 1.0:
            raise DomainError(f"s_inf must lie in [-1, 1], got {self.s_inf}")
        if self.beta < 0:
            raise DomainError("beta must be nonnegative")


def transfer_bound(inputs: BoundInputs) -> float:
    """Lower bound on the transfer probability.

    (1-a) - (gF+gG) - [eps(1+a) - cF(1-a)]/(eps-cG)
          - [eps(1-a)/(eps-cG)] * sqrt(2 - 2 s_inf)

    The raw value is returned even when <= 0 (vacuous bound).
    """
    inputs.validate()
    eps, a = inputs.radius, inputs.alpha
    if eps <= inputs.c_g:
        raise DomainError(f"radius {eps} must exceed c_G {inputs.c_g}")
    denom = eps - inputs.c_g
    term_margin = (eps * (1 + a) - inputs.c_f * (1 - a)) / denom
    term_align = (eps * (1 - a) / denom) * math.sqrt(max(0.0, 2.0 - 2.0 * inputs.s_inf))
    return (1 - a) - (inputs.gamma_f + inputs.gamma_g) - term_margin - term_align


def bound_constants(f_losses, f_grad_norms, g_losses, g_grad_norms,
                    beta: float, radius: float, L1: float, L2: float) -> tuple:
    """Dataset constants of the bound:

    c_F = min (L1 - L_F(x) - beta eps^2/2) / ||grad L_F(x)||
    c_G = max (L2 - L_G(x) + beta eps^2/2) / ||grad L_G(x)||

    Zero-gradient points are excluded; the exclusion count is returned.
    Both constants are computed over the same evaluation set.
    """
    f_losses = np.asarray(f_losses, dtype=np.float64)
    g_losses = np.asarray(g_losses, dtype=np.float64)
    f_norms = np.asarray(f_grad_norms, dtype=np.float64)
    g_norms = np.asarray(g_grad_norms, dtype=np.float64)
    pad = beta * radius * radius / 2.0
    keep_f, keep_g = f_norms > 0, g_norms > 0
    excluded = int((~keep_f).sum() + (~keep_g).sum())
    if not keep_f.any() or not keep_g.any():
        raise EstimationError("all evaluated points had zero gradients")
    c_f = float(np.min((L1 - f_losses[keep_f] - pad) / f_norms[keep_f]))
    c_g = float(np.max((L2 - g_losses[keep_g] + pad) / g_norms[keep_g]))
    return c_f, c_g, excluded


@dataclass
class BoundReport:
    inputs: BoundInputs
    bound: float
    empirical_rate: float
    confidence_radius: float
    verdict: str
    metadata: dict = field(default_factory=dict)

    @staticmethod
    def assemble(inputs: BoundInputs, empirical_rate: float,
                 confidence_radius: float, metadata: Optional[dict] = None
                 ) -> "BoundReport":
        value = transfer_bound(inputs)
        if value <= 0.0:
            verdict = "vacuous"
        elif empirical_rate + confidence_radius < value:
            verdict = "violated"
        else:
            verdict = "verified"
        return BoundReport(inputs=inputs, bound=value, empirical_rate=empirical_rate,
                           confidence_radius=confidence_radius, verdict=verdict,
                           metadata=metadata or {})


# --------------------------------------------------------------------------
# end-to-end bound verification over a model pair
# --------------------------------------------------------------------------

@dataclass
class ModelLoss:
    """A model-dependent loss: scalar loss(x, y) and its gradient in x."""

    loss: Callable
    grad: Callable
    name: str = ""


def verify_bound(f: ModelLoss, g: ModelLoss, xs, adv_xs, ys1, ys2,
                 radius: float, beta: Optional[float] = None,
                 L1: Optional[float] = None, L2: Optional[float] = None,
                 threshold_percentile: float = 90.0, beta_pairs: int = 40,
                 beta_pair_radius: Optional[float] = None,
                 seed: int = 0) -> BoundReport:
    """Assemble every bound input from the estimators, evaluate the bound,
    estimate the transfer rate, and emit a verdict.

    beta defaults to the max of the two pairwise-ratio estimates (a lower
    estimate of the true constant); pass the exact value for closed-form
    models. Thresholds default to the given percentile of the clean losses.
    s_inf is the empirical minimum cosine over the sampled points and is
    reported with its sample size.
    """
    xs = list(xs)
    adv_xs = list(adv_xs)
    if len(xs) != len(adv_xs) or len(xs) == 0:
        raise EstimationError("need a nonempty set of (clean, adversarial) pairs")
    ys1 = list(ys1) if ys1 is not None else [None] * len(xs)
    ys2 = list(ys2) if ys2 is not None else [None] * len(xs)

    clean_f = np.array([f.loss(x, y) for x, y in zip(xs, ys1)])
    clean_g = np.array([g.loss(x, y) for x, y in zip(xs, ys2)])
    adv_f = np.array([f.loss(x, y) for x, y in zip(adv_xs, ys1)])
    adv_g = np.array([g.loss(x, y) for x, y in zip(adv_xs, ys2)])
    grads_f = [np.asarray(f.grad(x, y), dtype=np.float64).ravel()
               for x, y in zip(xs, ys1)]
    grads_g = [np.asarray(g.grad(x, y), dtype=np.float64).ravel()
               for x, y in zip(xs, ys2)]
    norms_f = np.array([np.linalg.norm(v) for v in grads_f])
    norms_g = np.array([np.linalg.norm(v) for v in grads_g])

    if L1 is None:
        L1 = float(np.percentile(clean_f, threshold_percentile))
    if L2 is None:
        L2 = float(np.percentile(clean_g, threshold_percentile))

    estimated_beta = beta is None
    if estimated_beta:
        pair_radius = beta_pair_radius if beta_pair_radius is not None else 2 * radius
        points = np.stack([np.asarray(x, dtype=np.float64).ravel() for x in xs])
        beta_f = estimate_beta_from_grads(
            lambda p: np.asarray(f.grad(p.reshape(np.shape(xs[0])), ys1[0]),
                                 dtype=np.float64).ravel(),
            points, beta_pairs, pair_radius, seed=seed)
        beta_g = estimate_beta_from_grads(
            lambda p: np.asarray(g.grad(p.reshape(np.shape(xs[0])), ys2[0]),
                                 dtype=np.float64).ravel(),
            points, beta_pairs, pair_radius, seed=seed + 1)
        beta = max(beta_f, beta_g)

    cosines = []
    skipped = 0
    for u, v in zip(grads_f, grads_g):
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0.0 or nv == 0.0:
            skipped += 1
            continue
        cosines.append(float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0)))
    if not cosines:
        raise EstimationError("all sampled gradient pairs were zero")
    s_inf = min(cosines)

    c_f, c_g, excluded = bound_constants(clean_f, norms_f, clean_g, norms_g,
                                         beta, radius, L1, L2)
    inputs = BoundInputs(
        alpha=alpha_from_losses(adv_f, L1), beta=beta,
        gamma_f=risk_from_losses(clean_f, L1),
        gamma_g=risk_from_losses(clean_g, L2),
        c_f=c_f, c_g=c_g, L1=L1, L2=L2, s_inf=s_inf, radius=radius)
    rate, conf = transfer_rate_from_losses(clean_f, clean_g, adv_f, adv_g, L1, L2)
    meta = {"n_points": len(xs), "s_inf_samples": len(cosines),
            "zero_grad_skipped_similarity": skipped,
            "zero_grad_excluded_constants": excluded,
            "beta_estimated": estimated_beta,
            "thresholds_from_percentile": threshold_percentile}
    return BoundReport.assemble(inputs, rate, conf, metadata=meta)


def ldm_surrogate_loss(model: ToyLDM, t: int,
                       cond: Optional[Condition] = None) -> ModelLoss:
    """The per-time-step surrogate as a ModelLoss: y is the noise draw."""

    def _loss(x, y):
        with torch.no_grad():
            return float(loss_value(model, t, torch.as_tensor(x), torch.as_tensor(y), cond))

    def _grad(x, y):
        g = loss_gradient(model, t, torch.as_tensor(x), torch.as_tensor(y), cond)
        return g.numpy()

    return ModelLoss(loss=_loss, grad=_grad, name=f"eps_theta_t{t}")


def ldm_inference_loss(model: ToyLDM, strength: float = 0.7, steps: int = 8,
                       guidance: float = 1.0, noise_seed: int = 0,
                       cond: Optional[Condition] = None) -> ModelLoss:
    """Target-model loss D(f_infer(x), x_ori) with one fixed pipeline noise
    realization, so the loss is a deterministic differentiable map. y is the
    image being protected. Kept at few denoising steps: the whole reverse
    chain is differentiated."""
    from .pipelines import denoise_step, time_grid
    from .schedule import diffuse_to

    cond = cond if cond is not None else null_condition()
    t_start = int(round(strength * model.T))
    grid = time_grid(t_start, steps)

    def _forward(xb):
        gen = torch.Generator().manual_seed(noise_seed)
        z = model.encode(xb)
        noise = torch.randn(z.shape, generator=gen, dtype=xb.dtype)
        z = diffuse_to(z, grid[0], noise, model.schedule)
        for t_hi, t_lo in zip(grid[:-1], grid[1:]):
            z = denoise_step(z, t_hi, cond, guidance, model, t_prev=t_lo)
        return model.decode(z)

    def _loss(x, y):
        with torch.no_grad():
            out = _forward(torch.as_tensor(x)[None])
            return float((out[0] - torch.as_tensor(y)).square().sum().sqrt())

    def _grad(x, y):
        xb = torch.as_tensor(x)[None].detach().requires_grad_(True)
        out = _forward(xb)
        sq = (out[0] - torch.as_tensor(y)).square().sum()
        g, = torch.autograd.grad(sq, xb)
        norm = float(sq.detach().sqrt())
        if norm == 0.0:
            return np.zeros_like(g[0].numpy())
        return (g[0] / (2.0 * norm)).numpy()

    return ModelLoss(loss=_loss, grad=_grad, name="f_infer_distance")


# --------------------------------------------------------------------------
# proof-step checkers
# --------------------------------------------------------------------------

def check_lemma1(trial_count: int, dimension: int, seed: int = 0,
                 epsilon: float = 1.0, drop_similarity_term: bool = False,
                 force_x_equals_y: bool = False) -> dict:
    """Randomized check of the proof's angle lemma.

    Samples unit x, y, a perturbation delta with ||delta|| <= epsilon and a
    threshold c placed so the premise
        delta . y <= c - epsilon * sqrt(2 - 2 cos<x, y>)
    is frequently active and near-tight. Whenever the premise holds the
    conclusion delta . x <= c is asserted. One in ten trials uses the
    adversarial delta aligned with (x - y), the lemma's tight direction.

    drop_similarity_term checks the deliberately corrupted premise
    (delta . y <= c) instead, which a correct implementation must report as
    violated in some trials.
    """
    if dimension < 2:
        raise DomainError("dimension must be >= 2")
    rng = np.random.default_rng(seed)
    violations = 0
    premise_hits = 0
    for k in range(trial_count):
        x = rng.standard_normal(dimension)
        x /= np.linalg.norm(x)
        if force_x_equals_y:
            y = x.copy()
        else:
            y = rng.standard_normal(dimension)
            y /= np.linalg.norm(y)
        if k % 10 == 0 and not force_x_equals_y:
            diff = x - y
            nd = np.linalg.norm(diff)
            delta = epsilon * diff / nd if nd > 0 else rng.standard_normal(dimension)
        else:
            delta = rng.standard_normal(dimension)
            delta *= rng.uniform(0, epsilon) / np.linalg.norm(delta)
        cos_xy = float(np.clip(np.dot(x, y), -1.0, 1.0))
        gap = epsilon * math.sqrt(max(0.0, 2.0 - 2.0 * cos_xy))
        u = rng.uniform(-0.2, 0.5)
        c = float(np.dot(delta, y)) + gap + u
        premise_gap = 0.0 if drop_similarity_term else gap
        if np.dot(delta, y) <= c - premise_gap:
            premise_hits += 1
            if np.dot(delta, x) > c + 1e-12:
                violations += 1
    return {"trials": trial_count, "premise_hits": premise_hits,
            "violations": violations}


def check_taylor_bounds(loss_fn: Callable[[np.ndarray], float],
                        grad_fn: Callable[[np.ndarray], np.ndarray],
                        beta: float, x: np.ndarray, epsilon: float,
                        delta_samples: int, seed: int = 0) -> dict:
    """Checks the two-sided Taylor-with-Lagrange-remainder envelope

        |L(x + delta) - L(x) - delta . grad L(x)| <= beta * epsilon^2 / 2

    for sampled ||delta|| <= epsilon: half uniform in the ball, half on the
    sphere (where the envelope is tight for quadratics). Equality cases are
    admitted up to a relative float tolerance.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    base = float(loss_fn(x))
    g = np.asarray(grad_fn(x), dtype=np.float64)
    pad = beta * epsilon * epsilon / 2.0
    tol = 1e-12 * (1.0 + abs(base) + pad)
    violations = 0
    for k in range(delta_samples):
        d = rng.standard_normal(x.shape)
        d /= np.linalg.norm(d)
        r = epsilon if k % 2 == 0 else epsilon * rng.uniform(0, 1)
        delta = d * r
        lin = base + float(np.dot(delta, g))
        actual = float(loss_fn(x + delta))
        if actual > lin + pad + tol or actual < lin - pad - tol:
            violations += 1
    return {"samples": delta_samples, "violations": violations}
