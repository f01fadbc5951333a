"""Noise schedules, forward noising, and x0-parameterized reverse steps.

The denoiser predicts the clean sample; the reverse mean recombines that
prediction with the noise implied by the current state,

    mu_t = sqrt(abar_{t-1}) x0_hat + sqrt(1 - abar_{t-1} - sigma_t^2) eps_hat,
    eps_hat = (x_t - sqrt(abar_t) x0_hat) / sqrt(1 - abar_t),

the standard deterministic-sampler form of the x0 parameterization. The
ancestral variance identity sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t)
is baked into every schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadStep, BadSteps

DEFAULT_STEPS = 1000
DEFAULT_KIND = "cosine"


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step cumulative alpha, per-step beta and ancestral sigma tables."""

    kind: str
    alpha_bar: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=float)
        object.__setattr__(self, "alpha_bar", ab)
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        if ab.ndim != 1 or len(ab) < 2:
            raise BadSteps("schedule needs at least 2 steps")
        if np.any(ab <= 0.0) or np.any(ab >= 1.0) or np.any(np.diff(ab) >= 0.0):
            raise BadSteps("alpha_bar must be strictly decreasing within (0, 1)")

    @property
    def steps(self) -> int:
        return len(self.alpha_bar)

    def alpha_bar_prev(self, t: int) -> float:
        """abar_{t-1}, with abar_{-1} defined as 1."""
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "steps": self.steps}


@dataclass(frozen=True)
class NoisyState:
    """A noised sample along with the exact noise draw that produced it."""

    x_t: np.ndarray
    t: int
    epsilon: np.ndarray


def make_schedule(kind: str = DEFAULT_KIND, steps: int = DEFAULT_STEPS) -> DiffusionSchedule:
    """Build a cosine or linear schedule with the ancestral sigma identity."""
    if steps < 2:
        raise BadSteps(f"steps must be >= 2, got {steps}")
    if kind == "linear":
        beta = np.linspace(1e-4, 0.02, steps)
        alpha_bar = np.cumprod(1.0 - beta)
    elif kind == "cosine":
        s = 0.008
        grid = np.arange(steps + 1) / steps
        f = np.cos((grid + s) / (1.0 + s) * np.pi / 2.0) ** 2
        alpha_bar = f[1:] / f[0]
        alpha = alpha_bar / np.concatenate([[1.0], alpha_bar[:-1]])
        beta = np.clip(1.0 - alpha, 0.0, 0.999)
        alpha_bar = np.cumprod(1.0 - beta)
    else:
        raise BadSteps(f"unknown schedule kind {kind!r}")
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    sigma2 = beta * (1.0 - prev) / (1.0 - alpha_bar)
    return DiffusionSchedule(kind, alpha_bar, beta, np.sqrt(sigma2))


def forward_noise(x0: np.ndarray, t: int, sched: DiffusionSchedule, rng_seed: int) -> NoisyState:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps with a seeded draw."""
    if not 0 <= t < sched.steps:
        raise BadStep(f"t={t} outside [0, {sched.steps})")
    x0 = np.asarray(x0, dtype=float)
    eps = np.random.default_rng(rng_seed).standard_normal(x0.shape)
    ab = sched.alpha_bar[t]
    return NoisyState(np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps, t, eps)


def implied_noise(x_t: np.ndarray, x0_pred: np.ndarray, t: int, sched: DiffusionSchedule) -> np.ndarray:
    ab = sched.alpha_bar[t]
    return (x_t - np.sqrt(ab) * x0_pred) / np.sqrt(1.0 - ab)


def reverse_mean(x_t: np.ndarray, x0_pred: np.ndarray, t: int, sched: DiffusionSchedule) -> np.ndarray:
    """Posterior mean of x_{t-1} given the clean-sample prediction."""
    if t < 1:
        raise BadStep("reverse_mean is undefined at t = 0")
    if t >= sched.steps:
        raise BadStep(f"t={t} outside [1, {sched.steps})")
    ab_prev = sched.alpha_bar_prev(t)
    sig2 = float(sched.sigma[t]) ** 2
    eps = implied_noise(x_t, x0_pred, t, sched)
    return np.sqrt(ab_prev) * x0_pred + np.sqrt(max(1.0 - ab_prev - sig2, 0.0)) * eps


def substep_indices(steps: int, substeps: int) -> np.ndarray:
    """Uniformly strided step subset, descending, always containing step 0."""
    if not 1 <= substeps <= steps:
        raise BadSteps(f"substeps must be in [1, {steps}]")
    idx = np.unique(np.linspace(0, steps - 1, substeps).round().astype(int))
    return idx[::-1]


def ddim_sample(
    denoiser,
    cond,
    shape: tuple,
    sched: DiffusionSchedule,
    substeps: int = 50,
    eta: float = 0.0,
    rng_seed: int = 0,
) -> np.ndarray:
    """Accelerated sampling over a strided step subset.

    `denoiser(x_t, cond, t) -> x0_pred` is any callable with that contract.
    With eta = 0 the chain is fully deterministic given the seed; eta = 1
    with substeps = steps matches ancestral sampling.
    """
    if not 0.0 <= eta <= 1.0:
        raise BadSteps("eta must lie in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    x = rng.standard_normal(shape)
    idx = substep_indices(sched.steps, substeps)
    for i, t in enumerate(idx):
        x0_pred = denoiser(x, cond, int(t))
        eps = implied_noise(x, x0_pred, int(t), sched)
        ab_t = sched.alpha_bar[t]
        ab_prev = 1.0 if i == len(idx) - 1 else float(sched.alpha_bar[idx[i + 1]])
        sig = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(max(1.0 - ab_t / ab_prev, 0.0))
        x = (
            np.sqrt(ab_prev) * x0_pred
            + np.sqrt(max(1.0 - ab_prev - sig**2, 0.0)) * eps
        )
        if sig > 0.0:
            x = x + sig * rng.standard_normal(shape)
    return x
