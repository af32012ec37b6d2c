"""Noise schedules, forward corruption, the simplified noise-prediction loss,
and the DDPM / DDIM reverse samplers.

The denoiser is any callable eps = model(x_t, t) with t a per-item or scalar
integer timestep in 1..T.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class NoiseSchedule:
    T: int
    beta: torch.Tensor
    alpha: torch.Tensor
    alpha_bar: torch.Tensor
    sqrt_alpha_bar: torch.Tensor
    sqrt_one_minus_alpha_bar: torch.Tensor
    posterior_variance: torch.Tensor

    def gather(self, name: str, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        """Pick the per-item coefficient for timesteps t (1-based), shaped to broadcast
        against an image batch."""
        coef = getattr(self, name).to(like.dtype)[t - 1]
        return coef.view(-1, *(1,) * (like.ndim - 1)) if coef.ndim else coef


@dataclass
class SamplerConfig:
    kind: str = "ddpm"                # "ddpm" | "ddim"
    ddim_steps: int = 50
    eta: float = 0.0
    variance_mode: str = "fixed_beta"  # "fixed_beta" | "fixed_posterior"

    def __post_init__(self):
        if self.kind not in ("ddpm", "ddim"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.variance_mode not in ("fixed_beta", "fixed_posterior"):
            raise ValueError(f"unknown variance mode {self.variance_mode!r}")


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                  dtype=torch.float64) -> NoiseSchedule:
    """Linear beta schedule with all derived coefficients."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = torch.linspace(beta_start, beta_end, T, dtype=dtype)
    alpha = 1.0 - beta
    alpha_bar = torch.cumprod(alpha, dim=0)
    alpha_bar_prev = torch.cat([torch.ones(1, dtype=dtype), alpha_bar[:-1]])
    posterior_variance = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    return NoiseSchedule(
        T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar,
        sqrt_alpha_bar=alpha_bar.sqrt(),
        sqrt_one_minus_alpha_bar=(1.0 - alpha_bar).sqrt(),
        posterior_variance=posterior_variance,
    )


def _check_t(t, T):
    t = torch.as_tensor(t)
    if (t < 1).any() or (t > T).any():
        raise ValueError(f"timestep {t} outside 1..{T}")
    return t


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Closed-form forward marginal x_t = sqrt(ab_t) x0 + sqrt(1-ab_t) eps."""
    t = _check_t(t, schedule.T)
    return (schedule.gather("sqrt_alpha_bar", t, x0) * x0
            + schedule.gather("sqrt_one_minus_alpha_bar", t, x0) * eps)


def loss_simple(model, x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
                schedule: NoiseSchedule) -> torch.Tensor:
    """Mean squared error between the true and predicted corrupting noise."""
    x_t = q_sample(x0, t, eps, schedule)
    return ((eps - model(x_t, t)) ** 2).mean()


def p_sample_step(model, x_t: torch.Tensor, t: int, schedule: NoiseSchedule,
                  variance_mode: str = "fixed_beta",
                  generator: torch.Generator | None = None) -> torch.Tensor:
    """One ancestral DDPM reverse step x_t -> x_{t-1}; deterministic at t=1."""
    _check_t(t, schedule.T)
    eps = model(x_t, t)
    beta_t = schedule.beta[t - 1].to(x_t.dtype)
    alpha_t = schedule.alpha[t - 1].to(x_t.dtype)
    somab_t = schedule.sqrt_one_minus_alpha_bar[t - 1].to(x_t.dtype)
    mean = (x_t - (beta_t / somab_t) * eps) / alpha_t.sqrt()
    if t == 1:
        return mean
    if variance_mode == "fixed_posterior":
        var = schedule.posterior_variance[t - 1].to(x_t.dtype)
    else:
        var = beta_t
    z = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype)
    return mean + var.sqrt() * z


def ddim_step(model, x_t: torch.Tensor, t: int, t_prev: int, schedule: NoiseSchedule,
              eta: float = 0.0, generator: torch.Generator | None = None) -> torch.Tensor:
    """One DDIM step from timestep t to t_prev (t_prev may be 0 for the final step)."""
    _check_t(t, schedule.T)
    if t_prev >= t:
        raise ValueError("t_prev must be < t")
    eps = model(x_t, t)
    ab_t = schedule.alpha_bar[t - 1].to(x_t.dtype)
    ab_prev = (schedule.alpha_bar[t_prev - 1] if t_prev >= 1
               else torch.ones((), dtype=schedule.alpha_bar.dtype)).to(x_t.dtype)
    x0_hat = (x_t - (1 - ab_t).sqrt() * eps) / ab_t.sqrt()
    sigma = eta * ((1 - ab_prev) / (1 - ab_t)).sqrt() * (1 - ab_t / ab_prev).sqrt()
    dir_coef = (1 - ab_prev - sigma ** 2).clamp(min=0).sqrt()
    out = ab_prev.sqrt() * x0_hat + dir_coef * eps
    if eta > 0:
        z = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype)
        out = out + sigma * z
    return out


def sample(model, n_images: int, config: SamplerConfig, schedule: NoiseSchedule,
           shape: tuple, generator: torch.Generator | None = None,
           dtype=torch.float64) -> torch.Tensor:
    """Run the configured reverse sampler from pure noise; output clamped to [-1, 1].

    `shape` is the per-image (channels, H, W).
    """
    if n_images == 0:
        return torch.empty((0, *shape), dtype=dtype)
    x = torch.randn((n_images, *shape), generator=generator, dtype=dtype)
    if config.kind == "ddpm":
        for t in range(schedule.T, 0, -1):
            x = p_sample_step(model, x, t, schedule, config.variance_mode, generator)
    else:
        if config.ddim_steps > schedule.T:
            raise ValueError("ddim_steps must be <= T")
        steps = sorted(set(
            torch.linspace(0, schedule.T, config.ddim_steps + 1).round().long().tolist()))
        for t, t_prev in zip(reversed(steps[1:]), reversed(steps[:-1])):
            x = ddim_step(model, x, t, t_prev, schedule, config.eta, generator)
    return x.clamp(-1.0, 1.0)
