"""Noise schedules, forward noising and the conditioned reverse step.

Time steps are 1-based everywhere in this module's API: ``t`` runs over
``1..T`` and ``sched.beta[t - 1]`` is β_t.
"""

import math
from dataclasses import dataclass

import torch

from dcmd.config import SCHEDULES, VARIANCES
from dcmd.errors import ArgumentError, ConfigError, ShapeError

# Offset of the alpha-bar cosine schedule.
COSINE_OFFSET = 0.008


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    beta: torch.Tensor  # (T,) float64
    variance: str = "beta"

    def __post_init__(self):
        beta = torch.as_tensor(self.beta, dtype=torch.float64).flatten()
        if beta.numel() < 1 or not torch.all((beta > 0) & (beta < 1)):
            raise ConfigError("noise schedule betas must lie in (0, 1)")
        if self.variance not in VARIANCES:
            raise ConfigError(f"variance must be one of {', '.join(VARIANCES)}, got {self.variance!r}")
        object.__setattr__(self, "beta", beta)

    @property
    def T(self) -> int:
        return self.beta.numel()

    @property
    def alpha(self) -> torch.Tensor:
        return 1.0 - self.beta

    @property
    def alpha_bar(self) -> torch.Tensor:
        return torch.cumprod(self.alpha, dim=0)

    @property
    def posterior_variance(self) -> torch.Tensor:
        alpha_bar = self.alpha_bar
        prev = torch.cat([alpha_bar.new_ones(1), alpha_bar[:-1]])
        return self.beta * (1.0 - prev) / (1.0 - alpha_bar)

    @property
    def sigma(self) -> torch.Tensor:
        if self.variance == "posterior":
            return self.posterior_variance.sqrt()
        return self.beta.sqrt()

    def betas(self) -> list[float]:
        return self.beta.tolist()

    @classmethod
    def from_betas(cls, betas, variance: str = "beta") -> "NoiseSchedule":
        return cls(torch.as_tensor(betas, dtype=torch.float64), variance)


def build_schedule(T: int, beta1: float, beta_t: float, kind: str = "cosine-beta", variance: str = "beta") -> NoiseSchedule:
    """β_1..β_T rising from ``beta1`` to ``beta_t``.

    ``cosine-beta`` interpolates β itself along a half cosine between the two
    endpoints. ``cosine-alpha-bar`` derives β from the offset-cosine ᾱ curve
    and clips it to ``[beta1, beta_t]``.
    """
    if isinstance(T, bool) or int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T!r}")
    if not 0.0 < beta1 <= beta_t < 1.0:
        raise ConfigError(f"need 0 < beta1 <= betaT < 1, got beta1={beta1}, betaT={beta_t}")
    T = int(T)
    steps = torch.arange(1, T + 1, dtype=torch.float64)
    if kind == "cosine-beta":
        if T == 1:
            beta = torch.tensor([beta_t], dtype=torch.float64)
        else:
            beta = beta_t + 0.5 * (beta1 - beta_t) * (1.0 + torch.cos(math.pi * (steps - 1) / (T - 1)))
    elif kind == "cosine-alpha-bar":
        def f(s):
            return torch.cos((s / T + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2

        alpha_bar = f(steps) / f(torch.zeros(1, dtype=torch.float64))
        prev = torch.cat([torch.ones(1, dtype=torch.float64), alpha_bar[:-1]])
        beta = (1.0 - alpha_bar / prev).clamp(beta1, beta_t)
    else:
        raise ConfigError(f"schedule must be one of {', '.join(SCHEDULES)}, got {kind!r}")
    return NoiseSchedule(beta, variance)


def sample_timesteps(n: int, T: int, generator: torch.Generator | None = None) -> torch.Tensor:
    """``n`` steps drawn uniformly from ``1..T``."""
    return torch.randint(1, T + 1, (n,), generator=generator)


def _check_steps(t, T: int) -> torch.Tensor:
    steps = torch.as_tensor(t, dtype=torch.long)
    if steps.numel() == 0 or steps.min() < 1 or steps.max() > T:
        raise ArgumentError(f"time step must be in 1..{T}, got {t!r}")
    return steps


def _at(values: torch.Tensor, steps: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """``values[t - 1]`` broadcast against ``like`` (per batch row when ``t`` is a vector)."""
    picked = values.to(device=like.device)[steps.to(like.device) - 1].to(like.dtype)
    if picked.ndim == 0:
        return picked
    return picked.reshape(-1, *([1] * (like.ndim - 1)))


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """√ᾱ_t·x0 + √(1−ᾱ_t)·eps."""
    if eps.shape != x0.shape:
        raise ShapeError(f"eps shape {tuple(eps.shape)} does not match x0 {tuple(x0.shape)}")
    steps = _check_steps(t, sched.T)
    alpha_bar = _at(sched.alpha_bar, steps, x0)
    return alpha_bar.sqrt() * x0 + (1.0 - alpha_bar).sqrt() * eps


def reverse_step(xt: torch.Tensor, t, eps_pred: torch.Tensor, z: torch.Tensor | None, sched: NoiseSchedule) -> torch.Tensor:
    """(1/√α_t)(x_t − (1−α_t)/√(1−ᾱ_t)·eps_pred) + σ_t·z.

    ``z`` must be zero (or None) wherever t == 1.
    """
    if eps_pred.shape != xt.shape:
        raise ShapeError(f"eps_pred shape {tuple(eps_pred.shape)} does not match x_t {tuple(xt.shape)}")
    steps = _check_steps(t, sched.T)
    alpha = _at(sched.alpha, steps, xt)
    alpha_bar = _at(sched.alpha_bar, steps, xt)
    out = (xt - (1.0 - alpha) / (1.0 - alpha_bar).sqrt() * eps_pred) / alpha.sqrt()
    if z is None:
        return out
    if z.shape != xt.shape:
        raise ShapeError(f"z shape {tuple(z.shape)} does not match x_t {tuple(xt.shape)}")
    first = (steps == 1).to(xt.device)
    if first.ndim == 0:
        first_rows = z if bool(first) else z[:0]
    else:
        first_rows = z[first]
    if torch.any(first_rows != 0):
        raise ArgumentError("z must be 0 at t=1")
    return out + _at(sched.sigma, steps, xt) * z
