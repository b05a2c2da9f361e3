"""Noise schedule and the closed-form DDPM step quantities.

Everything here is a pure function of the schedule arrays: the forward
noising map, the clean-image estimate from a predicted noise, the reverse
posterior moments, and the guidance-shifted transition. Timesteps run
t = 1..T with alpha_bar[0] = 1, so the final reverse step (t = 1) has
zero posterior variance and is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError
from .tensors import ImageTensor

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule {beta_t} with cached alpha and alpha_bar arrays.

    betas has length T (index t-1 holds beta_t); alpha_bars has length T+1
    with alpha_bars[0] = 1 so alpha_bar(t) is a plain index.
    """

    betas: NDArray[np.float64]

    def __post_init__(self) -> None:
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ConfigError("schedule: betas must be a non-empty 1-d array")
        if np.any(b <= 0.0) or np.any(b >= 1.0):
            raise ConfigError("schedule: betas must lie strictly in (0, 1)")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)
        alphas = 1.0 - b
        abar = np.concatenate([[1.0], np.cumprod(alphas)])
        if np.any(np.diff(abar) >= 0.0) or not np.all(abar > 0.0):
            raise ConfigError("schedule: alpha_bar must stay positive and strictly decrease")
        alphas.setflags(write=False)
        abar.setflags(write=False)
        object.__setattr__(self, "_alphas", alphas)
        object.__setattr__(self, "_alpha_bars", abar)

    @property
    def T(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self._alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ConfigError(f"schedule: t={t} outside 0..{self.T}")
        return float(self._alpha_bars[t])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ConfigError(f"schedule: t={t} outside 1..{self.T}")


def make_linear_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Betas linearly interpolated from beta_start to beta_end inclusive."""
    if T < 1:
        raise ConfigError(f"schedule: T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"schedule: need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


@dataclass(frozen=True)
class PosteriorMoments:
    """Reverse-transition mean and isotropic variance scale at one step."""

    mean: ImageTensor
    variance_scale: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.variance_scale) and self.variance_scale >= 0.0):
            raise ValueError(f"variance_scale must be finite and >= 0, got {self.variance_scale}")


def _check_shapes(a: ImageTensor, b: ImageTensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def q_sample(x0: ImageTensor, t: int, eps: ImageTensor, sched: NoiseSchedule) -> ImageTensor:
    """Forward noising: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    t = 0 is allowed as the identity endpoint (abar_0 = 1).
    """
    _check_shapes(x0, eps, "q_sample")
    ab = sched.alpha_bar(t)
    return ImageTensor(math.sqrt(ab) * x0.data + math.sqrt(1.0 - ab) * eps.data)


def predict_x0(xt: ImageTensor, eps_hat: ImageTensor, t: int, sched: NoiseSchedule) -> ImageTensor:
    """Clean-image estimate: xt / sqrt(abar_t) - eps_hat sqrt((1 - abar_t) / abar_t)."""
    _check_shapes(xt, eps_hat, "predict_x0")
    ab = sched.alpha_bar(t)
    if ab >= 1.0:
        return ImageTensor(xt.data.copy())
    return ImageTensor(xt.data / math.sqrt(ab) - eps_hat.data * math.sqrt((1.0 - ab) / ab))


def posterior(xt: ImageTensor, eps_hat: ImageTensor, t: int, sched: NoiseSchedule) -> PosteriorMoments:
    """Reverse-step moments from the predicted noise.

    mean = (xt - eps_hat (1 - alpha_t) / sqrt(1 - abar_t)) / sqrt(alpha_t)
    variance_scale = beta_t (1 - abar_{t-1}) / (1 - abar_t), zero at t = 1.
    """
    _check_shapes(xt, eps_hat, "posterior")
    beta = sched.beta(t)
    alpha = sched.alpha(t)
    ab = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t - 1)
    mean = (xt.data - eps_hat.data * (1.0 - alpha) / math.sqrt(1.0 - ab)) / math.sqrt(alpha)
    var = beta * (1.0 - ab_prev) / (1.0 - ab)
    return PosteriorMoments(ImageTensor(mean), var)


def guided_transition(
    moments: PosteriorMoments,
    grad: ImageTensor,
    s: float,
    noise: ImageTensor,
) -> ImageTensor:
    """Mean-shifted reverse draw: mean - s sigma_t^2 grad + sigma_t noise.

    With s = 0 this is the unguided posterior draw; with variance_scale = 0
    (t = 1) the result is the mean regardless of grad and noise.
    """
    _check_shapes(moments.mean, grad, "guided_transition")
    _check_shapes(moments.mean, noise, "guided_transition")
    var = moments.variance_scale
    if var < 0.0:
        raise ValueError("negative variance_scale")
    out = moments.mean.data - s * var * grad.data + math.sqrt(var) * noise.data
    return ImageTensor(out)
