"""Noise-prediction backends.

The sampler only ever sees the small contract predict_eps(xt, t) -> eps.
Two closed-form backends (diagonal Gaussian and Gaussian mixture) make the
whole pipeline exactly verifiable at desk scale; the remote backend defers
to an external server speaking the SSDN wire protocol so a real pre-trained
network can be plugged in without this process loading any weights.

For the diagonal Gaussian prior N(mu, diag(var)) the posterior mean of x0
given xt is available in closed form:

    E[x0 | xt] = mu + sqrt(ab) var (xt - sqrt(ab) mu) / (ab var + (1 - ab))

and eps_hat is whatever noise makes predict_x0 return exactly that mean.
The mixture backend weights per-component posterior means by responsibilities
computed in the log domain. Both backends are deterministic and pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from numpy.typing import NDArray

from .tensors import ImageTensor
from .schedule import NoiseSchedule


class Denoiser(Protocol):
    """The single capability every backend provides."""

    def predict_eps(self, xt: ImageTensor, t: int) -> ImageTensor: ...


@dataclass(frozen=True)
class DiagonalGaussianModel:
    """Prior N(mean, diag(var)) over clean images; var elementwise >= 0."""

    mean: ImageTensor
    var: ImageTensor

    def __post_init__(self) -> None:
        if self.mean.shape != self.var.shape:
            raise ValueError("gaussian model: mean and var shapes differ")
        if np.any(self.var.data < 0.0):
            raise ValueError("gaussian model: negative variance")


@dataclass(frozen=True)
class GaussianMixtureModel:
    """Positive weights summing to 1 over diagonal Gaussian components."""

    components: tuple[tuple[float, DiagonalGaussianModel], ...]

    def __post_init__(self) -> None:
        if len(self.components) < 1:
            raise ValueError("mixture needs at least one component")
        weights = [w for w, _ in self.components]
        if any(w <= 0.0 for w in weights):
            raise ValueError("mixture weights must be positive")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {sum(weights)}")
        shape = self.components[0][1].mean.shape
        for _, comp in self.components:
            if comp.mean.shape != shape:
                raise ValueError("mixture components must share one shape")


def _eps_from_x0(xt: NDArray, x0: NDArray, ab: float) -> NDArray:
    return (xt - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)


def gaussian_predict_eps(
    model: DiagonalGaussianModel, xt: ImageTensor, t: int, sched: NoiseSchedule
) -> ImageTensor:
    """eps_hat such that predict_x0 recovers the exact posterior mean E[x0|xt].

    At abar_t = 1 the conversion is 0/0; zeros are returned since the forward
    map adds no noise there.
    """
    if xt.shape != model.mean.shape:
        raise ValueError("gaussian_predict_eps: xt shape differs from model shape")
    ab = sched.alpha_bar(t)
    if ab >= 1.0:
        return ImageTensor(np.zeros_like(xt.data))
    # Expression order is part of the wire contract: the reference server
    # reproduces these lines so remote and local eps agree bitwise in f32.
    sab = math.sqrt(ab)
    mu = model.mean.data
    var = model.var.data
    denom = ab * var + (1.0 - ab)
    x0 = mu + sab * var * (xt.data - sab * mu) / denom
    return ImageTensor(_eps_from_x0(xt.data, x0, ab))


def gmm_predict_eps(
    model: GaussianMixtureModel, xt: ImageTensor, t: int, sched: NoiseSchedule
) -> ImageTensor:
    """Responsibility-weighted posterior mean across mixture components.

    Component k has marginal xt ~ N(sqrt(ab) mu_k, ab var_k + (1 - ab));
    responsibilities come from those likelihoods via log-sum-exp.
    """
    if xt.shape != model.components[0][1].mean.shape:
        raise ValueError("gmm_predict_eps: xt shape differs from model shape")
    ab = sched.alpha_bar(t)
    if ab >= 1.0:
        return ImageTensor(np.zeros_like(xt.data))
    sab = math.sqrt(ab)
    logps = []
    posts = []
    for w, comp in model.components:
        mu = comp.mean.data
        var = comp.var.data
        s2 = ab * var + (1.0 - ab)
        d = xt.data - sab * mu
        logps.append(math.log(w) - 0.5 * float(np.sum(d * d / s2)) - 0.5 * float(np.sum(np.log(s2))))
        posts.append(mu + sab * var * d / s2)
    logps_arr = np.array(logps)
    logps_arr -= logps_arr.max()
    resp = np.exp(logps_arr)
    resp /= resp.sum()
    x0 = np.zeros_like(xt.data)
    for r, post in zip(resp, posts):
        x0 += r * post
    return ImageTensor(_eps_from_x0(xt.data, x0, ab))


@dataclass(frozen=True)
class GaussianDenoiser:
    model: DiagonalGaussianModel
    sched: NoiseSchedule

    def predict_eps(self, xt: ImageTensor, t: int) -> ImageTensor:
        return gaussian_predict_eps(self.model, xt, t, self.sched)


@dataclass(frozen=True)
class GMMDenoiser:
    model: GaussianMixtureModel
    sched: NoiseSchedule

    def predict_eps(self, xt: ImageTensor, t: int) -> ImageTensor:
        return gmm_predict_eps(self.model, xt, t, self.sched)


class RemoteDenoiser:
    """Pass-through to an external denoiser over one protocol connection.

    The payload is never transformed numerically beyond the f32 wire width;
    exclusive per connection, so parallel callers open parallel clients.
    """

    def __init__(self, client) -> None:
        self._client = client

    def predict_eps(self, xt: ImageTensor, t: int) -> ImageTensor:
        out = self._client.request(t, xt.data.astype(np.float32))
        return ImageTensor(out.astype(np.float64))

    def close(self) -> None:
        self._client.close()


def remote_predict_eps(endpoint: str, xt: ImageTensor, t: int, timeout: float = 30.0) -> ImageTensor:
    """One-shot remote call: connect, handshake, one request, close."""
    from .protocol import DenoiserClient

    client = DenoiserClient.connect(endpoint, timeout=timeout)
    try:
        return RemoteDenoiser(client).predict_eps(xt, t)
    finally:
        client.close()
