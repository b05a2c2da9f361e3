"""The three answer strategies: echo, closed-form Gaussian, user hook.

The Gaussian backend reproduces the sampler package's analytic eps line
for line, in the same operation order, so that its f32-rounded response
is bit-identical to what a local run computes. Keep the expression blocks
in sync with that package if either side ever changes.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .frames import MAX_ELEMENTS


class BackendError(Exception):
    """Request the backend cannot answer; reported in-band as an error frame."""


def load_ssdt(path: str) -> np.ndarray:
    """Read an SSDT tensor file: magic, u32 version, u32 ndim, dims, f32 LE."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != b"SSDT":
        raise ValueError(f"{path}: not an SSDT file")
    if len(raw) < 12:
        raise ValueError(f"{path}: truncated header")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != 1:
        raise ValueError(f"{path}: unsupported SSDT version {version}")
    if not 1 <= ndim <= 8:
        raise ValueError(f"{path}: implausible ndim {ndim}")
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    count = 1
    for d in dims:
        count *= d
    if count > MAX_ELEMENTS:
        raise ValueError(f"{path}: dimension overflow")
    body = raw[12 + 4 * ndim:]
    if len(body) != 4 * count:
        raise ValueError(f"{path}: payload size does not match dims")
    return np.frombuffer(body, dtype="<f4").reshape(dims).astype(np.float64)


def alpha_bars(steps: int, beta_start: float, beta_end: float) -> np.ndarray:
    """Cumulative signal schedule, index t in 0..steps with abar[0] = 1.

    Built the same way as the sampler's linear schedule (np.linspace betas,
    cumprod of 1 - beta) so both sides see identical f64 values.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, steps)
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


class EchoBackend:
    """Returns every request payload verbatim."""

    def predict(self, t: int, xt: np.ndarray) -> np.ndarray:
        return xt


class GaussianBackend:
    """Exact posterior-mean eps for a diagonal Gaussian prior N(mean, var)."""

    def __init__(self, mean: np.ndarray, var: np.ndarray, abars: np.ndarray) -> None:
        mean = np.asarray(mean, dtype=np.float64)
        var = np.asarray(var, dtype=np.float64)
        if mean.shape != var.shape:
            raise ValueError(f"mean shape {mean.shape} differs from var shape {var.shape}")
        if mean.ndim != 3:
            raise ValueError(f"model tensors must be (C, H, W), got ndim {mean.ndim}")
        if np.any(var < 0.0):
            raise ValueError("negative variance in model")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise ValueError("non-finite values in model")
        self._mean = mean
        self._var = var
        self._abars = np.asarray(abars, dtype=np.float64)

    def predict(self, t: int, xt_f32: np.ndarray) -> np.ndarray:
        if xt_f32.shape != self._mean.shape:
            raise BackendError(
                f"request shape {xt_f32.shape} does not match model shape {self._mean.shape}"
            )
        if not 0 <= t < self._abars.size:
            raise BackendError(f"t={t} outside schedule 0..{self._abars.size - 1}")
        ab = float(self._abars[t])
        if ab >= 1.0:
            # no noise was ever added at t = 0, so eps is identically zero
            return np.zeros_like(xt_f32)
        xt = xt_f32.astype(np.float64)
        sab = math.sqrt(ab)
        denom = ab * self._var + (1.0 - ab)
        x0 = self._mean + sab * self._var * (xt - sab * self._mean) / denom
        eps = (xt - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)
        return eps.astype(np.float32)


class HookBackend:
    """Adapter over a user-supplied callable fn(xt, t) -> array.

    The hook sees the request as float32 (C, H, W) and may return any real
    dtype; the reply is rounded to f32 for the wire regardless. Exceptions
    raised by the hook surface as error frames, never as a dropped
    connection.
    """

    def __init__(self, fn) -> None:
        self._fn = fn

    def predict(self, t: int, xt: np.ndarray) -> np.ndarray:
        out = np.asarray(self._fn(xt, int(t)))
        if out.shape != xt.shape:
            raise BackendError(f"hook returned shape {out.shape}, expected {xt.shape}")
        out = out.astype(np.float32)
        if not np.all(np.isfinite(out)):
            raise BackendError("hook returned non-finite values")
        return out
