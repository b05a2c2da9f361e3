"""Guidance losses with analytic gradients, the edge-magnitude operator,
and classical color transfer.

All losses are raw sums (no pixel-count normalization; any normalization
folds into the guidance scale) and all gradients are taken with respect to
the current clean estimate, treating the denoiser output and every target
image as constants. Each gradient is exactly zero outside its governing
mask because the mask enters as a plain factor of the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .tensors import BinaryMask, ImageTensor


def _check_dims(img: ImageTensor, target: ImageTensor, mask: BinaryMask, what: str) -> None:
    if img.shape != target.shape:
        raise ValueError(f"{what}: image shape {img.shape} vs target {target.shape}")
    if (img.height, img.width) != (mask.height, mask.width):
        raise ValueError(f"{what}: mask dims {mask.height}x{mask.width} do not match image")


def loss_fidelity(
    x_hat: ImageTensor, y_c: ImageTensor, m: BinaryMask
) -> tuple[float, ImageTensor]:
    """Masked reconstruction toward the clean reference on non-scratch pixels.

    value = sum (1 - M) (y_c - x_hat)^2,  grad = 2 (1 - M) (x_hat - y_c).
    """
    _check_dims(x_hat, y_c, m, "loss_fidelity")
    w = 1.0 - m.as_float()
    d = x_hat.data - y_c.data
    value = float(np.sum(w[None, :, :] * d * d))
    grad = 2.0 * w[None, :, :] * d
    return value, ImageTensor(grad)


def edge_magnitude(y: ImageTensor, m: BinaryMask) -> ImageTensor:
    """Masked mean absolute forward-difference field (1, H, W).

    D(i,j) = |y(i,j) - y(i,j+1)| M(i,j)M(i,j+1) + |y(i,j) - y(i+1,j)| M(i,j)M(i+1,j)
    with absolute differences averaged over channels and out-of-range
    neighbor terms contributing zero.
    """
    if (y.height, y.width) != (m.height, m.width):
        raise ValueError("edge_magnitude: mask dims do not match image")
    mm = m.as_float()
    x = y.data
    d = np.zeros((y.height, y.width))
    if y.width > 1:
        d[:, :-1] += np.abs(x[:, :, :-1] - x[:, :, 1:]).mean(axis=0) * (mm[:, :-1] * mm[:, 1:])
    if y.height > 1:
        d[:-1, :] += np.abs(x[:, :-1, :] - x[:, 1:, :]).mean(axis=0) * (mm[:-1, :] * mm[1:, :])
    return ImageTensor(d[None, :, :])


def loss_smoothness(
    x_hat: ImageTensor, y_n: ImageTensor, m_ext: BinaryMask
) -> tuple[float, ImageTensor]:
    """Squared difference of masked edge fields, with its analytic gradient.

    value = sum_(i,j) (D(x_hat) - D(y_n))^2 over the extended guide mask.
    Each pixel's gradient collects the chain-rule terms of its own D entry
    and of the D entries of its left and upper neighbors; sign(0) = 0 is
    the subgradient choice at the absolute-value kinks.
    """
    _check_dims(x_hat, y_n, m_ext, "loss_smoothness")
    c, h, w = x_hat.shape
    dx = edge_magnitude(x_hat, m_ext).data[0]
    dy = edge_magnitude(y_n, m_ext).data[0]
    diff = dx - dy
    value = float(np.sum(diff * diff))

    mm = m_ext.as_float()
    x = x_hat.data
    r = 2.0 * diff / c
    mh = np.zeros((h, w))
    mv = np.zeros((h, w))
    if w > 1:
        mh[:, :-1] = mm[:, :-1] * mm[:, 1:]
    if h > 1:
        mv[:-1, :] = mm[:-1, :] * mm[1:, :]
    sh = np.zeros((c, h, w))
    sv = np.zeros((c, h, w))
    if w > 1:
        sh[:, :, :-1] = np.sign(x[:, :, :-1] - x[:, :, 1:])
    if h > 1:
        sv[:, :-1, :] = np.sign(x[:, :-1, :] - x[:, 1:, :])

    grad = r * (sh * mh + sv * mv)
    if w > 1:
        grad[:, :, 1:] -= (r * sh * mh)[:, :, :-1]
    if h > 1:
        grad[:, 1:, :] -= (r * sv * mv)[:, :-1, :]
    return value, ImageTensor(grad)


def color_transfer(
    content: ImageTensor,
    reference: ImageTensor,
    mask_c: BinaryMask,
    mask_r: BinaryMask,
) -> ImageTensor:
    """Per-channel moment matching of content onto reference statistics.

    Within mask_c each channel is remapped (x - mu_c) (sigma_r / sigma_c) + mu_r
    using moments over the respective masks (population std); a constant
    content region maps entirely to mu_r. Pixels outside mask_c are
    untouched; transformed pixels are clamped to [-1, 1]. If either mask is
    empty the content is returned unchanged.
    """
    if content.channels != reference.channels:
        raise ValueError("color_transfer: channel count mismatch")
    sel_c = mask_c.data == 1
    sel_r = mask_r.data == 1
    if not sel_c.any() or not sel_r.any():
        return content
    out = content.data.copy()
    for ch in range(content.channels):
        xs = content.data[ch][sel_c]
        rs = reference.data[ch][sel_r]
        mu_c, sigma_c = float(xs.mean()), float(xs.std())
        mu_r, sigma_r = float(rs.mean()), float(rs.std())
        if sigma_c > 0.0:
            mapped = (xs - mu_c) * (sigma_r / sigma_c) + mu_r
        else:
            mapped = np.full_like(xs, mu_r)
        out[ch][sel_c] = np.clip(mapped, -1.0, 1.0)
    return ImageTensor(out)


def loss_color(
    x_hat_s: ImageTensor, y_s: ImageTensor, skin_mask: BinaryMask
) -> tuple[float, ImageTensor]:
    """Skin-region pull toward the color-transferred target.

    value = sum skin (y_s - x_hat)^2,  grad = 2 skin (x_hat - y_s).
    """
    _check_dims(x_hat_s, y_s, skin_mask, "loss_color")
    w = skin_mask.as_float()
    d = x_hat_s.data - y_s.data
    value = float(np.sum(w[None, :, :] * d * d))
    grad = 2.0 * w[None, :, :] * d
    return value, ImageTensor(grad)


@dataclass(frozen=True)
class LossReport:
    """Per-step loss values, assembled gradient, and per-term norms."""

    l1: float
    l2: float
    l3: float
    grad: ImageTensor
    gnorm_l1: float
    gnorm_l2: float
    gnorm_l3: float
    l3_active: bool


def _norm(arr: NDArray) -> float:
    return float(np.sqrt(np.sum(arr * arr)))


def assemble_gradient(
    stage2: bool,
    l1: float,
    g1: ImageTensor,
    l2: float,
    g2: ImageTensor,
    l3: float = 0.0,
    g3: ImageTensor | None = None,
) -> LossReport:
    """Stage I sums grad L1 + grad L2; stage II adds grad L3.

    In stage I any supplied L3 part is ignored and reported as inactive
    zero, so traces can assert the gating exactly.
    """
    if g1.shape != g2.shape:
        raise ValueError("assemble_gradient: gradient shapes differ")
    if stage2:
        if g3 is None:
            raise ValueError("assemble_gradient: stage II requires the L3 gradient")
        if g3.shape != g1.shape:
            raise ValueError("assemble_gradient: gradient shapes differ")
        grad = g1.data + g2.data + g3.data
        return LossReport(
            l1, l2, l3, ImageTensor(grad),
            _norm(g1.data), _norm(g2.data), _norm(g3.data), True,
        )
    grad = g1.data + g2.data
    return LossReport(
        l1, l2, 0.0, ImageTensor(grad),
        _norm(g1.data), _norm(g2.data), 0.0, False,
    )
