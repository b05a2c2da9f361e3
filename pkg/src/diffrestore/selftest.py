"""Built-in verification suite runnable from the CLI.

Re-derives the package's analytic claims from independent oracles at small
sizes: brute-force loops for the operators, central finite differences for
the loss gradients, closed-form posterior means for the backends, and
byte-level determinism for the sampler. The `corrupt` argument is a test
hook that deliberately breaks one computation so callers can confirm the
suite actually fails loudly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensors import BinaryMask, ImageTensor, ParsingMap
from .schedule import make_linear_schedule, q_sample, predict_x0, posterior, guided_transition
from .denoise import (
    DiagonalGaussianModel, GaussianMixtureModel, GaussianDenoiser, GMMDenoiser,
    gaussian_predict_eps, gmm_predict_eps,
)
from .regions import LabelSets, extend_mask, make_guide_mask
from .guidance import color_transfer, edge_magnitude, loss_color, loss_fidelity, loss_smoothness
from . import protocol
from .sampler import GuidanceConfig, format_trace, restore

CORRUPT_MODES = ("l1-grad-sign",)


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str


def central_fd(loss: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss, coordinate by coordinate."""
    g = np.zeros_like(x)
    flat = g.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        fp = loss(x)
        xf[i] = orig - h
        fm = loss(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2.0 * h)
    return g


def grad_relerr(analytic: np.ndarray, fd: np.ndarray) -> float:
    """Largest coordinate error relative to the gradient's own scale."""
    scale = max(float(np.abs(fd).max()), 1e-12)
    return float(np.abs(analytic - fd).max()) / scale


def brute_edge_magnitude(y: np.ndarray, m: np.ndarray) -> np.ndarray:
    c, h, w = y.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            if j + 1 < w:
                out[i, j] += np.abs(y[:, i, j] - y[:, i, j + 1]).mean() * m[i, j] * m[i, j + 1]
            if i + 1 < h:
                out[i, j] += np.abs(y[:, i, j] - y[:, i + 1, j]).mean() * m[i, j] * m[i + 1, j]
    return out


def brute_dilate(m: np.ndarray, radius: int) -> np.ndarray:
    h, w = m.shape
    out = np.zeros_like(m)
    for i in range(h):
        for j in range(w):
            hit = 0
            for k in range(radius + 1):
                if i - k >= 0 and m[i - k, j]:
                    hit = 1
                if i + k < h and m[i + k, j]:
                    hit = 1
                if j - k >= 0 and m[i, j - k]:
                    hit = 1
                if j + k < w and m[i, j + k]:
                    hit = 1
            out[i, j] = hit
    return out


def run_selftest(corrupt: str | None = None) -> list[PropertyResult]:
    if corrupt is not None and corrupt not in CORRUPT_MODES:
        raise ValueError(f"unknown corrupt mode {corrupt!r}")
    rng = np.random.default_rng(20240817)
    results: list[PropertyResult] = []

    def check(name: str, passed: bool, detail: str) -> None:
        results.append(PropertyResult(name, bool(passed), detail))

    # Schedule arithmetic against hand-computed values.
    sched2 = make_linear_schedule(2, 0.1, 0.2)
    ab2 = sched2.alpha_bar(2)
    xt = ImageTensor(rng.standard_normal((1, 2, 2)))
    var2 = posterior(xt, ImageTensor(np.zeros((1, 2, 2))), 2, sched2).variance_scale
    ok = abs(ab2 - 0.72) < 1e-15 and abs(var2 - 0.2 * 0.1 / 0.28) < 1e-15
    check("schedule-arithmetic", ok, f"alpha_bar2={ab2:.6f} var2={var2:.6f}")

    # Forward/backward round trip.
    sched = make_linear_schedule(50, 1e-3, 0.1)
    worst = 0.0
    for _ in range(5):
        x0 = ImageTensor(rng.uniform(-1, 1, (3, 5, 4)))
        eps = ImageTensor(rng.standard_normal((3, 5, 4)))
        t = int(rng.integers(1, 51))
        back = predict_x0(q_sample(x0, t, eps, sched), eps, t, sched)
        worst = max(worst, float(np.abs(back.data - x0.data).max()))
    check("qsample-roundtrip", worst < 1e-6, f"max abs err {worst:.2e}")

    # Keystone: the Gaussian backend's implied x0 equals the closed form.
    mu = ImageTensor(rng.uniform(-0.5, 0.5, (1, 4, 4)))
    var = ImageTensor(rng.uniform(0.2, 2.0, (1, 4, 4)))
    model = DiagonalGaussianModel(mu, var)
    worst = 0.0
    for t in (1, 17, 50):
        ab = sched.alpha_bar(t)
        z = ImageTensor(rng.standard_normal((1, 4, 4)))
        eps = gaussian_predict_eps(model, z, t, sched)
        got = predict_x0(z, eps, t, sched).data
        want = mu.data + np.sqrt(ab) * var.data * (z.data - np.sqrt(ab) * mu.data) / (
            ab * var.data + (1 - ab)
        )
        worst = max(worst, float(np.abs(got - want).max() / np.abs(want).max()))
    check("gaussian-keystone", worst < 1e-9, f"max rel err {worst:.2e}")

    # A one-component mixture is the Gaussian backend, bitwise.
    gmm = GaussianMixtureModel(((1.0, model),))
    z = ImageTensor(rng.standard_normal((1, 4, 4)))
    same = np.array_equal(
        gmm_predict_eps(gmm, z, 17, sched).data,
        gaussian_predict_eps(model, z, 17, sched).data,
    )
    check("gmm-collapse", same, "single component equals gaussian backend")

    # Gradient checks against central finite differences.
    mask = BinaryMask((rng.uniform(size=(6, 6)) < 0.4).astype(np.uint8))
    y = ImageTensor(rng.uniform(-1, 1, (3, 6, 6)))
    x = rng.uniform(-1, 1, (3, 6, 6))
    _, g1 = loss_fidelity(ImageTensor(x), y, mask)
    g1d = g1.data.copy()
    if corrupt == "l1-grad-sign":
        g1d = -g1d
    fd = central_fd(lambda a: loss_fidelity(ImageTensor(a), y, mask)[0], x.copy())
    err = grad_relerr(g1d, fd)
    check("grad-l1-fd", err < 1e-6, f"rel err {err:.2e}")

    _, g3 = loss_color(ImageTensor(x), y, mask)
    fd = central_fd(lambda a: loss_color(ImageTensor(a), y, mask)[0], x.copy())
    err = grad_relerr(g3.data, fd)
    check("grad-l3-fd", err < 1e-6, f"rel err {err:.2e}")

    ext = BinaryMask((rng.uniform(size=(6, 6)) < 0.7).astype(np.uint8))
    _, g2 = loss_smoothness(ImageTensor(x), y, ext)
    fd = central_fd(lambda a: loss_smoothness(ImageTensor(a), y, ext)[0], x.copy())
    kink_free = _kink_free_coords(x)
    diff = np.abs(g2.data - fd)[kink_free]
    scale = max(float(np.abs(fd[kink_free]).max()), 1e-12)
    err = float(diff.max()) / scale if diff.size else 0.0
    check("grad-l2-fd", err < 1e-4, f"rel err {err:.2e} on {int(kink_free.sum())} coords")

    # Operator oracles.
    worst = 0.0
    for _ in range(10):
        yy = rng.uniform(-1, 1, (3, 7, 7))
        mm = (rng.uniform(size=(7, 7)) < 0.6).astype(np.uint8)
        fast = edge_magnitude(ImageTensor(yy), BinaryMask(mm)).data[0]
        worst = max(worst, float(np.abs(fast - brute_edge_magnitude(yy, mm.astype(float))).max()))
    check("edge-oracle", worst <= 1e-12, f"max abs err {worst:.2e}")

    ok = True
    for _ in range(10):
        mm = (rng.uniform(size=(9, 9)) < 0.2).astype(np.uint8)
        r = int(rng.integers(0, 4))
        fast = extend_mask(BinaryMask(mm), r).data
        ok = ok and np.array_equal(fast, brute_dilate(mm, r))
    check("dilate-oracle", ok, "cross dilation equals neighborhood scan")

    # Color transfer moment matching and idempotence.
    base = rng.uniform(size=(3, 8, 8)) < 0.5
    content = ImageTensor(np.where(base, 0.1, 0.3))
    reference = ImageTensor(np.where(rng.uniform(size=(3, 8, 8)) < 0.5, 0.35, 0.65))
    allm = BinaryMask(np.ones((8, 8), dtype=np.uint8))
    out = color_transfer(content, reference, allm, allm)
    merr = 0.0
    for ch in range(3):
        merr = max(merr, abs(out.data[ch].mean() - reference.data[ch].mean()))
        merr = max(merr, abs(out.data[ch].std() - reference.data[ch].std()))
    twice = color_transfer(out, reference, allm, allm)
    ierr = float(np.abs(twice.data - out.data).max())
    check("color-transfer", merr < 1e-6 and ierr < 1e-6, f"moment err {merr:.2e} idem err {ierr:.2e}")

    # Guided transition degenerations.
    mom = posterior(xt, ImageTensor(rng.standard_normal((1, 2, 2))), 2, sched2)
    noise = ImageTensor(rng.standard_normal((1, 2, 2)))
    grad = ImageTensor(rng.standard_normal((1, 2, 2)))
    unguided = guided_transition(mom, ImageTensor(np.zeros((1, 2, 2))), 0.0, noise)
    zero_s = guided_transition(mom, grad, 0.0, noise)
    ok = np.array_equal(unguided.data, zero_s.data)
    check("transition-degenerate", ok, "s=0 equals unguided draw bitwise")

    # A small full restore: mask safety and byte determinism.
    small_sched = make_linear_schedule(20, 1e-3, 0.1)
    h = w = 8
    p_arr = np.ones((h, w), dtype=np.uint8)
    p_arr[:, :2] = 4
    p = ParsingMap(p_arr)
    m_arr = np.zeros((h, w), dtype=np.uint8)
    m_arr[3:5, 2:6] = 1
    m = BinaryMask(m_arr)
    y0 = ImageTensor(rng.uniform(-0.8, 0.8, (3, h, w)))
    mu3 = ImageTensor(np.zeros((3, h, w)))
    var3 = ImageTensor(np.ones((3, h, w)))
    den = GaussianDenoiser(DiagonalGaussianModel(mu3, var3), small_sched)
    cfg = GuidanceConfig(T1=8, dilation_radius=1, seed=11)
    out1, tr1 = restore(y0, None, m, p, den, small_sched, cfg)
    out2, tr2 = restore(y0, None, m, p, den, small_sched, cfg)
    leak = max(max(r.leak_l1, r.leak_l2, r.leak_l3) for r in tr1)
    check("mask-safety", leak == 0.0, f"max forbidden-region gradient mass {leak}")
    same = np.array_equal(out1.data, out2.data) and format_trace(tr1) == format_trace(tr2)
    check("determinism", same, "identical seed reproduces tensors and trace bytes")

    # Protocol framing round trip in memory.
    tensor = rng.standard_normal((1, 3, 2)).astype(np.float32)
    buf = io.BytesIO(protocol.pack_request(7, tensor))
    frame = protocol.read_frame(buf.read)
    ok = (
        frame.msg_type == protocol.MSG_REQUEST
        and frame.t == 7
        and np.array_equal(frame.tensor, tensor)
    )
    buf = io.BytesIO(protocol.pack_error("boom"))
    err_frame = protocol.read_frame(buf.read)
    ok = ok and err_frame.msg_type == protocol.MSG_ERROR and err_frame.message == "boom"
    check("frame-roundtrip", ok, "request and error frames parse back")

    return results


def _kink_free_coords(x: np.ndarray) -> np.ndarray:
    """Coordinates whose adjacent forward differences all clear 1e-3."""
    c, h, w = x.shape
    ok = np.ones_like(x, dtype=bool)
    dh = np.abs(x[:, :, :-1] - x[:, :, 1:]) > 1e-3
    dv = np.abs(x[:, :-1, :] - x[:, 1:, :]) > 1e-3
    ok[:, :, :-1] &= dh
    ok[:, :, 1:] &= dh
    ok[:, :-1, :] &= dv
    ok[:, 1:, :] &= dv
    return ok
