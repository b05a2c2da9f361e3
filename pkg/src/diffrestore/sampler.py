"""The staged restoration sampler, end to end.

A run makes two reverse-diffusion passes. The first generates the pseudo
label y_p from pure noise under weak guidance toward the degraded input.
The second restores: every step estimates the clean image, evaluates the
fidelity and smoothness losses (stage I, t > T1) plus the color loss
(stage II, t <= T1), and shifts the reverse-transition mean by the scaled
loss gradient. The color target y_s is built once on entering stage II by
transferring the pseudo label's skin statistics onto the current estimate.

State quantization: the latent x_t and every denoiser output are rounded
to f32-representable values at fixed points of the loop. All arithmetic
stays f64, but a run backed by a remote denoiser (whose wire format is
f32) then reproduces a local analytic run bit for bit.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, NumericError
from .tensors import BinaryMask, ImageTensor, ParsingMap, MAX_LABEL
from .schedule import NoiseSchedule, posterior, predict_x0, q_sample, guided_transition
from .denoise import Denoiser
from .regions import LabelSets, complement, default_radius, extend_mask, labels_to_mask, make_guide_mask, select
from .guidance import assemble_gradient, color_transfer, loss_color, loss_fidelity, loss_smoothness
from .metrics import edge_variation, mse_psnr
from .tabletext import format_table

YC_SOURCES = ("auto", "restored", "pseudo")


@dataclass(frozen=True)
class GuidanceConfig:
    """Every knob of the staged run; defaults follow the reference setting
    (weak 1e-3, strong 3.5e-3, stage boundary at 0.4 T, no inner repeats)."""

    s_w: float = 1e-3
    s_s: float = 3.5e-3
    T1: int | None = None              # None resolves to round(0.4 T)
    N: int = 1
    dilation_radius: int | None = None  # None resolves to round(3 H / 512)
    labels: LabelSets = field(default_factory=LabelSets)
    color_refresh: int | None = None    # refresh y_s every K stage-II steps
    seed: int = 0
    snapshot_every: int = 0
    yc_source: str = "auto"             # auto | restored | pseudo
    per_label_strength: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.s_w < 0.0 or self.s_s < 0.0:
            raise ConfigError("guidance: scales must be >= 0")
        if self.N < 1:
            raise ConfigError(f"guidance: N must be >= 1, got {self.N}")
        if self.T1 is not None and self.T1 < 0:
            raise ConfigError(f"guidance: T1 must be >= 0, got {self.T1}")
        if self.dilation_radius is not None and self.dilation_radius < 0:
            raise ConfigError("guidance: dilation_radius must be >= 0")
        if self.color_refresh is not None and self.color_refresh < 1:
            raise ConfigError("guidance: color_refresh must be >= 1")
        if self.snapshot_every < 0:
            raise ConfigError("guidance: snapshot_every must be >= 0")
        if self.yc_source not in YC_SOURCES:
            raise ConfigError(f"guidance: yc_source must be one of {YC_SOURCES}")
        for code, mult in self.per_label_strength.items():
            if not 0 <= int(code) <= MAX_LABEL:
                raise ConfigError(f"guidance: per_label_strength code {code} out of range")
            if not (np.isfinite(mult) and mult >= 0.0):
                raise ConfigError(f"guidance: per_label_strength[{code}] must be finite >= 0")

    def resolve_t1(self, sched: NoiseSchedule) -> int:
        t1 = self.T1 if self.T1 is not None else int(round(0.4 * sched.T))
        if t1 > sched.T:
            raise ConfigError(f"guidance: T1={t1} exceeds T={sched.T}")
        return t1

    def resolve_radius(self, height: int) -> int:
        if self.dilation_radius is not None:
            return self.dilation_radius
        return default_radius(height)


@dataclass(frozen=True)
class StepTrace:
    """One sampling step: stage tag, loss values, per-term gradient norms,
    forbidden-region gradient mass (exact-zero check), optional snapshot."""

    t: int
    stage: str
    l1: float
    l2: float
    l3: float
    gnorm_l1: float
    gnorm_l2: float
    gnorm_l3: float
    leak_l1: float = 0.0
    leak_l2: float = 0.0
    leak_l3: float = 0.0
    snapshot: ImageTensor | None = None


TRACE_COLUMNS = [
    "t", "stage", "l1", "l2", "l3",
    "gnorm_l1", "gnorm_l2", "gnorm_l3",
    "leak_l1", "leak_l2", "leak_l3",
]


def format_trace(traces: Sequence[StepTrace], header: Mapping[str, object] | None = None) -> str:
    rows = [
        {
            "t": tr.t, "stage": tr.stage, "l1": tr.l1, "l2": tr.l2, "l3": tr.l3,
            "gnorm_l1": tr.gnorm_l1, "gnorm_l2": tr.gnorm_l2, "gnorm_l3": tr.gnorm_l3,
            "leak_l1": tr.leak_l1, "leak_l2": tr.leak_l2, "leak_l3": tr.leak_l3,
        }
        for tr in traces
    ]
    return format_table(TRACE_COLUMNS, rows, header)


def _f32(arr: NDArray) -> NDArray:
    # Quantization point: round to the nearest f32, keep computing in f64.
    return arr.astype(np.float32).astype(np.float64)


def _pseudo_pass(
    y0: ImageTensor,
    denoiser: Denoiser,
    sched: NoiseSchedule,
    s_w: float,
    rng: np.random.Generator,
    trace: list[StepTrace] | None = None,
) -> ImageTensor:
    shape = y0.shape
    x = _f32(rng.standard_normal(shape))
    try:
        for t in range(sched.T, 0, -1):
            eps = _f32(denoiser.predict_eps(ImageTensor(x), t).data)
            x0h = predict_x0(ImageTensor(x), ImageTensor(eps), t, sched)
            grad = 2.0 * (x0h.data - y0.data)
            moments = posterior(ImageTensor(x), ImageTensor(eps), t, sched)
            noise = rng.standard_normal(shape)
            x = _f32(guided_transition(moments, ImageTensor(grad), s_w, ImageTensor(noise)).data)
            if trace is not None:
                d = x0h.data - y0.data
                l1 = float(np.sum(d * d))
                trace.append(StepTrace(t, "P", l1, 0.0, 0.0,
                                       float(np.sqrt(np.sum(grad * grad))), 0.0, 0.0))
    except NumericError as exc:
        err = NumericError(f"non-finite values during pseudo-label pass at t={t}: {exc}")
        err.trace = list(trace) if trace is not None else []
        raise err from exc
    return ImageTensor(x)


def generate_pseudo_label(
    y0: ImageTensor,
    denoiser: Denoiser,
    sched: NoiseSchedule,
    cfg: GuidanceConfig,
    trace: list[StepTrace] | None = None,
) -> ImageTensor:
    """Full reverse pass from pure noise, weakly guided toward y0.

    With s_w = 0 this is plain unguided ancestral sampling.
    """
    rng = np.random.default_rng(cfg.seed)
    return _pseudo_pass(y0, denoiser, sched, cfg.s_w, rng, trace)


def _check_spatial(img: ImageTensor, h: int, w: int, what: str) -> None:
    if (img.height, img.width) != (h, w):
        raise ValueError(f"restore: {what} is {img.height}x{img.width}, expected {h}x{w}")


def restore(
    y0: ImageTensor,
    y_restored: ImageTensor | None,
    m: BinaryMask,
    p: ParsingMap,
    denoiser: Denoiser,
    sched: NoiseSchedule,
    cfg: GuidanceConfig,
) -> tuple[ImageTensor, list[StepTrace]]:
    """Staged restoration of a degraded input.

    Returns the final clean image and the per-step trace of the main pass.
    The fidelity target y_c comes from y_restored when provided (or when
    cfg.yc_source forces it), otherwise from the generated pseudo label.
    """
    h, w = y0.height, y0.width
    if (m.height, m.width) != (h, w) or (p.height, p.width) != (h, w):
        raise ValueError("restore: mask/parsing dims do not match the input image")
    if y_restored is not None:
        _check_spatial(y_restored, h, w, "restored image")
        if y_restored.channels != y0.channels:
            raise ValueError("restore: restored image channel count differs")
    t1 = cfg.resolve_t1(sched)
    radius = cfg.resolve_radius(h)
    if cfg.yc_source == "restored" and y_restored is None:
        raise ConfigError("guidance: yc_source=restored but no restored image given")

    rng = np.random.default_rng(cfg.seed)
    y_p = _pseudo_pass(y0, denoiser, sched, cfg.s_w, rng)

    use_restored = y_restored is not None and cfg.yc_source in ("auto", "restored")
    src = y_restored if use_restored else y_p
    m_guide = make_guide_mask(m, p, cfg.labels)
    m_ext = extend_mask(m_guide, radius)
    skin = labels_to_mask(p, cfg.labels.skin_labels)
    y_c = select(src, complement(m))
    y_n = select(y_p, m_ext)
    y_p_skin = select(y_p, skin)

    strength = np.ones((h, w))
    for code, mult in cfg.per_label_strength.items():
        strength[p.data == int(code)] = mult
    plain_strength = not cfg.per_label_strength

    shape = y0.shape
    x = _f32(rng.standard_normal(shape))
    y_s: ImageTensor | None = None
    traces: list[StepTrace] = []
    try:
        for t in range(sched.T, 0, -1):
            stage2 = t <= t1
            report = None
            for rep in range(cfg.N):
                xt = ImageTensor(x)
                eps = ImageTensor(_f32(denoiser.predict_eps(xt, t).data))
                x0h = predict_x0(xt, eps, t, sched)
                if stage2 and rep == 0:
                    refresh = (
                        cfg.color_refresh is not None
                        and (t1 - t) % cfg.color_refresh == 0
                    )
                    if y_s is None or refresh:
                        y_s = color_transfer(select(x0h, skin), y_p_skin, skin, skin)
                l1, g1 = loss_fidelity(x0h, y_c, m)
                l2, g2 = loss_smoothness(x0h, y_n, m_ext)
                if stage2:
                    l3, g3 = loss_color(x0h, y_s, skin)
                    report = assemble_gradient(True, l1, g1, l2, g2, l3, g3)
                else:
                    report = assemble_gradient(False, l1, g1, l2, g2)
                if plain_strength:
                    grad = report.grad
                else:
                    grad = ImageTensor(report.grad.data * strength[None, :, :])
                moments = posterior(xt, eps, t, sched)
                noise = ImageTensor(rng.standard_normal(shape))
                cand = _f32(guided_transition(moments, grad, cfg.s_s, noise).data)
                if rep < cfg.N - 1:
                    renoise = ImageTensor(rng.standard_normal(shape))
                    x = _f32(q_sample(ImageTensor(cand), t, renoise, sched).data)
            x = cand

            mask_m = m.as_float()[None, :, :]
            outside_ext = 1.0 - m_ext.as_float()[None, :, :]
            outside_skin = 1.0 - skin.as_float()[None, :, :]
            leak1 = float(np.sum(np.abs(g1.data) * mask_m))
            leak2 = float(np.sum(np.abs(g2.data) * outside_ext))
            if stage2:
                leak3 = float(np.sum(np.abs(g3.data) * outside_skin))
            else:
                leak3 = 0.0
            snapshot = None
            if cfg.snapshot_every > 0 and (t % cfg.snapshot_every == 0 or t == 1):
                snapshot = x0h
            traces.append(StepTrace(
                t, "II" if stage2 else "I",
                report.l1, report.l2, report.l3,
                report.gnorm_l1, report.gnorm_l2, report.gnorm_l3,
                leak1, leak2, leak3, snapshot,
            ))
    except NumericError as exc:
        err = NumericError(f"non-finite values during restore at t={t}: {exc}")
        err.trace = traces
        raise err from exc
    return ImageTensor(x), traces


@dataclass(frozen=True)
class SweepInput:
    name: str
    y0: ImageTensor
    y_restored: ImageTensor | None
    mask: BinaryMask
    parsing: ParsingMap


SWEEP_COLUMNS = ["input", "s_w", "s_s", "T1", "mse", "psnr", "edge_var"]

_GRID_KEYS = ("s_w", "s_s", "T1")


def run_ablation_sweep(
    inputs: Sequence[SweepInput],
    grid: Mapping[str, Sequence],
    denoiser: Denoiser,
    sched: NoiseSchedule,
    cfg: GuidanceConfig,
    workers: int = 1,
) -> list[dict]:
    """One restore per (input, grid point); rows ordered by input then cell.

    Every cell reuses cfg.seed, so the table is independent of execution
    order and worker count. MSE/PSNR compare against the restored reference
    when given, else the degraded input, over the non-scratch region.
    """
    if not grid:
        raise ConfigError("sweep: empty grid")
    for key in grid:
        if key not in _GRID_KEYS:
            raise ConfigError(f"sweep: unknown grid key {key!r} (allowed: {_GRID_KEYS})")
    keys = [k for k in _GRID_KEYS if k in grid]
    cells = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]

    jobs = [(inp, cell) for inp in inputs for cell in cells]

    def run_cell(job):
        inp, cell = job
        cell_cfg = replace(cfg, **cell)
        out, _ = restore(inp.y0, inp.y_restored, inp.mask, inp.parsing, denoiser, sched, cell_cfg)
        ref = inp.y_restored if inp.y_restored is not None else inp.y0
        mse, psnr = mse_psnr(out, ref, complement(inp.mask))
        m_ext = extend_mask(
            make_guide_mask(inp.mask, inp.parsing, cell_cfg.labels),
            cell_cfg.resolve_radius(inp.y0.height),
        )
        return {
            "input": inp.name,
            "s_w": cell_cfg.s_w,
            "s_s": cell_cfg.s_s,
            "T1": cell_cfg.resolve_t1(sched),
            "mse": mse,
            "psnr": psnr,
            "edge_var": edge_variation(out, m_ext),
        }

    if workers <= 1:
        return [run_cell(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_cell, jobs))
