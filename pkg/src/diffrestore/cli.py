"""Operator entry point.

Subcommands: pseudo-label, restore, metrics, sweep, selftest. Runs are
described by one JSON config file (schema in the README); a few flags
override config values and win over the file. Every invalid config is
rejected before any sampling starts, with a message naming the field.

Exit codes: 0 ok, 1 config, 2 file/IO, 3 protocol or denoiser,
4 numeric (non-finite values), 5 selftest failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DiffRestoreError, FileFormatError, NumericError, ProtocolError
from . import tensors
from .tensors import BinaryMask, ImageTensor, ParsingMap
from .schedule import NoiseSchedule, make_linear_schedule
from .denoise import (
    DiagonalGaussianModel, GaussianMixtureModel,
    GaussianDenoiser, GMMDenoiser, RemoteDenoiser,
)
from .protocol import DenoiserClient
from .regions import LabelSets
from . import metrics as metrics_mod
from .metrics import MetricRow
from .sampler import (
    GuidanceConfig, SweepInput, SWEEP_COLUMNS,
    format_trace, generate_pseudo_label, restore, run_ablation_sweep,
)
from .tabletext import format_table
from . import selftest as selftest_mod

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_PROTOCOL = 3
EXIT_NUMERIC = 4
EXIT_SELFTEST = 5

METRIC_COLUMNS = ["input", "contour_iou", "feature_iou", "sat_w1", "edge_var", "mse", "psnr"]


@dataclass
class RunContext:
    sched: NoiseSchedule
    guidance: GuidanceConfig
    image_path: str
    restored_path: str | None
    mask_path: str | None
    parsing_path: str | None
    backend_cfg: dict
    output_dir: str
    workers: int


def _field(cfg: dict, name: str, typ, default=None, required: bool = False):
    cur: object = cfg
    for part in name.split("."):
        if not isinstance(cur, dict) or part not in cur:
            if required:
                raise ConfigError(f"{name}: missing required field")
            return default
        cur = cur[part]
    if cur is None:
        if required:
            raise ConfigError(f"{name}: must not be null")
        return default
    if typ is float and isinstance(cur, int) and not isinstance(cur, bool):
        cur = float(cur)
    if not isinstance(cur, typ) or isinstance(cur, bool) and typ is not bool:
        raise ConfigError(f"{name}: expected {typ.__name__}, got {type(cur).__name__}")
    return cur


def _check_file(path: str | None, name: str) -> None:
    if path is not None and not os.path.isfile(path):
        raise ConfigError(f"{name}: file not found: {path}")


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON: {exc}")


def _label_sets(cfg: dict) -> LabelSets:
    block = _field(cfg, "guidance.labels", dict, default=None)
    if block is None:
        return LabelSets()
    def codes(key, fallback):
        lst = block.get(key)
        if lst is None:
            return fallback
        if not isinstance(lst, list) or not all(isinstance(v, int) for v in lst):
            raise ConfigError(f"guidance.labels.{key}: expected a list of label codes")
        return frozenset(lst)
    defaults = LabelSets()
    return LabelSets(
        guide_labels=codes("guide", defaults.guide_labels),
        skin_labels=codes("skin", defaults.skin_labels),
        exclude_labels=codes("exclude", defaults.exclude_labels),
    )


def build_run(cfg: dict, args: argparse.Namespace) -> RunContext:
    """Validate the whole config (plus flag overrides) before any compute."""
    T = _field(cfg, "schedule.T", int, default=1000)
    beta_start = _field(cfg, "schedule.beta_start", float, default=1e-4)
    beta_end = _field(cfg, "schedule.beta_end", float, default=0.02)
    sched = make_linear_schedule(T, beta_start, beta_end)

    per_label_raw = _field(cfg, "guidance.per_label_strength", dict, default={})
    per_label: dict[int, float] = {}
    for key, val in per_label_raw.items():
        try:
            code = int(key)
        except (TypeError, ValueError):
            raise ConfigError(f"guidance.per_label_strength: bad label code {key!r}")
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ConfigError(f"guidance.per_label_strength.{key}: expected a number")
        per_label[code] = float(val)

    guidance = GuidanceConfig(
        s_w=_field(cfg, "guidance.s_w", float, default=1e-3),
        s_s=_field(cfg, "guidance.s_s", float, default=3.5e-3),
        T1=_field(cfg, "guidance.T1", int, default=None),
        N=_field(cfg, "guidance.N", int, default=1),
        dilation_radius=_field(cfg, "guidance.dilation_radius", int, default=None),
        labels=_label_sets(cfg),
        color_refresh=_field(cfg, "guidance.color_refresh", int, default=None),
        seed=_field(cfg, "seed", int, default=0),
        snapshot_every=_field(cfg, "guidance.snapshot_every", int, default=0),
        yc_source=_field(cfg, "guidance.yc_source", str, default="auto"),
        per_label_strength=per_label,
    )

    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "s_w", None) is not None:
        overrides["s_w"] = args.s_w
    if getattr(args, "s_s", None) is not None:
        overrides["s_s"] = args.s_s
    if getattr(args, "t1", None) is not None:
        overrides["T1"] = args.t1
    if getattr(args, "n", None) is not None:
        overrides["N"] = args.n
    if overrides:
        guidance = replace(guidance, **overrides)
    guidance.resolve_t1(sched)

    image_path = _field(cfg, "inputs.image", str, required=True)
    restored_path = _field(cfg, "inputs.restored", str, default=None)
    mask_path = _field(cfg, "inputs.mask", str, default=None)
    parsing_path = _field(cfg, "inputs.parsing", str, default=None)
    _check_file(image_path, "inputs.image")
    _check_file(restored_path, "inputs.restored")
    _check_file(mask_path, "inputs.mask")
    _check_file(parsing_path, "inputs.parsing")

    backend_cfg = _field(cfg, "backend", dict, required=True)
    kind = backend_cfg.get("kind")
    if kind == "gaussian":
        _check_file(_field(backend_cfg, "mean", str, required=True), "backend.mean")
        _check_file(_field(backend_cfg, "var", str, required=True), "backend.var")
    elif kind == "gmm":
        comps = backend_cfg.get("components")
        if not isinstance(comps, list) or not comps:
            raise ConfigError("backend.components: expected a non-empty list")
        for i, comp in enumerate(comps):
            if not isinstance(comp, dict):
                raise ConfigError(f"backend.components[{i}]: expected an object")
            _field(comp, "weight", float, required=True)
            _check_file(_field(comp, "mean", str, required=True), f"backend.components[{i}].mean")
            _check_file(_field(comp, "var", str, required=True), f"backend.components[{i}].var")
    elif kind == "remote":
        _field(backend_cfg, "endpoint", str, required=True)
    else:
        raise ConfigError(f"backend.kind: expected gaussian, gmm, or remote, got {kind!r}")

    output_dir = getattr(args, "output_dir", None) or _field(cfg, "output_dir", str, required=True)
    workers = _field(cfg, "workers", int, default=1)
    if workers < 1:
        raise ConfigError(f"workers: must be >= 1, got {workers}")
    return RunContext(
        sched, guidance, image_path, restored_path, mask_path, parsing_path,
        backend_cfg, output_dir, workers,
    )


def build_denoiser(ctx: RunContext):
    kind = ctx.backend_cfg["kind"]
    try:
        if kind == "gaussian":
            model = DiagonalGaussianModel(
                tensors.load_tensor(ctx.backend_cfg["mean"]),
                tensors.load_tensor(ctx.backend_cfg["var"]),
            )
            return GaussianDenoiser(model, ctx.sched)
        if kind == "gmm":
            comps = tuple(
                (float(c["weight"]), DiagonalGaussianModel(
                    tensors.load_tensor(c["mean"]), tensors.load_tensor(c["var"])))
                for c in ctx.backend_cfg["components"]
            )
            return GMMDenoiser(GaussianMixtureModel(comps), ctx.sched)
    except ValueError as exc:
        # bad model content (negative variance, mismatched shapes, ...)
        raise ConfigError(f"backend: {exc}")
    timeout = float(ctx.backend_cfg.get("timeout", 30.0))
    client = DenoiserClient.connect(ctx.backend_cfg["endpoint"], timeout=timeout)
    return RemoteDenoiser(client)


def _trace_header(ctx: RunContext) -> dict:
    g = ctx.guidance
    return {
        "T": ctx.sched.T,
        "beta_start": float(ctx.sched.betas[0]),
        "beta_end": float(ctx.sched.betas[-1]),
        "s_w": g.s_w,
        "s_s": g.s_s,
        "T1": g.resolve_t1(ctx.sched),
        "N": g.N,
        "seed": g.seed,
        "yc_source": g.yc_source,
        "backend": ctx.backend_cfg["kind"],
        "per_label_strength": json.dumps(g.per_label_strength, sort_keys=True),
    }


def cmd_pseudo_label(args: argparse.Namespace) -> int:
    ctx = build_run(load_config(args.config), args)
    denoiser = build_denoiser(ctx)
    y0 = tensors.load_image(ctx.image_path)
    os.makedirs(ctx.output_dir, exist_ok=True)
    trace_rows: list = []
    y_p = generate_pseudo_label(y0, denoiser, ctx.sched, ctx.guidance, trace_rows)
    tensors.save_image(y_p, os.path.join(ctx.output_dir, "yp.png"))
    tensors.save_tensor(y_p, os.path.join(ctx.output_dir, "yp.ssdt"))
    with open(os.path.join(ctx.output_dir, "trace.txt"), "w", encoding="utf-8") as f:
        f.write(format_trace(trace_rows, _trace_header(ctx)))
    mse, psnr = metrics_mod.mse_psnr(y_p, y0)
    row = {
        "input": os.path.basename(ctx.image_path),
        "contour_iou": "-", "feature_iou": "-", "sat_w1": "-",
        "edge_var": metrics_mod.edge_variation(
            y_p, BinaryMask(np.ones((y_p.height, y_p.width), dtype=np.uint8))),
        "mse": mse, "psnr": psnr,
    }
    with open(os.path.join(ctx.output_dir, "metrics.txt"), "w", encoding="utf-8") as f:
        f.write(format_table(METRIC_COLUMNS, [row]))
    if hasattr(denoiser, "close"):
        denoiser.close()
    return EXIT_OK


def cmd_restore(args: argparse.Namespace) -> int:
    ctx = build_run(load_config(args.config), args)
    if ctx.mask_path is None:
        raise ConfigError("inputs.mask: required for restore")
    if ctx.parsing_path is None:
        raise ConfigError("inputs.parsing: required for restore")
    denoiser = build_denoiser(ctx)
    y0 = tensors.load_image(ctx.image_path)
    y_restored = tensors.load_image(ctx.restored_path) if ctx.restored_path else None
    m = tensors.load_mask(ctx.mask_path)
    p = tensors.load_parsing(ctx.parsing_path)
    os.makedirs(ctx.output_dir, exist_ok=True)
    try:
        out, traces = restore(y0, y_restored, m, p, denoiser, ctx.sched, ctx.guidance)
    except NumericError as exc:
        rows = getattr(exc, "trace", [])
        if rows:
            last = rows[-1]
            print(f"last trace row: t={last.t} stage={last.stage} "
                  f"l1={last.l1:.6g} l2={last.l2:.6g} l3={last.l3:.6g}", file=sys.stderr)
        raise
    tensors.save_image(out, os.path.join(ctx.output_dir, "restored.png"))
    tensors.save_tensor(out, os.path.join(ctx.output_dir, "restored.ssdt"))
    with open(os.path.join(ctx.output_dir, "trace.txt"), "w", encoding="utf-8") as f:
        f.write(format_trace(traces, _trace_header(ctx)))
    snaps = [tr for tr in traces if tr.snapshot is not None]
    if snaps:
        snap_dir = os.path.join(ctx.output_dir, "snapshots")
        os.makedirs(snap_dir, exist_ok=True)
        for tr in snaps:
            tensors.save_tensor(tr.snapshot, os.path.join(snap_dir, f"snap_{tr.t:05d}.ssdt"))
    if hasattr(denoiser, "close"):
        denoiser.close()
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    ref_img = tensors.load_image(args.ref) if args.ref else None
    ref_parsing = tensors.load_parsing(args.ref_parsing) if args.ref_parsing else None
    if args.ref_hist:
        ref_hist = metrics_mod.read_histogram(args.ref_hist)
    elif ref_img is not None and ref_img.channels == 3:
        ref_hist = metrics_mod.saturation_histogram(ref_img)
    else:
        ref_hist = None
    rows = []
    for pair in args.pair or []:
        img_path, _, parsing_path = pair.partition(",")
        img = tensors.load_image(img_path)
        row = {"input": os.path.basename(img_path), "contour_iou": "-", "feature_iou": "-",
               "sat_w1": "-", "mse": "-", "psnr": "-"}
        if parsing_path and ref_parsing is not None:
            p = tensors.load_parsing(parsing_path)
            row["contour_iou"] = metrics_mod.contour_iou(p, ref_parsing)
            row["feature_iou"] = metrics_mod.feature_iou(p, ref_parsing)
        if ref_hist is not None and img.channels == 3:
            row["sat_w1"] = metrics_mod.saturation_distance(img, ref_hist)
        row["edge_var"] = metrics_mod.edge_variation(
            img, BinaryMask(np.ones((img.height, img.width), dtype=np.uint8)))
        if ref_img is not None:
            mse, psnr = metrics_mod.mse_psnr(img, ref_img)
            row["mse"], row["psnr"] = mse, psnr
        rows.append(row)
    table = format_table(METRIC_COLUMNS, rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(table)
    else:
        sys.stdout.write(table)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    ctx = build_run(load_config(args.config), args)
    if ctx.mask_path is None or ctx.parsing_path is None:
        raise ConfigError("inputs.mask, inputs.parsing: required for sweep")
    try:
        with open(args.grid, "r", encoding="utf-8") as f:
            grid = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"grid: file not found: {args.grid}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"grid: invalid JSON: {exc}")
    if not isinstance(grid, dict):
        raise ConfigError("grid: expected an object of parameter lists")
    denoiser = build_denoiser(ctx)
    inp = SweepInput(
        name=os.path.basename(ctx.image_path),
        y0=tensors.load_image(ctx.image_path),
        y_restored=tensors.load_image(ctx.restored_path) if ctx.restored_path else None,
        mask=tensors.load_mask(ctx.mask_path),
        parsing=tensors.load_parsing(ctx.parsing_path),
    )
    rows = run_ablation_sweep([inp], grid, denoiser, ctx.sched, ctx.guidance, ctx.workers)
    os.makedirs(ctx.output_dir, exist_ok=True)
    table = format_table(SWEEP_COLUMNS, rows, _trace_header(ctx))
    with open(os.path.join(ctx.output_dir, "sweep.txt"), "w", encoding="utf-8") as f:
        f.write(table)
    sys.stdout.write(table)
    if hasattr(denoiser, "close"):
        denoiser.close()
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    results = selftest_mod.run_selftest(corrupt=args.corrupt)
    failed = 0
    for r in results:
        tag = "PASS" if r.passed else "FAIL"
        print(f"{tag} {r.name}: {r.detail}")
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} properties passed")
    return EXIT_OK if failed == 0 else EXIT_SELFTEST


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffrestore",
        description="Staged, region-selective guided diffusion restoration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--s-w", dest="s_w", type=float, help="override weak scale")
        p.add_argument("--s-s", dest="s_s", type=float, help="override strong scale")
        p.add_argument("--t1", type=int, help="override stage boundary T1")
        p.add_argument("--n", type=int, help="override inner repeat count N")
        p.add_argument("--output-dir", help="override output directory")

    p = sub.add_parser("pseudo-label", help="generate the weakly guided pseudo label")
    add_run_flags(p)
    p.set_defaults(fn=cmd_pseudo_label)

    p = sub.add_parser("restore", help="run the full staged restoration")
    add_run_flags(p)
    p.set_defaults(fn=cmd_restore)

    p = sub.add_parser("metrics", help="compute diagnostic metrics for images")
    p.add_argument("--pair", action="append", metavar="IMAGE[,PARSING]",
                   help="input image with optional parsing map; repeatable")
    p.add_argument("--ref", help="reference image")
    p.add_argument("--ref-parsing", help="reference parsing map")
    p.add_argument("--ref-hist", help="reference saturation histogram (SSH1)")
    p.add_argument("--out", help="write the table here instead of stdout")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("sweep", help="grid sweep over guidance parameters")
    add_run_flags(p)
    p.add_argument("--grid", required=True, help="JSON object of parameter lists")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("selftest", help="run the built-in verification suite")
    p.add_argument("--corrupt", choices=selftest_mod.CORRUPT_MODES,
                   help="test hook: deliberately break one computation")
    p.set_defaults(fn=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileFormatError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DiffRestoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
