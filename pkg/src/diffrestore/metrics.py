"""Desk-scale diagnostics: mask IOUs, saturation-histogram distance,
edge-strength variation, and reference MSE/PSNR.

The IOU groupings ("contour" = all non-background labels, "feature" =
per-label comparison over brows/eyes/nose/mouth/lips) are this artifact's
documented conventions; histograms use 64 bins over [0, 1] and standard
deviations are population ones.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import FileFormatError
from .guidance import edge_magnitude
from .tensors import BinaryMask, ImageTensor, ParsingMap, rgb_to_saturation

SSH1_MAGIC = b"SSH1"
HIST_BINS = 64

FEATURE_LABELS = (2, 3, 4, 5, 10, 11, 12, 13)


@dataclass(frozen=True)
class MetricRow:
    contour_iou: float | None = None
    feature_iou: float | None = None
    saturation_distance: float | None = None
    edge_variation: float | None = None
    mse: float | None = None
    psnr: float | None = None


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """|a AND b| / |a OR b|, defined as 1 when both masks are empty."""
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError("mask_iou: dims differ")
    inter = int(np.sum(a.data & b.data))
    union = int(np.sum(a.data | b.data))
    if union == 0:
        return 1.0
    return inter / union


def contour_iou(pa: ParsingMap, pb: ParsingMap) -> float:
    """IOU of the non-background regions of two parsing maps."""
    ma = BinaryMask((pa.data != 0).astype(np.uint8))
    mb = BinaryMask((pb.data != 0).astype(np.uint8))
    return mask_iou(ma, mb)


def feature_iou(pa: ParsingMap, pb: ParsingMap) -> float:
    """Mean per-label IOU over the facial-feature codes."""
    vals = []
    for code in FEATURE_LABELS:
        ma = BinaryMask((pa.data == code).astype(np.uint8))
        mb = BinaryMask((pb.data == code).astype(np.uint8))
        vals.append(mask_iou(ma, mb))
    return float(np.mean(vals))


def saturation_histogram(img: ImageTensor) -> NDArray[np.float64]:
    """64-bin saturation histogram normalized to mass 1."""
    sat = rgb_to_saturation(img).data.ravel()
    hist, _ = np.histogram(sat, bins=HIST_BINS, range=(0.0, 1.0))
    return hist.astype(np.float64) / sat.size


def saturation_distance(img: ImageTensor, ref_hist: NDArray) -> float:
    """Wasserstein-1 distance between the image's saturation histogram and
    a reference histogram, on the 64-bin [0, 1] grid."""
    ref = np.asarray(ref_hist, dtype=np.float64)
    if ref.shape != (HIST_BINS,):
        raise ValueError(f"reference histogram must have {HIST_BINS} bins")
    return histogram_w1(saturation_histogram(img), ref)


def histogram_w1(p: NDArray, q: NDArray) -> float:
    """W1 between two histograms on the unit interval (both renormalized)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError("histograms must share one 1-d shape")
    if p.sum() <= 0.0 or q.sum() <= 0.0:
        raise ValueError("empty histogram")
    p = p / p.sum()
    q = q / q.sum()
    # Sum of CDF gaps times the bin width.
    return float(np.abs(np.cumsum(p - q)).sum() / p.size)


def edge_variation(img: ImageTensor, region: BinaryMask) -> float:
    """Population std of the unmasked edge-magnitude field over a region;
    zero for an empty region."""
    if (img.height, img.width) != (region.height, region.width):
        raise ValueError("edge_variation: dims differ")
    ones = BinaryMask(np.ones((img.height, img.width), dtype=np.uint8))
    field = edge_magnitude(img, ones).data[0]
    vals = field[region.data == 1]
    if vals.size == 0:
        return 0.0
    return float(vals.std())


def mse_psnr(
    a: ImageTensor, b: ImageTensor, region: BinaryMask | None = None
) -> tuple[float, float]:
    """Mean squared error over a region (or everywhere) and PSNR at peak 2.

    mse = 0 reports psnr = inf as the sentinel.
    """
    if a.shape != b.shape:
        raise ValueError("mse_psnr: shapes differ")
    d = (a.data - b.data) ** 2
    if region is not None:
        if (a.height, a.width) != (region.height, region.width):
            raise ValueError("mse_psnr: region dims differ")
        sel = region.data == 1
        if not sel.any():
            return 0.0, float("inf")
        vals = d[:, sel]
    else:
        vals = d
    mse = float(vals.mean())
    if mse == 0.0:
        return 0.0, float("inf")
    return mse, float(10.0 * np.log10(4.0 / mse))


# ---------------------------------------------------------------------------
# SSH1 reference-histogram file

def write_histogram(hist: NDArray, path: str) -> None:
    h = np.asarray(hist, dtype="<f4")
    if h.shape != (HIST_BINS,):
        raise FileFormatError(f"histogram must have {HIST_BINS} bins")
    try:
        with open(path, "wb") as f:
            f.write(SSH1_MAGIC + h.tobytes())
    except OSError as exc:
        raise FileFormatError(f"cannot write {path}: {exc}")


def read_histogram(path: str) -> NDArray[np.float64]:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise FileFormatError(f"histogram file not found: {path}")
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}")
    if len(raw) < 4 or raw[:4] != SSH1_MAGIC:
        raise FileFormatError(f"bad magic in {path}")
    if len(raw) != 4 + 4 * HIST_BINS:
        raise FileFormatError(f"short payload in {path}")
    return np.frombuffer(raw, dtype="<f4", offset=4).astype(np.float64)
