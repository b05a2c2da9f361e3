"""Mask and parsing-map logic: selection, label sets, guide-mask assembly,
and the axis-aligned mask extension.

Label codes follow the 19-class face-parsing convention (0 background,
1 skin, ..., 18 hat); the full table is LABEL_NAMES and ships in the docs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .tensors import BinaryMask, ImageTensor, ParsingMap, MAX_LABEL

LABEL_NAMES = (
    "background",   # 0
    "skin",         # 1
    "left_brow",    # 2
    "right_brow",   # 3
    "left_eye",     # 4
    "right_eye",    # 5
    "glasses",      # 6
    "left_ear",     # 7
    "right_ear",    # 8
    "earring",      # 9
    "nose",         # 10
    "mouth",        # 11
    "upper_lip",    # 12
    "lower_lip",    # 13
    "neck",         # 14
    "necklace",     # 15
    "cloth",        # 16
    "hair",         # 17
    "hat",          # 18
)

DEFAULT_GUIDE = frozenset({0, 1, 17})
DEFAULT_SKIN = frozenset({1, 14})
DEFAULT_EXCLUDE = frozenset({2, 3, 4, 5, 10, 11, 12, 13})


@dataclass(frozen=True)
class LabelSets:
    """Which labels may be guided, count as skin, or are never touched.

    Labels in none of the sets (glasses, ears, jewelry, cloth, hat) are left
    to the model's automatic completion.
    """

    guide_labels: frozenset[int] = DEFAULT_GUIDE
    skin_labels: frozenset[int] = DEFAULT_SKIN
    exclude_labels: frozenset[int] = DEFAULT_EXCLUDE

    def __post_init__(self) -> None:
        for name, codes in (
            ("guide_labels", self.guide_labels),
            ("skin_labels", self.skin_labels),
            ("exclude_labels", self.exclude_labels),
        ):
            object.__setattr__(self, name, frozenset(int(c) for c in codes))
        all_codes = self.guide_labels | self.skin_labels | self.exclude_labels
        if any(c < 0 or c > MAX_LABEL for c in all_codes):
            raise ConfigError(f"labels: codes must lie in [0, {MAX_LABEL}]")
        if self.guide_labels & self.exclude_labels:
            raise ConfigError("labels: guide_labels and exclude_labels overlap")


def labels_to_mask(p: ParsingMap, labels: frozenset[int] | set[int]) -> BinaryMask:
    """mask = 1 exactly where the parsing code belongs to the label set."""
    if not labels:
        return BinaryMask(np.zeros_like(p.data))
    return BinaryMask(np.isin(p.data, sorted(labels)).astype(np.uint8))


def select(img: ImageTensor, mask: BinaryMask) -> ImageTensor:
    """Zero out pixels where mask = 0; mask = 1 pixels pass through."""
    if (img.height, img.width) != (mask.height, mask.width):
        raise ValueError(
            f"select: image {img.height}x{img.width} vs mask {mask.height}x{mask.width}"
        )
    return ImageTensor(img.data * mask.as_float()[None, :, :])


def complement(mask: BinaryMask) -> BinaryMask:
    return BinaryMask(np.uint8(1) - mask.data)


def make_guide_mask(m: BinaryMask, p: ParsingMap, sets: LabelSets) -> BinaryMask:
    """M_guide = M AND guide-label pixels; never touches excluded labels."""
    if (m.height, m.width) != (p.height, p.width):
        raise ValueError("make_guide_mask: mask and parsing map dims differ")
    guide = labels_to_mask(p, sets.guide_labels)
    return BinaryMask(m.data & guide.data)


def extend_mask(m: BinaryMask, radius: int) -> BinaryMask:
    """Dilate with a cross element: out(i,j) = 1 iff some M(i +- k, j) or
    M(i, j +- k) is 1 for k <= radius, clipped at the borders."""
    if radius < 0:
        raise ValueError(f"extend_mask: radius must be >= 0, got {radius}")
    src = m.data
    out = src.copy()
    for k in range(1, radius + 1):
        out[k:, :] |= src[:-k, :]
        out[:-k, :] |= src[k:, :]
        out[:, k:] |= src[:, :-k]
        out[:, :-k] |= src[:, k:]
    return BinaryMask(out)


def default_radius(height: int) -> int:
    # 3 px at 512 height, scaled proportionally.
    return int(round(3.0 * height / 512.0))
