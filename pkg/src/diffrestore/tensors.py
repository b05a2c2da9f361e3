"""Image, mask, and parsing-map containers plus their file formats.

Images travel as channel-planar row-major float arrays of shape (C, H, W)
with C in {1, 3} and the pixel convention [-1, 1]. Masks and parsing maps
are (H, W) integer fields. Raster IO is 8-bit PNG through Pillow; float
tensors use the little-endian "SSDT" container described in the README.

All container types are immutable after construction: the wrapped numpy
array is made read-only, so instances can be shared freely across threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from PIL import Image

from .errors import FileFormatError, NumericError

SSDT_MAGIC = b"SSDT"
SSDT_VERSION = 1

# Refuse payloads whose element count does not fit in a signed 32-bit int.
MAX_ELEMENTS = 2**31 - 1


def _freeze(arr: NDArray) -> NDArray:
    # Always copy: instances own their buffer and never lock a caller's array.
    out = np.array(arr, order="C", copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImageTensor:
    """Real-valued (C, H, W) pixel field; C is 1 or 3, values finite."""

    data: NDArray[np.float64]

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"image tensor must be (C, H, W), got shape {arr.shape}")
        c, h, w = arr.shape
        if c not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {c}")
        if h * w < 1:
            raise ValueError("image must contain at least one pixel")
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite values in image tensor")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class BinaryMask:
    """(H, W) field of {0, 1}; 1 marks breakage/scratch pixels."""

    data: NDArray[np.uint8]

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"mask must be (H, W), got shape {arr.shape}")
        arr = arr.astype(np.uint8, copy=True)
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def as_float(self) -> NDArray[np.float64]:
        return self.data.astype(np.float64)


MAX_LABEL = 18


@dataclass(frozen=True)
class ParsingMap:
    """(H, W) field of semantic label codes 0..18 (see regions.LABEL_NAMES)."""

    data: NDArray[np.uint8]

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"parsing map must be (H, W), got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() > MAX_LABEL):
            raise ValueError(f"label codes must lie in [0, {MAX_LABEL}]")
        object.__setattr__(self, "data", _freeze(arr.astype(np.uint8, copy=True)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# Raster IO (8-bit PNG)

def load_image(path: str) -> ImageTensor:
    """Load an 8-bit grayscale or RGB raster; pixel p maps to 2p/255 - 1."""
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise FileFormatError(f"image file not found: {path}")
    except OSError as exc:
        raise FileFormatError(f"cannot read image {path}: {exc}")
    if img.mode not in ("L", "RGB"):
        raise FileFormatError(
            f"unsupported image mode {img.mode!r} in {path} (need 8-bit L or RGB)"
        )
    arr = np.asarray(img, dtype=np.float64)
    if arr.size == 0:
        raise FileFormatError(f"zero-sized raster: {path}")
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = np.moveaxis(arr, -1, 0)
    return ImageTensor(2.0 * arr / 255.0 - 1.0)


def save_image(t: ImageTensor, path: str) -> None:
    """Write an image tensor as 8-bit PNG, inverting the [-1, 1] map."""
    arr = np.clip((t.data + 1.0) * 255.0 / 2.0, 0.0, 255.0)
    arr = np.rint(arr).astype(np.uint8)
    if t.channels == 1:
        img = Image.fromarray(arr[0], mode="L")
    else:
        img = Image.fromarray(np.moveaxis(arr, 0, -1), mode="RGB")
    img.save(path, format="PNG")


def load_mask(path: str) -> BinaryMask:
    """Grayscale PNG to mask: 0 stays 0, values >= 128 become 1."""
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise FileFormatError(f"mask file not found: {path}")
    except OSError as exc:
        raise FileFormatError(f"cannot read mask {path}: {exc}")
    if img.mode != "L":
        img = img.convert("L")
    arr = np.asarray(img)
    return BinaryMask((arr >= 128).astype(np.uint8))


def save_mask(mask: BinaryMask, path: str) -> None:
    Image.fromarray(mask.data * np.uint8(255), mode="L").save(path, format="PNG")


def load_parsing(path: str) -> ParsingMap:
    """Grayscale PNG whose pixel values are the label codes."""
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise FileFormatError(f"parsing map not found: {path}")
    except OSError as exc:
        raise FileFormatError(f"cannot read parsing map {path}: {exc}")
    if img.mode != "L":
        raise FileFormatError(f"parsing map must be 8-bit grayscale: {path}")
    arr = np.asarray(img)
    if arr.max(initial=0) > MAX_LABEL:
        raise FileFormatError(f"parsing map {path} contains codes above {MAX_LABEL}")
    return ParsingMap(arr)


def save_parsing(p: ParsingMap, path: str) -> None:
    Image.fromarray(p.data, mode="L").save(path, format="PNG")


# ---------------------------------------------------------------------------
# SSDT float-tensor container

def write_ssdt(arr: NDArray, path: str) -> None:
    """Write any float array: magic, u32 version, u32 ndim, dims, f32 payload."""
    a = np.asarray(arr, dtype=np.float32)
    if a.size > MAX_ELEMENTS:
        raise FileFormatError("dimension overflow: tensor too large for SSDT")
    header = SSDT_MAGIC + struct.pack("<II", SSDT_VERSION, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(np.ascontiguousarray(a).tobytes())
    except OSError as exc:
        raise FileFormatError(f"cannot write {path}: {exc}")


def read_ssdt(path: str) -> NDArray[np.float64]:
    """Read an SSDT file back as float64 (payload values stay f32-exact)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise FileFormatError(f"tensor file not found: {path}")
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}")
    if len(raw) < 12:
        raise FileFormatError(f"short payload in {path}")
    if raw[:4] != SSDT_MAGIC:
        raise FileFormatError(f"bad magic in {path}")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != SSDT_VERSION:
        raise FileFormatError(f"unsupported SSDT version {version} in {path}")
    if ndim == 0 or ndim > 8:
        raise FileFormatError(f"bad ndim {ndim} in {path}")
    if len(raw) < 12 + 4 * ndim:
        raise FileFormatError(f"short payload in {path}")
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    count = 1
    for d in dims:
        count *= int(d)
    if count > MAX_ELEMENTS:
        raise FileFormatError(f"dimension overflow in {path}")
    offset = 12 + 4 * ndim
    if len(raw) < offset + 4 * count:
        raise FileFormatError(f"short payload in {path}")
    payload = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    return payload.reshape(dims).astype(np.float64)


def save_tensor(t: ImageTensor, path: str) -> None:
    write_ssdt(t.data, path)


def load_tensor(path: str) -> ImageTensor:
    arr = read_ssdt(path)
    if arr.ndim != 3:
        raise FileFormatError(f"expected a (C, H, W) tensor in {path}, got ndim {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise FileFormatError(f"non-finite payload in {path}")
    return ImageTensor(arr)


# ---------------------------------------------------------------------------
# Color space

def rgb_to_saturation(img: ImageTensor) -> ImageTensor:
    """HSV saturation of a 3-channel image, as a 1-channel field in [0, 1].

    Channels are first remapped from [-1, 1] to [0, 1]; S = (max - min) / max
    with S = 0 wherever max = 0.
    """
    if img.channels != 3:
        raise ValueError("saturation needs a 3-channel image")
    v = np.clip((img.data + 1.0) / 2.0, 0.0, 1.0)
    hi = v.max(axis=0)
    lo = v.min(axis=0)
    sat = np.zeros_like(hi)
    nz = hi > 0
    sat[nz] = (hi[nz] - lo[nz]) / hi[nz]
    return ImageTensor(sat[None, :, :])
