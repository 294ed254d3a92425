"""Binary over-exposure masks gating the correction network.

A mask marks over-exposed pixels with 1 and everything else with 0; it is
single-channel and broadcast across color channels during compositing.
Providers are deterministic: the same LDR input always yields the same mask.
The learned segmentation provider is an external extension point; this module
ships the intensity-threshold fallback and a file-based provider so masks
from any external model can be supplied.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import maximum_filter

from .errors import DataError, FormatError

__all__ = [
    "OEMask",
    "DEFAULT_TAU",
    "threshold_mask",
    "load_mask_png",
    "save_mask_png",
    "dilate_mask",
    "ThresholdMaskProvider",
    "FileMaskProvider",
]

DEFAULT_TAU = 250.0 / 255.0


@dataclass(frozen=True)
class OEMask:
    """H x W binary map: 1 = over-exposed, 0 = under/normally exposed."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.uint8)
        if vals.ndim != 2:
            raise DataError(f"mask must be 2-D, got shape {vals.shape}")
        if not np.isin(vals, (0, 1)).all():
            raise DataError("mask values must be strictly binary (0 or 1)")
        vals = np.ascontiguousarray(vals)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def coverage(self) -> float:
        """Fraction of pixels marked over-exposed."""
        return float(self.values.mean())


def threshold_mask(ldr, tau: float = DEFAULT_TAU) -> OEMask:
    """Mark pixels whose max channel is >= tau.

    The default tau of 250/255 keeps JPEG ringing near white from leaving
    saturated cores unmasked.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    return OEMask((ldr.pixels.max(axis=2) >= tau).astype(np.uint8))


def load_mask_png(path, expected_w: int, expected_h: int) -> OEMask:
    """Read a single-channel PNG mask; byte >= 128 means over-exposed."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise FormatError(f"{path}: mask must be single-channel, got mode {img.mode!r}")
            arr = np.asarray(img, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: not a readable image file") from exc
    h, w = arr.shape
    if (w, h) != (expected_w, expected_h):
        raise DataError(f"{path}: mask is {w}x{h}, expected {expected_w}x{expected_h}")
    return OEMask((arr >= 128).astype(np.uint8))


def save_mask_png(mask: OEMask, path) -> None:
    Image.fromarray(mask.values * np.uint8(255), mode="L").save(path, format="PNG")


def dilate_mask(mask: OEMask, radius: int) -> OEMask:
    """Morphological dilation with a square structuring element of side 2r+1."""
    if radius < 0:
        raise ValueError(f"dilation radius must be >= 0, got {radius}")
    if radius == 0:
        return mask
    grown = maximum_filter(mask.values, size=2 * radius + 1, mode="constant", cval=0)
    return OEMask(grown)


class ThresholdMaskProvider:
    """Fallback provider: intensity threshold plus optional dilation."""

    name = "threshold"

    def __init__(self, tau: float = DEFAULT_TAU, dilate_radius: int = 0):
        if not 0.0 < tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {tau}")
        if dilate_radius < 0:
            raise ValueError(f"dilate_radius must be >= 0, got {dilate_radius}")
        self.tau = tau
        self.dilate_radius = dilate_radius

    def __call__(self, ldr) -> OEMask:
        return dilate_mask(threshold_mask(ldr, self.tau), self.dilate_radius)


class FileMaskProvider:
    """Serve pre-computed masks (e.g. from an external segmentation model)."""

    name = "file"

    def __init__(self, path):
        self.path = Path(path)

    def __call__(self, ldr) -> OEMask:
        return load_mask_png(self.path, ldr.width, ldr.height)
