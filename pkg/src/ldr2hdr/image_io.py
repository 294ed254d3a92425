"""Image containers and file I/O.

Two value types flow through the pipeline: ``HdrImage`` (linear radiance,
non-negative float, unbounded above) and ``LdrImage`` (display-referred,
values in [0, 1]). Both wrap read-only float32 arrays of shape (H, W, 3).

Interchange formats:
  * PFM -- lossless float32, used for all golden outputs. Header is
    ``PF\\n<w> <h>\\n<scale>\\n`` followed by row-major little-endian float
    triplets when scale < 0; rows are stored bottom-up.
  * Radiance RGBE (.hdr) -- compact shared-exponent format, read and write,
    new-style RLE scanlines supported.
  * PNG/JPEG -- 8-bit LDR input (code c maps to c/255); PNG write only.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, FormatError

__all__ = [
    "HdrImage",
    "LdrImage",
    "load_hdr",
    "save_hdr",
    "load_ldr",
    "save_ldr",
    "resize",
]


@dataclass(frozen=True)
class HdrImage:
    """Linear radiance map: finite, non-negative float32, 3 channels."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DataError(f"HDR image must be HxWx3, got shape {px.shape}")
        if not np.isfinite(px).all():
            idx = np.argwhere(~np.isfinite(px))[0]
            raise DataError(f"non-finite radiance at pixel (y={idx[0]}, x={idx[1]}, c={idx[2]})")
        if (px < 0).any():
            idx = np.argwhere(px < 0)[0]
            raise DataError(f"negative radiance at pixel (y={idx[0]}, x={idx[1]}, c={idx[2]})")
        px = np.ascontiguousarray(px)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class LdrImage:
    """Display-referred image: float32 values in [0, 1], 3 channels."""

    pixels: np.ndarray
    source_bit_depth: int = field(default=8)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DataError(f"LDR image must be HxWx3, got shape {px.shape}")
        if not np.isfinite(px).all():
            raise DataError("LDR image contains non-finite values")
        if (px < 0).any() or (px > 1).any():
            raise DataError("LDR values must lie in [0, 1]")
        px = np.ascontiguousarray(px)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def _read_token(f) -> bytes:
    """Read one whitespace-delimited header token."""
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise FormatError("unexpected end of file in PFM header")
        if c in b" \t\r\n":
            if tok:
                return tok
            continue
        tok += c


def _load_pfm(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic == b"Pf":
            raise FormatError(f"{path}: single-channel PFM not supported (need 3 channels)")
        if magic != b"PF":
            raise FormatError(f"{path}: not a PFM file (magic {magic!r})")
        try:
            width = int(_read_token(f))
            height = int(_read_token(f))
            scale = float(_read_token(f))
        except ValueError as exc:
            raise FormatError(f"{path}: malformed PFM header") from exc
        if width <= 0 or height <= 0:
            raise FormatError(f"{path}: invalid PFM dimensions {width}x{height}")
        dtype = "<f4" if scale < 0 else ">f4"
        count = width * height * 3
        payload = f.read(count * 4)
        if len(payload) != count * 4:
            raise FormatError(f"{path}: truncated PFM payload")
        data = np.frombuffer(payload, dtype=dtype).reshape(height, width, 3)
    # PFM stores rows bottom-up; the scale magnitude is ignored (sign only
    # encodes endianness), matching common readers.
    return np.flipud(data).astype(np.float32)


def _save_pfm(pixels: np.ndarray, path: Path) -> None:
    h, w = pixels.shape[:2]
    with open(path, "wb") as f:
        f.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(pixels).astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# Radiance RGBE
# ---------------------------------------------------------------------------

# Decode convention: component value = mantissa * 2^(exponent - 136), i.e.
# (m/256) * 2^(e-128); exponent byte 0 means black.


def _rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    mant = rgbe[..., :3].astype(np.float32)
    exp = rgbe[..., 3].astype(np.int32)
    scale = np.ldexp(np.float32(1.0), exp - 136).astype(np.float32)
    out = mant * scale[..., None]
    out[exp == 0] = 0.0
    return out


def _float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    rgb = rgb.astype(np.float64)
    maxc = rgb.max(axis=-1)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    live = maxc >= 1e-32
    if not live.any():
        return out
    _, exp = np.frexp(maxc[live])
    # scale = 2^(8 - exp): mantissa of the max channel lands in [128, 256)
    scale = np.ldexp(1.0, 8 - exp)
    mant = np.clip(np.rint(rgb[live] * scale[:, None]), 0, 255).astype(np.uint8)
    out[live, :3] = mant
    out[live, 3] = np.clip(exp + 128, 1, 255).astype(np.uint8)
    return out


def _read_rgbe_scanline(f, width: int) -> np.ndarray:
    head = f.read(4)
    if len(head) != 4:
        raise FormatError("truncated RGBE scanline")
    if head[0] == 2 and head[1] == 2 and (head[2] << 8 | head[3]) == width:
        # new-style RLE: four component planes, run-length coded
        line = np.empty((4, width), dtype=np.uint8)
        for c in range(4):
            pos = 0
            while pos < width:
                n = f.read(1)
                if not n:
                    raise FormatError("truncated RGBE RLE scanline")
                count = n[0]
                if count > 128:  # run of a repeated byte
                    count -= 128
                    if pos + count > width:
                        raise FormatError("RGBE RLE run overflows scanline")
                    val = f.read(1)
                    if not val:
                        raise FormatError("truncated RGBE RLE run")
                    line[c, pos : pos + count] = val[0]
                else:  # literal bytes
                    if count == 0 or pos + count > width:
                        raise FormatError("RGBE RLE literal overflows scanline")
                    chunk = f.read(count)
                    if len(chunk) != count:
                        raise FormatError("truncated RGBE RLE literal")
                    line[c, pos : pos + count] = np.frombuffer(chunk, dtype=np.uint8)
                pos += count
        return line.T.copy()
    # flat scanline: head already holds the first pixel
    rest = f.read((width - 1) * 4)
    if len(rest) != (width - 1) * 4:
        raise FormatError("truncated flat RGBE scanline")
    return np.frombuffer(head + rest, dtype=np.uint8).reshape(width, 4)


def _load_rgbe(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        first = f.readline().strip()
        if first not in (b"#?RADIANCE", b"#?RGBE"):
            raise FormatError(f"{path}: not a Radiance RGBE file (header {first!r})")
        while True:
            line = f.readline()
            if not line:
                raise FormatError(f"{path}: missing RGBE resolution line")
            if line.strip() == b"":
                break  # blank line ends the header
        res = f.readline().split()
        if len(res) != 4 or res[0] != b"-Y" or res[2] != b"+X":
            raise FormatError(f"{path}: unsupported RGBE resolution line {res!r}")
        height, width = int(res[1]), int(res[3])
        rows = [_read_rgbe_scanline(f, width) for _ in range(height)]
    return _rgbe_to_float(np.stack(rows, axis=0))


def _write_rgbe_scanline(f, line: np.ndarray) -> None:
    width = line.shape[0]
    if width < 8 or width > 32767:
        f.write(line.tobytes())
        return
    f.write(bytes((2, 2, width >> 8, width & 0xFF)))
    for c in range(4):
        comp = line[:, c]
        pos = 0
        while pos < width:
            # find the next run of >= 4 identical bytes
            run_start = pos
            while run_start < width:
                run_len = 1
                while (
                    run_start + run_len < width
                    and run_len < 127
                    and comp[run_start + run_len] == comp[run_start]
                ):
                    run_len += 1
                if run_len >= 4:
                    break
                run_start += run_len
            else:
                run_start = width
            # emit literals up to the run, 128 bytes at a time
            lit = run_start if run_start < width else width
            while pos < lit:
                n = min(128, lit - pos)
                f.write(bytes((n,)))
                f.write(comp[pos : pos + n].tobytes())
                pos += n
            if run_start < width:
                f.write(bytes((128 + run_len, comp[run_start])))
                pos += run_len


def _save_rgbe(pixels: np.ndarray, path: Path) -> None:
    h, w = pixels.shape[:2]
    rgbe = _float_to_rgbe(pixels)
    with open(path, "wb") as f:
        f.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
        f.write(f"-Y {h} +X {w}\n".encode("ascii"))
        for y in range(h):
            _write_rgbe_scanline(f, rgbe[y])


# ---------------------------------------------------------------------------
# Public I/O
# ---------------------------------------------------------------------------


def _sniff_hdr_format(path: Path) -> str:
    with open(path, "rb") as f:
        head = f.read(2)
    if head in (b"PF", b"Pf"):
        return "pfm"
    if head == b"#?":
        return "rgbe"
    raise FormatError(f"{path}: unsupported HDR format (magic {head!r})")


def load_hdr(path) -> HdrImage:
    """Load a PFM or Radiance RGBE radiance map.

    Negative file values are clamped to zero (with a warning); NaN/Inf in the
    payload is a data error.
    """
    path = Path(path)
    kind = _sniff_hdr_format(path)
    data = _load_pfm(path) if kind == "pfm" else _load_rgbe(path)
    if not np.isfinite(data).all():
        idx = np.argwhere(~np.isfinite(data))[0]
        raise DataError(f"{path}: non-finite value at pixel (y={idx[0]}, x={idx[1]}, c={idx[2]})")
    neg = data < 0
    if neg.any():
        warnings.warn(f"{path}: clamped {int(neg.sum())} negative values to 0", stacklevel=2)
        data = np.where(neg, np.float32(0.0), data)
    return HdrImage(data)


def save_hdr(image: HdrImage, path) -> None:
    """Write an HDR image; format chosen by extension (.pfm or .hdr/.rgbe)."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".pfm":
        _save_pfm(image.pixels, path)
    elif ext in (".hdr", ".rgbe"):
        _save_rgbe(image.pixels, path)
    else:
        raise FormatError(f"{path}: unknown HDR extension {ext!r} (use .pfm or .hdr)")


def load_ldr(path) -> LdrImage:
    """Load an 8-bit PNG or JPEG; code c maps to c/255."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: not a readable image file") from exc
    return LdrImage(arr, source_bit_depth=8)


def save_ldr(image: LdrImage, path) -> None:
    """Write an LDR image as 8-bit PNG, quantizing with round(v*255)."""
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise FormatError(f"{path}: LDR output must be PNG")
    codes = np.rint(image.pixels * 255.0).astype(np.uint8)
    Image.fromarray(codes, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# Resizing
# ---------------------------------------------------------------------------


def _bilinear(src: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Bilinear resample with half-pixel-centered sampling and edge clamping."""
    h, w = src.shape[:2]
    xs = (np.arange(target_w) + 0.5) * (w / target_w) - 0.5
    ys = (np.arange(target_h) + 0.5) * (h / target_h) - 0.5
    x0f = np.floor(xs)
    y0f = np.floor(ys)
    fx = (xs - x0f)[None, :, None]
    fy = (ys - y0f)[:, None, None]
    x0 = np.clip(x0f.astype(np.int64), 0, w - 1)
    x1 = np.clip(x0f.astype(np.int64) + 1, 0, w - 1)
    y0 = np.clip(y0f.astype(np.int64), 0, h - 1)
    y1 = np.clip(y0f.astype(np.int64) + 1, 0, h - 1)
    src = src.astype(np.float64)
    top = src[y0[:, None], x0[None, :]] * (1 - fx) + src[y0[:, None], x1[None, :]] * fx
    bot = src[y1[:, None], x0[None, :]] * (1 - fx) + src[y1[:, None], x1[None, :]] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def resize(image, target_w: int, target_h: int):
    """Resize an HdrImage or LdrImage to the target size, preserving its kind."""
    if target_w <= 0 or target_h <= 0:
        raise ValueError(f"resize target must be positive, got {target_w}x{target_h}")
    if (target_w, target_h) == (image.width, image.height):
        return image
    out = _bilinear(image.pixels, target_w, target_h)
    if isinstance(image, HdrImage):
        # bilinear weights are convex, but guard against float round-off
        return HdrImage(np.maximum(out, 0.0))
    if isinstance(image, LdrImage):
        return LdrImage(np.clip(out, 0.0, 1.0), source_bit_depth=image.source_bit_depth)
    raise TypeError(f"cannot resize {type(image).__name__}")
