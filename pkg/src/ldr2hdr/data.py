"""LDR-HDR training pairs.

Synthetic capture model: Z = clip[(H*t)^(1/gamma)] with gamma 2.2 and the
exposure multipliers {2^0.5, 2^1, 2^2, 2^4} by default. Exposure values are
treated as unitless multipliers of the stored radiance.

Dataset manifests are plain text, one ``ldr<TAB>hdr[<TAB>mask]`` line per
pair, paths relative to the manifest's directory. Shuffling uses an explicit
64-bit linear congruential generator (Knuth MMIX constants) with a
Fisher-Yates pass, so iteration order is reproducible across languages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import DataError
from .image_io import HdrImage, LdrImage, load_hdr, load_ldr, resize, save_hdr, save_ldr
from .masks import OEMask, load_mask_png

__all__ = [
    "ExposureModel",
    "PairedSample",
    "DatasetManifest",
    "synthesize_ldr",
    "build_exposure_stack",
    "load_manifest",
    "save_manifest",
    "iterate",
    "make_toy_scene",
    "write_toy_dataset",
    "Lcg64",
]

DEFAULT_EXPOSURES = (2.0**0.5, 2.0**1, 2.0**2, 2.0**4)


@dataclass(frozen=True)
class ExposureModel:
    gamma: float = 2.2
    exposure_times: tuple = DEFAULT_EXPOSURES

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if len(self.exposure_times) == 0:
            raise ValueError("exposure_times must be non-empty")
        if any(t <= 0 for t in self.exposure_times):
            raise ValueError("all exposure times must be positive")


@dataclass(frozen=True)
class PairedSample:
    ldr: LdrImage
    hdr: HdrImage
    id: str
    mask: Optional[OEMask] = None

    def __post_init__(self):
        if (self.ldr.height, self.ldr.width) != (self.hdr.height, self.hdr.width):
            raise DataError(
                f"pair {self.id!r}: LDR {self.ldr.width}x{self.ldr.height} does not "
                f"match HDR {self.hdr.width}x{self.hdr.height}"
            )
        if self.mask is not None and (self.mask.height, self.mask.width) != (
            self.hdr.height,
            self.hdr.width,
        ):
            raise DataError(f"pair {self.id!r}: mask dimensions do not match images")


def synthesize_ldr(h: HdrImage, t: float, model: ExposureModel = ExposureModel()) -> LdrImage:
    """Expose a radiance map: Z = min(1, (H*t)^(1/gamma))."""
    if t <= 0:
        raise ValueError(f"exposure time must be positive, got {t}")
    z = np.minimum(1.0, (h.pixels.astype(np.float64) * t) ** (1.0 / model.gamma))
    return LdrImage(z.astype(np.float32))


def build_exposure_stack(h: HdrImage, model: ExposureModel = ExposureModel(), base_id: str = "scene"):
    """One synthesized pair per exposure time; sample ids encode t."""
    return [
        PairedSample(ldr=synthesize_ldr(h, t, model), hdr=h, id=f"{base_id}_t{t:g}")
        for t in model.exposure_times
    ]


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple  # of (ldr_path, hdr_path, mask_path | None), relative
    root: Path

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(path) -> DatasetManifest:
    """Parse a manifest and verify every referenced file exists."""
    path = Path(path)
    root = path.parent
    entries = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise DataError(f"{path}:{lineno}: expected 2 or 3 tab-separated paths")
        mask = parts[2] if len(parts) == 3 else None
        entries.append((parts[0], parts[1], mask))
    for i, (ldr, hdr, mask) in enumerate(entries):
        for p in (ldr, hdr, mask):
            if p is not None and not (root / p).exists():
                raise DataError(f"{path}: entry {i}: missing file {p!r}")
    return DatasetManifest(entries=tuple(entries), root=root)


def save_manifest(manifest: DatasetManifest, path) -> None:
    lines = []
    for ldr, hdr, mask in manifest.entries:
        cols = [ldr, hdr] + ([mask] if mask else [])
        lines.append("\t".join(cols))
    Path(path).write_text("\n".join(lines) + "\n")


class Lcg64:
    """64-bit linear congruential generator, Knuth MMIX constants.

    state' = state * 6364136223846793005 + 1442695040888963407 (mod 2^64).
    Documented here so shuffle orders can be reproduced in any language.
    """

    MULT = 6364136223846793005
    INC = 1442695040888963407
    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next_u64(self) -> int:
        self.state = (self.state * self.MULT + self.INC) & self.MASK
        return self.state

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates using j = next_u64() % (i+1)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]


def _load_entry(manifest: DatasetManifest, index: int) -> PairedSample:
    ldr_rel, hdr_rel, mask_rel = manifest.entries[index]
    ldr = load_ldr(manifest.root / ldr_rel)
    hdr = load_hdr(manifest.root / hdr_rel)
    mask = None
    if mask_rel is not None:
        mask = load_mask_png(manifest.root / mask_rel, ldr.width, ldr.height)
    return PairedSample(ldr=ldr, hdr=hdr, mask=mask, id=Path(ldr_rel).stem)


def iterate(
    manifest: DatasetManifest,
    resize_to: Optional[int] = None,
    shuffle_seed: Optional[int] = None,
) -> Iterator[PairedSample]:
    """Stream samples in a deterministic order for a fixed seed.

    ``resize_to`` resizes both images of each pair to a square of that size
    (masks are recomputed by callers; stored masks are only passed through
    when no resizing happens). ``shuffle_seed=None`` keeps manifest order.
    """
    order = list(range(len(manifest.entries)))
    if shuffle_seed is not None:
        Lcg64(shuffle_seed).shuffle(order)
    for index in order:
        sample = _load_entry(manifest, index)
        if resize_to is not None and (sample.ldr.width, sample.ldr.height) != (
            resize_to,
            resize_to,
        ):
            sample = PairedSample(
                ldr=resize(sample.ldr, resize_to, resize_to),
                hdr=resize(sample.hdr, resize_to, resize_to),
                mask=None,
                id=sample.id,
            )
        yield sample


# ---------------------------------------------------------------------------
# Toy scenes
# ---------------------------------------------------------------------------


def make_toy_scene(seed: int, size: int = 64) -> HdrImage:
    """Deterministic procedural radiance map for desk-scale training.

    A smooth low-frequency base in [0, 0.5] plus 1-4 Gaussian light blobs
    with peak radiance in [2, 20]. The blobs guarantee values above 1, and
    under the default exposure set the scenes span well-exposed to clipped.
    """
    if size < 16:
        raise ValueError(f"toy scene size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)
    # low-frequency base: bilinearly upsampled 4x4 grid in [0, 0.5]
    coarse = rng.uniform(0.0, 0.5, size=(4, 4, 3)).astype(np.float32)
    base = resize(HdrImage(coarse), size, size).pixels.astype(np.float64)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    scene = base.copy()
    n_blobs = int(rng.integers(1, 5))
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0.2 * size, 0.8 * size, size=2)
        sigma = rng.uniform(0.05 * size, 0.15 * size)
        peak = rng.uniform(2.0, 20.0)
        tint = rng.uniform(0.7, 1.0, size=3)
        blob = peak * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
        scene += blob[:, :, None] * tint[None, None, :]
    return HdrImage(scene.astype(np.float32))


def write_toy_dataset(
    seeds,
    size: int,
    out_dir,
    model: ExposureModel = ExposureModel(),
) -> Path:
    """Emit toy scenes as PFM + synthesized LDR PNG stacks and a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for seed in seeds:
        scene = make_toy_scene(seed, size)
        hdr_name = f"scene{seed:04d}.pfm"
        save_hdr(scene, out_dir / hdr_name)
        for sample in build_exposure_stack(scene, model, base_id=f"scene{seed:04d}"):
            ldr_name = f"{sample.id}.png"
            save_ldr(sample.ldr, out_dir / ldr_name)
            entries.append((ldr_name, hdr_name, None))
    manifest = DatasetManifest(entries=tuple(entries), root=out_dir)
    manifest_path = out_dir / "manifest.txt"
    save_manifest(manifest, manifest_path)
    return manifest_path
