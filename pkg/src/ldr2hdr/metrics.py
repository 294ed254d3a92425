"""Reconstruction-quality metrics on range-compressed images.

Both the prediction and the ground truth are compressed with the same mu
before PSNR/SSIM; no further exposure alignment is applied. PSNR uses peak 1
and caps at 100 dB for identical images. SSIM follows the standard Gaussian
formulation: 11x11 window, sigma 1.5, k1 = 0.01, k2 = 0.03, computed on the
valid (fully-supported) region per channel, then channel-averaged.

Reports aggregate per-image rows into mean +/- population std and round-trip
through a CSV with ``id,psnr_db,ssim`` rows followed by ``#aggregate``
trailer lines. The external distortion-visibility metric is out of scope;
third-party values can be merged by id downstream.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import DatasetManifest, iterate, load_manifest
from .errors import DataError
from .masks import ThresholdMaskProvider
from .tonemap import MuLawParams, mu_tonemap

__all__ = ["psnr", "ssim", "MetricReport", "evaluate", "infer_hdr"]

PSNR_CAP_DB = 100.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) with peak 1; identical inputs return the 100 dB cap."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    x = np.arange(window, dtype=np.float64) - half
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a 1-D kernel (rows then cols)."""
    n = kernel.size
    win_rows = np.lib.stride_tricks.sliding_window_view(img, n, axis=0)
    rows = win_rows @ kernel
    win_cols = np.lib.stride_tricks.sliding_window_view(rows, n, axis=1)
    return win_cols @ kernel


def _ssim_channel(a, b, kernel, c1, c2) -> float:
    mu1 = _filter_valid(a, kernel)
    mu2 = _filter_valid(b, kernel)
    s11 = _filter_valid(a * a, kernel) - mu1 * mu1
    s22 = _filter_valid(b * b, kernel) - mu2 * mu2
    s12 = _filter_valid(a * b, kernel) - mu1 * mu2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window: int = 11,
    k1: float = 0.01,
    k2: float = 0.03,
    sigma: float = 1.5,
) -> float:
    """Mean local SSIM over the valid region, per channel then averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if min(a.shape[0], a.shape[1]) < window:
        raise ValueError(f"image smaller than the {window}x{window} SSIM window")
    kernel = _gaussian_kernel(window, sigma)
    c1, c2 = k1**2, k2**2  # data range is 1
    vals = [_ssim_channel(a[:, :, c], b[:, :, c], kernel, c1, c2) for c in range(a.shape[2])]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    rows: list  # of (id, psnr_db, ssim)
    metadata: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)  # ids excluded for non-finite output

    def aggregate(self, column: int):
        vals = np.array([r[column] for r in self.rows], dtype=np.float64)
        if vals.size == 0:
            return float("nan"), float("nan")
        return float(vals.mean()), float(vals.std())

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for key in sorted(self.metadata):
            writer.writerow(["#meta", key, self.metadata[key]])
        for skipped_id in self.skipped:
            writer.writerow(["#skipped", skipped_id, "non-finite"])
        writer.writerow(["id", "psnr_db", "ssim"])
        for row_id, p, s in self.rows:
            writer.writerow([row_id, repr(float(p)), repr(float(s))])
        p_mean, p_std = self.aggregate(1)
        s_mean, s_std = self.aggregate(2)
        writer.writerow(["#aggregate", "psnr_db", f"{p_mean!r}±{p_std!r}"])
        writer.writerow(["#aggregate", "ssim", f"{s_mean!r}±{s_std!r}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "MetricReport":
        return cls.from_csv_text(Path(path).read_text())

    @classmethod
    def from_csv_text(cls, text: str) -> "MetricReport":
        rows, metadata, skipped = [], {}, []
        aggregates = {}
        for record in csv.reader(io.StringIO(text)):
            if not record:
                continue
            if record[0] == "#meta":
                metadata[record[1]] = record[2]
            elif record[0] == "#skipped":
                skipped.append(record[1])
            elif record[0] == "#aggregate":
                mean_s, std_s = record[2].split("±")
                aggregates[record[1]] = (float(mean_s), float(std_s))
            elif record[0] == "id":
                continue
            else:
                rows.append((record[0], float(record[1]), float(record[2])))
        report = cls(rows=rows, metadata=metadata, skipped=skipped)
        for col, name in ((1, "psnr_db"), (2, "ssim")):
            if name in aggregates and len(rows) > 0:
                stored = aggregates[name]
                recomputed = report.aggregate(col)
                if not np.allclose(stored, recomputed, rtol=0, atol=1e-12):
                    raise DataError(f"stored {name} aggregate disagrees with rows")
        return report

    def format_table(self) -> str:
        p_mean, p_std = self.aggregate(1)
        s_mean, s_std = self.aggregate(2)
        lines = [f"{'id':<24} {'PSNR(dB)':>10} {'SSIM':>8}"]
        for row_id, p, s in self.rows:
            lines.append(f"{row_id:<24} {p:>10.3f} {s:>8.4f}")
        lines.append("-" * 44)
        lines.append(f"{'mean±std':<24} {p_mean:>6.2f}±{p_std:<5.2f} {s_mean:.3f}±{s_std:.3f}")
        if self.skipped:
            lines.append(f"skipped (non-finite): {len(self.skipped)}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------


def infer_hdr(generator, ldr, mask) -> np.ndarray:
    """Run the generator on one LDR image + mask; returns HxWx3 radiance."""
    generator.eval()
    x = torch.from_numpy(ldr.pixels.copy()).permute(2, 0, 1).unsqueeze(0)
    a = torch.from_numpy(mask.values.astype(np.float32)).unsqueeze(0).unsqueeze(0)
    with torch.no_grad():
        out = generator(x, a)
    return out.h_tilde.squeeze(0).permute(1, 2, 0).numpy()


def evaluate(
    manifest,
    generator,
    mask_provider: ThresholdMaskProvider,
    mu_params: MuLawParams = MuLawParams(),
    eval_size: int = 256,
    metadata: dict | None = None,
) -> MetricReport:
    """Per-pair inference + metrics on tonemapped images, order-stable by id."""
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    rows = []
    skipped = []
    for sample in iterate(manifest, resize_to=eval_size, shuffle_seed=None):
        mask = sample.mask if sample.mask is not None else mask_provider(sample.ldr)
        pred = infer_hdr(generator, sample.ldr, mask)
        if not np.isfinite(pred).all():
            warnings.warn(f"non-finite inference output for {sample.id!r}; row excluded")
            skipped.append(sample.id)
            continue
        t_pred = mu_tonemap(np.maximum(pred, 0.0), mu_params)
        t_gt = mu_tonemap(sample.hdr, mu_params)
        rows.append((sample.id, psnr(t_pred, t_gt), ssim(t_pred, t_gt)))
    rows.sort(key=lambda r: r[0])
    meta = dict(metadata or {})
    meta.setdefault("mu", mu_params.mu)
    meta.setdefault("eval_size", eval_size)
    return MetricReport(rows=rows, metadata=meta, skipped=skipped)
