"""The training objective: adversarial + tonemapped L1 + perceptual terms.

Total generator loss is gan + lambda1 * (rec + lambda2 * perc) with
lambda1 = 100 and lambda2 = 0.005 by default. All pixel and feature
comparisons happen on range-compressed images (see ``tonemap``).

The generator's adversarial term uses the non-saturating form (binary cross
entropy of fake logits against the real label) rather than the literal
log(1 - D) objective, the standard choice for gradient health; the min-max
intent is unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError
from .tonemap import MuLawParams, mu_tonemap_tensor

__all__ = [
    "LossWeights",
    "RandomFeaturePyramid",
    "rec_loss",
    "perceptual_loss",
    "gan_loss_d",
    "gan_loss_g",
    "total_g_loss",
]


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 100.0
    lambda2: float = 0.005

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


class RandomFeaturePyramid(nn.Module):
    """Fixed random-weight convolutional pyramid used as the feature extractor.

    Five stages of 3x3 conv + LeakyReLU + 2x average pooling, tapped after
    every pooling step. Weights are seeded, scaled like Kaiming init to keep
    activations stable, and frozen. A pretrained extractor can be swapped in:
    the contract is any callable mapping a B,3,H,W image batch to a list of
    feature tensors.
    """

    name = "random-pyramid"

    def __init__(self, seed: int = 0, channels=(16, 32, 64, 64, 64), dtype=torch.float32):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.stages = nn.ModuleList()
        prev = 3
        for ch in channels:
            conv = nn.Conv2d(prev, ch, kernel_size=3, padding=1, dtype=dtype)
            std = (2.0 / (prev * 9)) ** 0.5
            with torch.no_grad():
                conv.weight.copy_(torch.normal(0.0, std, conv.weight.shape, generator=gen).to(dtype))
                conv.bias.zero_()
            self.stages.append(conv)
            prev = ch
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> list:
        taps = []
        for conv in self.stages:
            x = F.avg_pool2d(F.leaky_relu(conv(x), 0.2), kernel_size=2)
            taps.append(x)
        return taps


def rec_loss(
    h_gen: torch.Tensor, h_gt: torch.Tensor, mu_params: MuLawParams = MuLawParams()
) -> torch.Tensor:
    """Mean absolute difference of the tonemapped images."""
    if h_gen.shape != h_gt.shape:
        raise ValueError(f"shape mismatch: {tuple(h_gen.shape)} vs {tuple(h_gt.shape)}")
    return (mu_tonemap_tensor(h_gen, mu_params) - mu_tonemap_tensor(h_gt, mu_params)).abs().mean()


def perceptual_loss(
    h_gen: torch.Tensor,
    h_gt: torch.Tensor,
    extractor,
    mu_params: MuLawParams = MuLawParams(),
) -> torch.Tensor:
    """Sum over tap layers of the RMS feature difference.

    Each layer contributes sqrt(mean((f_gen - f_gt)^2)), i.e. its L2 norm
    normalized by the square root of its element count, which keeps the
    lambda2 weighting resolution-independent.
    """
    feats_gen = extractor(mu_tonemap_tensor(h_gen, mu_params))
    feats_gt = extractor(mu_tonemap_tensor(h_gt, mu_params))
    if len(feats_gen) != len(feats_gt):
        raise ConfigurationError("extractor returned differing tap counts")
    total = h_gen.new_zeros(())
    for fg, ft in zip(feats_gen, feats_gt):
        if fg.shape != ft.shape:
            raise ConfigurationError(
                f"extractor tap shapes disagree: {tuple(fg.shape)} vs {tuple(ft.shape)}"
            )
        total = total + torch.sqrt(torch.mean((fg - ft) ** 2))
    return total


def gan_loss_d(logits_real: torch.Tensor, logits_fake: torch.Tensor) -> torch.Tensor:
    """Average of real and fake patch BCE, computed stably from logits."""
    if logits_real.shape != logits_fake.shape:
        raise ValueError(
            f"logit grids disagree: {tuple(logits_real.shape)} vs {tuple(logits_fake.shape)}"
        )
    real = F.binary_cross_entropy_with_logits(logits_real, torch.ones_like(logits_real))
    fake = F.binary_cross_entropy_with_logits(logits_fake, torch.zeros_like(logits_fake))
    return 0.5 * (real + fake)


def gan_loss_g(logits_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator objective: BCE of fake logits vs the real label."""
    return F.binary_cross_entropy_with_logits(logits_fake, torch.ones_like(logits_fake))


def total_g_loss(gan, rec, perc, w: LossWeights = LossWeights()):
    """Weighted combination gan + lambda1 * (rec + lambda2 * perc)."""
    for name, term in (("gan", gan), ("rec", rec), ("perc", perc)):
        if not torch.isfinite(torch.as_tensor(term)).all():
            raise FloatingPointError(f"non-finite {name} loss term: {term}")
    return gan + w.lambda1 * (rec + w.lambda2 * perc)
