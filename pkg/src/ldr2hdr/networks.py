"""Generator and discriminator architectures.

The generator is a pipeline of three identical U-Net-style subnetworks:
linearization (LDR to linear irradiance), over-exposure correction (gated by
the binary mask), and refinement. Blocks are recurrent-residual convolutions
with attention-gated skip connections; the ``variant`` field of ``ArchConfig``
selects the full model or the two ablations (recurrence only / attention
only).

The discriminator is a fully-convolutional patch classifier with a 70x70
receptive field: stages of 64/128/256/512 filters at strides 2/2/2/1 and a
final single-channel stride-1 conv, emitting pre-sigmoid logits.

Architectural choices not pinned elsewhere: downsampling by strided conv,
upsampling by nearest-neighbor + conv, instance normalization inside
generator blocks (none inside attention gates, none on the first
discriminator stage), ReLU-family output activation for non-negative
radiance. All of it is recorded in ``ArchConfig`` so ablations reproduce.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError

__all__ = [
    "ArchConfig",
    "GeneratorOutputs",
    "RecurrentUnit",
    "RecurrentResidualBlock",
    "PlainBlock",
    "AttentionGate",
    "AR2UNet",
    "GeneratorPipeline",
    "PatchDiscriminator",
    "init_normal",
    "count_parameters",
    "pad_to_multiple",
]

VARIANTS = ("AttnR2", "R2", "Attn")


@dataclass(frozen=True)
class ArchConfig:
    variant: str = "AttnR2"
    base_filters: int = 64
    depth: int = 5
    recurrence_steps: int = 2
    in_channels: int = 3
    out_channels: int = 3
    dropout_rate: float = 0.5
    dropout_levels: int = 3
    norm: str = "instance"  # instance | none
    output_activation: str = "relu"  # relu | softplus

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.depth < 2:
            raise ConfigurationError(f"depth must be >= 2, got {self.depth}")
        if self.base_filters < 1:
            raise ConfigurationError(f"base_filters must be >= 1, got {self.base_filters}")
        if self.recurrence_steps < 1:
            raise ConfigurationError(f"recurrence_steps must be >= 1, got {self.recurrence_steps}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.norm not in ("instance", "none"):
            raise ConfigurationError(f"norm must be 'instance' or 'none', got {self.norm!r}")
        if self.output_activation not in ("relu", "softplus"):
            raise ConfigurationError(f"unknown output_activation {self.output_activation!r}")

    @property
    def size_multiple(self) -> int:
        """Spatial dims must be divisible by this (one halving per level)."""
        return 2 ** (self.depth - 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**d)


class GeneratorOutputs(NamedTuple):
    """The (irradiance, corrected, final) triple plus the mask that gated it."""

    e_tilde: torch.Tensor
    m_tilde: torch.Tensor
    h_tilde: torch.Tensor
    alpha: torch.Tensor


def _norm_layer(kind: str, channels: int) -> nn.Module:
    if kind == "instance":
        return nn.InstanceNorm2d(channels)
    return nn.Identity()


class RecurrentUnit(nn.Module):
    """One shared 3x3 conv applied recurrently with feature accumulation.

    f0 = act(norm(conv(x))); f_k = act(norm(conv(x + f_{k-1}))) for
    k = 1..steps. Weights are shared across applications, so extra steps add
    no parameters.
    """

    def __init__(self, channels: int, steps: int, norm: str):
        super().__init__()
        self.steps = steps
        self.conv = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.norm = _norm_layer(norm, channels)
        self.act = nn.ReLU(inplace=False)

    def forward(self, x):
        f = self.act(self.norm(self.conv(x)))
        for _ in range(self.steps):
            f = self.act(self.norm(self.conv(x + f)))
        return f


class RecurrentResidualBlock(nn.Module):
    """Two stacked recurrent units with a residual around the pair.

    The input is channel-matched by a 1x1 conv x' and the block returns
    x' + unit2(unit1(x')).
    """

    def __init__(self, in_ch: int, out_ch: int, steps: int, norm: str):
        super().__init__()
        self.match = nn.Conv2d(in_ch, out_ch, kernel_size=1)
        self.unit1 = RecurrentUnit(out_ch, steps, norm)
        self.unit2 = RecurrentUnit(out_ch, steps, norm)

    def forward(self, x):
        x = self.match(x)
        return x + self.unit2(self.unit1(x))


class PlainBlock(nn.Module):
    """Double conv without recurrence or residual (attention-only ablation)."""

    def __init__(self, in_ch: int, out_ch: int, norm: str):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1),
            _norm_layer(norm, out_ch),
            nn.ReLU(inplace=False),
            nn.Conv2d(out_ch, out_ch, kernel_size=3, padding=1),
            _norm_layer(norm, out_ch),
            nn.ReLU(inplace=False),
        )

    def forward(self, x):
        return self.body(x)


class AttentionGate(nn.Module):
    """Scale skip features by coefficients learned from the decoder gate.

    psi = sigmoid(conv(relu(W_skip * skip + W_gate * gate))) in (0, 1),
    broadcast over channels; output = psi * skip. The gate is resampled to
    the skip's spatial size if they differ. No normalization layers, so the
    psi logit can be saturated directly for identity/zero testing.
    """

    def __init__(self, skip_ch: int, gate_ch: int, inter_ch: int):
        super().__init__()
        self.w_skip = nn.Conv2d(skip_ch, inter_ch, kernel_size=1)
        self.w_gate = nn.Conv2d(gate_ch, inter_ch, kernel_size=1)
        self.psi = nn.Conv2d(inter_ch, 1, kernel_size=1)

    def forward(self, skip, gate):
        if gate.shape[-2:] != skip.shape[-2:]:
            gate = F.interpolate(gate, size=skip.shape[-2:], mode="nearest")
        a = torch.sigmoid(self.psi(F.relu(self.w_skip(skip) + self.w_gate(gate))))
        return skip * a


class _Downsample(nn.Module):
    """Strided 3x3 conv halving the spatial size, channels unchanged."""

    def __init__(self, channels: int, norm: str):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, kernel_size=3, stride=2, padding=1),
            _norm_layer(norm, channels),
            nn.ReLU(inplace=False),
        )

    def forward(self, x):
        return self.body(x)


class _Upsample(nn.Module):
    """Nearest-neighbor x2 then conv (avoids checkerboard artifacts)."""

    def __init__(self, in_ch: int, out_ch: int, norm: str):
        super().__init__()
        self.body = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1),
            _norm_layer(norm, out_ch),
            nn.ReLU(inplace=False),
        )

    def forward(self, x):
        return self.body(x)


def _make_block(cfg: ArchConfig, in_ch: int, out_ch: int) -> nn.Module:
    if cfg.variant in ("AttnR2", "R2"):
        return RecurrentResidualBlock(in_ch, out_ch, cfg.recurrence_steps, cfg.norm)
    return PlainBlock(in_ch, out_ch, cfg.norm)


class AR2UNet(nn.Module):
    """Shape-preserving encoder-decoder with the configured block/skip style.

    Level l carries base_filters * 2^l channels; the bottleneck sits at
    level depth-1. Output is clamped non-negative by the configured
    activation.
    """

    def __init__(self, config: ArchConfig):
        super().__init__()
        self.config = config
        f = [config.base_filters * 2**l for l in range(config.depth)]
        self.enc_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = config.in_channels
        for l in range(config.depth):
            self.enc_blocks.append(_make_block(config, prev, f[l]))
            prev = f[l]
            if l < config.depth - 1:
                self.downs.append(_Downsample(f[l], config.norm))

        self.ups = nn.ModuleList()
        self.gates = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        self.dropouts = nn.ModuleList()
        n_dec = config.depth - 1
        for i, l in enumerate(range(config.depth - 2, -1, -1)):
            self.ups.append(_Upsample(f[l + 1], f[l], config.norm))
            if config.variant in ("AttnR2", "Attn"):
                self.gates.append(AttentionGate(f[l], f[l], max(1, f[l] // 2)))
            else:
                self.gates.append(nn.Identity())
            self.dec_blocks.append(_make_block(config, 2 * f[l], f[l]))
            deep = i < min(config.dropout_levels, n_dec)
            rate = config.dropout_rate if deep else 0.0
            self.dropouts.append(nn.Dropout(rate) if rate > 0 else nn.Identity())

        self.head = nn.Conv2d(f[0], config.out_channels, kernel_size=1)
        self.out_act = nn.ReLU() if config.output_activation == "relu" else nn.Softplus()

    def forward(self, x):
        mult = self.config.size_multiple
        h, w = x.shape[-2:]
        if h % mult or w % mult:
            raise ValueError(
                f"spatial dims must be divisible by {mult} for depth "
                f"{self.config.depth}, got {h}x{w}"
            )
        skips = []
        for l, block in enumerate(self.enc_blocks):
            x = block(x)
            if l < self.config.depth - 1:
                skips.append(x)
                x = self.downs[l](x)
        for up, gate, block, drop in zip(self.ups, self.gates, self.dec_blocks, self.dropouts):
            x = up(x)
            skip = skips.pop()
            if not isinstance(gate, nn.Identity):
                skip = gate(skip, x)
            x = block(torch.cat([skip, x], dim=1))
            x = drop(x)
        return self.out_act(self.head(x))


class GeneratorPipeline(nn.Module):
    """Linearization -> mask-gated correction -> refinement.

    m_tilde = alpha * C(e_tilde) + (1 - alpha) * e_tilde with a strictly
    binary alpha broadcast over channels, so masked pixels equal the
    correction output bit-for-bit and unmasked pixels equal the irradiance
    estimate bit-for-bit. No gradient flows through alpha.
    """

    def __init__(self, config: ArchConfig):
        super().__init__()
        self.config = config
        self.linearization = AR2UNet(config)
        self.correction = AR2UNet(config)
        self.refinement = AR2UNet(config)

    def forward(self, ldr: torch.Tensor, alpha: torch.Tensor) -> GeneratorOutputs:
        if ldr.ndim != 4 or alpha.ndim != 4 or alpha.shape[1] != 1:
            raise ValueError("expected ldr of shape B,3,H,W and alpha of shape B,1,H,W")
        if alpha.shape[-2:] != ldr.shape[-2:] or alpha.shape[0] != ldr.shape[0]:
            raise ValueError(
                f"mask shape {tuple(alpha.shape)} does not match image {tuple(ldr.shape)}"
            )
        alpha = alpha.detach().to(ldr.dtype)
        e = self.linearization(ldr)
        m = alpha * self.correction(e) + (1.0 - alpha) * e
        h = self.refinement(m)
        return GeneratorOutputs(e_tilde=e, m_tilde=m, h_tilde=h, alpha=alpha)


class PatchDiscriminator(nn.Module):
    """Conditional patch classifier over concatenated (LDR, tonemapped HDR).

    Four conv stages with 64/128/256/512 filters (strides 2, 2, 2, 1) and a
    stride-1 single-channel head, all 4x4 kernels: a 70x70 receptive field
    per output logit. Returns pre-sigmoid logits.
    """

    STAGES = ((64, 2), (128, 2), (256, 2), (512, 1))

    def __init__(self, in_channels: int = 6):
        super().__init__()
        layers = []
        prev = in_channels
        for i, (filters, stride) in enumerate(self.STAGES):
            layers.append(nn.Conv2d(prev, filters, kernel_size=4, stride=stride, padding=1))
            if i > 0:  # no normalization on the first stage
                layers.append(nn.InstanceNorm2d(filters))
            layers.append(nn.LeakyReLU(0.2, inplace=False))
            prev = filters
        layers.append(nn.Conv2d(prev, 1, kernel_size=4, stride=1, padding=1))
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != y.shape[-2:] or x.shape[0] != y.shape[0]:
            raise ValueError(
                f"discriminator inputs disagree: {tuple(x.shape)} vs {tuple(y.shape)}"
            )
        return self.body(torch.cat([x, y], dim=1))

    @classmethod
    def logits_size(cls, h: int, w: int) -> tuple:
        """Logit grid size as a pure function of input size."""

        def conv(n, stride):
            return (n + 2 - 4) // stride + 1

        for _, stride in cls.STAGES:
            h, w = conv(h, stride), conv(w, stride)
        return conv(h, 1), conv(w, 1)


def init_normal(module: nn.Module, seed: int, std: float = 0.02) -> nn.Module:
    """Initialize every conv weight from N(0, std) and zero all biases.

    Uses a dedicated generator, so the result depends only on the seed and
    the module structure, never on global RNG state.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _, m in module.named_modules():
            if isinstance(m, nn.Conv2d):
                m.weight.copy_(torch.normal(0.0, std, m.weight.shape, generator=gen))
                if m.bias is not None:
                    m.bias.zero_()
    return module


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def pad_to_multiple(x: torch.Tensor, multiple: int):
    """Reflection-pad H and W up to the next multiple; returns (padded, (h, w))."""
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    return F.pad(x, (0, pw, 0, ph), mode="reflect"), (h, w)
