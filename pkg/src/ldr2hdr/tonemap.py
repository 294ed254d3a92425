"""Logarithmic range compression applied before every loss and metric.

T(H) = log(1 + mu*H) / log(1 + mu), elementwise with natural logarithms.
T(0) = 0 and T(1) = 1 exactly; inputs above 1 map above 1 (no clamping, so
gradients survive in the bright regions the model must learn).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

__all__ = [
    "MuLawParams",
    "mu_tonemap",
    "mu_inverse",
    "mu_tonemap_grad",
    "mu_tonemap_tensor",
]


@dataclass(frozen=True)
class MuLawParams:
    mu: float = 5000.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")


def _as_array(h) -> np.ndarray:
    # accepts HdrImage-like objects (``pixels`` attribute) or plain arrays
    return np.asarray(getattr(h, "pixels", h), dtype=np.float64)


def mu_tonemap(h, params: MuLawParams = MuLawParams()) -> np.ndarray:
    """Compress a non-negative array: log(1 + mu*h) / log(1 + mu)."""
    arr = _as_array(h)
    if (arr < 0).any():
        raise ValueError("mu_tonemap requires non-negative input")
    # same log1p for numerator and denominator so T(1) == 1 bit-exactly
    return np.log1p(params.mu * arr) / np.log1p(np.float64(params.mu))


def mu_inverse(t, params: MuLawParams = MuLawParams()) -> np.ndarray:
    """Invert the compression on values in [0, 1]: ((1+mu)^t - 1) / mu."""
    arr = _as_array(t)
    if (arr < 0).any() or (arr > 1).any():
        raise ValueError("mu_inverse requires input in [0, 1]")
    return np.expm1(arr * math.log1p(params.mu)) / params.mu


def mu_tonemap_grad(h, params: MuLawParams = MuLawParams()) -> np.ndarray:
    """Analytic derivative dT/dH = mu / ((1 + mu*H) * log(1 + mu))."""
    arr = _as_array(h)
    if (arr < 0).any():
        raise ValueError("mu_tonemap_grad requires non-negative input")
    return params.mu / ((1.0 + params.mu * arr) * math.log1p(params.mu))


def mu_tonemap_tensor(h: torch.Tensor, params: MuLawParams = MuLawParams()) -> torch.Tensor:
    """Torch version used inside the loss pipeline; input must be >= 0."""
    return torch.log1p(params.mu * h) / math.log1p(params.mu)
