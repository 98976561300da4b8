"""Differential-privacy perturbation of parameter vectors.

The released vector is ``round(clip(theta + noise))``: i.i.d. Laplace or
Gaussian noise, an optional coordinate-wise ``max(., 0)``, then optional
half-away-from-zero rounding.
"""

from __future__ import annotations

import decimal
import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class Mechanism(str, enum.Enum):
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"


class PrivacyConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DpConfig:
    mechanism: Mechanism = Mechanism.LAPLACE
    epsilon: float = 1.0
    delta: float | None = None
    sensitivity: float = 1.0
    clip_nonnegative: bool = True
    decimals: int | None = None

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "mechanism", Mechanism(self.mechanism))
        except ValueError:
            raise PrivacyConfigError(f"unknown mechanism {self.mechanism!r}") from None
        if not (isinstance(self.epsilon, (int, float)) and math.isfinite(self.epsilon) and self.epsilon > 0):
            raise PrivacyConfigError(f"epsilon must be > 0, got {self.epsilon!r}")
        if not (isinstance(self.sensitivity, (int, float)) and self.sensitivity >= 0):
            raise PrivacyConfigError(f"sensitivity must be >= 0, got {self.sensitivity!r}")
        if self.mechanism is Mechanism.GAUSSIAN:
            if self.delta is None:
                raise PrivacyConfigError("the gaussian mechanism requires delta")
            if not 0.0 < self.delta < 1.0:
                raise PrivacyConfigError(f"delta must be in (0, 1), got {self.delta!r}")
        if self.decimals is not None and (int(self.decimals) != self.decimals or self.decimals < 0):
            raise PrivacyConfigError(f"decimals must be a non-negative integer or None, got {self.decimals!r}")


def noise_scale(cfg: DpConfig) -> float:
    """Laplace scale b = sensitivity/epsilon, or the Gaussian sigma at its lower bound."""
    b = cfg.sensitivity / cfg.epsilon
    if cfg.mechanism is Mechanism.LAPLACE:
        return b
    return b * math.sqrt(2.0 * math.log(1.25 / cfg.delta))


def sample_noise(cfg: DpConfig, size: int | tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    scale = noise_scale(cfg)
    if scale == 0.0:
        return np.zeros(size)
    if cfg.mechanism is Mechanism.LAPLACE:
        return rng.laplace(0.0, scale, size)
    return rng.normal(0.0, scale, size)


def _round_half_away(value: float, decimals: int) -> float:
    if not math.isfinite(value):
        return value
    # decimal on repr() so 1.005 rounds as written rather than as its binary neighbour
    q = decimal.Decimal(1).scaleb(-decimals)
    return float(decimal.Decimal(repr(value)).quantize(q, rounding=decimal.ROUND_HALF_UP))


def round_params(params: Sequence[float], decimals: int | None) -> np.ndarray:
    arr = np.array(params, dtype=float)
    if decimals is None:
        return arr
    if decimals < 0:
        raise PrivacyConfigError(f"decimals must be >= 0, got {decimals}")
    if decimals >= 15:
        return arr
    flat = [_round_half_away(float(v), int(decimals)) for v in arr.reshape(-1)]
    return np.array(flat, dtype=float).reshape(arr.shape)


def add_noise(params: Sequence[float], cfg: DpConfig, rng: np.random.Generator) -> np.ndarray:
    theta = np.array(params, dtype=float)
    noisy = theta + sample_noise(cfg, theta.shape, rng)
    if cfg.clip_nonnegative:
        noisy = np.maximum(noisy, 0.0)
    return round_params(noisy, cfg.decimals)
