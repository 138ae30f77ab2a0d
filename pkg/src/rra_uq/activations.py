"""Stochastic ReLU variants as sampled, replayable transforms.

All variants share one rule: positive inputs pass through unchanged, and each
negative input is multiplied by a per-element slope.  Plain ReLU is the
degenerate slope-0 case, identity the slope-1 case.  DropReLU draws each slope
from {0, 1}: with probability `retain_rate` the element keeps its
nonlinearity (slope 0), otherwise the nonlinearity is dropped (slope 1).
RReLU draws each slope uniformly from [low, high).  A fresh mask is sampled
on every forward pass -- during training and during Monte-Carlo inference
alike -- and stored so a pass can be replayed exactly for backprop and tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .rng import RngStream

RRELU_DEFAULT_LOW = 1.0 / 8.0
RRELU_DEFAULT_HIGH = 1.0 / 3.0


@dataclass(frozen=True)
class ActivationKind:
    """Tagged activation family: relu | identity | droprelu | rrelu."""

    tag: str
    retain_rate: float | None = None  # droprelu only
    low: float | None = None          # rrelu only
    high: float | None = None         # rrelu only

    def is_stochastic(self) -> bool:
        return self.tag in ("droprelu", "rrelu")

    def label(self) -> str:
        if self.tag == "droprelu":
            return f"droprelu({self.retain_rate:g})"
        if self.tag == "rrelu":
            return f"rrelu({self.low:g},{self.high:g})"
        return self.tag


def relu() -> ActivationKind:
    return ActivationKind("relu")


def identity() -> ActivationKind:
    return ActivationKind("identity")


def droprelu(retain_rate: float) -> ActivationKind:
    """DropReLU keeping the nonlinearity with probability `retain_rate`."""
    if not 0.0 <= retain_rate <= 1.0:
        raise ParameterError(f"droprelu retain rate must be in [0, 1], got {retain_rate}")
    return ActivationKind("droprelu", retain_rate=retain_rate)


def rrelu(low: float = RRELU_DEFAULT_LOW, high: float = RRELU_DEFAULT_HIGH) -> ActivationKind:
    """RReLU with negative-branch slope ~ U[low, high)."""
    if not (0.0 <= low < high < 1.0):
        raise ParameterError(f"rrelu bounds need 0 <= low < high < 1, got [{low}, {high})")
    return ActivationKind("rrelu", low=low, high=high)


@dataclass(frozen=True)
class SampledMask:
    """One realization of activation randomness: a negative-branch slope per element."""

    slopes: np.ndarray


@dataclass(frozen=True)
class DropoutSpec:
    """Plain dropout with the given drop probability."""

    drop_rate: float

    def __post_init__(self):
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ParameterError(f"dropout rate must be in [0, 1], got {self.drop_rate}")


def sample_mask(kind: ActivationKind, shape, rng: RngStream | None = None) -> SampledMask:
    """Draw a fresh mask for one forward pass."""
    if kind.tag == "relu":
        return SampledMask(np.zeros(shape))
    if kind.tag == "identity":
        return SampledMask(np.ones(shape))
    if rng is None:
        raise ParameterError(f"sampling a {kind.tag} mask requires an rng stream")
    if kind.tag == "droprelu":
        # slope = 1 - Q with Q ~ Bernoulli(retain_rate): slope 0 w.p. retain_rate
        kept = rng.bernoulli(kind.retain_rate, shape)
        return SampledMask(1.0 - kept)
    if kind.tag == "rrelu":
        return SampledMask(rng.uniform(kind.low, kind.high, shape))
    raise ParameterError(f"unknown activation kind '{kind.tag}'")


def deterministic_mask(kind: ActivationKind, shape) -> SampledMask:
    """Single-pass mask: pure ReLU for droprelu, midpoint slope for rrelu."""
    if kind.tag in ("relu", "droprelu"):
        return SampledMask(np.zeros(shape))
    if kind.tag == "identity":
        return SampledMask(np.ones(shape))
    if kind.tag == "rrelu":
        return SampledMask(np.full(shape, (kind.low + kind.high) / 2.0))
    raise ParameterError(f"unknown activation kind '{kind.tag}'")


def activate(x: np.ndarray, mask: SampledMask) -> np.ndarray:
    """y[i] = x[i] if x[i] >= 0 else slopes[i] * x[i]."""
    if x.shape != mask.slopes.shape:
        raise DimensionError(f"activation input {x.shape} vs mask {mask.slopes.shape}")
    return np.where(x >= 0.0, x, mask.slopes * x)


def activate_backward(x: np.ndarray, mask: SampledMask, upstream: np.ndarray) -> np.ndarray:
    """Chain rule through the realized slopes; the x == 0 branch has slope 1."""
    if x.shape != mask.slopes.shape or x.shape != upstream.shape:
        raise DimensionError(
            f"activation backward shapes disagree: x {x.shape}, mask {mask.slopes.shape}, "
            f"upstream {upstream.shape}"
        )
    return upstream * np.where(x >= 0.0, 1.0, mask.slopes)


def dropout_forward(
    x: np.ndarray,
    spec: DropoutSpec,
    mode: str,
    rng: RngStream | None = None,
    scaled: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Dropout through a sampled keep mask.

    In "train" mode (or Monte-Carlo eval, which reuses it) each element is kept
    with probability 1 - drop_rate; kept values are rescaled by 1/(1 - drop_rate)
    when `scaled` so expectations match deterministic eval.  The unscaled form
    exists for variance measurements.  In "eval" mode the input passes through.

    Returns (output, multiplier mask) where output = x * mask exactly.
    """
    p = spec.drop_rate
    if mode == "eval":
        return x, np.ones_like(x)
    if mode != "train":
        raise ParameterError(f"dropout mode must be 'train' or 'eval', got '{mode}'")
    if scaled and p == 1.0:
        raise ParameterError("dropout rate 1.0 cannot be rescaled (division by zero)")
    if rng is None:
        raise ParameterError("dropout in train mode requires an rng stream")
    keep = rng.bernoulli(1.0 - p, x.shape)
    if scaled:
        keep = keep / (1.0 - p)
    return x * keep, keep
