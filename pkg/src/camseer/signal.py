"""Digital signal processing for kinematic channels.

Second-order low-pass Butterworth design, zero-phase (forward-backward)
filtering, numerical differentiation and z-score normalization. All
functions are pure and operate on 1-D float64 arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter, lfilter_zi

from .errors import InvalidParameterError, TooShortInputError

# Edge padding for zero-phase filtering: odd (reflective) extension of
# 3 * max(len(a), len(b)) samples; inputs must cover three pad lengths.
PAD_FACTOR = 3


@dataclass(frozen=True)
class FilterCoefficients:
    """Discrete biquad coefficients of a 2nd-order low-pass Butterworth."""

    b: np.ndarray  # feedforward, length 3
    a: np.ndarray  # feedback, length 3, a[0] == 1
    cutoff_hz: float
    sample_rate_hz: float

    @property
    def pad_len(self) -> int:
        return PAD_FACTOR * max(len(self.a), len(self.b))

    @property
    def min_input_len(self) -> int:
        return PAD_FACTOR * self.pad_len

    def poles(self) -> np.ndarray:
        return np.roots(self.a)


@dataclass(frozen=True)
class NormStats:
    """Per-channel z-score statistics. ``degenerate`` marks ~zero variance."""

    mean: float
    std: float
    degenerate: bool = False


def _degenerate_std(mean: float, std: float) -> bool:
    return std < 1e-12 * (1.0 + abs(mean))


def design_butterworth2(cutoff_hz: float, sample_rate_hz: float) -> FilterCoefficients:
    """Design a discrete 2nd-order Butterworth low-pass filter.

    Bilinear transform with frequency pre-warping of the analog prototype
    1 / (s^2 + sqrt(2) s + 1), so the single-pass magnitude at the cutoff
    is exactly 1/sqrt(2).
    """
    if sample_rate_hz <= 0:
        raise InvalidParameterError(f"sample rate must be positive, got {sample_rate_hz}")
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise InvalidParameterError(
            f"cutoff {cutoff_hz} Hz outside (0, {sample_rate_hz / 2}) Hz"
        )
    k = math.tan(math.pi * cutoff_hz / sample_rate_hz)
    k2 = k * k
    norm = 1.0 / (1.0 + math.sqrt(2.0) * k + k2)
    b = np.array([k2, 2.0 * k2, k2]) * norm
    a = np.array([1.0, 2.0 * (k2 - 1.0) * norm, (1.0 - math.sqrt(2.0) * k + k2) * norm])
    return FilterCoefficients(b=b, a=a, cutoff_hz=cutoff_hz, sample_rate_hz=sample_rate_hz)


def filtfilt(coeffs: FilterCoefficients, x: np.ndarray) -> np.ndarray:
    """Zero-phase filtering: forward pass, then backward pass.

    The input is extended at both ends with an odd (point-reflected)
    replica to bound edge transients; each pass is seeded with the
    steady-state initial conditions for its first sample. Output length
    equals input length and the net phase shift is zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidParameterError("filtfilt expects a 1-D series")
    pad = coeffs.pad_len
    if x.size < coeffs.min_input_len:
        raise TooShortInputError(
            f"series of {x.size} samples, need at least {coeffs.min_input_len}"
        )
    head = 2.0 * x[0] - x[pad:0:-1]
    tail = 2.0 * x[-1] - x[-2:-pad - 2:-1]
    ext = np.concatenate([head, x, tail])

    zi = lfilter_zi(coeffs.b, coeffs.a)
    y, _ = lfilter(coeffs.b, coeffs.a, ext, zi=zi * ext[0])
    y = y[::-1]
    y, _ = lfilter(coeffs.b, coeffs.a, y, zi=zi * y[0])
    y = y[::-1]
    return y[pad:-pad]


def differentiate(x: np.ndarray, dt: float) -> np.ndarray:
    """Numerical derivative: central differences inside, one-sided at the ends."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise TooShortInputError("differentiation needs at least 2 samples")
    if dt <= 0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    return np.gradient(x, dt)


def compute_norm_stats(x: np.ndarray) -> NormStats:
    """Mean and standard deviation (n-1 denominator) of a series."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise TooShortInputError("norm stats need at least 2 samples")
    mean = float(np.mean(x))
    std = float(np.std(x, ddof=1))
    return NormStats(mean=mean, std=std, degenerate=_degenerate_std(mean, std))


def zscore(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Normalize a series; degenerate statistics map everything to zero."""
    x = np.asarray(x, dtype=np.float64)
    if stats.degenerate:
        return np.zeros_like(x)
    return (x - stats.mean) / stats.std
