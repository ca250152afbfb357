"""Inhomogeneous line shapes used to draw per-cluster detunings.

Widths are always full widths: the FWHM for Gaussian and Lorentzian lines and
the full support for the top-hat line.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["LINESHAPES", "FWHM_PER_SIGMA", "sample", "window_probability"]

LINESHAPES = ("gaussian", "lorentzian", "tophat")
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


def _check(kind: str, width: float) -> None:
    if kind not in LINESHAPES:
        raise ValueError(f"unknown line shape {kind!r}; choose from {LINESHAPES}")
    if width < 0 or not math.isfinite(width):
        raise ValueError(f"line width must be finite and non-negative, got {width}")


def sample(kind: str, width: float, size, rng: np.random.Generator) -> np.ndarray:
    """Draw detunings (MHz) centred on zero.

    A zero width returns exact zeros but still consumes nothing from ``rng`` so
    that switching the width on or off does not shift other random streams.
    """
    _check(kind, width)
    if width == 0:
        return np.zeros(size)
    if kind == "gaussian":
        return rng.normal(0.0, width / FWHM_PER_SIGMA, size)
    if kind == "lorentzian":
        return rng.standard_cauchy(size) * (width / 2.0)
    return rng.uniform(-width / 2.0, width / 2.0, size)


def window_probability(kind: str, width: float, center: float, window: float) -> float:
    """Probability that a draw lies within ``center +/- window/2``."""
    _check(kind, width)
    lo, hi = center - window / 2.0, center + window / 2.0
    if width == 0:
        return float(lo <= 0.0 <= hi)
    if kind == "gaussian":
        s = width / FWHM_PER_SIGMA
        return 0.5 * (math.erf(hi / (s * math.sqrt(2))) - math.erf(lo / (s * math.sqrt(2))))
    if kind == "lorentzian":
        g = width / 2.0
        return (math.atan(hi / g) - math.atan(lo / g)) / math.pi
    half = width / 2.0
    return max(0.0, min(hi, half) - max(lo, -half)) / width
