"""Statistical uncertainty of the witness and measurement-time planning."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .witness import ClickProbabilities, witness_distance

__all__ = [
    "PHI",
    "DEFAULT_CHUNKS",
    "XYStats",
    "TrendFit",
    "NotViolableError",
    "xy_stats",
    "d_from_xy",
    "variance_d",
    "variance_d_multinomial",
    "required_runs",
    "chunked_error",
    "compare_witnesses",
    "weighted_trend",
    "normal_cdf",
]

PHI = math.atan(0.5)
DEFAULT_CHUNKS = 5

# below this many runs the Gaussian approximation is not trustworthy
_SMALL_N = 100


class NotViolableError(ValueError):
    """The state sits on or below the classical threshold (d <= 0)."""


def normal_cdf(x):
    return ndtr(x)


@dataclass(frozen=True)
class XYStats:
    """Means and variances of X = 2*P0 - P00 and Y = P0 + 2*P00 over N runs."""

    x: float
    y: float
    vx: float
    vy: float
    n_runs: int

    @property
    def p0(self) -> float:
        return (2 * self.x + self.y) / 5

    @property
    def p00(self) -> float:
        return (2 * self.y - self.x) / 5


def _xy_variances(pc, ps_excl, p00, n_runs):
    vx = pc * (1 - pc) / n_runs
    vy = ps_excl * (1 - ps_excl) / (4 * n_runs) + 9 * p00 * (1 - p00) / (4 * n_runs)
    return vx, vy


def xy_stats(probs: ClickProbabilities, n_runs: int) -> XYStats:
    p0, p00 = probs.p0, probs.p00
    vx, vy = _xy_variances(probs.pc, probs.ps_excl, p00, n_runs)
    return XYStats(2 * p0 - p00, p0 + 2 * p00, vx, vy, n_runs)


def d_from_xy(x, y):
    """Witness expressed through the rotated coordinates X and Y."""
    return (2 * x + y) / 5 - np.sqrt((2 * y - x) / 5)


def variance_d(pc, ps_excl, p00, n_runs):
    """Gaussian-approximation variance of d after ``n_runs`` runs.

    Vx = Pc(1-Pc)/N and Vy = Ps(1-Ps)/4N + 9 P00(1-P00)/4N with Ps the
    exclusive single-click probability, combined along the directions set
    by phi = arctan(1/2).
    """
    p00 = np.asarray(p00, dtype=float)
    if np.any(p00 <= 0):
        raise ValueError("variance of d is singular at P00 = 0")
    if np.any(np.asarray(n_runs) < 1):
        raise ValueError("need at least one run")
    if np.any(np.asarray(n_runs) < _SMALL_N):
        warnings.warn(
            f"Gaussian error model used with fewer than {_SMALL_N} runs",
            RuntimeWarning,
            stacklevel=2,
        )
    vx, vy = _xy_variances(pc, ps_excl, p00, n_runs)
    root = 2 * np.sqrt(p00)
    s, c = math.sin(PHI), math.cos(PHI)
    out = vx * (s / root + c) ** 2 + vy * (c / root - s) ** 2
    return float(out) if np.ndim(out) == 0 else out


def variance_d_multinomial(probs: ClickProbabilities, n_runs: int) -> float:
    """First-order (delta-method) variance of the plug-in estimate of d.

    Uses the exact multinomial covariance of the four click patterns and
    d = sqrt(P01 * P02) - sqrt(P00).
    """
    if probs.p00 <= 0 or probs.p01 <= 0 or probs.p02 <= 0:
        raise ValueError("variance of d is singular when a silence probability is zero")
    p = np.array([probs.p00, probs.ps1_excl, probs.ps2_excl, probs.pc])
    p0 = probs.p0
    # P01 = p00 + ps2, P02 = p00 + ps1
    d_p01 = 0.5 * p0 / probs.p01
    d_p02 = 0.5 * p0 / probs.p02
    grad = np.array(
        [d_p01 + d_p02 - 0.5 / math.sqrt(probs.p00), d_p02, d_p01, 0.0]
    )
    cov = (np.diag(p) - np.outer(p, p)) / n_runs
    return float(grad @ cov @ grad)


def required_runs(probs: ClickProbabilities, k_sigma: float = 2.0) -> int:
    """Smallest run count for which d reaches ``k_sigma`` standard deviations."""
    if k_sigma < 0:
        raise ValueError(f"k_sigma must be non-negative, got {k_sigma}")
    d = witness_distance(probs.p0, probs.p00)
    if d <= 0:
        raise NotViolableError(f"d = {d:.3g} <= 0: classical statistics cannot be violated")
    if k_sigma == 0:
        return 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        var1 = variance_d(probs.pc, probs.ps_excl, probs.p00, 1)
    return max(1, math.ceil(k_sigma**2 * var1 / d**2))


def chunked_error(d_values) -> tuple[float, float]:
    """Mean of per-chunk witness values and the standard error of that mean."""
    d = np.asarray(d_values, dtype=float)
    if d.size < 2:
        raise ValueError("need at least two chunks for an error estimate")
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))


def compare_witnesses(d1: float, sigma1: float, d2: float, sigma2: float) -> float:
    """Confidence that d2 > d1 given independent Gaussian errors."""
    if sigma1 <= 0 or sigma2 <= 0:
        raise ValueError("standard deviations must be positive")
    return float(normal_cdf((d2 - d1) / math.hypot(sigma1, sigma2)))


@dataclass(frozen=True)
class TrendFit:
    gradient: float
    sigma_gradient: float
    intercept: float
    confidence_positive: float


def weighted_trend(points) -> TrendFit:
    """Weighted least-squares line through ``(n, d, sigma)`` points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
        raise ValueError("need at least two (n, d, sigma) points")
    n, d, sigma = pts.T
    if np.any(sigma <= 0):
        raise ValueError("standard deviations must be positive")
    w = 1.0 / sigma**2
    sw, sx, sy = w.sum(), (w * n).sum(), (w * d).sum()
    sxx, sxy = (w * n * n).sum(), (w * n * d).sum()
    delta = sw * sxx - sx**2
    if delta <= 1e-12 * sw * sxx or np.ptp(n) == 0:
        raise ValueError("singular fit: abscissae are all equal")
    gradient = (sw * sxy - sx * sy) / delta
    intercept = (sxx * sy - sx * sxy) / delta
    sigma_gradient = math.sqrt(sw / delta)
    return TrendFit(
        gradient=float(gradient),
        sigma_gradient=sigma_gradient,
        intercept=float(intercept),
        confidence_positive=float(normal_cdf(gradient / sigma_gradient)),
    )
