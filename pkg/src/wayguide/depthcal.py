"""Monocular depth calibration against trusted feature-point depths.

Monocular depth networks produce relative depth up to an unknown affine
transform. Given feature points whose metric depth is tracked reliably,
a per-frame scale and shift are recovered with RANSAC so that

    calibrated_depth = mono_depth * scale + shift

holds in meters. Frames without enough consistent points yield no
calibration rather than a bad one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

RANSAC_ITERATIONS = 200
INLIER_ERROR = 0.05
MIN_INLIERS = 40
MIN_INLIER_RATIO = 0.7


@dataclass(frozen=True)
class FeaturePointSample:
    """Depth observations for one tracked feature point.

    Attributes:
        world_depth: Trusted metric depth of the point in meters.
        mono_depth: Unitless monocular-model output at the point's pixel.
    """

    world_depth: float
    mono_depth: float

    def __post_init__(self) -> None:
        if not (self.world_depth > 0 and self.mono_depth > 0):
            raise ValueError("depths must be positive")


@dataclass(frozen=True)
class ScaleShift:
    """Affine calibration mapping mono depth to metric depth.

    Attributes:
        scale: Unitless multiplier applied to mono depth.
        shift: Additive offset in meters.
    """

    scale: float
    shift: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.scale) and math.isfinite(self.shift)):
            raise ValueError("calibration coefficients must be finite")

    def apply(self, mono_depth):
        """Maps mono depth values to calibrated metric depth."""
        return mono_depth * self.scale + self.shift


def percentage_error(d: float, d_hat: float) -> float:
    """Relative depth error |d - d_hat| / d.

    Args:
        d: Ground-truth depth in meters; must be positive.
        d_hat: Estimated depth in meters.

    Returns:
        The error as a fraction of the true depth.

    Raises:
        ValueError: If d is not positive.
    """
    if d <= 0:
        raise ValueError("ground-truth depth must be positive")
    return abs(d - d_hat) / d


def _line_through(w: np.ndarray, m: np.ndarray, i: int, j: int) -> tuple[float, float]:
    scale = (w[i] - w[j]) / (m[i] - m[j])
    return scale, w[i] - scale * m[i]


def calibrate(
    samples: list[FeaturePointSample], seed: int = 0
) -> ScaleShift | None:
    """Fits a scale/shift line to feature points, robust to outliers.

    Runs 200 RANSAC iterations. Each iteration fits a candidate line
    through two samples with distinct mono depths (degenerate draws are
    redrawn without consuming an iteration); a sample is an inlier when
    its calibrated depth is within 5% of its world depth. The candidate
    with the most inliers wins, with ties broken by the smaller sum of
    squared residuals over its inliers. The result is accepted only when
    the best candidate has at least 40 inliers and at least a 0.7 inlier
    ratio, in which case the returned line is the least-squares fit over
    those inliers.

    Args:
        samples: Feature-point observations; at least two required.
        seed: Seed for the sampling RNG; fixes the result.

    Returns:
        The fitted calibration, or None when no candidate passes the
        inlier gates (calibration unavailable this frame).

    Raises:
        ValueError: If fewer than two samples are given.
    """
    if len(samples) < 2:
        raise ValueError("calibration needs at least two samples")
    w = np.array([s.world_depth for s in samples])
    m = np.array([s.mono_depth for s in samples])
    n = len(samples)
    if np.all(m == m[0]):
        return None  # no two points define a line

    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = 0
    best_ssr = math.inf
    for _ in range(RANSAC_ITERATIONS):
        i, j = rng.choice(n, size=2, replace=False)
        while m[i] == m[j]:
            i, j = rng.choice(n, size=2, replace=False)
        scale, shift = _line_through(w, m, i, j)
        residuals = w - (m * scale + shift)
        inliers = np.abs(residuals) / w < INLIER_ERROR
        count = int(np.count_nonzero(inliers))
        if count < best_count:
            continue
        ssr = float(np.sum(residuals[inliers] ** 2))
        if count > best_count or ssr < best_ssr:
            best_mask = inliers
            best_count = count
            best_ssr = ssr

    if best_count < MIN_INLIERS or best_count / n < MIN_INLIER_RATIO:
        return None
    scale, shift = np.polyfit(m[best_mask], w[best_mask], 1)
    return ScaleShift(scale=float(scale), shift=float(shift))
