"""Coverage curves, RMSCE and standard-deviation scaling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .predict import UncertaintyReport

DEFAULT_LEVELS = np.round(np.arange(1, 10) / 10, 10)
GRID = np.logspace(-1.0, 1.0, 200)
_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class CalibrationCurve:
    levels: np.ndarray
    observed: np.ndarray


@dataclass
class CalibrationResult:
    scale_factor: float
    rmsce_before: float
    rmsce_after: float
    curve_before: CalibrationCurve
    curve_after: CalibrationCurve

    def to_dict(self) -> dict:
        return {
            "scale_factor": self.scale_factor,
            "rmsce_before": self.rmsce_before,
            "rmsce_after": self.rmsce_after,
            "levels": self.curve_before.levels.tolist(),
            "observed_before": self.curve_before.observed.tolist(),
            "observed_after": self.curve_after.observed.tolist(),
        }


def _check(y, mean, total_std):
    y, mean, total_std = (np.asarray(a, dtype=np.float64) for a in (y, mean, total_std))
    if y.size == 0:
        raise ValueError("empty input")
    if not (y.shape == mean.shape == total_std.shape):
        raise ValueError("y, mean and total_std must have equal shapes")
    return y, mean, total_std


def observed_proportions(y, mean, total_std, levels=DEFAULT_LEVELS) -> np.ndarray:
    """Fraction of ``y`` inside the central interval ``mean +/- z_p * std``
    for each level ``p`` (bounds inclusive)."""
    y, mean, total_std = _check(y, mean, total_std)
    levels = np.asarray(levels, dtype=np.float64)
    if np.any((levels <= 0) | (levels >= 1)):
        raise ValueError("levels must lie in (0, 1)")
    # |y - mean| <= z * std  <=>  standardized residual <= z
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(y - mean) / total_std
    r = np.where(np.isnan(r), 0.0, r)
    z = norm.ppf((1.0 + levels) / 2.0)
    r_sorted = np.sort(r)
    return np.searchsorted(r_sorted, z, side="right") / r.size


def observed_proportion(y, mean, total_std, p: float) -> float:
    return float(observed_proportions(y, mean, total_std, [p])[0])


def rmsce(levels, observed) -> float:
    levels = np.asarray(levels, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if levels.shape != observed.shape:
        raise ValueError("levels and observed must have equal lengths")
    return float(np.sqrt(np.mean(np.square(levels - observed))))


def _rmsce_at(c: float, r_sorted: np.ndarray, levels: np.ndarray, z: np.ndarray) -> float:
    # residual/(c*std) <= z  <=>  residual/std <= c*z
    obs = np.searchsorted(r_sorted, c * z, side="right") / r_sorted.size
    return float(np.sqrt(np.mean(np.square(levels - obs))))


def fit_scale_factor(y, mean, total_std, levels=DEFAULT_LEVELS, tol: float = 1e-4) -> CalibrationResult:
    """Find ``c`` minimising RMSCE when intervals use ``c * total_std``.

    RMSCE is piecewise constant in ``c`` on finite samples, so a 200-point
    log grid over [0.1, 10] (plus c=1) locates the basin and golden-section
    search refines it to ``tol``.  The returned ``c`` is never worse than any
    grid point.
    """
    y, mean, total_std = _check(y, mean, total_std)
    if not np.any(total_std > 0):
        raise ValueError("degenerate uncertainty: all standard deviations are zero")
    if np.any(total_std <= 0):
        raise ValueError("total_std must be strictly positive")
    levels = np.asarray(levels, dtype=np.float64)
    z = norm.ppf((1.0 + levels) / 2.0)
    r_sorted = np.sort(np.abs(y - mean) / total_std)

    grid = np.union1d(GRID, [1.0])
    scores = np.array([_rmsce_at(c, r_sorted, levels, z) for c in grid])
    k = int(np.argmin(scores))
    best_c, best_s = float(grid[k]), float(scores[k])

    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, grid.size - 1)]
    a, b = np.log(lo), np.log(hi)
    x1, x2 = b - _INV_PHI * (b - a), a + _INV_PHI * (b - a)
    f1, f2 = _rmsce_at(np.exp(x1), r_sorted, levels, z), _rmsce_at(np.exp(x2), r_sorted, levels, z)
    while np.exp(b) - np.exp(a) > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INV_PHI * (b - a)
            f1 = _rmsce_at(np.exp(x1), r_sorted, levels, z)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_PHI * (b - a)
            f2 = _rmsce_at(np.exp(x2), r_sorted, levels, z)
    for x, f in ((x1, f1), (x2, f2)):
        if f < best_s:
            best_c, best_s = float(np.exp(x)), f

    before = observed_proportions(y, mean, total_std, levels)
    after = observed_proportions(y, mean, best_c * total_std, levels)
    return CalibrationResult(
        scale_factor=best_c,
        rmsce_before=rmsce(levels, before),
        rmsce_after=rmsce(levels, after),
        curve_before=CalibrationCurve(levels.copy(), before),
        curve_after=CalibrationCurve(levels.copy(), after),
    )


def evaluate_scale_factor(y, mean, total_std, c: float, levels=DEFAULT_LEVELS) -> CalibrationResult:
    """Apply a factor fitted elsewhere (e.g. on validation) to new data."""
    y, mean, total_std = _check(y, mean, total_std)
    levels = np.asarray(levels, dtype=np.float64)
    before = observed_proportions(y, mean, total_std, levels)
    after = observed_proportions(y, mean, c * total_std, levels)
    return CalibrationResult(
        scale_factor=float(c),
        rmsce_before=rmsce(levels, before),
        rmsce_after=rmsce(levels, after),
        curve_before=CalibrationCurve(levels.copy(), before),
        curve_after=CalibrationCurve(levels.copy(), after),
    )


def apply_calibration(report: UncertaintyReport, c: float) -> UncertaintyReport:
    """Scale the total std by ``c``; every variance component scales by ``c**2``."""
    if not c > 0:
        raise ValueError("scale factor must be positive")
    c2 = c * c
    return UncertaintyReport(
        mean=report.mean.copy(),
        aleatoric=report.aleatoric * c2,
        epistemic=report.epistemic * c2,
        total=report.total * c2,
    )
