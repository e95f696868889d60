"""
Power-law fitting
Weighted least squares on log-log data with a seeded bootstrap CI
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from wpflow.models.errors import InsufficientDecadesError, NonPositiveValueError
from wpflow.models.results import FitResult

logger = logging.getLogger(__name__)

N_BOOTSTRAP = 1000
CI_LEVEL = 0.95
MIN_POINTS = 4
# smallest span of a scaling family, in decades of the parameter
MIN_SPAN_DECADES = 1.5
# eps sweeps of the escape and gamma experiments only need four scales
SWEEP_MIN_DECADES = 0.9

Point = Tuple[float, float, float]


def check_family(params: Sequence[float], min_points: int = MIN_POINTS, min_decades: float = MIN_SPAN_DECADES) -> None:
    """Reject parameter families too small to pin an exponent"""
    params = np.asarray(params, dtype=float)
    if np.unique(params).size < min_points:
        raise InsufficientDecadesError(f"Need at least {min_points} distinct parameter values, got {np.unique(params).size}")
    if np.any(params <= 0):
        raise NonPositiveValueError("Parameters must be positive")
    span = np.log10(params.max() / params.min())
    if span < min_decades - 1e-9:
        raise InsufficientDecadesError(f"Parameters span {span:.2f} decades, need {min_decades}")


def _weighted_line(lx: np.ndarray, ly: np.ndarray, w: Optional[np.ndarray]) -> Tuple[float, float]:
    slope, intercept = np.polyfit(lx, ly, 1, w=w)
    return float(slope), float(intercept)


def power_law_fit(
    points: Sequence[Point],
    n_boot: int = N_BOOTSTRAP,
    seed: int = 0,
    min_points: int = MIN_POINTS,
) -> FitResult:
    """
    Fit value = C * param^exponent

    Args:
        points: (param, value, stderr) triples; stderr may be 0
        n_boot: Bootstrap resamples
        seed: Seed of the bootstrap generator
        min_points: Minimum number of points

    Returns:
        FitResult with a percentile bootstrap CI that always contains the estimate
    """
    data = np.asarray(points, dtype=float).reshape(-1, 3)
    if data.shape[0] < min_points:
        raise InsufficientDecadesError(f"Need at least {min_points} points, got {data.shape[0]}")
    x, y, se = data[:, 0], data[:, 1], data[:, 2]
    if np.any(x <= 0) or np.any(y <= 0):
        raise NonPositiveValueError("Power-law fit needs positive parameters and values")
    if np.unique(x).size < 2:
        raise InsufficientDecadesError("Need at least two distinct parameter values")

    lx = np.log(x)
    ly = np.log(y)
    # relative stderr is the stderr of log(value)
    rel = se / y
    w = None
    if np.any(rel > 0):
        floor = rel[rel > 0].min()
        w = 1.0 / np.where(rel > 0, rel, floor)
    slope, intercept = _weighted_line(lx, ly, w)
    resid = ly - (slope * lx + intercept)
    residual_rms = float(np.sqrt(np.mean(resid ** 2)))

    rng = np.random.default_rng(seed)
    n = lx.size
    boot = []
    for _ in range(n_boot):
        idx = rng.integers(0, n, n)
        if np.unique(lx[idx]).size < 2:
            continue
        boot.append(_weighted_line(lx[idx], ly[idx], None if w is None else w[idx])[0])
    boot = np.asarray(boot)
    if boot.size:
        alpha = (1.0 - CI_LEVEL) / 2.0
        ci_low, ci_high = np.quantile(boot, [alpha, 1.0 - alpha])
        stderr = float(boot.std(ddof=1)) if boot.size > 1 else 0.0
    else:
        ci_low = ci_high = slope
        stderr = 0.0
    ci_low = float(min(ci_low, slope))
    ci_high = float(max(ci_high, slope))

    logger.debug(f"Power-law fit: exponent={slope:.4f} [{ci_low:.4f}, {ci_high:.4f}], rms={residual_rms:.3g}")
    return FitResult(
        exponent=slope,
        intercept=intercept,
        ci_low=ci_low,
        ci_high=ci_high,
        n_points=int(n),
        residual_rms=residual_rms,
        exponent_stderr=stderr,
        params=x.tolist(),
        values=y.tolist(),
    )
