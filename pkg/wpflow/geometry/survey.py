"""
Curvature survey and analytic-versus-numeric cross-checks of the model metric
"""

import logging
from typing import Sequence

import numpy as np

from wpflow.config.config_manager import MetricSpec
from wpflow.geometry.metric import (
    christoffel_symbols,
    metric_diagonal,
    sectional_curvature,
)
from wpflow.models.errors import DegeneratePlaneError
from wpflow.models.points import ManifoldPoint, TangentVector
from wpflow.models.results import CurvatureRow, GeometryReport
from wpflow.utils.seeding import derive_rng

logger = logging.getLogger(__name__)

CUSP_CURVATURE_X2 = -1.5
CURVATURE_LAW_TOLERANCE = 1e-6
FD_STEP = 1e-5

_CUSP_PLANE = (TangentVector(1.0, 0.0, 0.0, 0.0), TangentVector(0.0, 1.0, 0.0, 0.0))
_TORUS_PLANE = (TangentVector(0.0, 0.0, 1.0, 0.0), TangentVector(0.0, 0.0, 0.0, 1.0))


def curvature_survey(
    spec: MetricSpec,
    depths: Sequence[float],
    planes_per_depth: int = 200,
    seed: int = 0,
) -> GeometryReport:
    """
    Cusp-plane, torus-plane and random mixed-plane curvatures per depth

    The cusp law K x^2 = -3/2 is checked at every depth when eta = 0.
    """
    rng = derive_rng(seed, "geometry/planes")
    rows = []
    worst = 0.0
    for x in depths:
        p = ManifoldPoint(float(x), 0.5 * spec.tau_period, 0.25 * spec.torus_sides[0], 0.5 * spec.torus_sides[1])
        cusp = sectional_curvature(p, _CUSP_PLANE, spec)
        torus = sectional_curvature(p, _TORUS_PLANE, spec)
        mixed = []
        for _ in range(planes_per_depth):
            u, w = rng.standard_normal((2, 4))
            try:
                mixed.append(sectional_curvature(p, (TangentVector.from_array(u), TangentVector.from_array(w)), spec))
            except DegeneratePlaneError:
                continue
        if spec.eta == 0.0:
            worst = max(worst, abs(cusp * x * x - CUSP_CURVATURE_X2) / abs(CUSP_CURVATURE_X2))
        rows.append(
            CurvatureRow(
                x=float(x),
                cusp=cusp,
                torus=torus,
                mixed_min=float(min(mixed)) if mixed else 0.0,
                mixed_max=float(max(mixed)) if mixed else 0.0,
                cusp_times_x2=cusp * x * x,
            )
        )
        logger.debug(f"x={x}: K_cusp={cusp:.6g}, K_torus={torus:.3g}")
    passed = spec.eta != 0.0 or worst < CURVATURE_LAW_TOLERANCE
    logger.info(f"Curvature survey over {len(rows)} depths, max cusp-law error {worst:.3g}")
    return GeometryReport(eta=spec.eta, rows=rows, max_cusp_law_error=worst, passed=passed)


def christoffel_fd_error(q: np.ndarray, spec: MetricSpec, step: float = FD_STEP) -> float:
    """
    Largest relative gap between analytic Christoffel symbols and central differences of the metric

    Args:
        q: (N, 4) chart points

    Returns:
        max |analytic - numeric| / max(|analytic|, 1)
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    dg = np.zeros(q.shape + (4,))
    for l in range(4):
        e = np.zeros(4)
        e[l] = step
        dg[:, l, :] = (metric_diagonal(q + e, spec) - metric_diagonal(q - e, spec)) / (2.0 * step)
    g = metric_diagonal(q, spec)
    # Gamma^k_ij = (d_i g_kk delta_jk + d_j g_kk delta_ik - d_k g_ii delta_ij) / (2 g_kk)
    eye = np.eye(4)
    numeric = (
        np.einsum("nik,jk->nkij", dg, eye)
        + np.einsum("njk,ik->nkij", dg, eye)
        - np.einsum("nki,ij->nkij", dg, eye)
    ) / (2.0 * g[:, :, None, None])
    analytic = christoffel_symbols(q, spec)
    scale = np.maximum(np.abs(analytic), 1.0)
    return float(np.max(np.abs(analytic - numeric) / scale))
