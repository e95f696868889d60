"""
Near-boundary quantities f, r and their derivatives along the flow

    f = sqrt(l) = sqrt(2 pi^2) x
    r = sqrt(<v, lambda>^2 + <v, J lambda>^2)

In chart components lambda = (c/4) d_x and J lambda = c / (2 x^3) d_tau with
c = sqrt(2 pi^2), so both fields are explicit and their covariant
derivatives follow from the Christoffel symbols.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from wpflow.config.config_manager import MetricSpec
from wpflow.flow.integrator import Trajectory
from wpflow.geometry.metric import (
    SQRT_2PI2,
    check_domain,
    christoffel_symbols,
    inner_product,
    lambda_vector,
    metric_derivatives,
    rotate_J,
    sqrt_length,
)
from wpflow.measure.sampling import RegionSpec, liouville_sample
from wpflow.models.errors import PreconditionError
from wpflow.models.points import PhaseEnsemble, PhasePoint
from wpflow.models.results import BoundaryState

logger = logging.getLogger(__name__)


def j_lambda_vector(q: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """J lambda in chart components"""
    return rotate_J(q, lambda_vector(q, spec), spec)


def projections(q: np.ndarray, v: np.ndarray, spec: MetricSpec) -> Tuple[np.ndarray, np.ndarray]:
    """(<v, lambda>, <v, J lambda>)"""
    a = inner_product(q, v, lambda_vector(q, spec), spec)
    b = inner_product(q, v, j_lambda_vector(q, spec), spec)
    return a, b


def boundary_values(q: np.ndarray, v: np.ndarray, spec: MetricSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised (f, r) for chart arrays of shape (..., 4)"""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    a, b = projections(q, v, spec)
    return sqrt_length(q), np.hypot(a, b)


def boundary_state(v: PhasePoint, spec: MetricSpec) -> BoundaryState:
    q, vel = v.arrays()
    check_domain(q, spec)
    f, r = boundary_values(q, vel, spec)
    return BoundaryState(f=float(f), r=float(r))


def covariant_lambda(q: np.ndarray, v: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """nabla_v lambda; lambda has constant chart components"""
    G = christoffel_symbols(q, spec)
    lam = lambda_vector(q, spec)
    return np.einsum("...kij,...i,...j->...k", G, v, lam)


def covariant_j_lambda(q: np.ndarray, v: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """nabla_v (J lambda) with J lambda = c / (2 x^3) d_tau"""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    x = q[..., 0]
    G = christoffel_symbols(q, spec)
    jl = j_lambda_vector(q, spec)
    out = np.einsum("...kij,...i,...j->...k", G, v, jl)
    out[..., 1] += v[..., 0] * (-1.5 * SQRT_2PI2 / x ** 4)
    return out


def r_prime_covariant(q: np.ndarray, v: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """
    dr/dt from the covariant derivatives, term by term

    With a = <v, lambda>, b = <v, J lambda> and nabla_v v = 0:
    r r' = a <v, nabla_v lambda> + b <v, nabla_v J lambda>. The two cusp
    terms cancel, so the result carries their roundoff (about 1e-16 / x).
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    a, b = projections(q, v, spec)
    da = inner_product(q, v, covariant_lambda(q, v, spec), spec)
    db = inner_product(q, v, covariant_j_lambda(q, v, spec), spec)
    r = np.hypot(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r > 0, (a * da + b * db) / r, 0.0)


def r_prime(q: np.ndarray, v: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """
    dr/dt along the geodesic through (q, v)

    Same quantity as r_prime_covariant with the cusp cancellation done
    symbolically: r r' = (c^2 / 8) d_x(phi) vx |vy|^2. Zero where r = 0.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    phi_x = metric_derivatives(q, spec)[..., 0, 2]
    _, r = boundary_values(q, v, spec)
    rr = SQRT_2PI2 ** 2 / 8.0 * phi_x * v[..., 0] * (v[..., 2] ** 2 + v[..., 3] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r > 0, rr / r, 0.0)


def f_prime(q: np.ndarray, v: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """df/dt = <v, lambda>"""
    return projections(np.asarray(q, dtype=float), np.asarray(v, dtype=float), spec)[0]


def r_prime_finite_difference(trajectory: Trajectory, spec: MetricSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Fourth-order central differences of r on a uniformly sampled trajectory

    Returns:
        (times, r') at the interior samples
    """
    t = trajectory.t
    if t.size < 5:
        raise PreconditionError("Need at least 5 samples for a fourth-order difference")
    h = np.diff(t)
    if not np.allclose(h, h[0], rtol=1e-9, atol=1e-14):
        raise PreconditionError("Finite-difference reading needs a uniform output grid (use t_eval)")
    _, r = boundary_values(trajectory.q, trajectory.v, spec)
    step = h[0]
    deriv = (r[:-4] - 8.0 * r[1:-3] + 8.0 * r[3:-1] - r[4:]) / (12.0 * step)
    return t[2:-2], deriv


def sample_V_eps(
    eps: float,
    n: int,
    seed: int,
    spec: Optional[MetricSpec] = None,
    chunk_size: int = 2048,
    workers: int = 1,
) -> PhaseEnsemble:
    """
    n Liouville-distributed unit vectors with f <= eps and r <= eps^2

    Rejection runs on an envelope of V_eps; a warning is logged when the
    overall acceptance falls below 1e-6.
    """
    spec = spec or MetricSpec()
    ensemble = liouville_sample(RegionSpec.v_eps(eps), n, spec, seed, chunk_size, workers, stream="V_eps")
    f, r = boundary_values(ensemble.q, ensemble.v, spec)
    slack = 1.0 + 1e-12
    if np.any(f > eps * slack) or np.any(r > eps * eps * slack):
        raise PreconditionError(f"Sampler returned points outside V_eps for eps={eps}")
    logger.debug(f"Sampled {n} points of V_eps, eps={eps}, max r/eps^2={r.max() / eps ** 2 if n else 0:.3f}")
    return ensemble
