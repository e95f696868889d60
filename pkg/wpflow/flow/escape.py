"""
Escape time from the near-boundary set V_eps
First time f = sqrt(2 pi^2) x reaches 2 eps, capped at cap_factor / eps
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from wpflow.boundary.quantities import boundary_values
from wpflow.config.config_manager import IntegratorConfig, MetricSpec
from wpflow.flow.integrator import BOUNDARY_HIT, HORIZON, THRESHOLD, STATUS_NAMES, BatchResult, GeodesicIntegrator
from wpflow.geometry.metric import x_of_f
from wpflow.models.errors import PreconditionError, StepUnderflowError
from wpflow.models.points import PhaseEnsemble, PhasePoint

logger = logging.getLogger(__name__)

DEFAULT_CAP_FACTOR = 10.0
_MEMBERSHIP_SLACK = 1e-9


@dataclass
class EscapeResult:
    """Escape time of one trajectory"""
    time: float
    censored: bool  # never crossed before the cap
    lower_bound: bool  # stopped at x_floor first; time is a lower bound
    status: str


@dataclass
class EscapeBatch:
    """Escape times of an ensemble, plus the raw integrator result"""
    times: np.ndarray
    censored: np.ndarray
    lower_bound: np.ndarray
    failed: np.ndarray
    result: BatchResult

    def __len__(self) -> int:
        return self.times.size


def escape_threshold_x(eps: float) -> float:
    """Depth at which f = 2 eps"""
    return x_of_f(2.0 * eps)


def _check_eps(eps: float, spec: MetricSpec) -> None:
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    if eps >= spec.x_max / 4.0:
        raise PreconditionError(f"eps = {eps} must be below x_max / 4 = {spec.x_max / 4.0}")
    if x_of_f(eps) <= spec.x_floor:
        raise PreconditionError(f"eps = {eps} puts the whole set below x_floor")


def escape_times(
    ensemble: PhaseEnsemble,
    eps: float,
    spec: MetricSpec,
    opts: Optional[IntegratorConfig] = None,
    cap_factor: float = DEFAULT_CAP_FACTOR,
    monitor=None,
) -> EscapeBatch:
    """
    Escape times for a whole ensemble

    Args:
        ensemble: Initial phase points
        eps: Scale of V_eps; the threshold is f = 2 eps
        spec: Model manifold
        opts: Integrator settings
        cap_factor: Horizon cap in units of 1/eps
        monitor: Optional running-maximum monitor passed to the integrator

    Returns:
        EscapeBatch; censored entries carry the cap, lower_bound entries the floor-hit time
    """
    _check_eps(eps, spec)
    cap = cap_factor / eps
    result = GeodesicIntegrator(spec, opts).run(
        ensemble.q, ensemble.v, cap, threshold_x=escape_threshold_x(eps), monitor=monitor
    )
    crossed = result.status == THRESHOLD
    times = np.where(crossed, result.threshold_time, result.t)
    censored = result.status == HORIZON
    times = np.where(censored, cap, times)
    lower_bound = result.status == BOUNDARY_HIT
    failed = ~(crossed | censored | lower_bound)
    if np.any(failed):
        logger.warning(f"{int(failed.sum())} of {len(ensemble)} escape trajectories failed (eps={eps})")
    return EscapeBatch(times=times, censored=censored, lower_bound=lower_bound, failed=failed, result=result)


def escape_time(
    v0: PhasePoint,
    eps: float,
    spec: MetricSpec,
    opts: Optional[IntegratorConfig] = None,
    cap_factor: float = DEFAULT_CAP_FACTOR,
    require_membership: bool = True,
) -> EscapeResult:
    """
    First time the geodesic from v0 reaches f = 2 eps

    Args:
        v0: Initial phase point, normally in V_eps
        eps: Scale of V_eps
        spec: Model manifold
        opts: Integrator settings
        cap_factor: Horizon cap in units of 1/eps
        require_membership: Reject v0 outside V_eps (off for negative controls)

    Returns:
        EscapeResult with the time, or the cap if never crossed
    """
    q0, vel0 = v0.arrays()
    if require_membership:
        f0, r0 = boundary_values(q0, vel0, spec)
        if f0 > eps * (1 + _MEMBERSHIP_SLACK) or r0 > eps ** 2 * (1 + _MEMBERSHIP_SLACK):
            raise PreconditionError(f"v0 not in V_eps: f={f0:.6g}, r={r0:.6g}, eps={eps}")

    batch = escape_times(PhaseEnsemble(q0[None, :], vel0[None, :]), eps, spec, opts, cap_factor)
    status = STATUS_NAMES.get(int(batch.result.status[0]), "running")
    if batch.failed[0]:
        raise StepUnderflowError(
            f"Escape integration failed with status {status}",
            last_state=PhasePoint.from_arrays(batch.result.q[0], batch.result.v[0]),
            time=float(batch.result.t[0]),
        )
    return EscapeResult(
        time=float(batch.times[0]),
        censored=bool(batch.censored[0]),
        lower_bound=bool(batch.lower_bound[0]),
        status=status,
    )
