"""
Geodesic flow integrator
Dormand-Prince 5(4) with per-trajectory step control, evaluated on whole
ensembles at once. Handles three level events in x:

    x = x_max      reflecting wall (vx -> -vx), logged as wall_reflection
    x = threshold  optional terminal level, logged as threshold_cross
    x < x_floor    terminal, logged as boundary_hit

Speed is never renormalised; the drift |g(v,v) - g(v0,v0)| is measured and
reported. Returned positions have tau, y1, y2 reduced to their fundamental domain.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from wpflow.config.config_manager import IntegratorConfig, MetricSpec
from wpflow.geometry.metric import check_domain, geodesic_acceleration, norm_squared
from wpflow.models.errors import PreconditionError, StepUnderflowError
from wpflow.models.points import PhaseEnsemble, PhasePoint, reduce_periodic

logger = logging.getLogger(__name__)

RUNNING = -1
HORIZON = 0
THRESHOLD = 1
BOUNDARY_HIT = 2
UNDERFLOW = 3
MAX_STEPS = 4

STATUS_NAMES = {
    HORIZON: "horizon",
    THRESHOLD: "threshold_cross",
    BOUNDARY_HIT: "boundary_hit",
    UNDERFLOW: "step_underflow",
    MAX_STEPS: "max_steps",
}

EVENT_KINDS = ("boundary_hit", "wall_reflection", "threshold_cross")

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_LOW = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B_LOW

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_EVENT_TOL = 1e-10
_MAX_EVENT_RETRIES = 30


@dataclass
class BatchResult:
    """Final states and per-trajectory statistics of an ensemble run"""
    q: np.ndarray
    v: np.ndarray
    t: np.ndarray
    status: np.ndarray
    threshold_time: np.ndarray
    steps: np.ndarray
    reflections: np.ndarray
    max_energy_drift: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    monitor_max: Optional[np.ndarray] = None
    events: List[Tuple[int, float, str]] = field(default_factory=list)
    samples: Optional[List[Tuple[np.ndarray, np.ndarray, np.ndarray]]] = None

    def __len__(self) -> int:
        return self.q.shape[0]

    @property
    def failed(self) -> np.ndarray:
        """Trajectories that did not end at the horizon or the threshold"""
        return (self.status != HORIZON) & (self.status != THRESHOLD)

    def final_ensemble(self) -> PhaseEnsemble:
        return PhaseEnsemble(self.q.copy(), self.v.copy())


def _rhs(y: np.ndarray, spec: MetricSpec) -> np.ndarray:
    q = y[:, :4]
    v = y[:, 4:]
    return np.concatenate([v, geodesic_acceleration(q, v, spec)], axis=1)


def _dopri_step(y: np.ndarray, h: np.ndarray, spec: MetricSpec):
    """One embedded step for every row; returns (y_new, error_vector)"""
    k = []
    hc = h[:, None]
    for stage in range(7):
        if stage == 0:
            y_stage = y
        else:
            incr = sum(a * kj for a, kj in zip(_A[stage], k) if a != 0.0)
            y_stage = y + hc * incr
        k.append(_rhs(y_stage, spec))
    y_new = y + hc * sum(b * kj for b, kj in zip(_B, k) if b != 0.0)
    err = hc * sum(e * kj for e, kj in zip(_E, k) if e != 0.0)
    return y_new, err


def _step_ceiling(y: np.ndarray, opts: IntegratorConfig) -> np.ndarray:
    # geometric timescale of the cusp plane is x / (cusp speed); radial unit
    # speed gives exactly h <= max_step_factor * x
    x = y[:, 0]
    cusp_speed = np.sqrt(4.0 * y[:, 4] ** 2 + x ** 6 * y[:, 5] ** 2)
    ceiling = opts.max_step_factor * x / np.maximum(cusp_speed, opts.cusp_speed_floor)
    return np.minimum(ceiling, opts.max_step)


def _initial_step(y: np.ndarray, opts: IntegratorConfig) -> np.ndarray:
    return np.minimum(_step_ceiling(y, opts), 1e-2)


class GeodesicIntegrator:
    """
    Integrates the geodesic equation for an ensemble of phase points

    Args:
        spec: Model manifold parameters
        opts: Step-control settings
    """

    def __init__(self, spec: MetricSpec, opts: Optional[IntegratorConfig] = None):
        self.spec = spec
        self.opts = opts or IntegratorConfig()

    def run(
        self,
        q0: np.ndarray,
        v0: np.ndarray,
        horizon: Union[float, np.ndarray],
        threshold_x: Optional[Union[float, np.ndarray]] = None,
        record: bool = False,
        t_eval: Optional[Sequence[float]] = None,
        monitor: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None,
    ) -> BatchResult:
        """
        Integrate every row of (q0, v0) up to its horizon

        Args:
            q0, v0: (N, 4) initial positions and velocities
            horizon: Final time, scalar or per trajectory
            threshold_x: Terminal level in x (escape threshold), scalar or per trajectory
            record: Keep every accepted state
            t_eval: Output times the steps must land on (implies record)
            monitor: f(idx, t, q, v) -> values; the running maximum is kept

        Returns:
            BatchResult with final states and statistics
        """
        spec, opts = self.spec, self.opts
        q0 = np.atleast_2d(np.asarray(q0, dtype=float))
        v0 = np.atleast_2d(np.asarray(v0, dtype=float))
        n = q0.shape[0]
        check_domain(q0, spec)

        horizon = np.broadcast_to(np.asarray(horizon, dtype=float), (n,)).copy()
        if np.any(horizon <= 0):
            raise PreconditionError("horizon must be positive")
        if threshold_x is None:
            upper = np.full(n, spec.x_max)
            upper_terminal = np.zeros(n, dtype=bool)
        else:
            thr = np.broadcast_to(np.asarray(threshold_x, dtype=float), (n,))
            upper_terminal = thr < spec.x_max
            upper = np.where(upper_terminal, thr, spec.x_max)

        eval_times = None
        if t_eval is not None:
            eval_times = np.unique(np.asarray(t_eval, dtype=float))
            eval_times = eval_times[(eval_times > 0) & (eval_times <= horizon.max())]
            record = True
        eval_ptr = np.zeros(n, dtype=int)

        y = np.concatenate([q0, v0], axis=1)
        e0 = norm_squared(q0, v0, spec)
        t = np.zeros(n)
        h = _initial_step(y, opts)
        status = np.full(n, RUNNING)
        threshold_time = np.full(n, np.nan)
        steps = np.zeros(n, dtype=int)
        reflections = np.zeros(n, dtype=int)
        retries = np.zeros(n, dtype=int)
        drift = np.zeros(n)
        x_lo = q0[:, 0].copy()
        x_hi = q0[:, 0].copy()
        events: List[Tuple[int, float, str]] = []
        started_above = upper_terminal & (q0[:, 0] >= upper)
        for i in np.flatnonzero(started_above):
            status[i] = THRESHOLD
            threshold_time[i] = 0.0
            events.append((int(i), 0.0, "threshold_cross"))
        monitor_max = None
        if monitor is not None:
            monitor_max = np.asarray(monitor(np.arange(n), t, q0, v0), dtype=float).copy()

        log_t: List[np.ndarray] = []
        log_i: List[np.ndarray] = []
        log_y: List[np.ndarray] = []
        if record:
            log_i.append(np.arange(n))
            log_t.append(t.copy())
            log_y.append(y.copy())

        while True:
            active = np.flatnonzero(status == RUNNING)
            if active.size == 0:
                break

            ya = y[active]
            xa = ya[:, 0]
            vxa = ya[:, 4]

            # events that fire at the start of a step: sitting on a level and heading through it
            at_upper = (upper[active] - xa <= _EVENT_TOL) & (vxa > 0)
            if np.any(at_upper):
                idx = active[at_upper]
                term = upper_terminal[idx]
                for i in idx[term]:
                    status[i] = THRESHOLD
                    threshold_time[i] = t[i]
                    events.append((int(i), float(t[i]), "threshold_cross"))
                wall = idx[~term]
                if wall.size:
                    y[wall, 4] = -y[wall, 4]
                    reflections[wall] += 1
                    for i in wall:
                        events.append((int(i), float(t[i]), "wall_reflection"))
                retries[idx] = 0
                active = np.flatnonzero(status == RUNNING)
                if active.size == 0:
                    break
                ya = y[active]

            remaining = horizon[active] - t[active]
            h_try = np.minimum(np.minimum(h[active], _step_ceiling(ya, opts)), remaining)
            if eval_times is not None:
                ptr = eval_ptr[active]
                has_next = ptr < eval_times.size
                next_eval = np.where(has_next, eval_times[np.minimum(ptr, eval_times.size - 1)], np.inf)
                h_try = np.minimum(h_try, np.maximum(next_eval - t[active], 0.0))

            y_new, err = _dopri_step(ya, h_try, spec)
            scale = opts.atol + opts.rtol * np.maximum(np.abs(ya), np.abs(y_new))
            err_norm = np.sqrt(np.mean((err / scale) ** 2, axis=1))
            accept = err_norm <= 1.0

            with np.errstate(divide="ignore"):
                factor = np.where(
                    err_norm == 0.0,
                    _MAX_FACTOR,
                    np.clip(_SAFETY * err_norm ** -0.2, _MIN_FACTOR, _MAX_FACTOR),
                )
            h_next = h_try * np.where(accept, factor, np.minimum(factor, 1.0))

            x_old = ya[:, 0]
            x_new = y_new[:, 0]

            # level crossings inside an accepted step: shrink onto the level
            cross_upper = accept & (x_new > upper[active])
            cross_floor = accept & (x_new < spec.x_floor)
            crossing = cross_upper | cross_floor
            rejected_for_error = ~accept
            if np.any(crossing):
                level = np.where(cross_upper, upper[active], spec.x_floor)
                denom = x_old - x_new
                with np.errstate(divide="ignore", invalid="ignore"):
                    theta = np.where(denom != 0.0, (x_old - level) / denom, 0.5)
                theta = np.clip(theta, 0.0, 1.0)
                ci = np.flatnonzero(crossing)
                gi = active[ci]
                retries[gi] += 1
                exhausted = retries[gi] > _MAX_EVENT_RETRIES
                near_floor = cross_floor[ci] & ((x_old[ci] - spec.x_floor <= _EVENT_TOL) | exhausted)
                for j, i in zip(ci[near_floor], gi[near_floor]):
                    status[i] = BOUNDARY_HIT
                    t_hit = t[i] + theta[j] * h_try[j]
                    events.append((int(i), float(t_hit), "boundary_hit"))
                    t[i] = t_hit
                up_exhausted = cross_upper[ci] & exhausted
                for j, i in zip(ci[up_exhausted], gi[up_exhausted]):
                    # give up locating: move to the interpolated level time with the old state
                    if upper_terminal[i]:
                        status[i] = THRESHOLD
                        threshold_time[i] = t[i] + theta[j] * h_try[j]
                        events.append((int(i), float(threshold_time[i]), "threshold_cross"))
                    else:
                        y[i, 4] = -abs(y[i, 4])
                        reflections[i] += 1
                        retries[i] = 0
                        events.append((int(i), float(t[i]), "wall_reflection"))
                h_next[ci] = np.maximum(theta[ci] * h_try[ci] * (1.0 - 1e-12), 0.0)
                accept = accept & ~crossing

            underflow = rejected_for_error & (h_next < opts.min_step) & (status[active] == RUNNING)
            for i in active[underflow]:
                status[i] = UNDERFLOW
                logger.debug(f"Step underflow on trajectory {i} at t={t[i]:.6g}, x={y[i, 0]:.3g}")

            h[active] = np.where(h_next > 0, h_next, h[active])

            acc = active[accept & (status[active] == RUNNING)]
            if acc.size:
                sel = accept & (status[active] == RUNNING)
                y[acc] = y_new[sel]
                t[acc] = t[acc] + h_try[sel]
                steps[acc] += 1
                retries[acc] = 0
                qa, va = y[acc, :4], y[acc, 4:]
                drift[acc] = np.maximum(drift[acc], np.abs(norm_squared(qa, va, spec) - e0[acc]))
                x_lo[acc] = np.minimum(x_lo[acc], qa[:, 0])
                x_hi[acc] = np.maximum(x_hi[acc], qa[:, 0])
                if monitor is not None:
                    monitor_max[acc] = np.maximum(monitor_max[acc], monitor(acc, t[acc], qa, va))
                if record:
                    log_i.append(acc.copy())
                    log_t.append(t[acc].copy())
                    log_y.append(y[acc].copy())
                if eval_times is not None:
                    target = eval_times[np.minimum(eval_ptr[acc], eval_times.size - 1)]
                    hit = t[acc] >= target - 1e-12 * np.maximum(1.0, target)
                    eval_ptr[acc] += hit & (eval_ptr[acc] < eval_times.size)

                done = acc[t[acc] >= horizon[acc] * (1 - 1e-14)]
                status[done] = HORIZON
                too_long = acc[(steps[acc] >= opts.max_steps) & (status[acc] == RUNNING)]
                status[too_long] = MAX_STEPS

        samples = None
        if record:
            all_i = np.concatenate(log_i)
            all_t = np.concatenate(log_t)
            all_y = np.concatenate(log_y)
            samples = []
            for i in range(n):
                m = all_i == i
                q_m = reduce_periodic(all_y[m, :4], spec.tau_period, spec.torus_sides)
                samples.append((all_t[m], q_m, all_y[m, 4:]))

        events.sort(key=lambda e: (e[0], e[1]))
        return BatchResult(
            q=reduce_periodic(y[:, :4], spec.tau_period, spec.torus_sides),
            v=y[:, 4:].copy(),
            t=t,
            status=status,
            threshold_time=threshold_time,
            steps=steps,
            reflections=reflections,
            max_energy_drift=drift,
            x_min=x_lo,
            x_max=x_hi,
            monitor_max=monitor_max,
            events=events,
            samples=samples,
        )


@dataclass
class Trajectory:
    """Time-sampled geodesic with event annotations"""
    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    events: List[Tuple[float, str]]
    steps: int
    max_energy_drift: float
    energy_tolerance: float
    status: str

    @property
    def valid(self) -> bool:
        return self.max_energy_drift <= self.energy_tolerance and self.status in ("horizon", "threshold_cross")

    @property
    def samples(self) -> List[Tuple[float, PhasePoint]]:
        return [(float(ti), PhasePoint.from_arrays(qi, vi)) for ti, qi, vi in zip(self.t, self.q, self.v)]

    def __len__(self) -> int:
        return self.t.size

    def final(self) -> PhasePoint:
        return PhasePoint.from_arrays(self.q[-1], self.v[-1])


def _trajectory_from_batch(result: BatchResult, opts: IntegratorConfig) -> Trajectory:
    t, q, v = result.samples[0]
    events = [(time, kind) for _, time, kind in result.events]
    return Trajectory(
        t=t,
        q=q,
        v=v,
        events=events,
        steps=int(result.steps[0]),
        max_energy_drift=float(result.max_energy_drift[0]),
        energy_tolerance=opts.energy_tolerance,
        status=STATUS_NAMES[int(result.status[0])],
    )


def integrate(
    v0: PhasePoint,
    horizon: float,
    spec: MetricSpec,
    opts: Optional[IntegratorConfig] = None,
    threshold_x: Optional[float] = None,
    t_eval: Optional[Sequence[float]] = None,
) -> Trajectory:
    """
    Integrate one geodesic and keep every accepted step

    Raises:
        StepUnderflowError: adaptive step fell below opts.min_step
    """
    opts = opts or IntegratorConfig()
    q0, vel0 = v0.arrays()
    result = GeodesicIntegrator(spec, opts).run(
        q0[None, :], vel0[None, :], horizon, threshold_x=threshold_x, record=True, t_eval=t_eval
    )
    trajectory = _trajectory_from_batch(result, opts)
    if result.status[0] == UNDERFLOW:
        raise StepUnderflowError(
            f"Adaptive step fell below {opts.min_step} at t={result.t[0]:.6g}",
            last_state=trajectory.final(),
            time=float(result.t[0]),
        )
    if not trajectory.valid:
        logger.warning(
            f"Trajectory flagged invalid: status={trajectory.status}, "
            f"energy drift={trajectory.max_energy_drift:.3g}"
        )
    return trajectory


def integrate_ensemble(
    ensemble: PhaseEnsemble,
    horizon: Union[float, np.ndarray],
    spec: MetricSpec,
    opts: Optional[IntegratorConfig] = None,
    threshold_x: Optional[Union[float, np.ndarray]] = None,
    monitor=None,
) -> BatchResult:
    """Integrate every member of an ensemble (final states only)"""
    if len(ensemble) == 0:
        empty = np.empty((0, 4))
        z = np.empty(0)
        return BatchResult(empty, empty, z, z.astype(int), z, z.astype(int), z.astype(int), z, z, z)
    return GeodesicIntegrator(spec, opts).run(
        ensemble.q, ensemble.v, horizon, threshold_x=threshold_x, monitor=monitor
    )
