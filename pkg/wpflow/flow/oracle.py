"""
Quadrature oracle for geodesics of the unperturbed cusp plane

With u = 2x and f(u) = u^3 / 8 the cusp plane is ds^2 = du^2 + f(u)^2 dtau^2,
a surface of revolution. The Clairaut constant p = f^2 tau' reduces the flow to

    u'^2 = E - p^2 / f(u)^2,    tau' = p / f(u)^2

which is integrated by one-dimensional quadrature. Near a turning point
u* (f(u*) = |p| / sqrt(E)) the substitution u = u* + w^2 removes the inverse
square-root singularity.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize

from wpflow.config.config_manager import IntegratorConfig, MetricSpec
from wpflow.flow.integrator import Trajectory
from wpflow.models.errors import OracleError, PreconditionError
from wpflow.models.points import PhasePoint

logger = logging.getLogger(__name__)

_QUAD_OPTS = dict(epsabs=1e-14, epsrel=1e-13, limit=200)


def _f(u):
    return u ** 3 / 8.0


class CuspGeodesic:
    """Closed-form-by-quadrature geodesic of the cusp plane"""

    def __init__(self, energy: float, p: float):
        self.E = energy
        self.p = p
        self.sqrtE = math.sqrt(energy)
        if p != 0.0:
            self.u_turn = (8.0 * abs(p) / self.sqrtE) ** (1.0 / 3.0)
        else:
            self.u_turn = 0.0

    def speed(self, u: float) -> float:
        """|u'| at u"""
        return math.sqrt(max(self.E - self.p ** 2 / _f(u) ** 2, 0.0))

    def _time_density_w(self, w: float) -> float:
        # dt/dw along u = u* + w^2
        if w < 1e-7:
            # series at the turning point: E - p^2/f^2 ~ 2 E f'(u*)/f(u*) w^2, f'/f = 3/u
            return 2.0 / math.sqrt(6.0 * self.E / self.u_turn)
        u = self.u_turn + w * w
        return 2.0 * w / math.sqrt(self.E - self.p ** 2 / _f(u) ** 2)

    def _twist_density_w(self, w: float) -> float:
        u = self.u_turn + w * w
        return self.p / _f(u) ** 2 * self._time_density_w(w)

    def time_from_turn(self, u: float) -> float:
        """Time to travel from the turning point out to u"""
        if self.p == 0.0:
            raise OracleError("Radial geodesics have no turning point")
        w = math.sqrt(max(u - self.u_turn, 0.0))
        if w == 0.0:
            return 0.0
        return integrate.quad(self._time_density_w, 0.0, w, **_QUAD_OPTS)[0]

    def twist_from_turn(self, u: float) -> float:
        if self.p == 0.0:
            return 0.0
        w = math.sqrt(max(u - self.u_turn, 0.0))
        if w == 0.0:
            return 0.0
        return integrate.quad(self._twist_density_w, 0.0, w, **_QUAD_OPTS)[0]

    def travel_time(self, u_a: float, u_b: float) -> float:
        """Time along a monotone piece between u_a and u_b"""
        if self.p == 0.0:
            return abs(u_b - u_a) / self.sqrtE
        return abs(self.time_from_turn(u_b) - self.time_from_turn(u_a))

    def travel_twist(self, u_a: float, u_b: float) -> float:
        """Twist gained along a monotone piece; has the sign of p"""
        if self.p == 0.0:
            return 0.0
        return abs(self.twist_from_turn(u_b) - self.twist_from_turn(u_a)) * (1.0 if self.p > 0 else -1.0)

    def position_after(self, u_start: float, direction: int, elapsed: float, u_end: float) -> float:
        """Invert the travel time on the piece [u_start -> u_end]"""
        if elapsed <= 0.0:
            return u_start
        if self.p == 0.0:
            return u_start + direction * self.sqrtE * elapsed
        lo, hi = sorted((u_start, u_end))
        target = elapsed

        def residual(u):
            return self.travel_time(u_start, u) - target

        if residual(u_end) <= 0.0:
            return u_end
        return optimize.brentq(residual, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def cusp_geodesic_oracle(
    v0: PhasePoint,
    horizon: float,
    spec: MetricSpec,
    times: Optional[Sequence[float]] = None,
) -> Trajectory:
    """
    Reference cusp-plane geodesic computed by quadrature

    Args:
        v0: Initial phase point with zero torus components
        horizon: Final time
        spec: Model manifold (eta must be 0)
        times: Output times (default: 201 points on [0, horizon])

    Returns:
        Trajectory sampled at the requested times, with wall/boundary events
    """
    if spec.eta != 0.0:
        raise PreconditionError("Cusp oracle requires eta = 0")
    q0, vel = v0.arrays()
    if abs(vel[2]) > 0.0 or abs(vel[3]) > 0.0:
        raise PreconditionError("Cusp oracle requires zero torus components")
    if horizon <= 0:
        raise PreconditionError("horizon must be positive")

    x0 = q0[0]
    u0 = 2.0 * x0
    p = x0 ** 6 * vel[1]
    energy = 4.0 * vel[0] ** 2 + x0 ** 6 * vel[1] ** 2
    if p ** 2 > energy * _f(u0) ** 2 * (1.0 + 1e-12):
        raise OracleError(f"|p_tau| = {abs(p)} exceeds f(u0) * speed; no real motion")

    geo = CuspGeodesic(energy, p)
    u_max = 2.0 * spec.x_max
    u_floor = 2.0 * spec.x_floor

    # pieces: (t_start, t_end, u_start, u_end, direction, tau_start)
    pieces: List[Tuple[float, float, float, float, int, float]] = []
    events: List[Tuple[float, str]] = []
    t = 0.0
    u = u0
    tau = q0[1]
    direction = 1 if vel[0] > 0 or (vel[0] == 0 and p != 0.0) else -1
    status = "horizon"
    while t < horizon:
        if direction < 0:
            if p != 0.0 and geo.u_turn > u_floor:
                u_end, end_kind = geo.u_turn, "turn"
            else:
                u_end, end_kind = u_floor, "boundary_hit"
        else:
            u_end, end_kind = u_max, "wall_reflection"
        duration = geo.travel_time(u, u_end)
        pieces.append((t, t + duration, u, u_end, direction, tau))
        tau += geo.travel_twist(u, u_end)
        t += duration
        if t >= horizon:
            break
        if end_kind == "boundary_hit":
            events.append((t, "boundary_hit"))
            status = "boundary_hit"
            break
        if end_kind == "wall_reflection":
            events.append((t, "wall_reflection"))
        direction = -direction
        u = u_end

    if times is None:
        times = np.linspace(0.0, horizon, 201)
    times = np.asarray(times, dtype=float)
    end_time = pieces[-1][1] if status == "boundary_hit" else horizon
    times = times[times <= end_time]

    q_out = np.zeros((times.size, 4))
    v_out = np.zeros((times.size, 4))
    for k, tk in enumerate(times):
        piece = next((pc for pc in pieces if pc[0] <= tk <= pc[1]), pieces[-1])
        t_start, _, u_start, u_end, d, tau_start = piece
        uk = geo.position_after(u_start, d, tk - t_start, u_end)
        tau_k = tau_start + geo.travel_twist(u_start, uk)
        xk = uk / 2.0
        q_out[k] = (xk, tau_k, q0[2], q0[3])
        v_out[k] = (d * geo.speed(uk) / 2.0, p / _f(uk) ** 2, 0.0, 0.0)

    logger.debug(f"Oracle geodesic: p={p:.6g}, u*={geo.u_turn:.6g}, {len(pieces)} piece(s)")
    return Trajectory(
        t=times,
        q=q_out,
        v=v_out,
        events=events,
        steps=len(pieces),
        max_energy_drift=0.0,
        energy_tolerance=IntegratorConfig().energy_tolerance,
        status=status,
    )


def turning_time(v0: PhasePoint) -> Optional[float]:
    """Time at which an incoming cusp geodesic reaches its turning point"""
    q0, vel = v0.arrays()
    x0 = q0[0]
    p = x0 ** 6 * vel[1]
    if p == 0.0 or vel[0] >= 0:
        return None
    energy = 4.0 * vel[0] ** 2 + x0 ** 6 * vel[1] ** 2
    geo = CuspGeodesic(energy, p)
    return geo.time_from_turn(2.0 * x0)
