"""
Bump observables on the unit tangent bundle and their C^k norms

    a(v)   = psi(plateau-rescaled ball distance of the footprint / R)
    b_e(v) = psi(f(v) / e) * psi(r(v) / e^2)

with psi(s) = exp(1 - 1 / (1 - s^2)) on |s| < 1 and 0 elsewhere.
"""

import logging
import math
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.linalg import expm

from wpflow.boundary.quantities import boundary_values
from wpflow.config.config_manager import MetricSpec
from wpflow.geometry.metric import LAMBDA_NORM, SQRT_2PI2, frame_scales, from_frame, to_frame, x_of_f
from wpflow.measure.sampling import (
    RegionSpec,
    ball_distance,
    region_x_bounds,
    sample_fibers,
    validate_region,
)
from wpflow.models.errors import PreconditionError, RegionOverlapError, StepResolutionError
from wpflow.models.points import PhasePoint
from wpflow.utils.seeding import derive_rng

logger = logging.getLogger(__name__)

ObservableKind = Literal["ball", "boundary", "constant"]

# share of the ball radius on which a is identically 1
DEFAULT_PLATEAU = 0.8
DEFAULT_NORM_POINTS = 256
MAX_ORDER = 3
# a finite-difference reading is rejected when its roundoff exceeds this share of the value
ROUNDOFF_SHARE = 1e-3


def bump(s) -> np.ndarray:
    """C-infinity profile with psi(0) = 1 and support in (-1, 1)"""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        val = np.exp(1.0 - 1.0 / (1.0 - s * s))
    return np.where(np.abs(s) < 1.0, val, 0.0)


class Observable(BaseModel):
    """
    Symbolic bump observable

    kind       support                scale
    ball       T^1 of a metric ball   radius (plateau share of it is flat)
    boundary   V_eps                  eps
    constant   everything             level
    """
    kind: ObservableKind
    center: Optional[Tuple[float, float, float, float]] = None
    radius: Optional[float] = Field(default=None, gt=0)
    plateau: float = Field(default=0.0, ge=0, lt=1)
    eps: Optional[float] = Field(default=None, gt=0)
    level: float = Field(default=1.0, ge=0, le=1)

    @property
    def support(self) -> Optional[RegionSpec]:
        if self.kind == "ball":
            return RegionSpec.ball(self.center, self.radius)
        if self.kind == "boundary":
            return RegionSpec.v_eps(self.eps)
        return None

    @property
    def label(self) -> str:
        if self.kind == "ball":
            return f"a:{self.center}:{self.radius!r}:{self.plateau!r}"
        if self.kind == "boundary":
            return f"b:{self.eps!r}"
        return f"const:{self.level!r}"

    @property
    def feature_scale(self) -> float:
        """Smallest metric (or angular) length over which the value changes by O(1)"""
        if self.kind == "ball":
            return self.radius * (1.0 - self.plateau)
        if self.kind == "boundary":
            # f moves at rate c/2 along e_1, r at most at rate |lambda| under fiber rotations
            return min(2.0 * self.eps / SQRT_2PI2, self.eps ** 2 / LAMBDA_NORM)
        return math.inf

    def evaluate(self, q: np.ndarray, v: np.ndarray, spec: MetricSpec) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if self.kind == "constant":
            return np.full(q.shape[0], self.level)
        if self.kind == "ball":
            s = ball_distance(self.center, q, spec) / self.radius
            s = np.maximum(s - self.plateau, 0.0) / (1.0 - self.plateau)
            return bump(s)
        f, r = boundary_values(q, v, spec)
        return bump(f / self.eps) * bump(r / self.eps ** 2)

    def __call__(self, point: PhasePoint, spec: MetricSpec) -> float:
        q, v = point.arrays()
        return float(self.evaluate(q, v, spec)[0])


def build_a(
    ball: RegionSpec,
    spec: MetricSpec,
    eps_max: Optional[float] = None,
    plateau: float = DEFAULT_PLATEAU,
) -> Observable:
    """
    Bump on T^1 U for a metric ball U in the compact part

    Args:
        ball: RegionSpec of kind "ball"
        spec: Model manifold
        eps_max: Largest eps the observable will be paired with
        plateau: Share of the radius on which a = 1

    Returns:
        Observable constant on fibers, equal to 1 at the center and 0 outside U
    """
    if ball.kind != "ball":
        raise PreconditionError(f"build_a needs a ball region, got {ball.kind}")
    validate_region(ball, spec)
    x_lo, _ = region_x_bounds(ball, spec)
    if eps_max is not None and x_lo < 2.0 * x_of_f(eps_max):
        raise RegionOverlapError(
            f"Ball reaches x = {x_lo:.4g}, below 2 x(eps_max) = {2.0 * x_of_f(eps_max):.4g}"
        )
    return Observable(kind="ball", center=ball.center, radius=ball.param, plateau=plateau)


def build_b(eps: float, spec: MetricSpec) -> Observable:
    """Bump supported in V_eps: psi(f / eps) * psi(r / eps^2)"""
    validate_region(RegionSpec.v_eps(eps), spec)
    return Observable(kind="boundary", eps=eps)


def constant_observable(level: float) -> Observable:
    return Observable(kind="constant", level=level)


def norm_sample(obs: Observable, n: int, spec: MetricSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Points spread uniformly in the observable's own scaled coordinates

    Scaled placement makes the sampled sup comparable across scales.
    """
    tau = rng.random(n) * spec.tau_period
    y1 = rng.random(n) * spec.torus_sides[0]
    y2 = rng.random(n) * spec.torus_sides[1]
    if obs.kind == "ball":
        c = np.asarray(obs.center, dtype=float)
        u = rng.standard_normal((n, 4))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        s = rng.random(n) * obs.radius
        q = c + s[:, None] * u * frame_scales(c, spec)
        return q, sample_fibers(q, spec, rng)
    if obs.kind == "boundary":
        x = np.array([x_of_f(sf * obs.eps) for sf in rng.uniform(0.05, 1.0, n)])
        q = np.stack([x, tau, y1, y2], axis=1)
        rho = rng.random(n) * obs.eps ** 2 / LAMBDA_NORM
        alpha = rng.random(n) * 2.0 * math.pi
        beta = rng.random(n) * 2.0 * math.pi
        rest = np.sqrt(1.0 - rho * rho)
        z = np.stack([rho * np.cos(alpha), rho * np.sin(alpha), rest * np.cos(beta), rest * np.sin(beta)], axis=1)
        return q, from_frame(q, z, spec)
    x = rng.uniform(0.1, 0.9, n) * spec.x_max
    q = np.stack([x, tau, y1, y2], axis=1)
    return q, sample_fibers(q, spec, rng)


def _frame_directions() -> List[np.ndarray]:
    """Unit directions in the 10 frame generators (4 horizontal, 6 fiber rotations) and their pair sums"""
    basis = list(np.eye(10))
    pairs = [(basis[i] + basis[j]) / math.sqrt(2.0) for i in range(10) for j in range(i + 1, 10)]
    return basis + pairs


_ROTATION_PLANES = [(i, j) for i in range(4) for j in range(i + 1, 4)]


def _move(q: np.ndarray, v: np.ndarray, direction: np.ndarray, s: float, spec: MetricSpec):
    """Move a distance s along a frame direction: footprint shift, then fiber rotation"""
    z = to_frame(q, v, spec)
    q2 = q + s * direction[:4] * frame_scales(q, spec)
    gen = np.zeros((4, 4))
    for w, (i, j) in zip(direction[4:], _ROTATION_PLANES):
        gen[i, j] -= w
        gen[j, i] += w
    if np.any(gen):
        z = z @ expm(s * gen).T
    return q2, from_frame(q2, z, spec)


def _differences(values: Dict[int, np.ndarray], h: float, k: int) -> List[np.ndarray]:
    f0 = values[0]
    out = [(values[1] - values[-1]) / (2.0 * h)]
    if k >= 2:
        out.append((values[1] - 2.0 * f0 + values[-1]) / h ** 2)
    if k >= 3:
        out.append((values[2] - 2.0 * values[1] + 2.0 * values[-1] - values[-2]) / (2.0 * h ** 3))
    return out


def estimate_ck_norm(
    obs: Observable,
    k: int,
    spec: MetricSpec,
    seed: int,
    n_points: int = DEFAULT_NORM_POINTS,
    step: Optional[float] = None,
) -> float:
    """
    Sampled C^k norm: sup of |value| and of all frame derivatives up to order k

    Derivatives are central differences along the frame generators and their
    pair sums. A step above a tenth of the feature scale is refined to it.

    Raises:
        StepResolutionError: the refined step is lost in double-precision roundoff
    """
    if k not in range(1, MAX_ORDER + 1):
        raise PreconditionError(f"k must be in 1..{MAX_ORDER}, got {k}")
    if obs.kind == "constant":
        return obs.level
    fine = obs.feature_scale / 10.0
    h = fine if step is None else step
    if h > fine:
        logger.debug(f"Refining finite-difference step {h:.3g} to {fine:.3g} for {obs.label}")
        h = fine
    if h < 1e3 * np.finfo(float).eps:
        raise StepResolutionError(f"Step {h:.3g} below coordinate resolution for {obs.label}")

    rng = derive_rng(seed, f"norm/{obs.kind}")
    q, v = norm_sample(obs, n_points, spec, rng)
    f0 = obs.evaluate(q, v, spec)
    sup = float(np.max(np.abs(f0)))
    best = [0.0] * k
    offsets = (-2, -1, 1, 2) if k >= 3 else (-1, 1)
    for direction in _frame_directions():
        values = {0: f0}
        for m in offsets:
            q2, v2 = _move(q, v, direction, m * h, spec)
            values[m] = obs.evaluate(q2, v2, spec)
        for order, d in enumerate(_differences(values, h, k), start=1):
            best[order - 1] = max(best[order - 1], float(np.max(np.abs(d))))

    for order, value in enumerate(best, start=1):
        noise = 2 ** order * np.finfo(float).eps * max(sup, 1.0) / h ** order
        if value > 0 and noise > ROUNDOFF_SHARE * value:
            raise StepResolutionError(
                f"Order-{order} difference of {obs.label} at step {h:.3g} is dominated by roundoff"
            )
    norm = max([sup] + best)
    logger.debug(f"C^{k} norm of {obs.label}: {norm:.6g} (step {h:.3g}, {n_points} points)")
    return norm
