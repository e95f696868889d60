"""
Liouville sampling on the unit tangent bundle
Base density sqrt(det g) = 2 x^3 phi, fiber uniform on the metric unit sphere.

Fibers are drawn in Hopf coordinates of the orthonormal frame:

    z = (sqrt(q) cos a, sqrt(q) sin a, sqrt(1-q) cos b, sqrt(1-q) sin b)

with q, a, b uniform, which is exactly the uniform law on S^3. Since
r = |lambda| sqrt(q), the set {r <= eps^2} is an interval in q and a proposal
can restrict q to an envelope of it with a known fiber fraction.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from wpflow.config.config_manager import MetricSpec
from wpflow.geometry.metric import LAMBDA_NORM, from_frame, metric_diagonal, to_frame, x_of_f
from wpflow.models.errors import PreconditionError
from wpflow.models.points import PhaseEnsemble
from wpflow.utils.parallel import map_chunks
from wpflow.utils.seeding import chunk_sizes, derive_rng

logger = logging.getLogger(__name__)

RegionKind = Literal["E_rho", "N_eps", "V_eps", "ball", "tube"]

DEFAULT_CHUNK_SIZE = 2048
LOW_ACCEPTANCE = 1e-6
DEFAULT_ENVELOPE = 2.0
_MAX_PROPOSAL_ROUNDS = 10_000


class RegionSpec(BaseModel):
    """
    Region of phase space

    kind       param
    E_rho      rho: footprints with f <= rho
    N_eps      eps: same set as E_rho (boundary neighbourhood)
    V_eps      eps: f <= eps and r <= eps^2
    ball       radius: metric ball around center, full fibers
    tube       x_high: full fibers over x_low <= x <= x_high
    """
    kind: RegionKind
    param: float = Field(gt=0)
    center: Optional[Tuple[float, float, float, float]] = None
    x_low: float = Field(default=0.0, ge=0)
    density_exponent: float = Field(default=3.0, ge=0, description="Base density x^a; 3 is Liouville")

    @classmethod
    def e_rho(cls, rho: float) -> "RegionSpec":
        return cls(kind="E_rho", param=rho)

    @classmethod
    def n_eps(cls, eps: float, density_exponent: float = 3.0) -> "RegionSpec":
        return cls(kind="N_eps", param=eps, density_exponent=density_exponent)

    @classmethod
    def v_eps(cls, eps: float) -> "RegionSpec":
        return cls(kind="V_eps", param=eps)

    @classmethod
    def ball(cls, center: Tuple[float, float, float, float], radius: float) -> "RegionSpec":
        return cls(kind="ball", param=radius, center=tuple(center))

    @classmethod
    def tube(cls, x_low: float, x_high: float) -> "RegionSpec":
        return cls(kind="tube", param=x_high, x_low=x_low)

    @property
    def label(self) -> str:
        extra = f",c={self.center}" if self.center else ""
        return f"{self.kind}:{self.param!r}:{self.x_low!r}:{self.density_exponent!r}{extra}"


@dataclass
class Proposal:
    """Box-shaped proposal: x ~ x^a on [x_lo, x_hi], uniform angles, q ~ U(0, q_hi)"""
    x_lo: float
    x_hi: float
    tau_lo: float
    tau_width: float
    y_lo: Tuple[float, float]
    y_width: Tuple[float, float]
    q_hi: float
    exponent: float
    mass: float  # normalised proposal mass under the base density x^a (phi excluded)


def fiber_fraction(eps: float) -> float:
    """Fraction of the unit sphere with r <= eps^2"""
    return min(1.0, (eps * eps / LAMBDA_NORM) ** 2)


def total_liouville_mass(spec: MetricSpec) -> float:
    """int 2 x^3 phi over the chart times vol(S^3); phi averages to 1 over y1"""
    base = spec.x_max ** 4 / 2.0 * spec.tau_period * spec.torus_sides[0] * spec.torus_sides[1]
    return base * 2.0 * math.pi ** 2


def _periodic_delta(d: np.ndarray, period: float) -> np.ndarray:
    return (d + 0.5 * period) % period - 0.5 * period


def _ball_halfwidths(region: RegionSpec, spec: MetricSpec) -> np.ndarray:
    g = metric_diagonal(np.asarray(region.center, dtype=float), spec)
    return region.param / np.sqrt(g)


def ball_distance(center, q: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """Distance to center in the metric frozen at center, periodic directions wrapped"""
    c = np.asarray(center, dtype=float)
    g = metric_diagonal(c, spec)
    d = np.atleast_2d(q) - c
    d[:, 1] = _periodic_delta(d[:, 1], spec.tau_period)
    d[:, 2] = _periodic_delta(d[:, 2], spec.torus_sides[0])
    d[:, 3] = _periodic_delta(d[:, 3], spec.torus_sides[1])
    return np.sqrt(np.sum(g * d * d, axis=1))


def region_x_bounds(region: RegionSpec, spec: MetricSpec) -> Tuple[float, float]:
    """x-range of the region's footprints"""
    if region.kind in ("E_rho", "N_eps", "V_eps"):
        return 0.0, min(x_of_f(region.param), spec.x_max)
    if region.kind == "tube":
        return region.x_low, min(region.param, spec.x_max)
    hw = _ball_halfwidths(region, spec)
    return region.center[0] - hw[0], region.center[0] + hw[0]


def validate_region(region: RegionSpec, spec: MetricSpec) -> None:
    if region.kind == "ball":
        if region.center is None:
            raise PreconditionError("ball region needs a center")
        hw = _ball_halfwidths(region, spec)
        x_lo, x_hi = region.center[0] - hw[0], region.center[0] + hw[0]
        if x_lo <= spec.x_floor or x_hi > spec.x_max:
            raise PreconditionError(f"ball x-range [{x_lo:.4g}, {x_hi:.4g}] leaves the chart")
        periods = (spec.tau_period, spec.torus_sides[0], spec.torus_sides[1])
        if any(2 * w >= p for w, p in zip(hw[1:], periods)):
            raise PreconditionError("ball wraps around a periodic direction")
    elif region.kind == "tube":
        if not region.x_low < region.param <= spec.x_max:
            raise PreconditionError(f"tube needs x_low < x_high <= x_max, got [{region.x_low}, {region.param}]")
    elif x_of_f(region.param) <= spec.x_floor:
        raise PreconditionError(f"{region.kind} with parameter {region.param} lies below x_floor")


def contains(region: RegionSpec, q: np.ndarray, v: np.ndarray, spec: MetricSpec) -> np.ndarray:
    """Membership of phase points (q, v) in the region"""
    q = np.atleast_2d(q)
    v = np.atleast_2d(v)
    x = q[:, 0]
    in_chart = (x >= spec.x_floor) & (x <= spec.x_max)
    if region.kind in ("E_rho", "N_eps"):
        return in_chart & (x <= x_of_f(region.param))
    if region.kind == "V_eps":
        z = to_frame(q, v, spec)
        r = LAMBDA_NORM * np.hypot(z[:, 0], z[:, 1])
        return in_chart & (x <= x_of_f(region.param)) & (r <= region.param ** 2)
    if region.kind == "tube":
        return in_chart & (x >= region.x_low) & (x <= region.param)
    return in_chart & (ball_distance(region.center, q, spec) <= region.param)


def make_proposal(region: RegionSpec, spec: MetricSpec, envelope: float = DEFAULT_ENVELOPE) -> Proposal:
    """Envelope proposal of known normalised mass containing the region"""
    validate_region(region, spec)
    a = region.density_exponent
    x_lo, x_hi = region_x_bounds(region, spec)
    q_hi = 1.0
    tau_lo, tau_w = 0.0, spec.tau_period
    y_lo = (0.0, 0.0)
    y_w = tuple(spec.torus_sides)
    if region.kind in ("E_rho", "N_eps", "V_eps"):
        x_hi = min(envelope * x_hi, spec.x_max)
    if region.kind == "V_eps":
        q_hi = min(1.0, envelope * fiber_fraction(region.param))
    if region.kind == "ball":
        hw = _ball_halfwidths(region, spec)
        tau_lo, tau_w = region.center[1] - hw[1], 2 * hw[1]
        y_lo = (region.center[2] - hw[2], region.center[3] - hw[3])
        y_w = (2 * hw[2], 2 * hw[3])
    base = (x_hi ** (a + 1) - x_lo ** (a + 1)) / spec.x_max ** (a + 1)
    angular = (tau_w / spec.tau_period) * (y_w[0] / spec.torus_sides[0]) * (y_w[1] / spec.torus_sides[1])
    return Proposal(x_lo, x_hi, tau_lo, tau_w, y_lo, y_w, q_hi, a, base * angular * q_hi)


def draw_proposals(prop: Proposal, m: int, spec: MetricSpec, rng: np.random.Generator):
    """m proposal draws; returns (q, v, phi) with v unit-speed in the metric"""
    u = rng.random((m, 7))
    p = prop.exponent + 1.0
    x = (prop.x_lo ** p + u[:, 0] * (prop.x_hi ** p - prop.x_lo ** p)) ** (1.0 / p)
    tau = prop.tau_lo + u[:, 1] * prop.tau_width
    y1 = prop.y_lo[0] + u[:, 2] * prop.y_width[0]
    y2 = prop.y_lo[1] + u[:, 3] * prop.y_width[1]
    qq = u[:, 4] * prop.q_hi
    a = 2.0 * math.pi * u[:, 5]
    b = 2.0 * math.pi * u[:, 6]
    s = np.sqrt(qq)
    c = np.sqrt(1.0 - qq)
    z = np.stack([s * np.cos(a), s * np.sin(a), c * np.cos(b), c * np.sin(b)], axis=1)
    q = np.stack([x, tau, y1, y2], axis=1)
    v = from_frame(q, z, spec)
    phi = metric_diagonal(q, spec)[:, 2]
    return q, v, phi


def _phi_ceiling(prop: Proposal, spec: MetricSpec) -> float:
    return 1.0 + spec.eta * prop.x_hi ** 4


def _sample_chunk(task) -> Tuple[np.ndarray, np.ndarray, int]:
    region_data, spec_data, seed, label, index, size, envelope = task
    region = RegionSpec(**region_data)
    spec = MetricSpec(**spec_data)
    prop = make_proposal(region, spec, envelope)
    rng = derive_rng(seed, label, index)
    phi_max = _phi_ceiling(prop, spec)
    q_parts: List[np.ndarray] = []
    v_parts: List[np.ndarray] = []
    have = 0
    drawn = 0
    batch = max(size, 256)
    for _ in range(_MAX_PROPOSAL_ROUNDS):
        q, v, phi = draw_proposals(prop, batch, spec, rng)
        drawn += batch
        keep = contains(region, q, v, spec) & (rng.random(batch) * phi_max <= phi)
        q_parts.append(q[keep])
        v_parts.append(v[keep])
        have += int(keep.sum())
        if have >= size:
            break
        # grow the batch towards the observed acceptance
        rate = max(have / drawn, 1.0 / drawn)
        batch = int(min(max((size - have) / rate * 1.2, 256), 1 << 20))
    else:
        raise PreconditionError(f"Could not fill a chunk of {size} samples from {region.kind}")
    q = np.concatenate(q_parts)[:size]
    v = np.concatenate(v_parts)[:size]
    return q, v, drawn


def liouville_sample(
    region: RegionSpec,
    n: int,
    spec: MetricSpec,
    seed: int,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
    envelope: float = DEFAULT_ENVELOPE,
    stream: str = "sample",
) -> PhaseEnsemble:
    """
    n unit-speed phase points distributed per Liouville measure restricted to a region

    Args:
        region: Target region
        n: Number of samples
        spec: Model manifold
        seed: Master seed
        chunk_size: Samples per chunk (fixes the random streams)
        workers: Worker processes
        envelope: Proposal envelope factor
        stream: Label prefix of the random streams

    Returns:
        PhaseEnsemble of length n
    """
    validate_region(region, spec)
    sizes = chunk_sizes(n, chunk_size)
    label = f"{stream}/{region.label}"
    tasks = [
        (region.model_dump(), spec.model_dump(), seed, label, i, size, envelope)
        for i, size in enumerate(sizes)
    ]
    results = map_chunks(_sample_chunk, tasks, workers)
    if not results:
        return PhaseEnsemble(np.empty((0, 4)), np.empty((0, 4)))
    drawn = sum(r[2] for r in results)
    acceptance = n / drawn if drawn else 0.0
    prop = make_proposal(region, spec, envelope)
    overall = acceptance * prop.mass
    if overall < LOW_ACCEPTANCE:
        logger.warning(
            f"Rejection efficiency {overall:.3g} below {LOW_ACCEPTANCE:g} for {region.kind}({region.param})"
        )
    logger.debug(f"Sampled {n} points from {region.kind}({region.param}), acceptance {acceptance:.4f}")
    return PhaseEnsemble(np.concatenate([r[0] for r in results]), np.concatenate([r[1] for r in results]))


def sample_fibers(q: np.ndarray, spec: MetricSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform unit vectors at the given footprints"""
    q = np.atleast_2d(q)
    z = rng.standard_normal((q.shape[0], 4))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return from_frame(q, z, spec)
