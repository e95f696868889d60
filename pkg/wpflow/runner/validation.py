"""
Invariant suite behind the validate experiment
Each check returns an AssertionOutcome; nothing here raises on a failed property
"""

import logging
import math
from typing import Callable, List

import numpy as np

from wpflow.boundary.quantities import boundary_values, f_prime
from wpflow.config.config_manager import IntegratorConfig, MetricSpec
from wpflow.correlations.estimators import correlation, flow_ensemble
from wpflow.correlations.observables import build_a, build_b
from wpflow.flow.integrator import GeodesicIntegrator
from wpflow.geometry.metric import (
    LAMBDA_NORM,
    lambda_vector,
    metric_diagonal,
    norm_squared,
    inner_product,
    rotate_J,
    sectional_curvature,
)
from wpflow.geometry.survey import CUSP_CURVATURE_X2, christoffel_fd_error
from wpflow.measure.fitting import power_law_fit
from wpflow.measure.sampling import RegionSpec, contains, liouville_sample, sample_fibers
from wpflow.measure.volumes import estimate_volume, exact_volume
from wpflow.models.points import ManifoldPoint, TangentVector
from wpflow.models.results import AssertionOutcome
from wpflow.utils.seeding import derive_rng, derive_seed

logger = logging.getLogger(__name__)

Check = Callable[[MetricSpec, IntegratorConfig, int], AssertionOutcome]

# fourth-order differences at h = 0.005 in the compact part
FD_TOLERANCE = 1e-6


def _random_points(n: int, spec: MetricSpec, rng: np.random.Generator, x_range=(0.05, 1.0)) -> np.ndarray:
    x = rng.uniform(x_range[0], x_range[1] * spec.x_max, n)
    return np.stack(
        [x, rng.random(n) * spec.tau_period, rng.random(n) * spec.torus_sides[0], rng.random(n) * spec.torus_sides[1]],
        axis=1,
    )


def check_christoffel(spec: MetricSpec, opts: IntegratorConfig, seed: int) -> AssertionOutcome:
    rng = derive_rng(seed, "validate/christoffel")
    q = _random_points(200, spec, rng)
    errors = {eta: christoffel_fd_error(q, spec.model_copy(update={"eta": eta})) for eta in (0.0, 0.3)}
    worst = max(errors.values())
    return AssertionOutcome(
        name="christoffel_vs_finite_difference",
        passed=worst < 1e-6,
        detail=f"max relative error {worst:.3g}",
        values={str(k): v for k, v in errors.items()},
    )


def check_curvature_law(spec: MetricSpec, opts: IntegratorConfig, seed: int) -> AssertionOutcome:
    flat = spec.model_copy(update={"eta": 0.0})
    worst = 0.0
    plane = (TangentVector(1.0, 0.0, 0.0, 0.0), TangentVector(0.0, 1.0, 0.0, 0.0))
    for x in np.linspace(0.05, 1.0, 100) * spec.x_max:
        k = sectional_curvature(ManifoldPoint(float(x), 0.0, 0.0, 0.0), plane, flat)
        worst = max(worst, abs(k * x * x - CUSP_CURVATURE_X2) / abs(CUSP_CURVATURE_X2))
    return AssertionOutcome(name="cusp_curvature_law", passed=worst < 1e-6, detail=f"max relative error {worst:.3g}")


def check_positive_definite(spec: MetricSpec, opts: IntegratorConfig, seed: int) -> AssertionOutcome:
    rng = derive_rng(seed, "validate/metric")
    q = _random_points(10_000, spec, rng, x_range=(spec.x_floor, 1.0))
    smallest = min(
        float(metric_diagonal(q, spec.model_copy(update={"eta": eta})).min()) for eta in (0.0, 0.5, 0.9)
    )
    return AssertionOutcome(name="metric_positive_definite", passed=smallest > 0.0, detail=f"min eigenvalue {smallest:.3g}")


def check_lambda_and_J(spec: MetricSpec, opts: IntegratorConfig, seed: int) -> AssertionOutcome:
    flat = spec.model_copy(update={"eta": 0.0})
    rng = derive_rng(seed, "validate/lambda")
    q = _random_points(1000, flat, rng)
    lam_norm = np.sqrt(norm_squared(q, lambda_vector(q, flat), flat))
    v = sample_fibers(q, flat, rng)
    w = sample_fibers(q, flat, rng)
    v[:, 2:] = 0.0
    w[:, 2:] = 0.0
    jv = rotate_J(q, v, flat)
    jj_err = float(np.max(np.sqrt(norm_squared(q, rotate_J(q, jv, flat) + v, flat))))
    iso_err = float(np.max(np.abs(inner_product(q, jv, rotate_J(q, w, flat), flat) - inner_product(q, v, w, flat))))
    spread = float(lam_norm.std())
    passed = spread < 1e-10 and abs(lam_norm.mean() - LAMBDA_NORM) < 1e-12 and jj_err < 1e-12 and iso_err < 1e-12
    return AssertionOutcome(
        name="lambda_norm_and_J",
        passed=passed,
        detail=f"|lambda| spread {spread:.3g}, J^2+1 {jj_err:.3g}, isometry {iso_err:.3g}",
    )


def _integrated_states(spec: MetricSpec, opts: IntegratorConfig, seed: int, label: str, n: int, horizon: float, t_eval=None):
    """Integrate n random unit vectors from the compact part; returns the per-trajectory samples and failure mask"""
    rng = derive_rng(seed, label)
    q0 = _random_points(n, spec, rng, x_range=(0.3, 0.6))
    v0 = sample_fibers(q0, spec, rng)
    result = GeodesicIntegrator(spec, opts).run(q0, v0, horizon, record=True, t_eval=t_eval)
    return result.samples, result.failed


def check_exact_product_drift(spec: MetricSpec, opts: IntegratorConfig, seed: int) -> AssertionOutcome:
    """r is conserved by the integrated flow when eta = 0"""
    flat = spec.model_copy(update={"eta": 0.0})
    tight = opts.model_copy(update={"rtol": min(opts.rtol, 1e-12), "atol": min(opts.atol, 1e-14)})
    samples, failed = _integrated_states(flat, tight, seed, "validate/drift", 200, 0.5)
    worst = 0.0
    for (t, q, v), bad in zip(samples, failed):
        if bad:
            continue
        _, r = boundary_values(q, v, flat)
        worst = max(worst, float(np.max(np.abs(r - r[0]))))
    n_ok = int((~failed).sum())
    return AssertionOutcome(
        name="r_conserved_by_product_flow",
        passed=n_ok > 0 and worst < 1e-10,
        detail=f"max |r(t) - r(0)| {worst:.3g} over {n_ok} trajectories",
    )


def check_f_prime_bound(spec: MetricSpec, opts: IntegratorConfig, seed: int) -> AssertionOutcome:
    """|f'| <= r along integrated trajectories, with f' read off the flow by finite differences"""
    bumpy = spec.model_copy(update={"eta": 0.3})
    h = 0.005
    grid = np.arange(1, 101) * h
    samples, failed = _integrated_states(bumpy, opts, seed, "validate/f-prime", 100, float(grid[-1]), t_eval=grid)
    excess = -np.inf
    mismatch = 0.0
    used = 0
    for (t, q, v), bad in zip(samples, failed):
        on_grid = np.isclose(t[:, None], np.concatenate([[0.0], grid])[None, :], rtol=1e-12, atol=1e-15).any(axis=1)
        t, q, v = t[on_grid], q[on_grid], v[on_grid]
        if bad or t.size < 5:
            continue
        f, r = boundary_values(q, v, bumpy)
        fd = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
        excess = max(excess, float(np.max(np.abs(fd) - r[2:-2])))
        mismatch = max(mismatch, float(np.max(np.abs(fd - f_prime(q[2:-2], v[2:-2], bumpy)))))
        used += 1
    return AssertionOutcome(
        name="f_prime_bounded_by_r",
        passed=used > 0 and excess <= FD_TOLERANCE and mismatch <= FD_TOLERANCE,
        detail=f"max |f'| - r {excess:.3g}, finite difference vs <v, lambda> {mismatch:.3g}, {used} trajectories",
    )


def check_volume_estimator(spec: MetricSpec, opts: IntegratorConfig, seed: int) -> AssertionOutcome:
    region = RegionSpec.e_rho(0.2)
    estimate, stderr = estimate_volume(region, 50_000, spec, derive_seed(seed, "validate/volume"))
    exact = exact_volume(region, spec)
    tolerance = 4.0 * stderr
    return AssertionOutcome(
        name="volume_estimator_vs_closed_form",
        passed=abs(estimate - exact) <= tolerance,
        detail=f"estimate {estimate:.6g} +- {stderr:.2g}, exact {exact:.6g}",
    )


def check_power_law_fit(spec: MetricSpec, opts: IntegratorConfig, seed: int) -> AssertionOutcome:
    params = [0.4, 0.2, 0.1, 0.05, 0.025]
    fit = power_law_fit([(p, 3.0 * p ** 4, 0.0) for p in params], seed=seed)
    passed = abs(fit.exponent - 4.0) < 1e-9 and abs(math.exp(fit.intercept) - 3.0) < 1e-9
    return AssertionOutcome(name="power_law_fit_exact_data", passed=passed, detail=f"exponent {fit.exponent:.12f}")


def check_observable_bounds(spec: MetricSpec, opts: IntegratorConfig, seed: int) -> AssertionOutcome:
    rng = derive_rng(seed, "validate/observables")
    q = _random_points(20_000, spec, rng, x_range=(0.001, 1.0))
    v = sample_fibers(q, spec, rng)
    ball = RegionSpec.ball((0.75, 0.5, 0.5, 0.5), 0.2)
    worst = 0.0
    outside = 0
    for obs in (build_a(ball, spec), build_b(0.05, spec), build_b(0.1, spec)):
        values = obs.evaluate(q, v, spec)
        worst = max(worst, float(np.max(values)) - 1.0, -float(np.min(values)))
        region = obs.support
        outside += int(np.count_nonzero(values[~contains(region, q, v, spec)]))
    return AssertionOutcome(
        name="observable_bounds_and_support",
        passed=worst <= 0.0 and outside == 0,
        detail=f"range excess {worst:.3g}, nonzero outside support {outside}",
    )


def check_variance_identity(spec: MetricSpec, opts: IntegratorConfig, seed: int) -> AssertionOutcome:
    """C_0(a, a) must equal int a^2 - (int a)^2 computed on the estimator's own sample"""
    ball = RegionSpec.ball((0.75, 0.5, 0.5, 0.5), 0.2)
    a = build_a(ball, spec)
    n = 5000
    run_seed = derive_seed(seed, "validate/variance")
    est = correlation(a, a, 0.0, n, spec, run_seed, opts=opts)
    vol, _ = estimate_volume(ball, n, spec, derive_seed(run_seed, "volume"))
    sample = liouville_sample(ball, n, spec, run_seed, stream="correlation/direct")
    values = a.evaluate(sample.q, sample.v, spec)
    expected = abs(vol * float((values * values).mean()) - (vol * float(values.mean())) ** 2)
    gap = abs(est.value - expected)
    return AssertionOutcome(
        name="correlation_at_time_zero",
        passed=gap <= 1e-12 * max(expected, 1e-300),
        detail=f"C_0(a, a) = {est.value:.6g}, direct {expected:.6g}",
    )


def check_flow_invariance(spec: MetricSpec, opts: IntegratorConfig, seed: int) -> AssertionOutcome:
    """Mean of a smooth function is unchanged by the flow (whole chart, eta = 0, t = 5)"""
    flat = spec.model_copy(update={"eta": 0.0})
    region = RegionSpec.tube(flat.x_floor, flat.x_max)
    sample = liouville_sample(region, 4000, flat, derive_seed(seed, "validate/invariance"), stream="invariance")

    def smooth(q):
        return q[:, 0] ** 2 + 0.5 * q[:, 0] * np.cos(2.0 * math.pi * q[:, 2] / flat.torus_sides[0])

    moved, failed = flow_ensemble(sample, 5.0, flat, opts)
    keep = ~failed
    diff = smooth(moved.q[keep]) - smooth(sample.q[keep])
    shift = float(diff.mean())
    stderr = float(diff.std(ddof=1) / math.sqrt(diff.size))
    return AssertionOutcome(
        name="liouville_flow_invariance",
        passed=abs(shift) <= 3.0 * stderr,
        detail=f"mean shift {shift:.3g}, stderr {stderr:.3g}, {int(failed.sum())} failed",
    )


INVARIANT_CHECKS: List[Check] = [
    check_christoffel,
    check_curvature_law,
    check_positive_definite,
    check_lambda_and_J,
    check_exact_product_drift,
    check_f_prime_bound,
    check_volume_estimator,
    check_power_law_fit,
    check_observable_bounds,
    check_variance_identity,
    check_flow_invariance,
]


def run_invariant_suite(spec: MetricSpec, opts: IntegratorConfig, seed: int) -> List[AssertionOutcome]:
    outcomes = []
    for check in INVARIANT_CHECKS:
        outcome = check(spec, opts, seed)
        level = logging.INFO if outcome.passed else logging.WARNING
        logger.log(level, f"[{'PASS' if outcome.passed else 'FAIL'}] {outcome.name}: {outcome.detail}")
        outcomes.append(outcome)
    return outcomes
