"""
Near-boundary experiments
Drift of r, escape times from V_eps, and the structure of nabla lambda
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from wpflow.boundary.quantities import (
    boundary_values,
    covariant_lambda,
    j_lambda_vector,
    projections,
    r_prime,
    sample_V_eps,
)
from wpflow.config.config_manager import IntegratorConfig, MetricSpec
from wpflow.flow.escape import DEFAULT_CAP_FACTOR, escape_time, escape_times
from wpflow.flow.integrator import GeodesicIntegrator
from wpflow.geometry.metric import SQRT_2PI2, from_frame, inner_product, norm_squared, x_of_f
from wpflow.measure.fitting import SWEEP_MIN_DECADES, check_family, power_law_fit
from wpflow.measure.sampling import sample_fibers
from wpflow.models.errors import FitWindowError, NoEscapeError, PreconditionError
from wpflow.models.points import PhaseEnsemble, PhasePoint
from wpflow.models.results import (
    DriftBin,
    DriftReport,
    EscapeReport,
    EscapeRow,
    GradientExpansionReport,
)
from wpflow.utils.parallel import map_chunks
from wpflow.utils.seeding import chunk_sizes, derive_rng, derive_seed

logger = logging.getLogger(__name__)

MIN_DRIFT_BINS = 4
# segment length and output points per drift sample, in units of the starting depth
SEGMENT_LENGTH = 0.1
SEGMENT_POINTS = 9
# finite differences cannot resolve |r'| below ~ this many ulps of r per step
FD_RESOLUTION_ULPS = 64.0
REFERENCE_CONSTANT = 3.0 / (2.0 * math.pi)


# ---- drift -----------------------------------------------------------------

def _drift_bin_chunk(task):
    spec_data, opts_data, seed, index, f_lo, f_hi, n = task
    spec = MetricSpec(**spec_data)
    opts = IntegratorConfig(**opts_data)
    rng = derive_rng(seed, "drift", index)
    f0 = np.exp(rng.uniform(math.log(f_lo), math.log(f_hi), n))
    q0 = np.stack(
        [
            f0 / SQRT_2PI2,
            rng.uniform(0, spec.tau_period, n),
            rng.uniform(0, spec.torus_sides[0], n),
            rng.uniform(0, spec.torus_sides[1], n),
        ],
        axis=1,
    )
    v0 = sample_fibers(q0, spec, rng)
    horizon = SEGMENT_LENGTH * x_of_f(f_lo)
    t_eval = np.linspace(0.0, horizon, SEGMENT_POINTS)[1:]
    result = GeodesicIntegrator(spec, opts).run(q0, v0, horizon, t_eval=t_eval)

    f_all: List[np.ndarray] = []
    rp_all: List[np.ndarray] = []
    fd_all: List[np.ndarray] = []
    cov_at_fd: List[np.ndarray] = []
    r_scale: List[float] = []
    r_change = 0.0
    for t, q, v in result.samples:
        # keep the output-grid samples only
        on_grid = np.isclose(t[:, None], np.concatenate([[0.0], t_eval])[None, :], rtol=1e-12, atol=1e-15).any(axis=1)
        t, q, v = t[on_grid], q[on_grid], v[on_grid]
        f, r = boundary_values(q, v, spec)
        rp = r_prime(q, v, spec)
        if r.size:
            r_change = max(r_change, float(np.max(np.abs(r - r[0]))))
        f_all.append(f)
        rp_all.append(rp)
        if t.size >= 5:
            h = t[1] - t[0]
            fd = (r[:-4] - 8.0 * r[1:-3] + 8.0 * r[3:-1] - r[4:]) / (12.0 * h)
            fd_all.append(fd)
            cov_at_fd.append(rp[2:-2])
            r_scale.append(float(np.max(r)) / h)
    failed = int(np.sum(result.failed))
    return (
        np.concatenate(f_all),
        np.concatenate(rp_all),
        np.concatenate(fd_all) if fd_all else np.empty(0),
        np.concatenate(cov_at_fd) if cov_at_fd else np.empty(0),
        max(r_scale) if r_scale else 0.0,
        r_change,
        failed,
    )


def drift_experiment(
    spec: MetricSpec,
    seed: int,
    f_range: Tuple[float, float] = (1e-3, 0.5),
    n_bins: int = 8,
    n_per_bin: int = 64,
    method: str = "covariant",
    opts: Optional[IntegratorConfig] = None,
    workers: int = 1,
) -> DriftReport:
    """
    Regress log |r'| against log f over logarithmic depth bins

    Samples n_per_bin uniform unit vectors per bin, integrates a short segment
    from each, and reads r' on the segment (closed form of the covariant
    derivative at the integrated states, or fourth-order finite differences
    of r). The per-bin median is fitted. The largest
    |r(t) - r(0)| seen along the segments is reported as well; with eta = 0 it
    measures how well the integrated flow conserves r.

    Raises:
        FitWindowError: fewer than 4 usable bins when eta > 0
    """
    opts = opts or IntegratorConfig()
    if method not in ("covariant", "finite_difference"):
        raise PreconditionError(f"Unknown drift method {method!r}")
    f_lo, f_hi = f_range
    if x_of_f(f_lo) <= spec.x_floor or x_of_f(f_hi) * (1 + SEGMENT_LENGTH) >= spec.x_max:
        raise PreconditionError(f"f range {f_range} leaves the chart")
    edges = np.exp(np.linspace(math.log(f_lo), math.log(f_hi), n_bins + 1))
    tasks = [
        (spec.model_dump(), opts.model_dump(), seed, i, edges[i], edges[i + 1], n_per_bin)
        for i in range(n_bins)
    ]
    outputs = map_chunks(_drift_bin_chunk, tasks, workers)

    bins: List[DriftBin] = []
    ratios = []
    max_abs = 0.0
    max_change = 0.0
    cross_errors = []
    failed = 0
    for (lo, hi), (f, rp, fd, cov, r_over_h, r_change, n_failed) in zip(zip(edges[:-1], edges[1:]), outputs):
        failed += n_failed
        max_change = max(max_change, r_change)
        if method == "covariant":
            values = np.abs(rp)
            floor = 0.0
        else:
            values = np.abs(fd)
            floor = FD_RESOLUTION_ULPS * np.finfo(float).eps * r_over_h
        median = float(np.median(values)) if values.size else 0.0
        used = median > floor and median > 0.0
        max_abs = max(max_abs, float(np.max(np.abs(rp))) if rp.size else 0.0)
        ratios.append(np.abs(rp) / f ** 3)
        if cov.size and fd.size:
            scale = np.median(np.abs(cov))
            if scale > 10 * FD_RESOLUTION_ULPS * np.finfo(float).eps * r_over_h:
                cross_errors.append(float(np.median(np.abs(fd - cov)) / scale))
        bins.append(
            DriftBin(
                f_low=float(lo),
                f_high=float(hi),
                f_center=float(np.median(f)) if f.size else float(math.sqrt(lo * hi)),
                median_abs_r_prime=median,
                n=int(values.size),
                used=bool(used),
            )
        )
    if failed:
        logger.warning(f"{failed} drift segments ended early")

    B = float(np.max(np.concatenate(ratios))) if ratios else 0.0
    cross = max(cross_errors) if cross_errors else None
    used_bins = [b for b in bins if b.used]
    if spec.eta == 0.0:
        logger.info(
            f"Drift with eta = 0: max |r(t) - r(0)| = {max_change:.3g} along the segments, "
            f"max |r'| = {max_abs:.3g} (fit flagged degenerate)"
        )
        return DriftReport(
            eta=0.0, method=method, fit=None, B=B, bins=bins, max_abs_r_prime=max_abs,
            max_abs_r_change=max_change, degenerate=True, cross_check_max_rel_error=cross,
        )
    if len(used_bins) < MIN_DRIFT_BINS:
        raise FitWindowError(
            f"Only {len(used_bins)} depth bins resolve r' (need {MIN_DRIFT_BINS}); method={method}"
        )
    points = []
    for b in used_bins:
        # stderr of a median ~ 1.2533 * sigma / sqrt(n); use the log-spread proxy
        points.append((b.f_center, b.median_abs_r_prime, b.median_abs_r_prime * 1.2533 / math.sqrt(max(b.n, 1))))
    fit = power_law_fit(points, seed=seed)
    logger.info(
        f"Drift exponent {fit.exponent:.3f} [{fit.ci_low:.3f}, {fit.ci_high:.3f}] "
        f"over {len(used_bins)} bins, eta={spec.eta}, B={B:.4g}"
    )
    return DriftReport(
        eta=spec.eta, method=method, fit=fit, B=B, bins=bins, max_abs_r_prime=max_abs,
        max_abs_r_change=max_change, degenerate=False, cross_check_max_rel_error=cross,
    )


# ---- escape ----------------------------------------------------------------

class _DriftBoundMonitor:
    """|r(t) - r(0)| - B (2 eps)^3 t; positive values violate the drift bound"""

    def __init__(self, r0: np.ndarray, eps: float, B: float, spec: MetricSpec):
        self.r0 = r0
        self.rate = B * (2.0 * eps) ** 3
        self.spec = spec

    def __call__(self, idx, t, q, v):
        _, r = boundary_values(q, v, self.spec)
        return np.abs(r - self.r0[idx]) - self.rate * t


def _escape_chunk(task):
    q, v, eps, spec_data, opts_data, cap_factor, drift_B = task
    spec = MetricSpec(**spec_data)
    opts = IntegratorConfig(**opts_data)
    ensemble = PhaseEnsemble(q, v)
    monitor = None
    if drift_B is not None:
        _, r0 = boundary_values(q, v, spec)
        monitor = _DriftBoundMonitor(r0, eps, drift_B, spec)
    batch = escape_times(ensemble, eps, spec, opts, cap_factor, monitor=monitor)
    over = batch.result.monitor_max if monitor is not None else np.zeros(len(ensemble))
    return batch.times, batch.censored, batch.lower_bound, batch.failed, over


def run_escape_ensemble(
    ensemble: PhaseEnsemble,
    eps: float,
    spec: MetricSpec,
    opts: IntegratorConfig,
    cap_factor: float = DEFAULT_CAP_FACTOR,
    drift_B: Optional[float] = None,
    chunk_size: int = 2048,
    workers: int = 1,
):
    """Escape times of an ensemble, chunked over the worker pool"""
    tasks = []
    start = 0
    for size in chunk_sizes(len(ensemble), chunk_size):
        sl = slice(start, start + size)
        tasks.append((ensemble.q[sl], ensemble.v[sl], eps, spec.model_dump(), opts.model_dump(), cap_factor, drift_B))
        start += size
    parts = map_chunks(_escape_chunk, tasks, workers)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(5))


def _median_stderr(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(1.2533 * np.std(values, ddof=1) / math.sqrt(values.size))


def escape_experiment(
    eps_list: Sequence[float],
    n_per_eps: int,
    spec: MetricSpec,
    seed: int,
    opts: Optional[IntegratorConfig] = None,
    cap_factor: float = DEFAULT_CAP_FACTOR,
    safety_factor: float = 2.0,
    drift_B: Optional[float] = None,
    chunk_size: int = 2048,
    workers: int = 1,
) -> EscapeReport:
    """
    Escape times from V_eps across scales

    Each eps draws a calibration and a validation half from disjoint random
    streams. C0 = safety_factor * max_eps 1/(eps * min T) comes from the
    calibration halves; the validation halves are checked against 1/(C0 eps).

    Args:
        eps_list: Scales (2 eps must stay well inside the chart)
        n_per_eps: Trajectories per eps, split evenly into the two halves
        drift_B: When given, each trajectory is checked against
            |r(t) - r(0)| <= B (2 eps)^3 t

    Returns:
        EscapeReport with per-eps rows, the slope fit and the calibrated C0
    """
    check_family(eps_list, min_decades=SWEEP_MIN_DECADES)
    opts = opts or IntegratorConfig()
    f_max = SQRT_2PI2 * spec.x_max
    for eps in eps_list:
        if not 2 * eps < f_max / 2:
            raise PreconditionError(f"2 eps = {2 * eps} must be below f(x_max)/2 = {f_max / 2}")
    n_cal = n_per_eps // 2
    n_val = n_per_eps - n_cal

    rows: List[EscapeRow] = []
    median_se: List[float] = []
    per_eps = []
    drift_violations = 0
    for eps in eps_list:
        cal = sample_V_eps(eps, n_cal, seed=_stream_seed(seed, "escape/calibration", eps), spec=spec, chunk_size=chunk_size, workers=workers)
        val = sample_V_eps(eps, n_val, seed=_stream_seed(seed, "escape/validation", eps), spec=spec, chunk_size=chunk_size, workers=workers)
        ens = PhaseEnsemble.concatenate([cal, val])
        times, censored, lower, failed, over = run_escape_ensemble(
            ens, eps, spec, opts, cap_factor, drift_B, chunk_size, workers
        )
        if drift_B is not None:
            drift_violations += int(np.sum(over > 1e-12))
        ok = ~failed
        crossed = ok & ~(censored | lower)
        if not np.any(crossed):
            raise NoEscapeError(
                f"No trajectory left V_eps for eps={eps}: {int(censored.sum())} censored, "
                f"{int(lower.sum())} floor hits, {int(failed.sum())} failed of {len(ens)}"
            )
        t_ok = times[ok]
        cal_mask = np.zeros(len(ens), dtype=bool)
        cal_mask[:n_cal] = True
        if not np.any(ok & cal_mask):
            raise NoEscapeError(f"Every calibration trajectory failed for eps={eps}")
        min_cal = float(np.min(times[ok & cal_mask]))
        per_eps.append((eps, times, censored, lower, failed, cal_mask, min_cal))
        row = EscapeRow(
            eps=eps,
            n=len(ens),
            min_T=float(t_ok.min()),
            median_T=float(np.median(t_ok)),
            q10_T=float(np.quantile(t_ok, 0.1)),
            q90_T=float(np.quantile(t_ok, 0.9)),
            n_censored=int(censored.sum()),
            n_lower_bound=int(lower.sum()),
            n_failed=int(failed.sum()),
            inverse_eps_min_T=1.0 / (eps * float(t_ok.min())),
        )
        rows.append(row)
        median_se.append(_median_stderr(t_ok))
        logger.info(
            f"Escape eps={eps}: min T={row.min_T:.4g}, median T={row.median_T:.4g}, "
            f"censored={row.n_censored}, floor hits={row.n_lower_bound}, failed={row.n_failed}"
        )

    c0_raw = max(1.0 / (eps * min_cal) for eps, *_, min_cal in per_eps)
    c0 = safety_factor * c0_raw
    violations = 0
    for eps, times, censored, lower, failed, cal_mask, _ in per_eps:
        crossed = ~(censored | lower | failed)
        window = 1.0 / (c0 * eps)
        violations += int(np.sum(crossed & ~cal_mask & (times < window)))

    fit = power_law_fit(
        [(r.eps, r.median_T, se) for r, se in zip(rows, median_se)], seed=seed
    )

    control = []
    for eps in eps_list:
        x_eps = x_of_f(eps)
        radial = PhasePoint.from_arrays((x_eps, 0.0, 0.5, 0.5), (0.5, 0.0, 0.0, 0.0))
        result = escape_time(radial, eps, spec, opts, cap_factor, require_membership=False)
        control.append(result.time / eps)
    logger.info(
        f"Escape slope {fit.exponent:.3f}, C0 = {c0:.4g} (raw {c0_raw:.4g}), "
        f"validation violations = {violations}, radial control T/eps = {np.mean(control):.4f}"
    )
    return EscapeReport(
        rows=rows,
        fit=fit,
        c0_raw=c0_raw,
        c0=c0,
        safety_factor=safety_factor,
        validation_violations=violations,
        drift_bound_violations=drift_violations,
        drift_B=drift_B,
        negative_control_ratio=float(np.mean(control)),
    )


def _stream_seed(seed: int, label: str, eps: float) -> int:
    return derive_seed(seed, f"{label}/{eps!r}")


# ---- gradient expansion ----------------------------------------------------

def gradient_expansion_check(
    spec: MetricSpec,
    seed: int = 0,
    n: int = 1000,
    x_range: Tuple[float, float] = (0.05, 0.9),
) -> GradientExpansionReport:
    """
    Decompose nabla_v lambda along J lambda and its orthogonal complement

    The J lambda coefficient is compared with <v, J lambda> J lambda / f to
    give the constant c*; ||nabla_{e2} lambda|| is fitted against 1/f.
    """
    if spec.eta != 0.0:
        raise PreconditionError("Gradient expansion check requires eta = 0")
    rng = derive_rng(seed, "gradient-expansion")
    x = rng.uniform(*x_range, n)
    q = np.stack([x, rng.uniform(0, 1, n), rng.uniform(0, 1, n), rng.uniform(0, 1, n)], axis=1)
    v = sample_fibers(q, spec, rng)

    nabla = covariant_lambda(q, v, spec)
    jl = j_lambda_vector(q, spec)
    jl_sq = norm_squared(q, jl, spec)
    coef = inner_product(q, nabla, jl, spec) / jl_sq
    orth = nabla - coef[:, None] * jl
    orth_norm = np.sqrt(np.maximum(norm_squared(q, orth, spec), 0.0))
    _, b = projections(q, v, spec)
    f = SQRT_2PI2 * x
    usable = np.abs(b) > 1e-8
    c_vals = coef[usable] * f[usable] / b[usable]
    c_star = float(np.median(c_vals))
    spread = float(np.max(np.abs(c_vals - c_star)) / abs(c_star)) if c_vals.size else 0.0

    radial_q = q[:1]
    radial_v = from_frame(radial_q, np.array([[1.0, 0.0, 0.0, 0.0]]), spec)
    radial_norm = float(np.sqrt(norm_squared(radial_q, covariant_lambda(radial_q, radial_v, spec), spec))[0])

    xs = np.geomspace(*x_range, 12)
    qs = np.stack([xs, np.zeros_like(xs), np.zeros_like(xs), np.zeros_like(xs)], axis=1)
    e2 = from_frame(qs, np.tile([0.0, 1.0, 0.0, 0.0], (xs.size, 1)), spec)
    norms = np.sqrt(norm_squared(qs, covariant_lambda(qs, e2, spec), spec))
    slope_fit = power_law_fit([(1.0 / (SQRT_2PI2 * xi), ni, 0.0) for xi, ni in zip(xs, norms)], seed=seed)

    logger.info(
        f"Gradient expansion: c* = {c_star:.6f} (reference {REFERENCE_CONSTANT:.6f}), "
        f"max orthogonal = {float(orth_norm.max()):.3g}, slope vs 1/f = {slope_fit.exponent:.6f}"
    )
    return GradientExpansionReport(
        c_star=c_star,
        reference_constant=REFERENCE_CONSTANT,
        max_orthogonal_component=float(orth_norm.max()),
        ratio_spread=spread,
        radial_norm=radial_norm,
        slope_fit=slope_fit,
    )
