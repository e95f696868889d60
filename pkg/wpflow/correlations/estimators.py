"""
Correlation estimators, the disjoint-support certificate and the mixing-exponent bound
All integrals are Liouville integrals normalised by the total mass
"""

import logging
import math
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from wpflow.boundary.quantities import sample_V_eps
from wpflow.config.config_manager import IntegratorConfig, MetricSpec
from wpflow.correlations.observables import (
    DEFAULT_NORM_POINTS,
    Observable,
    build_b,
    estimate_ck_norm,
)
from wpflow.flow.integrator import integrate_ensemble
from wpflow.geometry.metric import sqrt_length
from wpflow.measure.fitting import CI_LEVEL, N_BOOTSTRAP, SWEEP_MIN_DECADES, check_family, power_law_fit
from wpflow.measure.sampling import DEFAULT_CHUNK_SIZE, RegionSpec, liouville_sample, region_x_bounds
from wpflow.measure.volumes import estimate_volume, exact_volume
from wpflow.models.errors import PreconditionError, TrajectoryFailureError
from wpflow.models.points import PhaseEnsemble
from wpflow.models.results import CertificateReport, CorrelationEstimate, GammaReport, GammaRow
from wpflow.utils.parallel import map_chunks
from wpflow.utils.seeding import chunk_sizes, derive_rng, derive_seed

logger = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.01
MAX_LISTED_VIOLATIONS = 1000
# |slope of m| below this counts as flat
FLAT_SLOPE = 1e-6


def _sampling_region(obs: Observable, spec: MetricSpec) -> RegionSpec:
    return obs.support or RegionSpec.tube(spec.x_floor, spec.x_max)


def _region_volume(region: RegionSpec, n: int, spec: MetricSpec, seed: int, chunk_size: int, workers: int):
    exact = exact_volume(region, spec)
    if exact is not None:
        return exact, 0.0
    return estimate_volume(region, n, spec, derive_seed(seed, "volume"), chunk_size, workers)


def integrate_observable(
    obs: Observable,
    n: int,
    spec: MetricSpec,
    seed: int,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> Tuple[float, float, float]:
    """
    Normalised integral of an observable

    Returns:
        (integral, stderr, mean over the support); the last is the
        integral divided by the support volume
    """
    if obs.kind == "constant":
        return obs.level, 0.0, obs.level
    region = obs.support
    vol, vol_se = _region_volume(region, n, spec, seed, chunk_size, workers)
    sample = liouville_sample(region, n, spec, seed, chunk_size, workers, stream=f"integral/{obs.label}")
    values = obs.evaluate(sample.q, sample.v, spec)
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    stderr = math.hypot(vol * se, vol_se * mean)
    return vol * mean, stderr, mean


def _flow_chunk(task):
    q, v, t, spec_data, opts_data = task
    result = integrate_ensemble(PhaseEnsemble(q, v), t, MetricSpec(**spec_data), IntegratorConfig(**opts_data))
    return result.q, result.v, result.failed


def flow_ensemble(
    ensemble: PhaseEnsemble,
    t: float,
    spec: MetricSpec,
    opts: Optional[IntegratorConfig] = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> Tuple[PhaseEnsemble, np.ndarray]:
    """
    Time-t images of an ensemble; negative t flows backward via phi_{-t}(v) = -phi_t(-v)

    Returns:
        (final ensemble, failed mask)
    """
    if t == 0 or len(ensemble) == 0:
        return ensemble, np.zeros(len(ensemble), dtype=bool)
    opts = opts or IntegratorConfig()
    start = ensemble.reversed() if t < 0 else ensemble
    tasks = []
    offset = 0
    for size in chunk_sizes(len(start), chunk_size):
        sl = slice(offset, offset + size)
        tasks.append((start.q[sl], start.v[sl], abs(t), spec.model_dump(), opts.model_dump()))
        offset += size
    parts = map_chunks(_flow_chunk, tasks, workers)
    final = PhaseEnsemble(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
    failed = np.concatenate([p[2] for p in parts])
    return (final.reversed() if t < 0 else final), failed


def correlation(
    a: Observable,
    b: Observable,
    t: float,
    n: int,
    spec: MetricSpec,
    seed: int,
    strategy: Literal["direct", "pullback"] = "direct",
    opts: Optional[IntegratorConfig] = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> CorrelationEstimate:
    """
    Monte Carlo estimate of C_t(a, b) = |int a * b o phi_t - int a int b|

    Args:
        a, b: Observables
        t: Time >= 0
        n: Liouville samples
        spec: Model manifold
        seed: Master seed
        strategy: "direct" samples the support of a and flows forward;
            "pullback" samples the support of b and flows backward

    Returns:
        CorrelationEstimate

    Raises:
        TrajectoryFailureError: more than 1% of the trajectories failed
    """
    if t < 0:
        raise PreconditionError(f"Correlation time must be >= 0, got {t}")
    sampled, other = (a, b) if strategy == "direct" else (b, a)
    region = _sampling_region(sampled, spec)
    vol, vol_se = _region_volume(region, n, spec, seed, chunk_size, workers)
    ensemble = liouville_sample(region, n, spec, seed, chunk_size, workers, stream=f"correlation/{strategy}")
    moved, failed = flow_ensemble(ensemble, t if strategy == "direct" else -t, spec, opts, chunk_size, workers)
    n_failed = int(failed.sum())
    if n_failed > MAX_FAILURE_RATE * n:
        raise TrajectoryFailureError(f"{n_failed} of {n} trajectories failed during the correlation flow")
    keep = ~failed

    own = sampled.evaluate(ensemble.q, ensemble.v, spec)
    moved_vals = other.evaluate(moved.q, moved.v, spec)
    product = own[keep] * moved_vals[keep]
    m = max(product.size, 1)
    i_ab = vol * float(product.mean()) if product.size else 0.0
    se_ab = vol * float(product.std(ddof=1) / math.sqrt(m)) if product.size > 1 else 0.0

    i_own = vol * float(own.mean())
    se_own = math.hypot(vol * float(own.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0, vol_se * float(own.mean()))
    if other.kind == "constant":
        i_other, se_other = other.level, 0.0
    elif other.support == region:
        # same sample set as the sampled observable
        other_vals = other.evaluate(ensemble.q, ensemble.v, spec)
        i_other = vol * float(other_vals.mean())
        se_other = vol * float(other_vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    else:
        i_other, se_other, _ = integrate_observable(
            other, n, spec, derive_seed(seed, f"correlation/{other.label}"), chunk_size, workers
        )

    i_a, se_a, i_b, se_b = (
        (i_own, se_own, i_other, se_other) if strategy == "direct" else (i_other, se_other, i_own, se_own)
    )
    value = abs(i_ab - i_a * i_b)
    stderr = math.sqrt(se_ab ** 2 + (i_b * se_a) ** 2 + (i_a * se_b) ** 2)
    logger.debug(f"C_{t:g}({a.label}, {b.label}) = {value:.6g} +- {stderr:.2g} [{strategy}]")
    return CorrelationEstimate(
        t=t,
        value=value,
        stderr=stderr,
        n=n,
        integral_a=i_a,
        integral_a_stderr=se_a,
        integral_b=i_b,
        integral_b_stderr=se_b,
        integral_ab=i_ab,
        n_failed=n_failed,
        strategy=strategy,
    )


def certificate_window(eps: float, c0: float, window_multiplier: float = 1.0) -> float:
    """Protected time window 1 / (C_0 eps), optionally stretched"""
    return window_multiplier / (c0 * eps)


def nonmixing_certificate(
    a: Observable,
    eps: float,
    n: int,
    spec: MetricSpec,
    seed: int,
    c0: float,
    direction: Literal["backward", "forward"] = "backward",
    window_multiplier: float = 1.0,
    opts: Optional[IntegratorConfig] = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> CertificateReport:
    """
    Check that T^1 U and V_eps stay disjoint under the flow for T = 1 / (C_0 eps)

    The backward run flows V_eps samples back by T and evaluates a; the
    forward run flows T^1 U samples forward and evaluates b_eps. Any sample
    with a * b_eps > 0 is a violation and is listed in the report.
    """
    if a.kind != "ball":
        raise PreconditionError("Certificate needs a ball observable for a")
    x_lo, _ = region_x_bounds(a.support, spec)
    systole = float(sqrt_length(np.array([x_lo, 0.0, 0.0, 0.0])))
    if 2.0 * eps >= systole:
        raise PreconditionError(f"2 eps = {2 * eps:.4g} is not below the systole scale {systole:.4g} of U")
    b = build_b(eps, spec)
    T = certificate_window(eps, c0, window_multiplier)
    cert_seed = derive_seed(seed, f"certificate/{direction}/{eps!r}")
    if direction == "backward":
        start = sample_V_eps(eps, n, cert_seed, spec, chunk_size, workers)
        moved, failed = flow_ensemble(start, -T, spec, opts, chunk_size, workers)
        product = a.evaluate(moved.q, moved.v, spec) * b.evaluate(start.q, start.v, spec)
    else:
        start = liouville_sample(a.support, n, spec, cert_seed, chunk_size, workers, stream="certificate")
        moved, failed = flow_ensemble(start, T, spec, opts, chunk_size, workers)
        product = a.evaluate(start.q, start.v, spec) * b.evaluate(moved.q, moved.v, spec)

    violating = np.flatnonzero(product > 0)
    if violating.size:
        logger.warning(
            f"Certificate eps={eps} ({direction}, T={T:.4g}): {violating.size} of {n} samples overlap"
        )
    else:
        logger.info(f"Certificate eps={eps} ({direction}, T={T:.4g}): no overlap in {n} samples")
    if failed.any():
        logger.warning(f"Certificate eps={eps}: {int(failed.sum())} trajectories did not reach T")
    return CertificateReport(
        eps=eps,
        n=n,
        T=T,
        direction=direction,
        violations=int(violating.size),
        violating_indices=violating[:MAX_LISTED_VIOLATIONS].tolist(),
        max_product=float(product.max()) if product.size else 0.0,
        n_failed=int(failed.sum()),
        status="fail" if violating.size else "pass",
    )


def _gamma_from_slopes(lx: np.ndarray, lm: np.ndarray, lN: np.ndarray, lT: np.ndarray, w) -> float:
    s_m = np.polyfit(lx, lm, 1, w=w)[0]
    s_N = np.polyfit(lx, lN, 1)[0]
    s_T = np.polyfit(lx, lT, 1)[0]
    return float((s_m - s_N) / -s_T)


def gamma_upper_bound(
    a: Observable,
    eps_list: Sequence[float],
    k: int,
    n: int,
    spec: MetricSpec,
    seed: int,
    c0: float,
    norm_points: int = DEFAULT_NORM_POINTS,
    certificate_n: int = 2000,
    control: bool = False,
    control_eps: Optional[float] = None,
    opts: Optional[IntegratorConfig] = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> GammaReport:
    """
    Largest mixing exponent compatible with the disjoint-support identity

    For each eps: m = int a * int b_eps, N = |a|_{C^k} |b_eps|_{C^k} and
    T = 1 / (C_0 eps). Then gamma_max = (slope_m - slope_N) / (-slope_T),
    with a paired bootstrap CI over the eps values.

    With control=True every b_eps is replaced by the fixed bump b_{control_eps}
    (default: the largest eps); m and N no longer move with eps and the
    result is "no obstruction at this scale".
    """
    check_family(eps_list, min_decades=SWEEP_MIN_DECADES)
    if control and control_eps is None:
        control_eps = max(eps_list)
    int_a, se_a, _ = integrate_observable(a, n, spec, derive_seed(seed, "gamma/a"), chunk_size, workers)
    a_norm = estimate_ck_norm(a, k, spec, seed, norm_points)

    rows: List[GammaRow] = []
    certificates_pass = True
    for eps in eps_list:
        T = certificate_window(eps, c0)
        if T < 1.0:
            raise PreconditionError(f"T(eps={eps}) = {T:.4g} < 1; C_0 = {c0:.4g} is too large for this sweep")
        bump_eps = control_eps if control else eps
        b = build_b(bump_eps, spec)
        int_b, se_b, ratio = integrate_observable(
            b, n, spec, derive_seed(seed, f"gamma/b/{bump_eps!r}"), chunk_size, workers
        )
        b_norm = estimate_ck_norm(b, k, spec, seed, norm_points)
        m = int_a * int_b
        m_se = math.hypot(int_b * se_a, int_a * se_b)
        N = a_norm * b_norm
        implied = math.log(N / m) / math.log(T) if T > 1.0 else math.inf
        cert = nonmixing_certificate(
            a, bump_eps, certificate_n, spec, seed, c0,
            window_multiplier=bump_eps / eps, opts=opts, chunk_size=chunk_size, workers=workers,
        )
        certificates_pass = certificates_pass and cert.status == "pass"
        rows.append(
            GammaRow(
                eps=eps,
                m=m,
                m_stderr=m_se,
                integral_b=int_b,
                b_volume_ratio=ratio,
                a_norm=a_norm,
                b_norm=b_norm,
                N_k=N,
                T=T,
                implied_gamma=implied,
                certificate_status=cert.status,
            )
        )
        logger.info(f"eps={eps}: m={m:.4g}, N_{k}={N:.4g}, T={T:.4g}, implied gamma={implied:.3f}, cert={cert.status}")

    fit_m = power_law_fit([(r.eps, r.m, r.m_stderr) for r in rows], seed=seed)
    fit_N = power_law_fit([(r.eps, r.N_k, 0.0) for r in rows], seed=seed)
    fit_T = power_law_fit([(r.eps, r.T, 0.0) for r in rows], seed=seed)

    lx = np.log([r.eps for r in rows])
    lm = np.log([r.m for r in rows])
    lN = np.log([r.N_k for r in rows])
    lT = np.log([r.T for r in rows])
    rel = np.array([r.m_stderr / r.m for r in rows])
    w = 1.0 / np.where(rel > 0, rel, rel[rel > 0].min()) if np.any(rel > 0) else None
    gamma = _gamma_from_slopes(lx, lm, lN, lT, w)

    rng = derive_rng(seed, "gamma/bootstrap")
    boot = []
    for _ in range(N_BOOTSTRAP):
        idx = rng.integers(0, lx.size, lx.size)
        if np.unique(lx[idx]).size < 2:
            continue
        boot.append(_gamma_from_slopes(lx[idx], lm[idx], lN[idx], lT[idx], None if w is None else w[idx]))
    if boot:
        alpha = (1.0 - CI_LEVEL) / 2.0
        ci_low, ci_high = (float(x) for x in np.quantile(boot, [alpha, 1.0 - alpha]))
    else:
        ci_low = ci_high = gamma
    ci_low, ci_high = min(ci_low, gamma), max(ci_high, gamma)

    flat_m = fit_m.ci_low <= FLAT_SLOPE and fit_m.ci_high >= -FLAT_SLOPE
    if flat_m or not certificates_pass:
        reason = "volume of b does not shrink" if flat_m else "a certificate failed"
        logger.info(f"No obstruction at this scale ({reason})")
        gamma = ci_low = ci_high = math.inf
        status = "no obstruction at this scale"
    else:
        status = "bounded"
        logger.info(f"gamma_max (k={k}) = {gamma:.3f} [{ci_low:.3f}, {ci_high:.3f}]")
    return GammaReport(
        k=k,
        integral_a=int_a,
        a_norm=a_norm,
        rows=rows,
        fit_m=fit_m,
        fit_N=fit_N,
        fit_T=fit_T,
        gamma_max=gamma,
        ci_low=ci_low,
        ci_high=ci_high,
        status=status,
        control=control,
    )
