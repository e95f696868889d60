"""
Experiment dispatch
Each experiment writes its outputs into the run directory and returns assertion outcomes
"""

import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from wpflow import __version__
from wpflow.boundary.experiments import drift_experiment, escape_experiment, gradient_expansion_check
from wpflow.config.config_manager import ExperimentConfig, IntegratorConfig, MetricSpec
from wpflow.config.init_defaults import initialize_run_directory
from wpflow.correlations.estimators import (
    certificate_window,
    correlation,
    gamma_upper_bound,
    integrate_observable,
    nonmixing_certificate,
)
from wpflow.correlations.observables import build_a, build_b
from wpflow.flow.fidelity import cusp_initial_conditions, geodesic_fidelity
from wpflow.flow.integrator import integrate
from wpflow.geometry.survey import curvature_survey
from wpflow.measure.sampling import RegionSpec
from wpflow.measure.volumes import minkowski_codimension, volume_scaling
from wpflow.models.points import PhasePoint
from wpflow.models.results import AssertionOutcome, EscapeReport, RunManifest, outcomes_failed
from wpflow.observability.metrics import RunMetrics
from wpflow.runner.outputs import RunOutputs
from wpflow.runner.validation import run_invariant_suite
from wpflow.utils.seeding import derive_rng

logger = logging.getLogger(__name__)

# acceptance windows
VOLUME_E_RHO_EXPONENT = (4.0, 0.1)
VOLUME_V_EPS_EXPONENT = (8.0, 0.2)
CODIMENSION = (4.0, 0.1)
ESCAPE_SLOPE = (-1.0, 0.15)
DRIFT_EXPONENT = (3.0, 0.3)
DRIFT_FLAT_BOUND = 1e-10
GAMMA_TOLERANCE = {1: 0.5, 2: 0.6, 3: 0.8}
GRADIENT_CONSTANT = 3.0


def _within(name: str, value: float, target: float, tolerance: float, **values) -> AssertionOutcome:
    return AssertionOutcome(
        name=name,
        passed=bool(abs(value - target) <= tolerance),
        detail=f"{value:.4f} (target {target} +- {tolerance})",
        values={"value": value, **values},
    )


@dataclass
class ExperimentContext:
    """Everything an experiment needs: config, writers, metrics and shared calibrations"""
    config: ExperimentConfig
    outputs: RunOutputs
    metrics: RunMetrics
    summary: Dict[str, Any] = field(default_factory=dict)
    escape_report: Optional[EscapeReport] = None

    @property
    def spec(self) -> MetricSpec:
        return self.config.metric

    @property
    def opts(self) -> IntegratorConfig:
        return self.config.integrator

    @property
    def seed(self) -> int:
        return int(self.config.run.seed)

    @property
    def workers(self) -> int:
        return self.config.run.workers

    @property
    def chunk_size(self) -> int:
        return self.config.run.chunk_size

    @property
    def ball(self) -> RegionSpec:
        return RegionSpec.ball(self.config.ball.center, self.config.ball.radius)

    def calibrated_c0(self) -> float:
        """C0 from the escape experiment, run once per context"""
        if self.escape_report is None:
            logger.info("Calibrating C0 from escape times")
            self.escape_report = _escape_report(self)
            self.outputs.write_json("escape_calibration.json", self.escape_report)
        return self.escape_report.c0


def _escape_report(ctx: ExperimentContext, drift_B: Optional[float] = None) -> EscapeReport:
    cfg = ctx.config.escape
    report = escape_experiment(
        cfg.eps_list,
        cfg.n_per_eps,
        ctx.spec,
        ctx.seed,
        opts=ctx.opts,
        cap_factor=cfg.cap_factor,
        safety_factor=cfg.safety_factor,
        drift_B=drift_B,
        chunk_size=ctx.chunk_size,
        workers=ctx.workers,
    )
    for row in report.rows:
        ctx.metrics.record_trajectories(row.n, row.n_failed, reason="boundary_hit")
        ctx.metrics.record_samples(f"V_eps:{row.eps}", row.n)
    return report


def run_geometry_report(ctx: ExperimentContext) -> List[AssertionOutcome]:
    cfg = ctx.config.geometry
    report = curvature_survey(ctx.spec, cfg.depths, cfg.planes_per_depth, ctx.seed)
    ctx.outputs.write_json("geometry_report.json", report)
    ctx.outputs.write_csv("geometry_curvature.csv", [row.model_dump() for row in report.rows])
    outcomes = [
        AssertionOutcome(
            name="cusp_curvature_law",
            passed=report.passed,
            detail=f"max relative error {report.max_cusp_law_error:.3g}",
        )
    ]
    if ctx.spec.eta == 0.0:
        expansion = gradient_expansion_check(ctx.spec, ctx.seed)
        ctx.outputs.write_json("gradient_expansion.json", expansion)
        outcomes.append(_within("gradient_expansion_constant", expansion.c_star, GRADIENT_CONSTANT, 1e-6))
        outcomes.append(_within("gradient_expansion_slope", expansion.slope_fit.exponent, 1.0, 1e-6))
    ctx.summary["max_cusp_law_error"] = report.max_cusp_law_error
    return outcomes


def run_geodesic(ctx: ExperimentContext) -> List[AssertionOutcome]:
    cfg = ctx.config.geodesic
    report = geodesic_fidelity(
        ctx.spec,
        ctx.seed,
        n_trajectories=cfg.n_trajectories,
        horizon=cfg.horizon,
        x0_range=cfg.x0_range,
        energy_trajectories=cfg.energy_trajectories,
        energy_horizon=cfg.energy_horizon,
        opts=ctx.opts,
    )
    ctx.outputs.write_json("geodesic.json", report)
    ctx.metrics.record_trajectories(cfg.n_trajectories + 4 * cfg.energy_trajectories, report.n_invalid, reason="invalid")

    # one sample trajectory for inspection
    q0, v0 = cusp_initial_conditions(1, cfg.x0_range, derive_rng(ctx.seed, "geodesic/example"))[0]
    example = integrate(PhasePoint.from_arrays(q0, v0), cfg.horizon, ctx.spec, ctx.opts,
                        t_eval=np.linspace(0.0, cfg.horizon, 201))
    ctx.outputs.write_trajectory("trajectory_example.csv", example, ctx.spec)

    ctx.summary.update(
        max_energy_drift=report.max_energy_drift,
        max_clairaut_drift=report.max_clairaut_drift,
        max_oracle_discrepancy=report.max_oracle_discrepancy,
        max_reversibility_error=report.max_reversibility_error,
    )
    return [
        AssertionOutcome(
            name="integrator_fidelity",
            passed=report.passed,
            detail=(
                f"energy {report.max_energy_drift:.3g}, Clairaut {report.max_clairaut_drift:.3g}, "
                f"oracle {report.max_oracle_discrepancy:.3g} on {report.n_oracle_checked}, "
                f"reversal {report.max_reversibility_error:.3g}"
            ),
        )
    ]


def run_drift(ctx: ExperimentContext) -> List[AssertionOutcome]:
    cfg = ctx.config.drift
    outcomes = []
    for eta in (cfg.eta, 0.0):
        spec = ctx.spec.model_copy(update={"eta": eta})
        report = drift_experiment(
            spec, ctx.seed, tuple(cfg.f_range), cfg.n_bins, cfg.n_per_bin, cfg.method, ctx.opts, ctx.workers
        )
        suffix = f"eta{eta:g}"
        ctx.outputs.write_json(f"drift_{suffix}.json", report)
        ctx.outputs.write_csv(f"drift_{suffix}.csv", [b.model_dump() for b in report.bins])
        ctx.metrics.record_trajectories(cfg.n_bins * cfg.n_per_bin)
        if eta > 0.0:
            ctx.summary.update(drift_exponent=report.fit.exponent, drift_B=report.B)
            outcomes.append(_within("drift_exponent", report.fit.exponent, *DRIFT_EXPONENT,
                                    ci=[report.fit.ci_low, report.fit.ci_high]))
        else:
            outcomes.append(
                AssertionOutcome(
                    name="r_conserved_by_product_flow",
                    passed=report.max_abs_r_change < DRIFT_FLAT_BOUND,
                    detail=f"max |r(t) - r(0)| {report.max_abs_r_change:.3g}, max |r'| {report.max_abs_r_prime:.3g}",
                )
            )
    return outcomes


def run_escape(ctx: ExperimentContext) -> List[AssertionOutcome]:
    drift_B = None
    if ctx.spec.eta > 0.0:
        cfg = ctx.config.drift
        drift = drift_experiment(
            ctx.spec, ctx.seed, tuple(cfg.f_range), cfg.n_bins, cfg.n_per_bin, cfg.method, ctx.opts, ctx.workers
        )
        drift_B = drift.B
    report = _escape_report(ctx, drift_B)
    ctx.escape_report = report
    ctx.outputs.write_json("escape.json", report)
    ctx.outputs.write_csv("escape.csv", [row.model_dump() for row in report.rows])
    ctx.outputs.emit_plot_data(report, "escape")
    ctx.summary.update(
        escape_slope=report.fit.exponent,
        escape_slope_ci=[report.fit.ci_low, report.fit.ci_high],
        c0=report.c0,
    )
    outcomes = [
        _within("escape_slope", report.fit.exponent, *ESCAPE_SLOPE),
        AssertionOutcome(
            name="escape_window_held_out",
            passed=report.validation_violations == 0,
            detail=f"{report.validation_violations} validation trajectories left before 1/(C0 eps)",
        ),
    ]
    if drift_B is not None:
        outcomes.append(
            AssertionOutcome(
                name="drift_bound_along_trajectories",
                passed=report.drift_bound_violations == 0,
                detail=f"{report.drift_bound_violations} trajectories above r0 + B (2 eps)^3 t",
            )
        )
    return outcomes


def run_volumes(ctx: ExperimentContext) -> List[AssertionOutcome]:
    cfg = ctx.config.volumes
    outcomes = []
    for kind, family, params, target in (
        ("E_rho", RegionSpec.e_rho, cfg.rho_list, VOLUME_E_RHO_EXPONENT),
        ("V_eps", RegionSpec.v_eps, cfg.eps_list, VOLUME_V_EPS_EXPONENT),
    ):
        report = volume_scaling(
            family, params, cfg.n_per_value, ctx.spec, ctx.seed, cfg.max_rel_stderr,
            ctx.chunk_size, ctx.workers, kind=kind,
        )
        ctx.outputs.write_json(f"volume_{kind}.json", report)
        ctx.outputs.write_csv(f"volume_{kind}.csv", [row.model_dump() for row in report.rows])
        ctx.outputs.emit_plot_data(report, f"volume_{kind}")
        for row in report.rows:
            ctx.metrics.record_samples(kind, row.n)
        ctx.summary[f"volume_{kind}_exponent"] = report.fit.exponent
        outcomes.append(_within(f"volume_{kind}_exponent", report.fit.exponent, *target,
                                ci=[report.fit.ci_low, report.fit.ci_high]))
    return outcomes


def run_codim(ctx: ExperimentContext) -> List[AssertionOutcome]:
    cfg = ctx.config.codim
    report = minkowski_codimension(
        cfg.eps_list, cfg.n_per_eps, ctx.spec, ctx.seed, cfg.density_exponent,
        chunk_size=ctx.chunk_size, workers=ctx.workers,
    )
    ctx.outputs.write_json("codimension.json", report)
    ctx.outputs.write_csv("codimension.csv", [row.model_dump() for row in report.rows])
    ctx.summary.update(codimension=report.codimension, codimension_exceeds_two=report.exceeds_two)
    outcomes = [
        AssertionOutcome(
            name="codimension_exceeds_two",
            passed=report.exceeds_two,
            detail=f"CI [{report.fit.ci_low:.3f}, {report.fit.ci_high:.3f}]",
        )
    ]
    if cfg.density_exponent == 3.0:
        outcomes.append(_within("codimension", report.codimension, *CODIMENSION))
    return outcomes


def run_correlation(ctx: ExperimentContext) -> List[AssertionOutcome]:
    cfg = ctx.config.correlation
    a = build_a(ctx.ball, ctx.spec, eps_max=cfg.eps)
    b = build_b(cfg.eps, ctx.spec)
    c0 = ctx.calibrated_c0()
    window = certificate_window(cfg.eps, c0)
    rows = []
    estimates = {}
    for t in sorted(set(cfg.t_list) | {window}):
        est = correlation(a, b, t, cfg.n, ctx.spec, ctx.seed, opts=ctx.opts,
                          chunk_size=ctx.chunk_size, workers=ctx.workers)
        estimates[t] = est
        rows.append(est.model_dump())
        ctx.metrics.record_trajectories(cfg.n if t > 0 else 0, est.n_failed)
    ctx.outputs.write_csv("correlation.csv", rows)

    _, _, mean_a = integrate_observable(a, cfg.n, ctx.spec, ctx.seed, ctx.chunk_size, ctx.workers)
    at_window = estimates[window]
    product = at_window.integral_a * at_window.integral_b
    ctx.summary.update(correlation_at_window=at_window.value, product_of_integrals=product, a_mean_over_U=mean_a)
    return [
        AssertionOutcome(
            name="a_covers_half_of_U",
            passed=mean_a >= 0.5,
            detail=f"int a / vol(U) = {mean_a:.4f}",
        ),
        AssertionOutcome(
            name="correlation_at_window_equals_product",
            passed=abs(at_window.value - product) <= 3.0 * at_window.stderr + 1e-15,
            detail=f"C_T = {at_window.value:.6g}, int a int b = {product:.6g}, T = {window:.4g}",
        ),
    ]


def run_certificate(ctx: ExperimentContext) -> List[AssertionOutcome]:
    cfg = ctx.config.certificate
    a = build_a(ctx.ball, ctx.spec, eps_max=max(cfg.eps_list))
    c0 = ctx.calibrated_c0()
    rows = []
    outcomes = []
    for eps in cfg.eps_list:
        report = nonmixing_certificate(
            a, eps, cfg.n, ctx.spec, ctx.seed, c0, cfg.direction, cfg.window_multiplier,
            ctx.opts, ctx.chunk_size, ctx.workers,
        )
        ctx.outputs.write_json(f"certificate_eps{eps:g}.json", report)
        rows.append(report.model_dump(exclude={"violating_indices"}))
        ctx.metrics.record_trajectories(report.n, report.n_failed, reason="boundary_hit")
        if cfg.window_multiplier <= 1.0:
            outcomes.append(
                AssertionOutcome(
                    name=f"certificate_eps{eps:g}",
                    passed=report.status == "pass",
                    detail=f"{report.violations} violations of {report.n}",
                )
            )
    ctx.outputs.write_csv("certificate.csv", rows)
    ctx.summary["certificate_status"] = {str(r["eps"]): r["status"] for r in rows}
    return outcomes


def run_gamma_bound(ctx: ExperimentContext) -> List[AssertionOutcome]:
    cfg = ctx.config.gamma
    a = build_a(ctx.ball, ctx.spec, eps_max=max(cfg.eps_list))
    c0 = ctx.calibrated_c0()
    outcomes = []
    for k in cfg.k_list:
        report = gamma_upper_bound(
            a, cfg.eps_list, k, cfg.n, ctx.spec, ctx.seed, c0,
            norm_points=cfg.norm_points, certificate_n=cfg.certificate_n,
            opts=ctx.opts, chunk_size=ctx.chunk_size, workers=ctx.workers,
        )
        ctx.outputs.write_json(f"gamma_k{k}.json", report)
        ctx.outputs.write_csv(
            f"gamma_k{k}.csv",
            [
                {
                    "eps": r.eps,
                    "m": r.m,
                    "N_k": r.N_k,
                    "T": r.T,
                    "gamma_contribution": r.implied_gamma,
                    "certificate_status": r.certificate_status,
                }
                for r in report.rows
            ],
        )
        ctx.outputs.emit_plot_data(report, f"gamma_k{k}")
        ctx.summary[f"gamma_max_k{k}"] = report.gamma_max
        ctx.summary[f"gamma_ci_k{k}"] = [report.ci_low, report.ci_high]
        # a is fixed, so this is the growth exponent of |b_eps|_{C^k}: -2k or -k
        ctx.summary[f"norm_exponent_k{k}"] = report.fit_N.exponent
        target = 8.0 + 2.0 * k
        outcomes.append(
            AssertionOutcome(
                name=f"gamma_max_k{k}",
                passed=report.status == "bounded" and abs(report.gamma_max - target) <= GAMMA_TOLERANCE.get(k, 1.0),
                detail=f"{report.gamma_max:.3f} [{report.ci_low:.3f}, {report.ci_high:.3f}], target {target}",
            )
        )

    control = gamma_upper_bound(
        a, cfg.eps_list, cfg.k_list[0], cfg.n, ctx.spec, ctx.seed, c0,
        norm_points=cfg.norm_points, certificate_n=cfg.certificate_n, control=True,
        opts=ctx.opts, chunk_size=ctx.chunk_size, workers=ctx.workers,
    )
    ctx.outputs.write_json("gamma_control.json", control)
    outcomes.append(
        AssertionOutcome(
            name="gamma_fixed_bump_control",
            passed=control.status == "no obstruction at this scale" and math.isinf(control.gamma_max),
            detail=control.status,
        )
    )
    return outcomes


def run_validate(ctx: ExperimentContext) -> List[AssertionOutcome]:
    """Invariant suite followed by every experiment"""
    outcomes = run_invariant_suite(ctx.spec, ctx.opts, ctx.seed)
    ctx.outputs.write_json("invariants.json", [o.model_dump() for o in outcomes])
    for name in EXPERIMENT_ORDER:
        logger.info(f"validate: running {name}")
        with ctx.metrics.time_experiment(name):
            outcomes.extend(EXPERIMENTS[name](ctx))
    return outcomes


EXPERIMENTS: Dict[str, Callable[[ExperimentContext], List[AssertionOutcome]]] = {
    "geometry-report": run_geometry_report,
    "geodesic": run_geodesic,
    "drift": run_drift,
    "escape": run_escape,
    "volumes": run_volumes,
    "codim": run_codim,
    "correlation": run_correlation,
    "certificate": run_certificate,
    "gamma-bound": run_gamma_bound,
    "validate": run_validate,
}

EXPERIMENT_ORDER = [
    "geometry-report",
    "geodesic",
    "drift",
    "escape",
    "volumes",
    "codim",
    "correlation",
    "certificate",
    "gamma-bound",
]


def run_directory(config: ExperimentConfig) -> Path:
    return Path(config.run.out_dir) / f"{config.run.experiment}-seed{config.run.seed}"


def run(config: ExperimentConfig, run_dir: Optional[Path] = None) -> RunManifest:
    """
    Run one experiment and seal its directory with a manifest

    Outputs written before a failure are kept; the manifest then carries
    status "failed" and the exception is re-raised.

    Returns:
        RunManifest with status "ok" or "assertion_failed"
    """
    name = config.run.experiment
    run_dir = initialize_run_directory(run_dir or run_directory(config))
    outputs = RunOutputs(run_dir)
    metrics = RunMetrics()
    ctx = ExperimentContext(config=config, outputs=outputs, metrics=metrics)
    manifest = RunManifest(
        version=__version__,
        experiment=name,
        seed=int(config.run.seed),
        config=config.model_dump(mode="json"),
        started_at=datetime.now(timezone.utc),
    )
    logger.info(f"Running {name} (seed {config.run.seed}, workers {config.run.workers}) into {run_dir}")
    error: Optional[BaseException] = None
    failures: List[str] = []
    try:
        with metrics.time_experiment(name):
            outcomes = EXPERIMENTS[name](ctx)
        outputs.write_json("assertions.json", [o.model_dump() for o in outcomes])
        failures = outcomes_failed(outcomes)
        status = "assertion_failed" if failures else "ok"
        metrics.record_assertions(len(failures))
        for failure in failures:
            logger.warning(f"Assertion failed: {failure}")
    except Exception as e:
        logger.error(f"Experiment {name} failed: {e}", exc_info=True)
        status = "failed"
        failures = [f"{type(e).__name__}: {e}"]
        error = e
    finally:
        if config.observability.prometheus_enabled:
            metrics.write(run_dir)
    manifest = manifest.model_copy(
        update={
            "status": status,
            "summary": ctx.summary,
            "failures": failures,
            "finished_at": datetime.now(timezone.utc),
        }
    )
    outputs.write_manifest(manifest)
    if error is not None:
        raise error
    return manifest
