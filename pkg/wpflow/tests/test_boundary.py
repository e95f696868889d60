"""
Unit tests for near-boundary quantities and experiments
"""

import math
from dataclasses import replace
from unittest.mock import patch

import numpy as np
import pytest

from wpflow.boundary.experiments import drift_experiment, escape_experiment, gradient_expansion_check
from wpflow.boundary.quantities import (
    boundary_state,
    boundary_values,
    f_prime,
    r_prime,
    r_prime_covariant,
    r_prime_finite_difference,
    sample_V_eps,
)
from wpflow.config.config_manager import IntegratorConfig, MetricSpec
from wpflow.flow.integrator import integrate
from wpflow.geometry.metric import SQRT_2PI2, norm_squared
from wpflow.measure.sampling import sample_fibers
from wpflow.models.errors import InsufficientDecadesError, NoEscapeError, PreconditionError
from wpflow.models.points import PhasePoint

ESCAPE_EPS = [0.1, 0.05, 0.025, 0.0125]


def random_states(n: int, spec: MetricSpec, seed: int = 0, x_range=(0.05, 0.9)):
    rng = np.random.default_rng(seed)
    q = np.column_stack([rng.uniform(*x_range, n), rng.random(n), rng.random(n), rng.random(n)])
    return q, sample_fibers(q, spec, rng)


class TestBoundaryQuantities:
    """Test f, r and the drift of r"""

    def setup_method(self):
        self.spec = MetricSpec()
        self.bumpy = MetricSpec(eta=0.3)

    def test_f_and_r_closed_form(self):
        x, vx, vtau = 0.3, 0.1, 2.0
        state = boundary_state(PhasePoint.from_arrays([x, 0.0, 0.0, 0.0], [vx, vtau, 0.5, 0.0]), self.spec)
        assert state.f == pytest.approx(SQRT_2PI2 * x)
        assert state.r == pytest.approx(math.hypot(SQRT_2PI2 * vx, SQRT_2PI2 * x ** 3 * vtau / 2.0))

    def test_torus_direction_has_zero_r(self):
        _, r = boundary_values(np.array([0.2, 0.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0, 0.0]), self.spec)
        assert float(r) == 0.0

    def test_drift_vanishes_for_product_model(self):
        q, v = random_states(500, self.spec)
        assert np.max(np.abs(r_prime(q, v, self.spec))) < 1e-12

    def test_closed_form_matches_covariant_formula(self):
        q, v = random_states(200, self.bumpy, seed=1)
        closed = r_prime(q, v, self.bumpy)
        covariant = r_prime_covariant(q, v, self.bumpy)
        assert np.allclose(closed, covariant, rtol=1e-6, atol=1e-10)

    def test_closed_form_matches_finite_differences(self):
        start = PhasePoint.from_arrays([0.5, 0.0, 0.1, 0.0], [0.2, 0.5, 0.7, 0.2])
        times = np.linspace(0.0, 0.2, 41)
        traj = integrate(start, 0.2, self.bumpy, IntegratorConfig(), t_eval=times)
        on_grid = np.isclose(traj.t[:, None], times[None, :], rtol=0, atol=1e-13).any(axis=1)
        traj = replace(traj, t=traj.t[on_grid], q=traj.q[on_grid], v=traj.v[on_grid])
        t, fd = r_prime_finite_difference(traj, self.bumpy)
        exact = r_prime(traj.q[2:-2], traj.v[2:-2], self.bumpy)
        assert t.size == exact.size
        assert np.allclose(fd, exact, rtol=1e-5, atol=1e-9)

    def test_f_prime_bounded_by_r_along_flow(self):
        times = np.linspace(0.0, 0.4, 81)
        q0, v0 = random_states(10, self.bumpy, seed=9, x_range=(0.3, 0.6))
        for qi, vi in zip(q0, v0):
            traj = integrate(PhasePoint.from_arrays(qi, vi), 0.4, self.bumpy, IntegratorConfig(), t_eval=times)
            on_grid = np.isclose(traj.t[:, None], times[None, :], rtol=0, atol=1e-13).any(axis=1)
            q, v = traj.q[on_grid], traj.v[on_grid]
            f, r = boundary_values(q, v, self.bumpy)
            fp = f_prime(q, v, self.bumpy)
            assert np.all(np.abs(fp) <= r * (1 + 1e-12))
            h = times[1] - times[0]
            fd = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
            assert np.allclose(fd, fp[2:-2], rtol=0, atol=1e-6)

    def test_finite_differences_need_uniform_grid(self):
        traj = integrate(PhasePoint.from_arrays([0.5, 0.0, 0.0, 0.0], [0.2, 0.5, 0.7, 0.2]), 1.0, self.bumpy)
        with pytest.raises(PreconditionError):
            r_prime_finite_difference(traj, self.bumpy)


class TestSampleVeps:
    """Test the V_eps sampler"""

    def setup_method(self):
        self.spec = MetricSpec()

    def test_samples_lie_in_V_eps(self):
        eps = 0.05
        ens = sample_V_eps(eps, 300, seed=11, spec=self.spec)
        f, r = boundary_values(ens.q, ens.v, self.spec)
        assert len(ens) == 300
        assert np.all(f <= eps * (1 + 1e-12))
        assert np.all(r <= eps * eps * (1 + 1e-12))
        assert np.allclose(norm_squared(ens.q, ens.v, self.spec), 1.0)

    def test_same_seed_same_sample(self):
        a = sample_V_eps(0.1, 50, seed=4, spec=self.spec)
        b = sample_V_eps(0.1, 50, seed=4, spec=self.spec)
        assert np.array_equal(a.q, b.q)
        assert np.array_equal(a.v, b.v)


class TestDriftExperiment:
    """Test the drift power law"""

    def test_cubic_drift_with_perturbation(self):
        report = drift_experiment(MetricSpec(eta=0.3), seed=42, n_bins=6, n_per_bin=32)
        assert report.fit is not None
        assert report.fit.exponent == pytest.approx(3.0, abs=0.3)
        assert report.B > 0.0

    def test_product_model_is_degenerate(self):
        report = drift_experiment(MetricSpec(), seed=42, n_bins=4, n_per_bin=8)
        assert report.fit is None
        assert report.degenerate
        assert report.max_abs_r_prime < 1e-10
        assert report.max_abs_r_change < 1e-10

    def test_product_drift_reads_the_integrated_flow(self):
        with patch("wpflow.flow.integrator.geodesic_acceleration", new=lambda q, v, spec: np.zeros_like(v)):
            report = drift_experiment(MetricSpec(), seed=42, n_bins=4, n_per_bin=8)
        assert report.max_abs_r_change > 1e-6

    def test_unknown_method_raises(self):
        with pytest.raises(PreconditionError):
            drift_experiment(MetricSpec(eta=0.3), seed=1, method="spline")

    def test_range_outside_chart_raises(self):
        with pytest.raises(PreconditionError):
            drift_experiment(MetricSpec(eta=0.3), seed=1, f_range=(1e-3, 5.0))


class TestEscapeExperiment:
    """Test escape-time calibration"""

    def test_small_escape_run(self):
        report = escape_experiment(ESCAPE_EPS, 20, MetricSpec(), seed=3)
        assert len(report.rows) == 4
        assert report.c0 == pytest.approx(report.safety_factor * report.c0_raw)
        assert report.c0 > 0.0
        # radial escape from f = eps to f = 2 eps at speed 1/2 takes 2 eps / sqrt(2 pi^2)
        assert report.negative_control_ratio == pytest.approx(2.0 / SQRT_2PI2, rel=1e-6)
        for row in report.rows:
            assert row.min_T <= row.median_T

    def test_scale_too_large_raises(self):
        with pytest.raises(PreconditionError):
            escape_experiment([1.6, 0.8, 0.4, 0.2], 10, MetricSpec(), seed=3)

    def test_too_few_scales_raises(self):
        with pytest.raises(InsufficientDecadesError):
            escape_experiment([0.1, 0.05], 10, MetricSpec(), seed=3)

    def test_no_escape_raises(self):
        with pytest.raises(NoEscapeError):
            escape_experiment(ESCAPE_EPS, 10, MetricSpec(), seed=3, cap_factor=1e-6)


class TestGradientExpansion:
    """Test the structure of nabla lambda"""

    def test_constant_and_slope(self):
        report = gradient_expansion_check(MetricSpec(), seed=0, n=200)
        assert report.c_star == pytest.approx(3.0, rel=1e-9)
        assert report.max_orthogonal_component < 1e-10
        assert report.slope_fit.exponent == pytest.approx(1.0, abs=1e-6)
        assert report.reference_constant == pytest.approx(3.0 / (2.0 * math.pi))

    def test_requires_product_model(self):
        with pytest.raises(PreconditionError):
            gradient_expansion_check(MetricSpec(eta=0.2))
