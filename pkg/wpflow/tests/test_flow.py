"""
Unit tests for the geodesic integrator, the cusp oracle and escape times
"""

import math
from unittest.mock import patch

import numpy as np
import pytest

from wpflow.config.config_manager import IntegratorConfig, MetricSpec
from wpflow.flow.escape import escape_threshold_x, escape_time, escape_times
from wpflow.flow.fidelity import cusp_initial_conditions, geodesic_fidelity
from wpflow.flow.integrator import GeodesicIntegrator, integrate, integrate_ensemble
from wpflow.flow.oracle import cusp_geodesic_oracle
from wpflow.geometry.metric import norm_squared
from wpflow.models.errors import PreconditionError
from wpflow.models.points import PhaseEnsemble, PhasePoint, reduce_periodic


def unit_cusp_state(x0: float, angle: float) -> PhasePoint:
    return PhasePoint.from_arrays([x0, 0.0, 0.3, 0.6], [math.cos(angle) / 2.0, math.sin(angle) / x0 ** 3, 0.0, 0.0])


class TestIntegrator:
    """Test the ensemble integrator on motions with known answers"""

    def setup_method(self):
        self.spec = MetricSpec()
        self.opts = IntegratorConfig()

    def test_radial_motion_is_linear(self):
        start = PhasePoint.from_arrays([0.5, 0.0, 0.0, 0.0], [0.1, 0.0, 0.0, 0.0])
        traj = integrate(start, 2.0, self.spec, self.opts)
        assert traj.status == "horizon"
        assert traj.final().point.x == pytest.approx(0.7, abs=1e-10)
        assert traj.valid

    def test_torus_motion_keeps_depth(self):
        start = PhasePoint.from_arrays([0.4, 0.0, 0.1, 0.2], [0.0, 0.0, 1.0, 0.5])
        traj = integrate(start, 3.0, self.spec, self.opts)
        end = traj.final()
        assert end.point.x == pytest.approx(0.4, abs=1e-12)
        assert end.point.y1 == pytest.approx(0.1, abs=1e-9)
        assert end.point.y2 == pytest.approx(0.7, abs=1e-9)
        assert np.all((traj.q[:, 2:] >= 0.0) & (traj.q[:, 2:] < 1.0))

    def test_wall_reflection(self):
        start = PhasePoint.from_arrays([0.9, 0.0, 0.0, 0.0], [0.1, 0.0, 0.0, 0.0])
        traj = integrate(start, 2.0, self.spec, self.opts)
        end = traj.final()
        assert end.point.x == pytest.approx(0.9, abs=1e-8)
        assert end.velocity.vx == pytest.approx(-0.1, abs=1e-10)
        kinds = [kind for _, kind in traj.events]
        assert "wall_reflection" in kinds

    def test_boundary_hit_is_terminal(self):
        start = PhasePoint.from_arrays([0.01, 0.0, 0.0, 0.0], [-0.5, 0.0, 0.0, 0.0])
        traj = integrate(start, 1.0, self.spec, self.opts)
        assert traj.status == "boundary_hit"
        assert not traj.valid
        assert traj.t[-1] < 1.0

    def test_energy_and_clairaut_conserved(self):
        start = unit_cusp_state(0.6, 1.1)
        traj = integrate(start, 5.0, self.spec, self.opts)
        energy = norm_squared(traj.q, traj.v, self.spec)
        p = traj.q[:, 0] ** 6 * traj.v[:, 1]
        assert np.max(np.abs(energy - 1.0)) < 1e-8
        assert np.max(np.abs(p - p[0])) < 1e-8

    def test_output_times_are_hit(self):
        times = np.linspace(0.0, 2.0, 21)
        traj = integrate(unit_cusp_state(0.5, 0.4), 2.0, self.spec, self.opts, t_eval=times)
        for tk in times[1:]:
            assert np.any(np.isclose(traj.t, tk, rtol=0, atol=1e-12))

    def test_time_reversal(self):
        integrator = GeodesicIntegrator(MetricSpec(eta=0.3), self.opts)
        rng = np.random.default_rng(3)
        q0 = np.column_stack([rng.uniform(0.4, 0.7, 5), rng.random(5), rng.random(5), rng.random(5)])
        v0 = rng.standard_normal((5, 4)) * 0.1
        forward = integrator.run(q0, v0, 1.0)
        back = integrator.run(forward.q, -forward.v, 1.0)
        dq = back.q - q0
        dq[:, 1:] -= np.round(dq[:, 1:])
        assert np.allclose(dq, 0.0, atol=1e-7)
        assert np.allclose(back.v, -v0, atol=1e-7)

    def test_reduce_periodic_keeps_depth(self):
        q = np.array([[0.3, -0.25, 2.5, -1.0], [0.7, 1.0, 0.2, 3.75]])
        out = reduce_periodic(q, 1.0, (2.0, 1.5))
        assert np.allclose(out, [[0.3, 0.75, 0.5, 0.5], [0.7, 0.0, 0.2, 0.75]])
        assert q[0, 1] == -0.25

    def test_nonpositive_horizon_raises(self):
        with pytest.raises(PreconditionError):
            integrate(unit_cusp_state(0.5, 0.0), 0.0, self.spec, self.opts)

    def test_empty_ensemble(self):
        result = integrate_ensemble(PhaseEnsemble(np.empty((0, 4)), np.empty((0, 4))), 1.0, self.spec)
        assert len(result) == 0


class TestOracle:
    """Test the quadrature oracle against the integrator"""

    def setup_method(self):
        self.spec = MetricSpec()

    @pytest.mark.parametrize("angle", [0.3, 2.0, 3.5])
    def test_oracle_matches_integrator(self, angle):
        start = unit_cusp_state(0.6, angle)
        times = np.linspace(0.0, 3.0, 31)
        exact = cusp_geodesic_oracle(start, 3.0, self.spec, times=times)
        numeric = integrate(start, 3.0, self.spec, IntegratorConfig(), t_eval=times)
        for tk, qk in zip(exact.t, exact.q):
            i = int(np.argmin(np.abs(numeric.t - tk)))
            assert numeric.t[i] == pytest.approx(tk, abs=1e-12)
            assert numeric.q[i, 0] == pytest.approx(qk[0], abs=1e-6)

    def test_oracle_requires_product_model(self):
        with pytest.raises(PreconditionError):
            cusp_geodesic_oracle(unit_cusp_state(0.5, 0.0), 1.0, MetricSpec(eta=0.1))

    def test_oracle_requires_cusp_plane_velocity(self):
        start = PhasePoint.from_arrays([0.5, 0.0, 0.0, 0.0], [0.1, 0.0, 0.5, 0.0])
        with pytest.raises(PreconditionError):
            cusp_geodesic_oracle(start, 1.0, self.spec)


class TestEscape:
    """Test escape times from V_eps"""

    def setup_method(self):
        self.spec = MetricSpec()
        self.eps = 0.05

    def test_slow_radial_escape(self):
        vx = 5e-4
        start = PhasePoint.from_arrays([0.01, 0.0, 0.0, 0.0], [vx, 0.0, math.sqrt(1.0 - 4.0 * vx * vx), 0.0])
        result = escape_time(start, self.eps, self.spec)
        expected = (escape_threshold_x(self.eps) - 0.01) / vx
        assert result.time == pytest.approx(expected, rel=1e-8)
        assert not result.censored
        assert result.status == "threshold_cross"

    def test_torus_motion_never_escapes(self):
        start = PhasePoint.from_arrays([0.01, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0])
        result = escape_time(start, self.eps, self.spec, cap_factor=2.0)
        assert result.censored
        assert result.time == pytest.approx(2.0 / self.eps)

    def test_start_outside_V_eps_raises(self):
        start = PhasePoint.from_arrays([0.2, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0])
        with pytest.raises(PreconditionError):
            escape_time(start, self.eps, self.spec)

    def test_eps_too_large_raises(self):
        ens = PhaseEnsemble(np.array([[0.01, 0.0, 0.0, 0.0]]), np.array([[0.0, 0.0, 1.0, 0.0]]))
        with pytest.raises(PreconditionError):
            escape_times(ens, 0.3, self.spec)


class TestFidelity:
    """Test the fidelity report"""

    def test_initial_conditions_are_unit_speed(self):
        states = cusp_initial_conditions(20, (0.3, 0.9), np.random.default_rng(0))
        speeds = norm_squared(states[:, 0], states[:, 1], MetricSpec())
        assert np.allclose(speeds, 1.0)

    def test_small_fidelity_run_passes(self):
        report = geodesic_fidelity(
            MetricSpec(eta=0.3), seed=5, n_trajectories=4, horizon=2.0,
            energy_trajectories=20, energy_horizon=2.0,
        )
        assert report.passed
        assert report.max_reversibility_error < 1e-6
        assert set(report.energy_drift_by_eta) == {"0", "0.3"}
        assert report.n_oracle_checked >= 1

    def test_failed_reversal_fails_report(self):
        with patch("wpflow.flow.fidelity._reversal_error", return_value=(math.inf, 20)):
            report = geodesic_fidelity(
                MetricSpec(eta=0.3), seed=5, n_trajectories=2, horizon=1.0,
                energy_trajectories=10, energy_horizon=1.0,
            )
        assert not report.passed
        assert math.isinf(report.max_reversibility_error)
        assert report.n_invalid >= 20

    def test_oracle_without_common_times_fails_report(self):
        def shifted(v0, horizon, spec, times=None):
            half = 0.5 * (times[1] - times[0])
            return cusp_geodesic_oracle(v0, horizon, spec, times=times[:-1] + half)

        with patch("wpflow.flow.fidelity.cusp_geodesic_oracle", side_effect=shifted):
            report = geodesic_fidelity(
                MetricSpec(eta=0.3), seed=5, n_trajectories=2, horizon=1.0,
                energy_trajectories=10, energy_horizon=1.0,
            )
        assert not report.passed
        assert report.n_oracle_checked == 0
