"""
Unit tests for the model metric and its curvature
"""

import math

import numpy as np
import pytest

from wpflow.config.config_manager import MetricSpec
from wpflow.geometry.metric import (
    LAMBDA_NORM,
    SQRT_2PI2,
    apply_J,
    christoffel_at,
    grad_sqrt_length,
    metric_at,
    norm_squared,
    orthonormal_frame,
    sectional_curvature,
    sqrt_length,
    x_of_f,
)
from wpflow.geometry.survey import CUSP_CURVATURE_X2, christoffel_fd_error, curvature_survey
from wpflow.models.errors import DegeneratePlaneError, DomainError
from wpflow.models.points import ManifoldPoint, TangentVector


CUSP_PLANE = (TangentVector(1.0, 0.0, 0.0, 0.0), TangentVector(0.0, 1.0, 0.0, 0.0))
TORUS_PLANE = (TangentVector(0.0, 0.0, 1.0, 0.0), TangentVector(0.0, 0.0, 0.0, 1.0))


class TestMetric:
    """Test metric entries, lambda and J"""

    def setup_method(self):
        self.spec = MetricSpec()
        self.bumpy = MetricSpec(eta=0.3)

    def test_metric_is_diagonal_with_expected_entries(self):
        g = metric_at(ManifoldPoint(0.5, 0.1, 0.2, 0.3), self.spec)
        assert np.allclose(g, np.diag([4.0, 0.5 ** 6, 1.0, 1.0]))

    def test_perturbed_torus_block(self):
        p = ManifoldPoint(0.5, 0.0, 0.0, 0.0)
        g = metric_at(p, self.bumpy)
        assert g[2, 2] == pytest.approx(1.0 + 0.3 * 0.5 ** 4)
        assert g[3, 3] == pytest.approx(g[2, 2])

    def test_point_outside_chart_raises(self):
        with pytest.raises(DomainError):
            metric_at(ManifoldPoint(1.5, 0.0, 0.0, 0.0), self.spec)
        with pytest.raises(DomainError):
            christoffel_at(ManifoldPoint(0.0, 0.0, 0.0, 0.0), self.spec)

    def test_sqrt_length_and_inverse(self):
        q = np.array([0.25, 0.0, 0.0, 0.0])
        assert float(sqrt_length(q)) == pytest.approx(SQRT_2PI2 * 0.25)
        assert x_of_f(SQRT_2PI2 * 0.25) == pytest.approx(0.25)

    @pytest.mark.parametrize("x", [0.01, 0.1, 0.5, 1.0])
    def test_lambda_has_constant_norm(self, x):
        p = ManifoldPoint(x, 0.3, 0.4, 0.5)
        lam = grad_sqrt_length(p, self.spec)
        assert math.sqrt(float(norm_squared(p.as_array(), lam.as_array(), self.spec))) == pytest.approx(LAMBDA_NORM)

    def test_J_squares_to_minus_identity(self):
        p = ManifoldPoint(0.4, 0.0, 0.2, 0.7)
        v = TangentVector(0.3, -1.2, 0.5, 0.8)
        jj = apply_J(p, apply_J(p, v, self.bumpy), self.bumpy)
        assert np.allclose(jj.as_array(), -v.as_array())

    def test_orthonormal_frame(self):
        p = ManifoldPoint(0.3, 0.0, 0.6, 0.1)
        frame = np.array([e.as_array() for e in orthonormal_frame(p, self.bumpy)])
        gram = frame @ metric_at(p, self.bumpy) @ frame.T
        assert np.allclose(gram, np.eye(4))


class TestCurvature:
    """Test sectional curvature and Christoffel symbols"""

    def setup_method(self):
        self.spec = MetricSpec()

    @pytest.mark.parametrize("x", [0.05, 0.1, 0.3, 0.8, 1.0])
    def test_cusp_curvature_law(self, x):
        k = sectional_curvature(ManifoldPoint(x, 0.0, 0.0, 0.0), CUSP_PLANE, self.spec)
        assert k * x * x == pytest.approx(CUSP_CURVATURE_X2, rel=1e-9)

    def test_flat_torus_plane(self):
        k = sectional_curvature(ManifoldPoint(0.5, 0.0, 0.0, 0.0), TORUS_PLANE, self.spec)
        assert k == pytest.approx(0.0, abs=1e-12)

    def test_parallel_vectors_raise(self):
        u = TangentVector(1.0, 2.0, 0.0, 0.0)
        with pytest.raises(DegeneratePlaneError):
            sectional_curvature(ManifoldPoint(0.5, 0.0, 0.0, 0.0), (u, u.scaled(3.0)), self.spec)

    @pytest.mark.parametrize("eta", [0.0, 0.3])
    def test_christoffel_matches_finite_differences(self, eta):
        rng = np.random.default_rng(0)
        q = np.column_stack([rng.uniform(0.05, 1.0, 50), rng.random(50), rng.random(50), rng.random(50)])
        assert christoffel_fd_error(q, MetricSpec(eta=eta)) < 1e-6

    def test_survey_passes_for_product_model(self):
        report = curvature_survey(self.spec, [0.1, 0.5, 1.0], planes_per_depth=20, seed=1)
        assert report.passed
        assert len(report.rows) == 3
        for row in report.rows:
            assert row.cusp_times_x2 == pytest.approx(CUSP_CURVATURE_X2, rel=1e-6)
            assert row.torus == pytest.approx(0.0, abs=1e-12)

    def test_survey_is_deterministic(self):
        a = curvature_survey(self.spec, [0.2, 0.4], planes_per_depth=10, seed=7)
        b = curvature_survey(self.spec, [0.2, 0.4], planes_per_depth=10, seed=7)
        assert a.model_dump() == b.model_dump()


class TestMetricSpec:
    """Test MetricSpec validation"""

    def test_floor_must_be_below_wall(self):
        with pytest.raises(ValueError):
            MetricSpec(x_floor=2.0, x_max=1.0)

    def test_perturbation_must_keep_metric_positive(self):
        with pytest.raises(ValueError):
            MetricSpec(eta=0.9, x_max=1.2)

    def test_config_block_round_trip(self):
        spec = MetricSpec(eta=0.25, torus_sides=(1.0, 2.0))
        assert MetricSpec.from_config_block(spec.to_config_block()) == spec
