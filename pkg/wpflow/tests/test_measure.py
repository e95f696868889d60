"""
Unit tests for Liouville sampling, volumes and power-law fits
"""

import math

import numpy as np
import pytest

from wpflow.config.config_manager import MetricSpec
from wpflow.geometry.metric import LAMBDA_NORM, norm_squared, x_of_f
from wpflow.measure.fitting import check_family, power_law_fit
from wpflow.measure.sampling import (
    RegionSpec,
    ball_distance,
    contains,
    fiber_fraction,
    liouville_sample,
    total_liouville_mass,
    validate_region,
)
from wpflow.measure.volumes import estimate_volume, exact_volume, minkowski_codimension, volume_scaling
from wpflow.models.errors import InsufficientDecadesError, NonPositiveValueError, PreconditionError

RHO_LIST = [0.4, 0.2, 0.1, 0.05, 0.025, 0.0125]
V_EPS_LIST = [0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625]


class TestRegions:
    """Test region construction and membership"""

    def setup_method(self):
        self.spec = MetricSpec()

    def test_fiber_fraction(self):
        eps = 0.1
        assert fiber_fraction(eps) == pytest.approx((eps ** 2 / LAMBDA_NORM) ** 2)
        assert fiber_fraction(10.0) == 1.0

    def test_total_mass(self):
        assert total_liouville_mass(self.spec) == pytest.approx(math.pi ** 2)

    def test_ball_membership(self):
        ball = RegionSpec.ball((0.75, 0.5, 0.5, 0.5), 0.2)
        q = np.array([[0.75, 0.5, 0.5, 0.5], [0.75, 0.5, 0.5 + 0.19, 0.5], [0.75, 0.5, 0.5 + 0.21, 0.5]])
        v = np.zeros_like(q)
        assert contains(ball, q, v, self.spec).tolist() == [True, True, False]

    def test_ball_distance_is_periodic(self):
        q = np.array([[0.75, 0.5, 0.95, 0.5]])
        d = ball_distance((0.75, 0.5, 0.05, 0.5), q, self.spec)
        assert float(d[0]) == pytest.approx(0.1)

    def test_ball_outside_chart_raises(self):
        with pytest.raises(PreconditionError):
            validate_region(RegionSpec.ball((0.95, 0.5, 0.5, 0.5), 0.2), self.spec)

    def test_tube_bounds_checked(self):
        with pytest.raises(PreconditionError):
            validate_region(RegionSpec.tube(0.5, 0.2), self.spec)

    def test_scale_below_floor_raises(self):
        with pytest.raises(PreconditionError):
            validate_region(RegionSpec.e_rho(1e-7), self.spec)


class TestLiouvilleSample:
    """Test the rejection sampler"""

    def setup_method(self):
        self.spec = MetricSpec(eta=0.3)

    def test_samples_are_unit_speed_and_inside(self):
        region = RegionSpec.v_eps(0.1)
        ens = liouville_sample(region, 500, self.spec, seed=9)
        assert len(ens) == 500
        assert np.all(contains(region, ens.q, ens.v, self.spec))
        assert np.allclose(norm_squared(ens.q, ens.v, self.spec), 1.0)

    def test_depth_follows_base_density(self):
        rho = 0.4
        ens = liouville_sample(RegionSpec.e_rho(rho), 20_000, MetricSpec(), seed=2)
        x_rho = x_of_f(rho)
        # density 4 x^3 / x_rho^4 on [0, x_rho]
        assert float(ens.q[:, 0].mean()) == pytest.approx(0.8 * x_rho, rel=0.01)

    def test_deterministic_for_seed(self):
        region = RegionSpec.e_rho(0.3)
        a = liouville_sample(region, 300, self.spec, seed=1, chunk_size=100)
        b = liouville_sample(region, 300, self.spec, seed=1, chunk_size=100)
        c = liouville_sample(region, 300, self.spec, seed=2, chunk_size=100)
        assert np.array_equal(a.q, b.q)
        assert not np.array_equal(a.q, c.q)

    def test_independent_of_worker_count(self):
        region = RegionSpec.e_rho(0.3)
        serial = liouville_sample(region, 400, self.spec, seed=5, chunk_size=100, workers=1)
        pooled = liouville_sample(region, 400, self.spec, seed=5, chunk_size=100, workers=2)
        assert np.array_equal(serial.q, pooled.q)
        assert np.array_equal(serial.v, pooled.v)

    def test_zero_samples(self):
        assert len(liouville_sample(RegionSpec.e_rho(0.3), 0, self.spec, seed=1)) == 0


class TestVolumes:
    """Test volume estimates against closed forms"""

    def setup_method(self):
        self.spec = MetricSpec()

    @pytest.mark.parametrize("region", [RegionSpec.e_rho(0.3), RegionSpec.v_eps(0.2), RegionSpec.tube(0.2, 0.8)])
    def test_estimate_matches_closed_form(self, region):
        estimate, stderr = estimate_volume(region, 40_000, MetricSpec(eta=0.3), seed=4)
        exact = exact_volume(region, self.spec)
        assert stderr > 0.0
        assert abs(estimate - exact) <= 4.0 * stderr

    def test_whole_chart_has_unit_volume(self):
        assert exact_volume(RegionSpec.tube(0.0, 1.0), self.spec) == pytest.approx(1.0)

    def test_ball_has_no_closed_form(self):
        assert exact_volume(RegionSpec.ball((0.75, 0.5, 0.5, 0.5), 0.2), self.spec) is None

    def test_E_rho_scaling(self):
        report = volume_scaling(RegionSpec.e_rho, RHO_LIST, 20_000, self.spec, seed=3, kind="E_rho")
        assert report.fit.exponent == pytest.approx(4.0, abs=0.1)
        assert all(row.fit_value is not None for row in report.rows)

    def test_V_eps_scaling(self):
        report = volume_scaling(RegionSpec.v_eps, V_EPS_LIST, 20_000, self.spec, seed=3)
        assert report.fit.exponent == pytest.approx(8.0, abs=0.2)

    def test_codimension(self):
        report = minkowski_codimension(RHO_LIST, 20_000, self.spec, seed=6)
        assert report.codimension == pytest.approx(4.0, abs=0.1)
        assert report.exceeds_two

    def test_uniform_density_is_not_polar(self):
        report = minkowski_codimension(RHO_LIST, 20_000, self.spec, seed=6, density_exponent=0.0)
        assert report.codimension == pytest.approx(1.0, abs=0.1)
        assert not report.exceeds_two

    def test_family_too_narrow_raises(self):
        with pytest.raises(InsufficientDecadesError):
            volume_scaling(RegionSpec.e_rho, [0.4, 0.35, 0.3, 0.25], 1000, self.spec, seed=1)
        with pytest.raises(InsufficientDecadesError):
            volume_scaling(RegionSpec.e_rho, [0.4, 0.2, 0.1, 0.05], 1000, self.spec, seed=1)


class TestPowerLawFit:
    """Test the log-log fit"""

    def test_exact_data(self):
        points = [(p, 3.0 * p ** 4, 0.0) for p in [0.4, 0.2, 0.1, 0.05]]
        fit = power_law_fit(points, seed=1)
        assert fit.exponent == pytest.approx(4.0, abs=1e-9)
        assert math.exp(fit.intercept) == pytest.approx(3.0, rel=1e-9)
        assert fit.ci_low <= fit.exponent <= fit.ci_high
        assert fit.predict(0.3) == pytest.approx(3.0 * 0.3 ** 4, rel=1e-9)

    def test_noisy_data_ci_contains_estimate(self):
        rng = np.random.default_rng(0)
        params = np.geomspace(0.01, 1.0, 8)
        points = [(p, 2.0 * p ** -1 * math.exp(rng.normal(0, 0.05)), 0.05 * 2.0 / p) for p in params]
        fit = power_law_fit(points, seed=2)
        assert fit.ci_low <= fit.exponent <= fit.ci_high
        assert fit.exponent == pytest.approx(-1.0, abs=0.1)

    def test_bootstrap_is_seeded(self):
        points = [(p, p ** 2 * (1 + 0.01 * i), 0.0) for i, p in enumerate([0.4, 0.2, 0.1, 0.05, 0.025])]
        assert power_law_fit(points, seed=7) == power_law_fit(points, seed=7)

    def test_nonpositive_value_raises(self):
        with pytest.raises(NonPositiveValueError):
            power_law_fit([(0.1, 1.0, 0.0), (0.2, 0.0, 0.0), (0.3, 1.0, 0.0), (0.4, 1.0, 0.0)])

    def test_too_few_points_raises(self):
        with pytest.raises(InsufficientDecadesError):
            power_law_fit([(0.1, 1.0, 0.0), (1.0, 2.0, 0.0)])

    def test_check_family(self):
        check_family(RHO_LIST)
        check_family([0.4, 0.2, 0.1, 0.05], min_decades=0.9)
        with pytest.raises(InsufficientDecadesError):
            check_family([0.4, 0.2, 0.1, 0.05])
        with pytest.raises(InsufficientDecadesError):
            check_family([0.4, 0.2, 0.1])
        with pytest.raises(NonPositiveValueError):
            check_family([0.4, 0.2, 0.1, -0.05])
