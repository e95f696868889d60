"""
Unit tests for bump observables, C^k norms and the correlation estimators
"""

import math

import numpy as np
import pytest

from wpflow.boundary.quantities import boundary_values, sample_V_eps
from wpflow.config.config_manager import MetricSpec
from wpflow.correlations.estimators import (
    certificate_window,
    correlation,
    gamma_upper_bound,
    integrate_observable,
    nonmixing_certificate,
)
from wpflow.correlations.observables import (
    DEFAULT_PLATEAU,
    build_a,
    build_b,
    bump,
    constant_observable,
    estimate_ck_norm,
)
from wpflow.measure.sampling import RegionSpec, liouville_sample, sample_fibers
from wpflow.models.errors import PreconditionError, RegionOverlapError, StepResolutionError
from wpflow.models.points import PhasePoint

CENTER = (0.75, 0.5, 0.5, 0.5)
EPS_LIST = [0.1, 0.05, 0.025, 0.0125]


class TestBump:
    """Test the smooth profile"""

    def test_values(self):
        assert float(bump(0.0)) == 1.0
        assert float(bump(0.5)) == pytest.approx(math.exp(-1.0 / 3.0))
        assert float(bump(1.0)) == 0.0
        assert float(bump(-2.0)) == 0.0

    def test_range(self):
        s = np.linspace(-1.5, 1.5, 1001)
        values = bump(s)
        assert np.all(values >= 0.0)
        assert np.all(values <= 1.0)


class TestObservables:
    """Test a and b_eps"""

    def setup_method(self):
        self.spec = MetricSpec()
        self.ball = RegionSpec.ball(CENTER, 0.2)

    def test_a_is_one_on_plateau_and_zero_outside(self):
        a = build_a(self.ball, self.spec)
        fiber = [0.0, 0.0, 1.0, 0.0]
        assert a(PhasePoint.from_arrays(CENTER, fiber), self.spec) == 1.0
        inside = (0.75, 0.5, 0.5 + 0.9 * DEFAULT_PLATEAU * 0.2, 0.5)
        assert a(PhasePoint.from_arrays(inside, fiber), self.spec) == 1.0
        outside = (0.75, 0.5, 0.5 + 0.21, 0.5)
        assert a(PhasePoint.from_arrays(outside, fiber), self.spec) == 0.0

    def test_a_is_constant_on_fibers(self):
        a = build_a(self.ball, self.spec)
        q = np.tile([0.75, 0.5, 0.5 + 0.18, 0.5], (50, 1))
        v = sample_fibers(q, self.spec, np.random.default_rng(0))
        values = a.evaluate(q, v, self.spec)
        assert np.ptp(values) == 0.0
        assert 0.0 < values[0] < 1.0

    def test_a_requires_ball(self):
        with pytest.raises(PreconditionError):
            build_a(RegionSpec.e_rho(0.2), self.spec)

    def test_a_must_clear_boundary_sets(self):
        with pytest.raises(RegionOverlapError):
            build_a(self.ball, self.spec, eps_max=1.5)

    def test_b_vanishes_outside_V_eps(self):
        eps = 0.05
        b = build_b(eps, self.spec)
        ens = liouville_sample(RegionSpec.e_rho(0.5), 2000, self.spec, seed=3)
        f, r = boundary_values(ens.q, ens.v, self.spec)
        values = b.evaluate(ens.q, ens.v, self.spec)
        outside = (f >= eps) | (r >= eps * eps)
        assert np.all(values[outside] == 0.0)
        assert np.all((values >= 0.0) & (values <= 1.0))

    def test_b_is_positive_inside_V_eps(self):
        eps = 0.05
        ens = sample_V_eps(eps, 200, seed=8, spec=self.spec)
        values = build_b(eps, self.spec).evaluate(ens.q, ens.v, self.spec)
        assert np.all(values[values > 0] <= 1.0)
        assert np.mean(values > 0) > 0.95

    def test_constant(self):
        c = constant_observable(0.5)
        assert c(PhasePoint.from_arrays(CENTER, [0.5, 0.0, 0.0, 0.0]), self.spec) == 0.5
        assert c.support is None


class TestCkNorm:
    """Test the sampled C^k norm"""

    def setup_method(self):
        self.spec = MetricSpec()

    def test_constant_norm_is_level(self):
        assert estimate_ck_norm(constant_observable(0.3), 2, self.spec, seed=1) == 0.3

    def test_order_out_of_range_raises(self):
        with pytest.raises(PreconditionError):
            estimate_ck_norm(build_b(0.1, self.spec), 0, self.spec, seed=1)
        with pytest.raises(PreconditionError):
            estimate_ck_norm(build_b(0.1, self.spec), 4, self.spec, seed=1)

    def test_a_norm_at_least_sup(self):
        a = build_a(RegionSpec.ball(CENTER, 0.2), self.spec)
        assert estimate_ck_norm(a, 1, self.spec, seed=1) >= 1.0

    def test_b_norm_grows_like_inverse_eps_squared(self):
        n1 = estimate_ck_norm(build_b(0.05, self.spec), 1, self.spec, seed=1)
        n2 = estimate_ck_norm(build_b(0.025, self.spec), 1, self.spec, seed=1)
        assert 3.5 < n2 / n1 < 4.5

    def test_norm_is_deterministic(self):
        b = build_b(0.05, self.spec)
        assert estimate_ck_norm(b, 2, self.spec, seed=4) == estimate_ck_norm(b, 2, self.spec, seed=4)

    def test_unresolvable_step_raises(self):
        with pytest.raises(StepResolutionError):
            estimate_ck_norm(build_b(0.05, self.spec), 1, self.spec, seed=1, step=1e-14)


class TestCorrelation:
    """Test the correlation estimator"""

    def setup_method(self):
        self.spec = MetricSpec()
        self.a = build_a(RegionSpec.ball(CENTER, 0.2), self.spec, eps_max=0.1)
        self.b = build_b(0.05, self.spec)

    def test_a_covers_most_of_U(self):
        _, _, mean = integrate_observable(self.a, 4000, self.spec, seed=2)
        assert mean >= 0.5

    def test_constant_integral(self):
        assert integrate_observable(constant_observable(0.4), 10, self.spec, seed=1) == (0.4, 0.0, 0.4)

    def test_constant_partner_gives_zero(self):
        est = correlation(self.a, constant_observable(1.0), 0.0, 2000, self.spec, seed=3)
        assert est.value == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_supports_give_product(self):
        est = correlation(self.a, self.b, 0.0, 2000, self.spec, seed=3)
        assert est.integral_ab == 0.0
        assert est.value == pytest.approx(est.integral_a * est.integral_b)

    def test_direct_and_pullback_agree(self):
        direct = correlation(self.a, self.a, 1.0, 2000, self.spec, seed=5, strategy="direct")
        pullback = correlation(self.a, self.a, 1.0, 2000, self.spec, seed=5, strategy="pullback")
        assert direct.n_failed == 0
        assert abs(direct.value - pullback.value) <= 5.0 * math.hypot(direct.stderr, pullback.stderr)

    def test_negative_time_raises(self):
        with pytest.raises(PreconditionError):
            correlation(self.a, self.b, -1.0, 100, self.spec, seed=1)


class TestCertificate:
    """Test the non-mixing certificate and the gamma bound"""

    def setup_method(self):
        self.spec = MetricSpec()
        self.a = build_a(RegionSpec.ball(CENTER, 0.2), self.spec, eps_max=max(EPS_LIST))

    def test_window(self):
        assert certificate_window(0.1, 2.0) == pytest.approx(5.0)
        assert certificate_window(0.1, 2.0, window_multiplier=3.0) == pytest.approx(15.0)

    @pytest.mark.parametrize("direction", ["backward", "forward"])
    def test_certificate_passes_in_window(self, direction):
        report = nonmixing_certificate(self.a, 0.05, 200, self.spec, seed=1, c0=1.0, direction=direction)
        assert report.status == "pass"
        assert report.violations == 0
        assert report.T == pytest.approx(20.0)

    def test_certificate_needs_scale_below_ball(self):
        with pytest.raises(PreconditionError):
            nonmixing_certificate(self.a, 1.5, 10, self.spec, seed=1, c0=1.0)

    def test_gamma_bound_k1(self):
        report = gamma_upper_bound(self.a, EPS_LIST, 1, 2000, self.spec, seed=42, c0=1.0, certificate_n=50)
        assert report.status == "bounded"
        assert report.gamma_max == pytest.approx(10.0, abs=0.5)
        assert report.ci_low <= report.gamma_max <= report.ci_high
        assert report.fit_T.exponent == pytest.approx(-1.0, abs=1e-9)
        assert all(row.certificate_status == "pass" for row in report.rows)

    def test_fixed_bump_control(self):
        report = gamma_upper_bound(
            self.a, EPS_LIST, 1, 2000, self.spec, seed=42, c0=1.0, certificate_n=20, control=True
        )
        assert report.status == "no obstruction at this scale"
        assert math.isinf(report.gamma_max)

    def test_window_below_one_raises(self):
        with pytest.raises(PreconditionError):
            gamma_upper_bound(self.a, EPS_LIST, 1, 200, self.spec, seed=1, c0=100.0, certificate_n=10)
