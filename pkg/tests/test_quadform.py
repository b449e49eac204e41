import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chanceplan.ellipsoids import Ellipsoid, GaussianState
from chanceplan.errors import NotPositiveDefiniteError
from chanceplan.quadform import (
    QuadFormProblem,
    SeriesResult,
    cdf_quadform,
    collision_prob_exact,
)

CHI2_1_AT_1 = math.erf(1.0 / math.sqrt(2.0))  # 0.6826894921370859
CHI2_3_AT_1 = math.erf(1.0 / math.sqrt(2.0)) - math.sqrt(2.0 / math.pi) * math.exp(-0.5)


def chi2_2_cdf(q):
    return 1.0 - math.exp(-0.5 * q)


class TestChiSquaredAgreement:
    def test_one_dof(self):
        r = cdf_quadform(QuadFormProblem(np.eye(1), np.zeros(1), np.eye(1), 1.0))
        assert abs(r.value - CHI2_1_AT_1) < 1e-8

    def test_three_dof(self):
        r = cdf_quadform(QuadFormProblem(np.eye(3), np.zeros(3), np.eye(3), 1.0))
        assert abs(r.value - CHI2_3_AT_1) < 1e-8

    @pytest.mark.parametrize("q", [0.25, 1.0, 2.5, 7.0])
    def test_two_dof_arbitrary_threshold(self, q):
        r = cdf_quadform(QuadFormProblem(np.eye(2), np.zeros(2), np.eye(2), q))
        assert abs(r.value - chi2_2_cdf(q)) < 1e-8

    def test_scaled_central_case(self):
        # lambda = 0.1 each: P(v <= 1) = P(chi2_3 <= 10)
        r = cdf_quadform(QuadFormProblem(0.1 * np.eye(3), np.zeros(3), np.eye(3), 1.0))
        expect = math.erf(math.sqrt(5.0)) - math.sqrt(2.0 / math.pi) * math.sqrt(10) * math.exp(-5.0)
        assert abs(r.value - expect) < 1e-8


class TestMonteCarloOracle:
    # frozen from collision_prob_mc(seed=20250811, 10^7 samples) on the same
    # instance: 0.6981738 +- 0.0004355
    MC_VALUE = 0.6981738
    MC_HALF_WIDTH = 0.0004355

    def test_derived_instance_within_mc_bracket(self):
        p = QuadFormProblem(
            np.diag([1.0, 0.25, 1.0 / 9.0]),
            np.array([0.5, -0.3, 0.2]),
            np.diag([0.5, 0.3, 0.4]),
            1.0,
        )
        r = cdf_quadform(p)
        assert abs(r.value - self.MC_VALUE) < self.MC_HALF_WIDTH


class TestCollisionProbExact:
    def test_far_separation(self):
        v = collision_prob_exact(
            GaussianState([1000.0, 0.0, 0.0], np.eye(3)), Ellipsoid(np.eye(3))
        )
        assert v < 1e-12

    def test_concentrated_inside(self):
        v = collision_prob_exact(
            GaussianState(np.zeros(3), 1e-6 * np.eye(3)), Ellipsoid(np.eye(3))
        )
        assert v > 1.0 - 1e-9

    def test_2d_cross_estimator_agreement(self):
        # indicator quadrature on circular regions carries a staircase error
        # of a few 1e-3 at n=200; the binding cross-check tolerance is 1e-2
        from chanceplan.quadrature import collision_prob_gh

        rel = GaussianState([1.0, 0.0], 0.25 * np.eye(2))
        qc = Ellipsoid(0.25 * np.eye(2))
        exact = collision_prob_exact(rel, qc)
        gh = collision_prob_gh(rel, qc, 200)
        assert abs(exact - gh) <= 1e-2

    def test_non_pd_rejected(self):
        with pytest.raises(NotPositiveDefiniteError):
            QuadFormProblem(np.eye(2), np.zeros(2), np.diag([1.0, 0.0]), 1.0)


class TestSeriesBehavior:
    def test_result_clamped_and_bookkeeping(self):
        r = cdf_quadform(QuadFormProblem(np.eye(3), np.zeros(3), np.eye(3), 1.0))
        assert 0.0 <= r.value <= 1.0
        assert r.terms_used > 0
        assert r.truncation_bound >= 0.0

    def test_ill_conditioned_spread_still_accurate(self):
        # small eigenvalue forces the multiprecision pass; referee is a
        # frozen Philox Monte Carlo run (2e6 samples, seed 5):
        # value 0.0417315 +- 0.0004242
        p = QuadFormProblem(
            np.diag([100.0, 1.0, 0.25]),
            np.array([0.3, 0.5, -0.2]),
            np.diag([2.0, 0.02, 0.5]),
            1.0,
        )
        r = cdf_quadform(p)
        assert abs(r.value - 0.0417315) < 0.0004242

    def test_invalid_tolerance(self):
        with pytest.raises(ValueError):
            cdf_quadform(QuadFormProblem(np.eye(2), np.zeros(2), np.eye(2), 1.0), tol=0.0)

    def test_series_result_validates(self):
        with pytest.raises(ValueError):
            SeriesResult(value=1.5, terms_used=3, truncation_bound=0.0)
        with pytest.raises(ValueError):
            SeriesResult(value=0.5, terms_used=3, truncation_bound=-1.0)


@settings(max_examples=40, deadline=None, derandomize=True)
@given(st.integers(min_value=0, max_value=10_000), st.floats(min_value=1.0, max_value=5.0))
def test_monotone_decay_in_mean_scaling(seed, t):
    rng = np.random.default_rng(seed)
    mean = rng.uniform(-2.0, 2.0, 3)
    cov = np.diag(rng.uniform(0.1, 2.0, 3))
    qc = Ellipsoid(np.diag(rng.uniform(0.3, 2.0, 3) ** 2))
    base = collision_prob_exact(GaussianState(mean, cov), qc)
    scaled = collision_prob_exact(GaussianState(t * mean, cov), qc)
    assert scaled <= base + 1e-9
