"""Measure kernels, oracle predictors, pseudo-outcomes, small learners."""

import itertools

import numpy as np
import pytest

from survim.data import Dataset, TimeGrid
from survim.errors import ContractError, RedirectError, SingularityError
from survim.measures import (
    BasisSpec,
    MeasureSpec,
    PredictionFunction,
    RegressionLearnerSpec,
    fit_regression,
    kernel_omega,
    kernel_theta,
    oracle_prediction,
    pseudo_outcome,
    pseudo_outcomes,
    residual_oracle,
    v_statistic_plugin,
    validate_feature_set,
)
from survim.nuisance import SurvivalCurveSet


def curves_from_survival(surv, grid, censor=None):
    surv = np.asarray(surv, dtype=float)
    if censor is None:
        censor = np.ones_like(surv)
    prev = np.hstack([np.ones((surv.shape[0], 1)), surv[:, :-1]])
    dlam = (prev - surv) / prev
    return SurvivalCurveSet(grid=grid, event_cdf=1.0 - surv, censor_surv=censor,
                            event_cumhaz=np.cumsum(dlam, axis=1))


class TestMeasureSpec:
    @pytest.mark.parametrize("kind,m", [("auc", 2), ("cindex", 2),
                                        ("brier", 1), ("survival-mse", 1)])
    def test_degree(self, kind, m):
        assert MeasureSpec(kind, 0.5).m == m

    def test_orientation_flags(self):
        assert MeasureSpec("auc", 1.0).sign == 1.0
        assert MeasureSpec("brier", 1.0).sign == -1.0
        assert MeasureSpec("survival-mse", 1.0).sign == -1.0

    def test_bad_kind_and_tau(self):
        with pytest.raises(Exception):
            MeasureSpec("accuracy", 0.5)
        with pytest.raises(Exception):
            MeasureSpec("auc", 0.0)


class TestKernels:
    def test_auc_frozen_example(self):
        spec = MeasureSpec("auc", 0.5)
        assert kernel_omega(spec, ((0.9, 0.3), (0.2, 0.8))) == 0.5

    def test_brier_frozen_example(self):
        spec = MeasureSpec("brier", 0.5)
        assert kernel_omega(spec, ((0.7, 0.8),)) == pytest.approx(0.09)

    def test_cindex_frozen_example_and_symmetry(self):
        spec = MeasureSpec("cindex", 0.9)
        assert kernel_omega(spec, ((0.9, 0.3), (0.2, 0.8))) == 0.5
        assert kernel_omega(spec, ((0.2, 0.8), (0.9, 0.3))) == 0.5

    def test_theta_frozen_examples(self):
        assert kernel_theta(MeasureSpec("auc", 0.5), (0.3, 0.8)) == 0.5
        assert kernel_theta(MeasureSpec("brier", 0.5), (123.0,)) == 1.0
        assert kernel_theta(MeasureSpec("cindex", 0.9), (0.95, 1.2)) == 0.0

    def test_survival_mse_kernel_truncates(self):
        spec = MeasureSpec("survival-mse", 0.5)
        assert kernel_omega(spec, ((0.2, 3.0),)) == pytest.approx((0.2 - 0.5) ** 2)

    def test_symmetry_random(self):
        rng = np.random.default_rng(0)
        for kind in ("auc", "cindex"):
            spec = MeasureSpec(kind, 0.6)
            for _ in range(50):
                pts = [(rng.random(), rng.random() * 2) for _ in range(2)]
                assert kernel_omega(spec, pts) == kernel_omega(spec, pts[::-1])
                ts = [p[1] for p in pts]
                assert kernel_theta(spec, ts) == kernel_theta(spec, ts[::-1])

    def test_wrong_arity(self):
        with pytest.raises(ContractError):
            kernel_omega(MeasureSpec("brier", 0.5), ((0.1, 0.2), (0.3, 0.4)))
        with pytest.raises(ContractError):
            kernel_theta(MeasureSpec("auc", 0.5), (0.3,))


class TestOraclePrediction:
    def exp_curves(self, rate=1.0, points=(0.25, 0.5)):
        grid = TimeGrid(np.array(points), tau=points[-1])
        surv = np.exp(-rate * grid.points)[None, :]
        return curves_from_survival(surv, grid), grid

    def test_auc_is_cdf_at_tau(self):
        curves, _ = self.exp_curves()
        f = oracle_prediction(MeasureSpec("auc", 0.5), curves)
        assert f.scores[0] == pytest.approx(1.0 - np.exp(-0.5), abs=1e-12)
        assert f.is_probability

    def test_brier_is_survival_at_tau(self):
        curves, _ = self.exp_curves()
        f = oracle_prediction(MeasureSpec("brier", 0.5), curves)
        assert f.scores[0] == pytest.approx(np.exp(-0.5), abs=1e-12)

    def test_rmst_right_endpoint_quadrature(self):
        curves, _ = self.exp_curves()
        f = oracle_prediction(MeasureSpec("survival-mse", 0.5), curves)
        expected = 0.25 * (np.exp(-0.25) + np.exp(-0.5))
        assert f.scores[0] == pytest.approx(expected, abs=1e-12)

    def test_cindex_redirects_to_boosting(self):
        curves, _ = self.exp_curves()
        with pytest.raises(RedirectError):
            oracle_prediction(MeasureSpec("cindex", 0.5), curves)


class TestPseudoOutcome:
    def grid(self):
        return TimeGrid(np.array([0.2, 0.4, 0.6, 0.8, 1.0]), tau=1.0)

    def no_censoring_curves(self, surv_row):
        grid = self.grid()
        surv = np.asarray(surv_row, dtype=float)[None, :]
        return curves_from_survival(surv, grid), grid

    def record(self, y, delta):
        class R:
            pass

        r = R()
        r.y = y
        r.delta = delta
        return r

    def test_uncensored_early_event_gives_zero(self):
        curves, _ = self.no_censoring_curves([0.9, 0.8, 0.7, 0.6, 0.5])
        assert pseudo_outcome(self.record(0.4, 1), curves, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_surviving_past_tau_gives_one(self):
        curves, _ = self.no_censoring_curves([0.9, 0.8, 0.7, 0.6, 0.5])
        assert pseudo_outcome(self.record(1.0, 1), curves, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_censored_record_is_survival_ratio(self):
        surv = [0.9, 0.8, 0.7, 0.6, 0.5]
        curves, _ = self.no_censoring_curves(surv)
        # censored at 0.4: the mapping continues with S(tau|x)/S(y|x)
        assert pseudo_outcome(self.record(0.4, 0), curves, 1.0) == pytest.approx(0.5 / 0.8, abs=1e-12)

    def test_matches_indicator_without_censoring(self):
        # E[p | X] sanity: with G == 1 the pseudo-outcome IS the indicator
        rng = np.random.default_rng(1)
        grid = self.grid()
        n = 40
        surv = np.linspace(1.0, 0.3, grid.J)[None, :] ** rng.uniform(0.5, 2.0, (n, 1))
        curves = curves_from_survival(surv, grid)
        y = rng.uniform(0.05, 1.5, n)
        data = Dataset(np.zeros((n, 1)), y, np.ones(n, dtype=int))
        vals = pseudo_outcomes(data, curves, 1.0)
        assert np.allclose(vals, (y >= 1.0).astype(float), atol=1e-12)

    def test_zero_survival_inside_integral_raises(self):
        grid = TimeGrid(np.array([0.5, 1.0]), tau=1.0)
        surv = np.array([[0.0, 0.0]])
        censor = np.full((1, 2), 0.5)
        curves = SurvivalCurveSet(grid=grid, event_cdf=1.0 - surv,
                                  censor_surv=censor,
                                  event_cumhaz=np.array([[1.0, 1.0]]))
        with pytest.raises(SingularityError):
            pseudo_outcome(self.record(0.9, 0), curves, 1.0)


class TestFitRegression:
    def test_exact_on_linear_targets(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((60, 3))
        targets = 1.5 + x @ np.array([0.5, -1.0, 2.0])
        f = fit_regression(x, targets, RegressionLearnerSpec())
        assert np.allclose(f.scores, targets, atol=1e-8)
        assert np.allclose(f(x), targets, atol=1e-8)

    def test_quadratic_basis_recovers_square(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((500, 1))
        spec = RegressionLearnerSpec(basis=BasisSpec(squares=True))
        f = fit_regression(x, x[:, 0] ** 2, spec)
        assert np.max(np.abs(f.scores - x[:, 0] ** 2)) <= 1e-6

    def test_knn_with_k_equal_n_is_global_mean(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((20, 2))
        targets = rng.standard_normal(20)
        f = fit_regression(x, targets, RegressionLearnerSpec(family="knn", k=20))
        assert np.allclose(f.scores, targets.mean())

    def test_clamp_bounds_probability_targets(self):
        x = np.linspace(-3, 3, 30)[:, None]
        targets = np.linspace(-0.5, 1.5, 30)
        f = fit_regression(x, targets, RegressionLearnerSpec(), clamp=(0.0, 1.0))
        assert f.scores.min() >= 0.0 and f.scores.max() <= 1.0

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            fit_regression(np.zeros((0, 2)), np.zeros(0), RegressionLearnerSpec())


class TestResidualOracle:
    def test_score_ignoring_s_passes_through(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((200, 3))
        # rmst targets are unclamped, so the linear fit reproduces them exactly
        scores = 0.7 * x[:, 1]
        data = Dataset(x, np.ones(200), np.ones(200, dtype=int))
        full = PredictionFunction(scores=scores, descriptor="rmst")
        red = residual_oracle(full, data, [1], RegressionLearnerSpec())
        assert red.descriptor.startswith("reduced")
        assert np.allclose(red.scores, scores, atol=1e-8)

    def test_independent_dropped_feature_collapses_to_mean(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4000, 2))
        scores = x[:, 0]
        data = Dataset(x, np.ones(4000), np.ones(4000, dtype=int))
        full = PredictionFunction(scores=scores, descriptor="rmst")
        red = residual_oracle(full, data, [1], RegressionLearnerSpec())
        assert abs(red.scores.mean() - scores.mean()) < 0.05
        assert red.scores.std() <= 0.05

    def test_all_features_rejected(self):
        data = Dataset(np.zeros((10, 2)), np.ones(10), np.ones(10, dtype=int))
        full = PredictionFunction(scores=np.zeros(10), descriptor="cdf-at-tau")
        with pytest.raises(ContractError):
            residual_oracle(full, data, [1, 2], RegressionLearnerSpec())


class TestValidateFeatureSet:
    def test_sorted_unique(self):
        assert validate_feature_set([3, 1, 3], 5).tolist() == [1, 3]

    def test_bounds(self):
        with pytest.raises(ContractError):
            validate_feature_set([0], 3)
        with pytest.raises(ContractError):
            validate_feature_set([4], 3)
        with pytest.raises(ContractError):
            validate_feature_set([], 3)


class TestVStatisticPlugin:
    def test_perfect_brier_point_mass(self):
        # grid must end at tau; the overflow bucket carries the mass past tau
        grid = TimeGrid(np.array([0.5]), tau=0.5)
        curves = SurvivalCurveSet(grid=grid, event_cdf=np.array([[0.0]]),
                                  censor_surv=np.ones((1, 1)),
                                  event_cumhaz=np.array([[0.0]]))
        f = PredictionFunction(scores=np.array([1.0]), descriptor="cdf-at-tau")
        v1, v2 = v_statistic_plugin(f, curves, MeasureSpec("brier", 0.5))
        assert v1 == 0.0 and v2 == 1.0

    def test_two_subject_auc_hand_count(self):
        grid = TimeGrid(np.array([0.3, 0.5]), tau=0.5)
        # point mass at 0.3 for subject one, past tau for subject two
        F = np.array([[1.0, 1.0], [0.0, 0.0]])
        curves = SurvivalCurveSet(grid=grid, event_cdf=F,
                                  censor_surv=np.ones((2, 2)),
                                  event_cumhaz=np.cumsum(F, axis=1))
        f = PredictionFunction(scores=np.array([0.9, 0.2]), descriptor="cdf-at-tau")
        v1, v2 = v_statistic_plugin(f, curves, MeasureSpec("auc", 0.5))
        assert v1 == pytest.approx(0.25, abs=1e-15)
        assert v2 == pytest.approx(0.25, abs=1e-15)

    def test_tied_scores_give_zero_cindex(self):
        grid = TimeGrid(np.array([0.4, 0.9]), tau=0.9)
        F = np.array([[1.0, 1.0], [0.2, 0.9]])
        curves = SurvivalCurveSet(grid=grid, event_cdf=F,
                                  censor_surv=np.ones((2, 2)),
                                  event_cumhaz=np.cumsum(F, axis=1))
        f = PredictionFunction(scores=np.array([0.5, 0.5]), descriptor="boosted-cindex")
        v1, v2 = v_statistic_plugin(f, curves, MeasureSpec("cindex", 0.9))
        assert v1 == 0.0
        assert v2 > 0.0

    def test_complement_property_auc(self):
        # point masses so the diagonal (tied scores) carries no theta weight;
        # then flipping the score sign swaps concordant and discordant pairs
        grid = TimeGrid(np.array([0.2, 0.5, 0.7]), tau=0.7)
        times = np.array([0.2, 0.5, 0.7, 1.3, 2.0])
        n = times.size
        F = (grid.points[None, :] >= times[:, None]).astype(float)
        curves = SurvivalCurveSet(grid=grid, event_cdf=F,
                                  censor_surv=np.ones((n, grid.J)),
                                  event_cumhaz=np.cumsum(F, axis=1))
        scores = np.array([0.3, -1.2, 0.8, 0.1, -0.4])
        spec = MeasureSpec("auc", 0.7)
        fwd = v_statistic_plugin(PredictionFunction(scores=scores, descriptor="x"), curves, spec)
        rev = v_statistic_plugin(PredictionFunction(scores=-scores, descriptor="x"), curves, spec)
        assert rev[0] == pytest.approx(fwd[1] - fwd[0], abs=1e-12)
        assert fwd[1] == pytest.approx(rev[1], abs=1e-15)
