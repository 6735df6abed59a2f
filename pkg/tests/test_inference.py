"""Cross-fit and sample-split estimators, p-value aggregation, CI inversion."""

import numpy as np
import pytest
from scipy.stats import norm

from survim.data import Dataset
from survim.errors import (
    ConfigurationError,
    ContractError,
    FoldDegeneracyError,
    IdentificationError,
)
from survim.inference import (
    EstimatorConfig,
    aggregate_pvalues,
    estimate_vim,
    invert_confidence_interval,
    repeat_and_aggregate,
)
from survim.measures import BasisSpec, MeasureSpec
from survim.nuisance import CENSORING, EVENT, NuisanceModelSpec


def synthetic_data(n=150, seed=0, p=3, censor_rate=0.4):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    t = np.exp(0.8 * x[:, 0] - 0.3 * x[:, 1] + rng.standard_normal(n) * 0.7)
    c = rng.exponential(np.quantile(t, 1.0 - censor_rate) * 2.0, n)
    y = np.minimum(t, c)
    delta = (t <= c).astype(int)
    return Dataset(x, y, delta)


def km_config(**kw):
    base = dict(
        event_model=NuisanceModelSpec("marginal-km", EVENT, BasisSpec()),
        censor_model=NuisanceModelSpec("marginal-km", CENSORING, BasisSpec()),
    )
    base.update(kw)
    return EstimatorConfig(**base)


def aft_config(**kw):
    base = dict(
        event_model=NuisanceModelSpec("lognormal-aft", EVENT, BasisSpec()),
        censor_model=NuisanceModelSpec("lognormal-aft", CENSORING, BasisSpec()),
    )
    base.update(kw)
    return EstimatorConfig(**base)


class TestAggregatePvalues:
    def test_ten_identical_hundredths(self):
        assert aggregate_pvalues([0.01] * 10) == pytest.approx(
            0.05436563656918088, abs=1e-10
        )

    def test_single_value_doubles(self):
        assert aggregate_pvalues([0.03]) == pytest.approx(0.06, abs=1e-14)

    def test_zero_dominates(self):
        assert aggregate_pvalues([0.0, 0.5, 0.9]) == 0.0

    def test_capped_at_one(self):
        assert aggregate_pvalues([1.0] * 5) == 1.0

    def test_invalid_inputs(self):
        with pytest.raises(ContractError):
            aggregate_pvalues([])
        with pytest.raises(ContractError):
            aggregate_pvalues([0.5, 1.5])
        with pytest.raises(ContractError):
            aggregate_pvalues([-0.1])
        with pytest.raises(ContractError):
            aggregate_pvalues([np.nan])

    def test_never_below_twice_bonferroni_floor(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            ps = rng.uniform(0.001, 1.0, rng.integers(1, 8))
            agg = aggregate_pvalues(ps)
            assert 0.0 <= agg <= 1.0
            assert agg <= 2.0 * ps.size * ps.min() + 1e-15


class TestInvertConfidenceInterval:
    def test_single_split_matches_wald(self):
        psi, se, alpha = 0.2, 0.05, 0.05
        lo, hi = invert_confidence_interval([psi], [se], alpha)
        q = norm.ppf(1.0 - alpha / 2.0)
        assert lo == pytest.approx(psi - q * se, abs=5e-6)
        assert hi == pytest.approx(psi + q * se, abs=5e-6)

    def test_interval_contains_median_of_consistent_splits(self):
        psis = [0.10, 0.12, 0.80 * 0.12 + 0.02]
        ses = [0.04, 0.05, 0.045]
        lo, hi = invert_confidence_interval(psis, ses, 0.05)
        assert lo < np.median(psis) < hi
        # wider than the tightest single Wald interval
        q = norm.ppf(0.975)
        assert hi - lo >= 2 * q * min(ses) - 1e-9


class TestEstimatorConfig:
    def test_rejects_unknown_algorithm_and_route(self):
        with pytest.raises(ConfigurationError):
            EstimatorConfig(algorithm="bootstrap")
        with pytest.raises(ConfigurationError):
            EstimatorConfig(predictor_route="direct")
        with pytest.raises(ConfigurationError):
            EstimatorConfig(n_folds=0)
        with pytest.raises(ConfigurationError):
            EstimatorConfig(alpha=1.0)


class TestCrossfit:
    def test_pooled_arithmetic_reconstructed_from_folds(self):
        data = synthetic_data(n=160, seed=1)
        spec = MeasureSpec("brier", np.quantile(data.y, 0.5))
        e = estimate_vim(data, spec, [1], km_config(n_folds=3, seed=2))
        v1 = sum(f.v1 for f in e.folds)
        v1s = sum(f.v1_reduced for f in e.folds)
        v2 = sum(f.v2 for f in e.folds)
        assert e.psi == pytest.approx(spec.sign * (v1 - v1s) / v2, abs=1e-12)
        assert e.se == pytest.approx(
            np.sqrt(sum(f.var_term for f in e.folds) / 3 / data.n), abs=1e-12
        )
        assert e.algorithm == "crossfit"
        assert len(e.folds) == 3
        assert all(f.role == "both" for f in e.folds)

    def test_wald_interval_and_pvalue(self):
        data = synthetic_data(n=160, seed=3)
        spec = MeasureSpec("auc", np.quantile(data.y, 0.5))
        e = estimate_vim(data, spec, [1], aft_config(n_folds=2, seed=4))
        q = norm.ppf(0.975)
        assert e.ci_lower == pytest.approx(e.psi - q * e.se, abs=1e-12)
        assert e.ci_upper == pytest.approx(e.psi + q * e.se, abs=1e-12)
        assert e.p_one_sided == pytest.approx(norm.sf(e.psi / e.se), abs=1e-12)

    def test_brier_reported_negatively_oriented(self):
        data = synthetic_data(n=160, seed=5)
        spec = MeasureSpec("brier", np.quantile(data.y, 0.5))
        e = estimate_vim(data, spec, [1], aft_config(n_folds=2, seed=6))
        # stored losses are positive, so oriented values come out negative
        assert e.v_full < 0.0
        assert e.v_reduced < 0.0
        # dropping a real signal cannot improve the loss
        assert e.psi == pytest.approx(e.v_full - e.v_reduced, abs=1e-12)

    def test_seed_reproducibility(self):
        data = synthetic_data(n=120, seed=7)
        spec = MeasureSpec("brier", np.quantile(data.y, 0.5))
        cfg = km_config(n_folds=2, seed=8)
        e1 = estimate_vim(data, spec, [1], cfg)
        e2 = estimate_vim(data, spec, [1], cfg)
        assert e1.psi == e2.psi and e1.se == e2.se

    def test_tau_beyond_data_rejected(self):
        data = synthetic_data(n=60, seed=9)
        spec = MeasureSpec("auc", float(data.y.max()) * 2.0)
        with pytest.raises(IdentificationError):
            estimate_vim(data, spec, [1], km_config())

    def test_pseudo_route_limited_to_classification_measures(self):
        data = synthetic_data(n=80, seed=10)
        cfg = km_config(predictor_route="pseudo-outcome")
        with pytest.raises(ConfigurationError):
            estimate_vim(data, MeasureSpec("survival-mse", 0.5), [1], cfg)
        with pytest.raises(ConfigurationError):
            estimate_vim(data, MeasureSpec("cindex", 0.5), [1], cfg)

    def test_fold_without_events_names_the_split(self):
        rng = np.random.default_rng(11)
        n = 40
        x = rng.standard_normal((n, 2))
        y = rng.uniform(0.5, 2.0, n)
        delta = np.zeros(n, dtype=int)
        delta[0] = 1
        y[0] = 0.3
        data = Dataset(x, y, delta)
        spec = MeasureSpec("brier", 0.4)
        with pytest.raises(FoldDegeneracyError, match=r"split of fold \d+"):
            estimate_vim(data, spec, [1], km_config(n_folds=2, seed=12))


class TestSampleSplit:
    def test_split_arithmetic_and_roles(self):
        data = synthetic_data(n=200, seed=13)
        spec = MeasureSpec("brier", np.quantile(data.y, 0.5))
        K = 2
        e = estimate_vim(data, spec, [1], km_config(algorithm="samplesplit",
                                                    n_folds=K, seed=14))
        assert e.algorithm == "samplesplit"
        assert len(e.folds) == 2 * K
        odd = [f for f in e.folds if f.fold % 2 == 1]
        even = [f for f in e.folds if f.fold % 2 == 0]
        assert all(f.role == "full" for f in odd)
        assert all(f.role == "reduced" for f in even)
        v_full = sum(f.v1 for f in odd) / sum(f.v2 for f in odd)
        v_red = sum(f.v1 for f in even) / sum(f.v2 for f in even)
        assert e.psi == pytest.approx(spec.sign * (v_full - v_red), abs=1e-12)
        n_even = sum(f.n for f in even)
        n_star = data.n - n_even
        sigma2 = (sum(f.var_term for f in odd) / (K * n_star)
                  + sum(f.var_term for f in even) / (K * n_even))
        assert e.se == pytest.approx(np.sqrt(sigma2), abs=1e-12)

    def test_null_feature_p_roughly_uniform_single_draw(self):
        # under the null psi targets zero; just check the estimate is finite
        # and the p-value is non-degenerate for one draw
        data = synthetic_data(n=200, seed=15)
        spec = MeasureSpec("brier", np.quantile(data.y, 0.5))
        e = estimate_vim(data, spec, [3], km_config(algorithm="samplesplit",
                                                    n_folds=2, seed=16))
        assert np.isfinite(e.psi)
        assert 0.0 <= e.p_one_sided <= 1.0


class TestRepeatAndAggregate:
    def test_single_rep_passes_through(self):
        data = synthetic_data(n=120, seed=17)
        spec = MeasureSpec("brier", np.quantile(data.y, 0.5))
        cfg = km_config(n_folds=2, seed=18)
        agg = repeat_and_aggregate(data, spec, [1], cfg, reps=1)
        single = agg.estimates[0]
        assert agg.reps == 1
        assert agg.psi == single.psi
        assert agg.p_one_sided == single.p_one_sided
        # inversion with one split reduces to the Wald interval
        assert agg.ci_lower == pytest.approx(single.ci_lower, abs=5e-6)
        assert agg.ci_upper == pytest.approx(single.ci_upper, abs=5e-6)

    def test_three_reps_median_and_compound_p(self):
        data = synthetic_data(n=120, seed=19)
        spec = MeasureSpec("brier", np.quantile(data.y, 0.5))
        # covariate-dependent nuisances so the fold split actually matters
        cfg = aft_config(n_folds=2, seed=20)
        agg = repeat_and_aggregate(data, spec, [1], cfg, reps=3)
        assert agg.reps == 3 and len(agg.estimates) == 3
        assert agg.psi == pytest.approx(np.median([e.psi for e in agg.estimates]))
        assert agg.p_one_sided == pytest.approx(
            aggregate_pvalues([e.p_one_sided for e in agg.estimates])
        )
        assert agg.ci_lower < agg.psi < agg.ci_upper
        # distinct internal seeds: the replicates differ
        psis = {e.psi for e in agg.estimates}
        assert len(psis) > 1

    def test_zero_reps_rejected(self):
        data = synthetic_data(n=80, seed=21)
        spec = MeasureSpec("brier", 0.5)
        with pytest.raises(ConfigurationError):
            repeat_and_aggregate(data, spec, [1], km_config(), reps=0)
