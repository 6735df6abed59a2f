"""Debiased importance estimation with cross-fitting and sample splitting.

Two estimators share the per-fold machinery. The cross-fit estimator scores
the full and reduced predictors on every fold and pools numerators and
denominators before standardizing. The split estimator dedicates alternating
folds to the full and reduced models so the two predictiveness values never
touch the same subjects, which keeps the null distribution honest when the
importance is zero. Repeated runs over fold seeds are combined through a
compound Bonferroni/geometric-mean p-value rule and a matching confidence
interval inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .cindex import BoostConfig, boost_cindex
from .data import Dataset, build_time_grid, make_folds
from .debias import build_debiased_joint, eif_evaluate
from .errors import (
    ConfigurationError,
    ContractError,
    FoldDegeneracyError,
    IdentificationError,
    InversionError,
)
from .measures import (
    MeasureSpec,
    PredictionFunction,
    RegressionLearnerSpec,
    fit_regression,
    oracle_prediction,
    pseudo_outcomes,
    residual_oracle,
    validate_feature_set,
)
from .nuisance import (
    CENSORING,
    EVENT,
    BasisSpec,
    NuisanceModelSpec,
    fit_nuisance,
    predict_curves,
)

ALGORITHMS = ("crossfit", "samplesplit")
ROUTES = ("plug-in", "pseudo-outcome")


@dataclass(frozen=True)
class EstimatorConfig:
    """Everything estimate_vim needs beyond the data, measure and feature set."""

    algorithm: str = "crossfit"
    n_folds: int = 5
    seed: int = 0
    alpha: float = 0.05
    event_model: NuisanceModelSpec = NuisanceModelSpec("lognormal-aft", EVENT, BasisSpec())
    censor_model: NuisanceModelSpec = NuisanceModelSpec("lognormal-aft", CENSORING, BasisSpec())
    predictor_route: str = "plug-in"
    reduced_learner: RegressionLearnerSpec = RegressionLearnerSpec()
    pseudo_learner: RegressionLearnerSpec = RegressionLearnerSpec()
    boost: BoostConfig = BoostConfig(mstop=300, zeta=0.01)
    grid_policy: str = "events"
    grid_size: int | None = None
    eta_floor: float = 0.05

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(
                f"algorithm must be one of {ALGORITHMS}, got '{self.algorithm}'"
            )
        if self.predictor_route not in ROUTES:
            raise ConfigurationError(
                f"predictor route must be one of {ROUTES}, got '{self.predictor_route}'"
            )
        if self.n_folds < 1:
            raise ConfigurationError("n_folds must be >= 1")
        if not (0.0 < self.alpha < 1.0):
            raise ConfigurationError(f"alpha must be in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class FoldResult:
    """Per-fold bookkeeping retained on the estimate for diagnostics."""

    fold: int
    n: int
    role: str            # "both", "full", or "reduced"
    v1: float
    v1_reduced: float | None
    v2: float
    var_term: float


@dataclass(frozen=True)
class VimEstimate:
    psi: float
    se: float
    ci_lower: float
    ci_upper: float
    p_one_sided: float
    v_full: float
    v_reduced: float
    algorithm: str
    seed: int
    n: int
    reps: int = 1
    folds: tuple = ()


@dataclass(frozen=True)
class AggregatedEstimate:
    psi: float
    se: float
    ci_lower: float
    ci_upper: float
    p_one_sided: float
    v_full: float
    v_reduced: float
    algorithm: str
    seed: int
    reps: int
    estimates: tuple = ()


def _check_fold_events(data: Dataset, idx: np.ndarray, tau: float, fold: int,
                       role: str) -> None:
    sub_y = data.y[idx]
    sub_d = data.delta[idx]
    if not np.any((sub_d == 1) & (sub_y <= tau)):
        raise FoldDegeneracyError(
            f"{role} split of fold {fold} contains no event at or before tau={tau}; "
            "use fewer folds or a different seed"
        )


def _prepare(data: Dataset, spec: MeasureSpec, s, config: EstimatorConfig):
    s_arr = validate_feature_set(s, data.p)
    if spec.tau > float(np.max(data.y)):
        raise IdentificationError(
            f"tau={spec.tau} exceeds the largest observed time {float(np.max(data.y))}; "
            "the measure is not identified"
        )
    if config.predictor_route == "pseudo-outcome" and spec.kind not in ("auc", "brier"):
        raise ConfigurationError(
            "the pseudo-outcome route supports auc and brier measures only"
        )
    grid = build_time_grid(data, spec.tau, policy=config.grid_policy,
                           n_points=config.grid_size)
    return s_arr, grid


def _wrap_eval(train_pf: PredictionFunction, eval_x: np.ndarray) -> PredictionFunction:
    return PredictionFunction(
        scores=train_pf(eval_x),
        descriptor=train_pf.descriptor,
        predict=lambda xnew, _pf=train_pf: _pf(xnew),
    )


def _fold_predictors(spec: MeasureSpec, s_arr: np.ndarray, config: EstimatorConfig,
                     train: Dataset, curves_train, fold: Dataset, curves_eval,
                     fold_seed: int, want_full: bool, want_reduced: bool):
    """Train requested predictors on the complement, score the held-out fold."""
    full_eval = None
    reduced_eval = None

    if spec.kind == "cindex":
        bc = replace(config.boost, seed=fold_seed)
        if want_full:
            full_train = boost_cindex(train, curves_train, bc)
            full_eval = _wrap_eval(full_train, fold.x)
        if want_reduced:
            mask = [j for j in range(1, train.p + 1) if j not in set(s_arr.tolist())]
            red_train = boost_cindex(train, curves_train, bc, feature_mask=mask)
            reduced_eval = _wrap_eval(red_train, fold.x)
        return full_eval, reduced_eval

    if config.predictor_route == "pseudo-outcome":
        targets = pseudo_outcomes(train, curves_train, spec.tau)
        reg = fit_regression(train.x, targets, config.pseudo_learner, clamp=(0.0, 1.0))
        if spec.kind == "auc":
            # regression targets survival at tau; the discrimination score is risk
            train_scores = 1.0 - reg.scores
            chain = lambda xnew, _r=reg: 1.0 - _r(xnew)
        else:
            train_scores = reg.scores
            chain = lambda xnew, _r=reg: _r(xnew)
        full_train = PredictionFunction(
            scores=train_scores, descriptor=reg.descriptor, predict=chain
        )
    else:
        full_train = oracle_prediction(spec, curves_train)

    if want_full:
        if config.predictor_route == "pseudo-outcome":
            full_eval = _wrap_eval(full_train, fold.x)
        else:
            full_eval = oracle_prediction(spec, curves_eval)
    if want_reduced:
        red_train = residual_oracle(full_train, train, s_arr, config.reduced_learner)
        reduced_eval = _wrap_eval(red_train, fold.x)
    return full_eval, reduced_eval


def _fold_pieces(data: Dataset, spec: MeasureSpec, s_arr: np.ndarray,
                 config: EstimatorConfig, grid, eval_idx: np.ndarray,
                 train_idx: np.ndarray, fold_no: int, want_full: bool,
                 want_reduced: bool):
    _check_fold_events(data, eval_idx, spec.tau, fold_no, "evaluation")
    _check_fold_events(data, train_idx, spec.tau, fold_no, "training")
    train = data.subset(train_idx)
    fold = data.subset(eval_idx)
    event_model = fit_nuisance(config.event_model, train, grid)
    censor_model = fit_nuisance(config.censor_model, train, grid)
    curves_train = predict_curves(event_model, censor_model, train, grid, config.eta_floor)
    curves_eval = predict_curves(event_model, censor_model, fold, grid, config.eta_floor)
    full_pf, red_pf = _fold_predictors(
        spec, s_arr, config, train, curves_train, fold, curves_eval,
        fold_seed=config.seed * 1000 + fold_no, want_full=want_full,
        want_reduced=want_reduced,
    )
    joint = build_debiased_joint(fold, curves_eval)
    return fold, curves_eval, joint, full_pf, red_pf


def _finalize(psi: float, se: float, alpha: float) -> tuple:
    if se > 0:
        z = psi / se
        p = float(1.0 - norm.cdf(z))
        q = float(norm.ppf(1.0 - alpha / 2.0))
        return psi - q * se, psi + q * se, p
    return psi, psi, (0.0 if psi > 0 else 1.0)


def algorithm1(data: Dataset, spec: MeasureSpec, s, config: EstimatorConfig) -> VimEstimate:
    """Cross-fit one-step estimate: pooled numerators over K folds."""
    s_arr, grid = _prepare(data, spec, s, config)
    K = config.n_folds
    folds = make_folds(data.n, K, config.seed)
    v1 = v1s = v2 = 0.0
    var_sum = 0.0
    fold_results = []
    for k in range(1, K + 1):
        eval_idx = folds.indices(k)
        train_idx = folds.complement(k) if K > 1 else np.arange(data.n)
        fold, curves_eval, joint, full_pf, red_pf = _fold_pieces(
            data, spec, s_arr, config, grid, eval_idx, train_idx, k,
            want_full=True, want_reduced=True,
        )
        eif = eif_evaluate(fold, full_pf, red_pf, joint, curves_eval, spec)
        v1 += eif.v1
        v1s += eif.v1_reduced
        v2 += eif.v2
        term = float(np.mean((eif.phi - eif.phi_s) ** 2))
        var_sum += term
        fold_results.append(FoldResult(k, fold.n, "both", eif.v1, eif.v1_reduced,
                                       eif.v2, term))
    psi = spec.sign * (v1 - v1s) / v2
    se = math.sqrt(var_sum / K / data.n)
    lo, hi, p = _finalize(psi, se, config.alpha)
    return VimEstimate(
        psi=float(psi), se=float(se), ci_lower=float(lo), ci_upper=float(hi),
        p_one_sided=p, v_full=float(spec.sign * v1 / v2),
        v_reduced=float(spec.sign * v1s / v2), algorithm="crossfit",
        seed=config.seed, n=data.n, folds=tuple(fold_results),
    )


def algorithm2(data: Dataset, spec: MeasureSpec, s, config: EstimatorConfig) -> VimEstimate:
    """Sample-split estimate: odd folds carry the full model, even the reduced."""
    s_arr, grid = _prepare(data, spec, s, config)
    K = config.n_folds
    folds = make_folds(data.n, 2 * K, config.seed)
    v1_odd = v2_odd = v1_even = v2_even = 0.0
    var_odd = var_even = 0.0
    n_even = 0
    fold_results = []
    for j in range(1, 2 * K + 1):
        eval_idx = folds.indices(j)
        train_idx = folds.complement(j)
        is_full = j % 2 == 1
        fold, curves_eval, joint, full_pf, red_pf = _fold_pieces(
            data, spec, s_arr, config, grid, eval_idx, train_idx, j,
            want_full=is_full, want_reduced=not is_full,
        )
        pf = full_pf if is_full else red_pf
        eif = eif_evaluate(fold, pf, None, joint, curves_eval, spec)
        term = float(np.mean(eif.phi ** 2))
        if is_full:
            v1_odd += eif.v1
            v2_odd += eif.v2
            var_odd += term
        else:
            v1_even += eif.v1
            v2_even += eif.v2
            var_even += term
            n_even += fold.n
        fold_results.append(FoldResult(j, fold.n, "full" if is_full else "reduced",
                                       eif.v1, None, eif.v2, term))
    n_star = data.n - n_even
    psi = spec.sign * (v1_odd / v2_odd - v1_even / v2_even)
    sigma2 = var_odd / (K * n_star) + var_even / (K * n_even)
    se = math.sqrt(sigma2)
    lo, hi, p = _finalize(psi, se, config.alpha)
    return VimEstimate(
        psi=float(psi), se=float(se), ci_lower=float(lo), ci_upper=float(hi),
        p_one_sided=p, v_full=float(spec.sign * v1_odd / v2_odd),
        v_reduced=float(spec.sign * v1_even / v2_even), algorithm="samplesplit",
        seed=config.seed, n=data.n, folds=tuple(fold_results),
    )


def estimate_vim(data: Dataset, spec: MeasureSpec, s, config: EstimatorConfig) -> VimEstimate:
    if config.algorithm == "crossfit":
        return algorithm1(data, spec, s, config)
    return algorithm2(data, spec, s, config)


# ---------------------------------------------------------------------------
# aggregation over repeated fold splits


def aggregate_pvalues(pvalues) -> float:
    """Compound rule: twice the smaller of the Bonferroni and the scaled
    geometric-mean combination, capped at one."""
    arr = np.asarray(list(pvalues), dtype=float)
    if arr.size == 0:
        raise ContractError("need at least one p-value to aggregate")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ContractError("p-values must lie in [0, 1]")
    n = arr.size
    bonferroni = n * float(arr.min())
    if np.any(arr == 0.0):
        geometric = 0.0
    else:
        geometric = math.e * float(np.exp(np.mean(np.log(arr))))
    return float(min(1.0, 2.0 * min(bonferroni, geometric)))


def _inversion_pvalue(candidate: float, psis, ses) -> float:
    ps = []
    for psi_i, se_i in zip(psis, ses):
        if se_i > 0:
            ps.append(2.0 * float(norm.sf(abs(psi_i - candidate) / se_i)))
        else:
            ps.append(1.0 if candidate == psi_i else 0.0)
    if len(ps) == 1:
        return ps[0]
    return aggregate_pvalues(ps)


def invert_confidence_interval(psis, ses, alpha: float, tol: float = 1e-6,
                               max_doublings: int = 60) -> tuple:
    """Endpoints of {c : aggregated two-sided p(c) >= alpha}."""
    psis = [float(v) for v in psis]
    ses = [float(v) for v in ses]
    center = float(np.median(psis))
    if _inversion_pvalue(center, psis, ses) < alpha:
        accepted = [c for c in sorted(psis) if _inversion_pvalue(c, psis, ses) >= alpha]
        if not accepted:
            raise InversionError(
                "no parameter value is accepted at the requested level; the "
                "split estimates are mutually inconsistent"
            )
        center = accepted[len(accepted) // 2]
    step0 = max(max(ses), 1e-8)

    def endpoint(direction: float) -> float:
        step = step0
        inner = center
        outer = center + direction * step
        doublings = 0
        while _inversion_pvalue(outer, psis, ses) >= alpha:
            inner = outer
            step *= 2.0
            outer = center + direction * step
            doublings += 1
            if doublings > max_doublings:
                raise InversionError(
                    "confidence bound diverged during bracketing; the aggregated "
                    "p-value never fell below the level"
                )
        while abs(outer - inner) > tol:
            mid = 0.5 * (inner + outer)
            if _inversion_pvalue(mid, psis, ses) >= alpha:
                inner = mid
            else:
                outer = mid
        return 0.5 * (inner + outer)

    return endpoint(-1.0), endpoint(+1.0)


def repeat_and_aggregate(data: Dataset, spec: MeasureSpec, s,
                         config: EstimatorConfig, reps: int) -> AggregatedEstimate:
    """Re-estimate under independently derived fold seeds and combine."""
    if reps < 1:
        raise ConfigurationError(f"reps must be >= 1, got {reps}")
    seeds = np.random.SeedSequence(config.seed).generate_state(reps)
    estimates = tuple(
        estimate_vim(data, spec, s, replace(config, seed=int(sd))) for sd in seeds
    )
    psis = [e.psi for e in estimates]
    ses = [e.se for e in estimates]
    if reps == 1:
        p = estimates[0].p_one_sided
    else:
        p = aggregate_pvalues([e.p_one_sided for e in estimates])
    lo, hi = invert_confidence_interval(psis, ses, config.alpha)
    return AggregatedEstimate(
        psi=float(np.median(psis)),
        se=float(np.median(ses)),
        ci_lower=float(lo),
        ci_upper=float(hi),
        p_one_sided=float(p),
        v_full=float(np.median([e.v_full for e in estimates])),
        v_reduced=float(np.median([e.v_reduced for e in estimates])),
        algorithm=config.algorithm,
        seed=config.seed,
        reps=reps,
        estimates=estimates,
    )
