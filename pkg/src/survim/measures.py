"""Predictiveness measures for right-censored prediction.

A measure is a ratio V1/V2 of m-fold integrals of a bounded kernel pair
(omega, theta) against the joint law of (X, T). Squared-error kernels are
stored positively and negated at reporting time so that larger reported
predictiveness is always better.

Time integrals run over a bucket representation: the grid points (all <= tau)
plus one overflow bucket at representative time tau + 1. Every kernel here is
constant in t beyond tau, so the bucketing is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, TimeGrid
from .errors import (
    ConfigurationError,
    ContractError,
    RedirectError,
    SingularityError,
    ValidationError,
)
from .nuisance import BasisSpec, SurvivalCurveSet, restrict_basis

MEASURE_KINDS = ("auc", "brier", "survival-mse", "cindex")

# provenance tags for prediction functions
CDF_AT_TAU = "cdf-at-tau"
RMST = "rmst"
PSEUDO_REGRESSION = "pseudo-outcome-regression"
BOOSTED_CINDEX = "boosted-cindex"
REDUCED = "reduced"

_PROBABILITY_DESCRIPTORS = (CDF_AT_TAU, PSEUDO_REGRESSION)


@dataclass(frozen=True)
class MeasureSpec:
    """One predictiveness measure: kind, horizon tau, derived degree m."""

    kind: str
    tau: float

    def __post_init__(self):
        if self.kind not in MEASURE_KINDS:
            raise ConfigurationError(f"unknown measure kind '{self.kind}'")
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise ConfigurationError(f"tau must be positive and finite, got {self.tau}")

    @property
    def m(self) -> int:
        return 2 if self.kind in ("auc", "cindex") else 1

    @property
    def larger_is_better(self) -> bool:
        return self.kind in ("auc", "cindex")

    @property
    def sign(self) -> float:
        """Reporting orientation: +1 for rank measures, -1 for error measures."""
        return 1.0 if self.larger_is_better else -1.0


def kernel_omega(spec: MeasureSpec, points) -> float:
    """Symmetric degree-m kernel on (score, time) pairs."""
    if len(points) != spec.m:
        raise ContractError(f"{spec.kind} kernel takes {spec.m} points, got {len(points)}")
    tau = spec.tau
    if spec.kind == "brier":
        f, t = points[0]
        return (f - (1.0 if t > tau else 0.0)) ** 2
    if spec.kind == "survival-mse":
        f, t = points[0]
        return (f - min(t, tau)) ** 2
    (f1, t1), (f2, t2) = points
    if spec.kind == "auc":
        a = 1.0 if (f1 > f2 and t1 <= tau and t2 > tau) else 0.0
        b = 1.0 if (f2 > f1 and t2 <= tau and t1 > tau) else 0.0
        return 0.5 * (a + b)
    a = 1.0 if (f1 > f2 and t1 <= tau and t2 > t1) else 0.0
    b = 1.0 if (f2 > f1 and t2 <= tau and t1 > t2) else 0.0
    return 0.5 * (a + b)


def kernel_theta(spec: MeasureSpec, times) -> float:
    """Normalizing kernel; no dependence on the prediction function."""
    if len(times) != spec.m:
        raise ContractError(f"{spec.kind} theta kernel takes {spec.m} times, got {len(times)}")
    tau = spec.tau
    if spec.m == 1:
        return 1.0
    t1, t2 = times
    if spec.kind == "auc":
        a = 1.0 if (t1 <= tau and t2 > tau) else 0.0
        b = 1.0 if (t2 <= tau and t1 > tau) else 0.0
        return 0.5 * (a + b)
    a = 1.0 if (t1 <= tau and t2 > t1) else 0.0
    b = 1.0 if (t2 <= tau and t1 > t2) else 0.0
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# prediction functions


class PredictionFunction:
    """Per-subject scores plus an optional rule for scoring new subjects."""

    def __init__(self, scores=None, descriptor: str = "", predict=None):
        if scores is not None:
            scores = np.asarray(scores, dtype=float)
            if not np.all(np.isfinite(scores)):
                raise ValidationError("prediction scores contain non-finite values")
        self.scores = scores
        self.descriptor = descriptor
        self._predict = predict

    @property
    def is_probability(self) -> bool:
        return any(tag in self.descriptor for tag in _PROBABILITY_DESCRIPTORS)

    def __call__(self, x) -> np.ndarray:
        if self._predict is None:
            raise ContractError(
                f"prediction function '{self.descriptor}' has no rule for new subjects"
            )
        out = np.asarray(self._predict(np.asarray(x, dtype=float)), dtype=float)
        if not np.all(np.isfinite(out)):
            raise ValidationError("prediction rule produced non-finite scores")
        return out


def _tau_column(grid: TimeGrid, tau: float) -> int:
    points = np.asarray(grid.points)
    hits = np.nonzero(np.isclose(points, tau, rtol=0.0, atol=1e-12))[0]
    if hits.size == 0:
        raise ContractError(f"grid does not contain tau={tau} as a point")
    return int(hits[0])


def oracle_prediction(spec: MeasureSpec, curves: SurvivalCurveSet) -> PredictionFunction:
    """Best-possible score for the measure, read off the conditional curves."""
    if spec.kind == "cindex":
        raise RedirectError(
            "the cindex oracle has no closed form; use the boosted maximizer instead"
        )
    tau_col = _tau_column(curves.grid, spec.tau)
    F_tau = curves.event_cdf[:, tau_col]
    if spec.kind == "auc":
        return PredictionFunction(scores=F_tau, descriptor=CDF_AT_TAU)
    if spec.kind == "brier":
        return PredictionFunction(scores=1.0 - F_tau, descriptor=CDF_AT_TAU)
    points = np.asarray(curves.grid.points)
    widths = np.diff(points[: tau_col + 1], prepend=0.0)
    rmst = curves.event_surv()[:, : tau_col + 1] @ widths
    return PredictionFunction(scores=rmst, descriptor=RMST)


# ---------------------------------------------------------------------------
# doubly-robust pseudo-outcomes


def pseudo_outcomes(data: Dataset, curves: SurvivalCurveSet, tau: float) -> np.ndarray:
    """Per-subject transformed outcome targeting survival at tau.

    Consistent for S0(tau | x) when either the event or the censoring curves
    are; adapters at the measure layer convert orientation (risk = 1 - fit).
    """
    grid = curves.grid
    tau_col = _tau_column(grid, tau)
    S = curves.event_surv()
    G = curves.censor_surv
    G_prev = np.hstack([np.ones((G.shape[0], 1)), G[:, :-1]])
    dlam_g = (G_prev - G) / G_prev

    y = np.asarray(data.y)
    delta = np.asarray(data.delta)
    at_tau = (y >= tau).astype(float)
    q1 = delta + at_tau
    q2 = np.minimum(y, tau)
    loc = grid.locate(q2)

    rows = np.arange(data.n)
    S_tau = S[:, tau_col]
    S_at_q2 = np.where(loc >= 0, S[rows, np.maximum(loc, 0)], 1.0)
    G_at_q2 = np.where(loc >= 0, G[rows, np.maximum(loc, 0)], 1.0)

    cols = np.arange(grid.J)[None, :]
    needed = cols <= loc[:, None]
    bad = needed & (S <= 1e-12)
    if np.any(bad) or np.any(S_at_q2 <= 1e-12):
        i = int(np.argwhere(bad)[0][0]) if np.any(bad) else int(np.argmin(S_at_q2))
        raise SingularityError(
            f"event survival vanished inside the pseudo-outcome integral for subject {i}"
        )
    m_grid = S_tau[:, None] / np.where(needed, S, 1.0)
    integral = np.sum(np.where(needed, m_grid * dlam_g / G, 0.0), axis=1)
    m_at_q2 = S_tau / S_at_q2
    return at_tau * q1 / G_at_q2 + (1.0 - q1) * m_at_q2 / G_at_q2 - integral


def pseudo_outcome(record, curves: SurvivalCurveSet, tau: float) -> float:
    """Single-subject form of pseudo_outcomes; curves must hold one subject."""
    if curves.n != 1:
        raise ContractError("pseudo_outcome expects curves for exactly one subject")
    grid = curves.grid
    tau_col = _tau_column(grid, tau)
    S = curves.event_surv()[0]
    G = curves.censor_surv[0]
    G_prev = np.concatenate([[1.0], G[:-1]])
    dlam_g = (G_prev - G) / G_prev
    at_tau = 1.0 if record.y >= tau else 0.0
    q1 = record.delta + at_tau
    q2 = min(record.y, tau)
    loc = int(grid.locate(np.array([q2]))[0])
    S_tau = S[tau_col]
    S_at_q2 = S[loc] if loc >= 0 else 1.0
    G_at_q2 = G[loc] if loc >= 0 else 1.0
    if S_at_q2 <= 1e-12 or (loc >= 0 and np.any(S[: loc + 1] <= 1e-12)):
        raise SingularityError("event survival vanished inside the pseudo-outcome integral")
    integral = float(np.sum((S_tau / S[: loc + 1]) * dlam_g[: loc + 1] / G[: loc + 1])) if loc >= 0 else 0.0
    return float(at_tau * q1 / G_at_q2 + (1.0 - q1) * (S_tau / S_at_q2) / G_at_q2 - integral)


# ---------------------------------------------------------------------------
# generic regression learners


@dataclass(frozen=True)
class RegressionLearnerSpec:
    """Small regression learner for residual-oracle construction."""

    family: str = "least-squares-basis"
    basis: BasisSpec = field(default_factory=BasisSpec)
    k: int = 5

    def __post_init__(self):
        if self.family not in ("least-squares-basis", "knn"):
            raise ConfigurationError(f"unknown learner family '{self.family}'")
        if self.family == "knn" and self.k < 1:
            raise ConfigurationError(f"knn needs k >= 1, got {self.k}")
        object.__setattr__(self, "basis", BasisSpec.parse(self.basis))


def fit_regression(inputs, targets, spec: RegressionLearnerSpec,
                   clamp=None) -> PredictionFunction:
    """Fit targets on inputs; returns a rule usable on new subjects."""
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ContractError("regression needs a non-empty 2-d input matrix")
    if targets.shape != (inputs.shape[0],):
        raise ContractError("one target per input row required")

    if np.ptp(targets) == 0.0:
        # lstsq roundoff would jitter an exactly flat target; ties must stay ties
        const = float(targets[0])
        if clamp is not None:
            const = float(np.clip(const, clamp[0], clamp[1]))

        def predict(xnew, _c=const):
            return np.full(np.asarray(xnew).shape[0], _c)

        return PredictionFunction(scores=predict(inputs),
                                  descriptor=spec.family, predict=predict)

    if spec.family == "least-squares-basis":
        design, _ = spec.basis.expand(inputs)
        gram = design.T @ design
        rhs = design.T @ targets
        rank = np.linalg.matrix_rank(gram)
        if rank < gram.shape[0]:
            gram = gram + 1e-8 * np.eye(gram.shape[0])
        coef = np.linalg.solve(gram, rhs)

        def predict(xnew, _coef=coef, _basis=spec.basis, _clamp=clamp):
            d, _ = _basis.expand(xnew)
            out = d @ _coef
            return out if _clamp is None else np.clip(out, _clamp[0], _clamp[1])

    else:
        if spec.k > inputs.shape[0]:
            raise ContractError(f"knn k={spec.k} exceeds sample size {inputs.shape[0]}")
        train_x, train_t = inputs.copy(), targets.copy()

        def predict(xnew, _x=train_x, _t=train_t, _k=spec.k, _clamp=clamp):
            d2 = ((xnew[:, None, :] - _x[None, :, :]) ** 2).sum(axis=2)
            order = np.argsort(d2, axis=1, kind="stable")[:, :_k]
            out = _t[order].mean(axis=1)
            return out if _clamp is None else np.clip(out, _clamp[0], _clamp[1])

    fitted = predict(inputs)
    return PredictionFunction(scores=fitted, descriptor=spec.family, predict=predict)


def validate_feature_set(s, p: int) -> np.ndarray:
    """Check a 1-based feature index set; returns sorted unique indices."""
    s = np.unique(np.asarray(list(s), dtype=int))
    if s.size == 0:
        raise ContractError("feature set s must be non-empty")
    if np.any(s < 1) or np.any(s > p):
        raise ContractError(f"feature indices must lie in 1..{p}, got {s.tolist()}")
    if s.size == p:
        raise ContractError("feature set s must leave at least one feature")
    return s


def residual_oracle(full: PredictionFunction, data: Dataset, s,
                    learner: RegressionLearnerSpec) -> PredictionFunction:
    """Regress full-model scores on the features outside s (1-based)."""
    if full.descriptor == BOOSTED_CINDEX:
        raise RedirectError("cindex reduced scores come from boosting on the retained features")
    s = validate_feature_set(s, data.p)
    if full.scores is None or full.scores.shape != (data.n,):
        raise ContractError("full prediction scores must align with the dataset")
    keep = np.array([j for j in range(data.p) if (j + 1) not in set(s.tolist())])
    sub_basis = restrict_basis(learner.basis, keep, data.p)
    sub_spec = RegressionLearnerSpec(family=learner.family, basis=sub_basis, k=learner.k)
    clamp = (0.0, 1.0) if full.is_probability else None
    fitted = fit_regression(data.x[:, keep], full.scores, sub_spec, clamp=clamp)

    def predict(xnew, _keep=keep, _inner=fitted):
        return _inner(xnew[:, _keep])

    return PredictionFunction(
        scores=fitted.scores,
        descriptor=f"{REDUCED}:{full.descriptor}",
        predict=predict,
    )


# ---------------------------------------------------------------------------
# bucket masses and brute-force V-statistics


def bucket_masses(values: np.ndarray, grid: TimeGrid, tau: float):
    """Signed bucket masses from cumulative values on the grid.

    Returns (masses (n, J+1), representative times (J+1,)): grid increments
    plus an overflow bucket at tau + 1 holding 1 - value(tau). Masses sum to
    one per subject by construction.
    """
    tau_col = _tau_column(grid, tau)
    inc = np.diff(values, axis=1, prepend=0.0)
    overflow = 1.0 - values[:, tau_col]
    reps = np.append(np.asarray(grid.points), tau + 1.0)
    return np.hstack([inc, overflow[:, None]]), reps


def brute_v_statistic(spec: MeasureSpec, scores: np.ndarray, masses: np.ndarray,
                      rep_times: np.ndarray):
    """Nested-loop V-statistic evaluation; O((n*J)^m) test oracle."""
    n, B = masses.shape
    if spec.m == 1:
        v1 = v2 = 0.0
        for i in range(n):
            for j in range(B):
                v1 += kernel_omega(spec, [(scores[i], rep_times[j])]) * masses[i, j]
                v2 += kernel_theta(spec, [rep_times[j]]) * masses[i, j]
        return v1 / n, v2 / n
    v1 = v2 = 0.0
    for i in range(n):
        for k in range(n):
            for j in range(B):
                for l in range(B):
                    w = masses[i, j] * masses[k, l]
                    v1 += kernel_omega(
                        spec, [(scores[i], rep_times[j]), (scores[k], rep_times[l])]
                    ) * w
                    v2 += kernel_theta(spec, [rep_times[j], rep_times[l]]) * w
    return v1 / n**2, v2 / n**2


def v_statistic_plugin(f: PredictionFunction, curves: SurvivalCurveSet,
                       spec: MeasureSpec):
    """Plug-in (V1, V2) by explicit enumeration over subjects and CDF masses."""
    if f.scores is None or f.scores.shape != (curves.n,):
        raise ContractError("scores must cover the curve set's subjects")
    masses, reps = bucket_masses(curves.event_cdf, curves.grid, spec.tau)
    return brute_v_statistic(spec, f.scores, masses, reps)
