"""Conditional event-time and censoring-time distribution estimators.

Every fitted model exposes predict_survival(x, times) -> (n, J) with
P(time-to-target > t | x) evaluated at grid points. predict_curves assembles
the per-subject curve set (F, G, Lambda) used by the debiasing machinery,
flooring G at eta and deriving hazard increments by left-anchored ratios
dLam_j = (S_{j-1} - S_j)/S_{j-1}, which makes the discrete product integral
exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.stats import norm

from .data import Dataset, TimeGrid
from .errors import (
    ConfigurationError,
    DegenerateDataError,
    HazardDerivationError,
    NonConvergenceError,
    RankDeficiencyError,
    SeparationError,
    ValidationError,
)

EVENT = "event"
CENSORING = "censoring"


# ---------------------------------------------------------------------------
# feature expansion


@dataclass(frozen=True)
class BasisSpec:
    """Design-matrix descriptor: intercept + main terms + optional products.

    pairs: explicit 0-based products (i, j); i == j adds a square term.
    all_pairs: add every i < j product; squares: add every square.
    """

    pairs: tuple = ()
    all_pairs: bool = False
    squares: bool = False

    @classmethod
    def parse(cls, value) -> "BasisSpec":
        if isinstance(value, BasisSpec):
            return value
        if value in (None, "main", "linear"):
            return cls()
        if value == "interactions":
            return cls(all_pairs=True)
        if value == "quadratic":
            return cls(all_pairs=True, squares=True)
        if isinstance(value, (list, tuple)):
            return cls(pairs=tuple((int(i), int(j)) for i, j in value))
        raise ConfigurationError(f"unknown basis descriptor {value!r}")

    def product_pairs(self, p: int) -> list:
        pairs = []
        if self.all_pairs:
            pairs.extend((i, j) for i in range(p) for j in range(i + 1, p))
        if self.squares:
            pairs.extend((i, i) for i in range(p))
        for i, j in self.pairs:
            if not (0 <= i < p and 0 <= j < p):
                raise ValidationError(f"basis pair ({i},{j}) outside feature range 0..{p - 1}")
            if (i, j) not in pairs:
                pairs.append((i, j))
        return pairs

    def expand(self, x: np.ndarray, feature_names=None) -> tuple:
        """Return (design, column_names); design has a leading intercept column."""
        x = np.asarray(x, dtype=float)
        n, p = x.shape
        if feature_names is None:
            feature_names = [f"x{i + 1}" for i in range(p)]
        cols = [np.ones(n)]
        names = ["(intercept)"]
        for i in range(p):
            cols.append(x[:, i])
            names.append(feature_names[i])
        for i, j in self.product_pairs(p):
            cols.append(x[:, i] * x[:, j])
            names.append(f"{feature_names[i]}*{feature_names[j]}")
        return np.column_stack(cols), names


def restrict_basis(basis: BasisSpec, keep: np.ndarray, p: int) -> BasisSpec:
    """Re-index a basis onto the feature subset `keep` (original indices)."""
    keep = list(keep)
    pos = {orig: new for new, orig in enumerate(keep)}
    pairs = tuple(
        (pos[i], pos[j]) for i, j in basis.pairs if i in pos and j in pos
    )
    return BasisSpec(pairs=pairs, all_pairs=basis.all_pairs, squares=basis.squares)


@dataclass(frozen=True)
class NuisanceModelSpec:
    """Which conditional-distribution estimator to fit for one target."""

    family: str
    target: str
    basis: BasisSpec = BasisSpec()

    FAMILIES = ("marginal-km", "lognormal-aft", "discrete-hazard", "injected")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise ConfigurationError(f"unknown nuisance family '{self.family}'")
        if self.target not in (EVENT, CENSORING):
            raise ConfigurationError(f"nuisance target must be event or censoring, got '{self.target}'")
        object.__setattr__(self, "basis", BasisSpec.parse(self.basis))


def _target_indicator(data: Dataset, target: str) -> np.ndarray:
    if target == EVENT:
        return np.asarray(data.delta)
    if target == CENSORING:
        return 1 - np.asarray(data.delta)
    raise ConfigurationError(f"unknown target '{target}'")


def _check_full_rank(design: np.ndarray, names) -> None:
    _, r, piv = sla.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = design.shape[0] * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < design.shape[1]:
        bad = sorted(names[k] for k in piv[rank:])
        raise RankDeficiencyError(f"design matrix is rank deficient; collinear columns: {', '.join(bad)}")


# ---------------------------------------------------------------------------
# marginal Kaplan-Meier


class MarginalKM:
    """Covariate-independent product-limit curve for one target."""

    def __init__(self, times: np.ndarray, surv: np.ndarray, target: str):
        self.times = times
        self.surv = surv
        self.target = target

    def predict_survival(self, x, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.times, times, side="right") - 1
        row = np.where(idx >= 0, self.surv[np.maximum(idx, 0)], 1.0)
        n = np.asarray(x).shape[0]
        return np.broadcast_to(row, (n, times.size)).copy()


def fit_marginal_km(data: Dataset, target: str, grid: TimeGrid | None = None) -> MarginalKM:
    """Product-limit estimator; the censoring target flips the role of delta."""
    d = _target_indicator(data, target)
    y = np.asarray(data.y)
    if not np.any(d == 1):
        raise DegenerateDataError(f"no {target} occurrences to fit a product-limit curve")
    times = np.unique(y[d == 1])
    at_risk = np.array([(y >= t).sum() for t in times], dtype=float)
    occurred = np.array([((y == t) & (d == 1)).sum() for t in times], dtype=float)
    surv = np.cumprod(1.0 - occurred / at_risk)
    return MarginalKM(times, surv, target)


# ---------------------------------------------------------------------------
# log-normal accelerated failure time


class LognormalAFT:
    """log T = basis(x) beta + sigma eps, eps standard normal."""

    def __init__(self, beta, log_sigma, basis, target, n_iter, grad_norm, loglik_path):
        self.beta = beta
        self.log_sigma = float(log_sigma)
        self.sigma = float(np.exp(log_sigma))
        self.basis = basis
        self.target = target
        self.n_iter = n_iter
        self.grad_norm = grad_norm
        self.loglik_path = loglik_path

    def location(self, x) -> np.ndarray:
        design, _ = self.basis.expand(np.asarray(x, dtype=float))
        return design @ self.beta

    def predict_survival(self, x, times) -> np.ndarray:
        mu = self.location(x)
        zt = (np.log(np.asarray(times, dtype=float))[None, :] - mu[:, None]) / self.sigma
        return norm.sf(zt)


def _aft_loglik_parts(theta, design, logy, d):
    beta, s = theta[:-1], theta[-1]
    # trial steps may underflow sigma or overflow z; the caller rejects
    # non-finite candidates, so evaluate without numpy noise
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        sigma = np.exp(s)
        z = (logy - design @ beta) / sigma
        ll = np.where(d == 1, norm.logpdf(z) - s, norm.logsf(z))
        return float(ll.sum()), z, sigma


def fit_lognormal_aft(data: Dataset, target: str, basis: BasisSpec = BasisSpec()) -> LognormalAFT:
    """Right-censored Gaussian MLE in (beta, log sigma) by safeguarded Newton.

    Converged when the gradient sup-norm drops below 1e-8; step-halving line
    search keeps the log-likelihood non-decreasing across accepted steps.
    """
    d = _target_indicator(data, target)
    if not np.any(d == 1):
        raise DegenerateDataError(f"no {target} occurrences to fit an AFT model")
    design, names = basis.expand(data.x)
    _check_full_rank(design, names)
    logy = np.log(np.asarray(data.y))

    beta0, *_ = np.linalg.lstsq(design, logy, rcond=None)
    resid = logy - design @ beta0
    s0 = np.log(max(resid.std(), 0.1))
    theta = np.append(beta0, s0)

    ll, z, sigma = _aft_loglik_parts(theta, design, logy, d)
    loglik_path = [ll]
    tol, max_iter = 1e-8, 100
    grad_norm = np.inf
    for it in range(max_iter):
        unc = d == 1
        # hazard ratio phi/Phi-bar for censored rows, computed on the log scale
        r = np.exp(norm.logpdf(z) - norm.logsf(z))
        dl_eta = np.where(unc, z, r) / sigma
        dl_s = np.where(unc, z**2 - 1.0, z * r)
        grad = np.append(design.T @ dl_eta, dl_s.sum())
        grad_norm = np.abs(grad).max()
        if grad_norm < tol:
            break

        rp = r * (r - z)                       # derivative of the hazard ratio
        w_ee = np.where(unc, 1.0, rp) / sigma**2
        w_es = np.where(unc, 2.0 * z, z * rp + r) / sigma
        w_ss = np.where(unc, 2.0 * z**2, z * r + z**2 * rp)
        k = design.shape[1]
        hess = np.empty((k + 1, k + 1))
        hess[:k, :k] = -(design.T * w_ee) @ design
        hess[:k, k] = hess[k, :k] = -(design.T @ w_es)
        hess[k, k] = -w_ss.sum()
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            step = grad
        if grad @ step <= 0:                   # not an ascent direction
            step = grad

        # near the optimum the likelihood gain falls below float resolution,
        # so a monotone line search would freeze; trust small Newton steps
        trust = np.abs(step).max() < 1e-4
        scale = 1.0
        for _ in range(40):
            cand = theta + scale * step
            ll_new, z_new, sigma_new = _aft_loglik_parts(cand, design, logy, d)
            if np.isfinite(ll_new) and (trust or ll_new >= ll):
                break
            scale *= 0.5
        else:
            break                              # no improving step; let tol check decide
        theta, ll, z, sigma = cand, ll_new, z_new, sigma_new
        loglik_path.append(ll)
    else:
        raise NonConvergenceError(
            f"AFT Newton did not converge in {max_iter} iterations "
            f"(gradient sup-norm {grad_norm:.3e})"
        )
    if grad_norm >= tol:
        raise NonConvergenceError(
            f"AFT Newton stalled (gradient sup-norm {grad_norm:.3e} >= {tol})"
        )
    return LognormalAFT(theta[:-1], theta[-1], basis, target, len(loglik_path), grad_norm, loglik_path)


# ---------------------------------------------------------------------------
# discrete-time hazard (pooled person-interval logistic)


class DiscreteHazard:
    """Pooled logistic hazard on grid intervals with a continuous time term."""

    def __init__(self, coef, basis, grid_points, target):
        self.coef = coef
        self.basis = basis
        self.grid_points = grid_points
        self.target = target

    def _hazards(self, x) -> np.ndarray:
        design, _ = self.basis.expand(np.asarray(x, dtype=float))
        J = self.grid_points.size
        u = (np.arange(J, dtype=float) + 1.0) / J
        lp = (design @ self.coef[:-1])[:, None] + self.coef[-1] * u[None, :]
        return 1.0 / (1.0 + np.exp(-lp))

    def predict_survival(self, x, times) -> np.ndarray:
        surv_grid = np.cumprod(1.0 - self._hazards(x), axis=1)
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.grid_points, times, side="right") - 1
        out = np.ones((surv_grid.shape[0], times.size))
        inside = idx >= 0
        out[:, inside] = surv_grid[:, np.minimum(idx[inside], surv_grid.shape[1] - 1)]
        return out


def fit_discrete_hazard(data: Dataset, target: str, grid: TimeGrid,
                        basis: BasisSpec = BasisSpec()) -> DiscreteHazard:
    """Person-interval logistic regression of the interval indicator.

    Subject i is at risk in interval j while y_i >= t_j; the target occurrence
    is placed in the interval of its grid bucket. Separation (|linear
    predictor| > 30) raises a fit error suggesting a coarser grid.
    """
    if grid.J < 2:
        raise ConfigurationError("discrete-hazard fit needs a grid with >= 2 points")
    d = _target_indicator(data, target)
    y = np.asarray(data.y)
    n = data.n
    J = grid.J
    points = np.asarray(grid.points)

    # interval j = (t_{j-1}, t_j]; occurrences land in the interval containing y,
    # mid-interval censorings drop out of the interval they were censored in
    survived = grid.locate(y)                  # complete intervals survived, -1 if none
    occ_interval = np.searchsorted(points, y, side="left")

    design_x, names = basis.expand(data.x)
    rows_x, rows_u, rows_e = [], [], []
    risk_count = np.zeros(J, dtype=int)
    for i in range(n):
        if d[i] == 1 and occ_interval[i] < J:
            last = occ_interval[i]
            hit = True
        else:
            last = min(survived[i], J - 1)
            hit = False
        if last < 0:
            continue
        js = np.arange(last + 1)
        risk_count[js] += 1
        rows_x.append(np.repeat(design_x[i][None, :], last + 1, axis=0))
        rows_u.append((js + 1.0) / J)
        e = np.zeros(last + 1)
        if hit:
            e[last] = 1.0
        rows_e.append(e)
    if np.any(risk_count == 0):
        empty = int(np.argwhere(risk_count == 0)[0])
        raise DegenerateDataError(f"risk set empty in grid interval {empty + 1}")
    design = np.column_stack([np.vstack(rows_x), np.concatenate(rows_u)])
    events = np.concatenate(rows_e)
    names = names + ["(interval)"]
    _check_full_rank(design, names)

    coef = np.zeros(design.shape[1])
    rate = events.mean()
    coef[0] = np.log(rate / (1 - rate)) if 0 < rate < 1 else 0.0
    for _ in range(50):
        lp = design @ coef
        if np.abs(lp).max() > 30:
            raise SeparationError(
                "separation detected in discrete-hazard fit (|linear predictor| > 30); "
                "try a coarser grid"
            )
        prob = 1.0 / (1.0 + np.exp(-lp))
        w = prob * (1.0 - prob)
        grad = design.T @ (events - prob)
        if np.abs(grad).max() < 1e-8:
            break
        hess = (design.T * w) @ design
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise RankDeficiencyError("singular information matrix in discrete-hazard fit") from None
        coef = coef + step
    else:
        raise NonConvergenceError("discrete-hazard IRLS did not converge in 50 iterations")
    return DiscreteHazard(coef, basis, np.asarray(grid.points), target)


# ---------------------------------------------------------------------------
# deliberate misspecification (robustness experiments)


class InjectedMisspecification:
    """Covariate-free curves on the grid: survival evenly spaced 1 -> 0.1.

    For the censoring target this is G directly; for the event target it is
    the complement of an F evenly spaced 0 -> 0.9 (direction reversed because
    F is a distribution function). Both reduce to the same survival values.
    """

    def __init__(self, grid_points: np.ndarray, target: str):
        self.grid_points = grid_points
        self.target = target
        J = grid_points.size
        self.surv_values = 1.0 - 0.9 * np.arange(J) / (J - 1)

    def predict_survival(self, x, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.grid_points, times, side="right") - 1
        row = np.where(idx >= 0, self.surv_values[np.maximum(idx, 0)], 1.0)
        n = np.asarray(x).shape[0]
        return np.broadcast_to(row, (n, times.size)).copy()


def inject_misspecification(grid: TimeGrid, target: str) -> InjectedMisspecification:
    if grid.J < 2:
        raise ConfigurationError("misspecification injector needs a grid with >= 2 points")
    if target not in (EVENT, CENSORING):
        raise ConfigurationError(f"unknown target '{target}'")
    return InjectedMisspecification(np.asarray(grid.points), target)


# ---------------------------------------------------------------------------
# closed-form models (truth oracles and tests)


class ClosedFormSurvival:
    """Wraps survival(x, times) -> (n, J) given in closed form."""

    def __init__(self, fn, target=EVENT):
        self.fn = fn
        self.target = target

    def predict_survival(self, x, times) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=float), np.asarray(times, dtype=float)))


# ---------------------------------------------------------------------------
# curve assembly


@dataclass(frozen=True)
class SurvivalCurveSet:
    """Per-subject conditional curves on a shared grid.

    event_cdf[i, j] = F(t_j | x_i); censor_surv[i, j] = G(t_j | x_i) floored
    at eta; event_cumhaz[i, j] = Lambda(t_j | x_i) accumulated from
    left-anchored ratios, so 1 - F = prod(1 - dLam) holds to rounding.
    """

    grid: TimeGrid
    event_cdf: np.ndarray
    censor_surv: np.ndarray
    event_cumhaz: np.ndarray

    def __post_init__(self):
        F, G, L = self.event_cdf, self.censor_surv, self.event_cumhaz
        for name, a in (("event_cdf", F), ("censor_surv", G), ("event_cumhaz", L)):
            if a.shape != F.shape:
                raise ValidationError(f"{name} shape mismatch")
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"{name} contains non-finite values")
        tol = 1e-09
        if F.min() < -tol or F.max() > 1 + tol or np.any(np.diff(F, axis=1) < -tol):
            raise ValidationError("event_cdf must be non-decreasing within [0, 1]")
        if G.min() <= 0 or G.max() > 1 + tol or np.any(np.diff(G, axis=1) > tol):
            raise ValidationError("censor_surv must be non-increasing within (0, 1]")
        if L.min() < -tol or np.any(np.diff(L, axis=1) < -tol):
            raise ValidationError("event_cumhaz must be non-negative and non-decreasing")

    @property
    def n(self) -> int:
        return self.event_cdf.shape[0]

    def event_surv(self) -> np.ndarray:
        return 1.0 - self.event_cdf

    def event_dlam(self) -> np.ndarray:
        return np.diff(self.event_cumhaz, axis=1, prepend=0.0)

    def subset(self, idx: np.ndarray) -> "SurvivalCurveSet":
        idx = np.asarray(idx)
        return SurvivalCurveSet(
            self.grid, self.event_cdf[idx], self.censor_surv[idx], self.event_cumhaz[idx]
        )


def predict_curves(event_model, censor_model, data: Dataset, grid: TimeGrid,
                   eta_floor: float = 0.05) -> SurvivalCurveSet:
    """Evaluate both models per subject and derive the hazard increments."""
    if not (0 <= eta_floor < 1):
        raise ConfigurationError(f"eta_floor must be in [0, 1), got {eta_floor}")
    times = np.asarray(grid.points)
    S = np.clip(event_model.predict_survival(data.x, times), 0.0, 1.0)
    G = np.clip(censor_model.predict_survival(data.x, times), eta_floor, 1.0)
    if eta_floor == 0.0 and G.min() <= 0.0:
        raise ValidationError("censoring survival hit zero with no floor; set eta_floor > 0")

    S_prev = np.hstack([np.ones((S.shape[0], 1)), S[:, :-1]])
    zero = S_prev <= 0.0
    if np.any(zero):
        i, j = np.argwhere(zero)[0]
        raise HazardDerivationError(
            f"event survival reached 0 before tau for subject {int(i)} at grid point {int(j)}; "
            "hazard increments undefined"
        )
    dlam = (S_prev - S) / S_prev
    return SurvivalCurveSet(
        grid=grid,
        event_cdf=1.0 - S,
        censor_surv=G,
        event_cumhaz=np.cumsum(dlam, axis=1),
    )


def fit_nuisance(spec: NuisanceModelSpec, data: Dataset, grid: TimeGrid):
    """Dispatch a NuisanceModelSpec to its fitting routine."""
    if spec.family == "marginal-km":
        return fit_marginal_km(data, spec.target, grid)
    if spec.family == "lognormal-aft":
        return fit_lognormal_aft(data, spec.target, spec.basis)
    if spec.family == "discrete-hazard":
        return fit_discrete_hazard(data, spec.target, grid, spec.basis)
    if spec.family == "injected":
        return inject_misspecification(grid, spec.target)
    raise ConfigurationError(f"unknown nuisance family '{spec.family}'")
