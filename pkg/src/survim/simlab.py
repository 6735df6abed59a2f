"""Synthetic right-censored benchmarks with analytically tractable importance.

Event times are log-normal with location 0.5*x1 - 0.3*x2 + 0.1*x1*x2
- 0.1*x3*x4 + 0.1*x1*x5 and unit scale; censoring is an independent
log-normal whose location shifts with x1 and x2. Dropping a feature set
leaves a Gaussian location mixture whose survival function stays in the
probit family, so the population importance of the supported sets reduces
to one-dimensional integrals evaluated here by Monte Carlo over covariate
draws only (event and censoring noise are integrated in closed form).
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm

from .data import Dataset, TimeGrid
from .errors import (
    ConfigurationError,
    GeneratorError,
    NumericalError,
    DegenerateDataError,
    IdentificationError,
    StudyError,
    UnsupportedSetError,
)
from .inference import EstimatorConfig, estimate_vim, repeat_and_aggregate
from .measures import MeasureSpec
from .nuisance import SurvivalCurveSet

SCENARIOS = ("I", "II", "III", "IV")

# closed-form reductions exist for these dropped sets (1-based indices)
SUPPORTED_SETS = ((1,), (2,), (6,), (1, 6))


@dataclass(frozen=True)
class ScenarioSpec:
    """One benchmark configuration: dimension, covariance, censoring shift."""

    name: str
    p: int
    beta0_c: float
    correlated: bool

    def covariance(self) -> np.ndarray:
        sigma = np.eye(self.p)
        if self.correlated:
            sigma[0, 5] = sigma[5, 0] = 0.7
            sigma[1, 2] = sigma[2, 1] = -0.3
        return sigma


def scenario_spec(name: str, beta0_c: float | None = None) -> ScenarioSpec:
    if name == "I":
        return ScenarioSpec("I", 25, 0.0, True)
    if name == "II":
        return ScenarioSpec("II", 25, 0.0, False)
    if name == "III":
        return ScenarioSpec("III", 5, 0.0, False)
    if name == "IV":
        if beta0_c is None:
            raise ConfigurationError(
                "scenario IV needs an explicit censoring intercept beta0_c"
            )
        return ScenarioSpec("IV", 5, float(beta0_c), False)
    raise ConfigurationError(f"unknown scenario '{name}'; choose from {SCENARIOS}")


def event_location(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (0.5 * x[:, 0] - 0.3 * x[:, 1] + 0.1 * x[:, 0] * x[:, 1]
            - 0.1 * x[:, 2] * x[:, 3] + 0.1 * x[:, 0] * x[:, 4])


def censor_location(spec: ScenarioSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return spec.beta0_c - 0.2 * x[:, 0] + 0.2 * x[:, 1]


def generate_scenario(spec: ScenarioSpec, n: int, seed: int) -> Dataset:
    """Draw one dataset: correlated Gaussian covariates, log-normal times."""
    if n < 1:
        raise ConfigurationError(f"need n >= 1, got {n}")
    try:
        chol = np.linalg.cholesky(spec.covariance())
    except np.linalg.LinAlgError as exc:
        raise GeneratorError(
            f"scenario {spec.name} covariance is not positive definite"
        ) from exc
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, spec.p)) @ chol.T
    log_t = event_location(x) + rng.standard_normal(n)
    log_c = censor_location(spec, x) + rng.standard_normal(n)
    t, c = np.exp(log_t), np.exp(log_c)
    return Dataset(x=x, y=np.minimum(t, c), delta=(t <= c).astype(float))


def true_event_survival(x: np.ndarray, times) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    return norm.sf(np.log(times)[None, :] - event_location(x)[:, None])


def true_censor_survival(spec: ScenarioSpec, x: np.ndarray, times) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    return norm.sf(np.log(times)[None, :] - censor_location(spec, x)[:, None])


def oracle_curves(spec: ScenarioSpec, data: Dataset, grid: TimeGrid,
                  eta_floor: float = 0.0) -> SurvivalCurveSet:
    """Closed-form curve set on the grid; for studies that bypass fitting."""
    S = true_event_survival(data.x, grid.points)
    G = np.clip(true_censor_survival(spec, data.x, grid.points), max(eta_floor, 1e-12), 1.0)
    S_prev = np.hstack([np.ones((data.n, 1)), S[:, :-1]])
    dlam = (S_prev - S) / S_prev
    return SurvivalCurveSet(grid=grid, event_cdf=1.0 - S, censor_surv=G,
                            event_cumhaz=np.cumsum(dlam, axis=1))


# ---------------------------------------------------------------------------
# reduced-model laws


def _normalize_set(s) -> tuple:
    return tuple(sorted(int(j) for j in s))


def reduced_law(spec: ScenarioSpec, s, z: np.ndarray):
    """Location and scale of log T given the retained features.

    z holds draws of (x1..x6); the event location is linear in the dropped
    coordinate for every supported set, so integrating it out keeps the
    conditional law Gaussian. Returns (M, sd) with sd**2 including the unit
    event noise.
    """
    key = _normalize_set(s)
    x1, x2, x3, x4, x5, x6 = (z[:, j] for j in range(6))
    if key == (1,):
        c = 0.5 + 0.1 * x2 + 0.1 * x5
        det = -0.3 * x2 - 0.1 * x3 * x4
        if spec.correlated:
            mean_a, var_a = 0.7 * c * x6, c**2 * 0.51
        else:
            mean_a, var_a = 0.0, c**2
    elif key == (2,):
        b = -0.3 + 0.1 * x1
        det = 0.5 * x1 - 0.1 * x3 * x4 + 0.1 * x1 * x5
        if spec.correlated:
            mean_a, var_a = -0.3 * b * x3, b**2 * 0.91
        else:
            mean_a, var_a = 0.0, b**2
    elif key == (1, 6):
        c = 0.5 + 0.1 * x2 + 0.1 * x5
        det = -0.3 * x2 - 0.1 * x3 * x4
        mean_a, var_a = 0.0, c**2
    else:
        raise UnsupportedSetError(
            f"no closed-form reduction for dropped set {key}; supported: "
            f"{SUPPORTED_SETS}"
        )
    M = det + mean_a
    sd = np.sqrt(var_a + 1.0)
    return M, sd


def _draw_z6(spec: ScenarioSpec, mc: int, seed: int) -> np.ndarray:
    """Covariate draws restricted to the six coordinates the location uses."""
    cov = np.eye(6)
    if spec.correlated:
        cov[0, 5] = cov[5, 0] = 0.7
        cov[1, 2] = cov[2, 1] = -0.3
    chol = np.linalg.cholesky(cov)
    rng = np.random.default_rng(seed)
    return rng.standard_normal((mc, 6)) @ chol.T


def _sorted_pair_sum(order_scores: np.ndarray, gain: np.ndarray,
                     partner: np.ndarray) -> float:
    """Sum over ordered pairs of gain_i * partner_j where the partner's score
    is strictly below subject i's score (prefix form)."""
    order = np.argsort(order_scores, kind="stable")
    g = gain[order]
    h = partner[order]
    prefix = np.concatenate([[0.0], np.cumsum(h)[:-1]])
    return float(np.sum(g * prefix))


def _cindex_v1(mu: np.ndarray, risk: np.ndarray, tau: float, n_buckets: int) -> float:
    """V1 of the concordance measure for scores ordered by `risk`.

    Integrates sum_pairs 1{risk_i > risk_j} dF_i(u) S_j(u) over u <= log tau
    with midpoint buckets; prefix sums over the risk ordering avoid the n^2
    pair enumeration.
    """
    n = mu.shape[0]
    log_tau = np.log(tau)
    lo = log_tau - 25.0
    edges = np.linspace(lo, log_tau, n_buckets + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    order = np.argsort(risk, kind="stable")
    mu_o = mu[order]
    total = 0.0
    f_prev = ndtr(edges[0] - mu_o)
    for q in range(n_buckets):
        f_new = ndtr(edges[q + 1] - mu_o)
        df = f_new - f_prev
        f_prev = f_new
        s_mid = ndtr(mu_o - mids[q])          # survival at the midpoint
        # subjects with larger risk sit earlier; partner j needs risk_j < risk_i
        prefix = np.concatenate([[0.0], np.cumsum(s_mid)[:-1]])
        total += float(np.sum(df * prefix))
    return total / n**2


def _cindex_v2(mu: np.ndarray, tau: float, n_buckets: int) -> float:
    log_tau = np.log(tau)
    edges = np.linspace(log_tau - 25.0, log_tau, n_buckets + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    fbar_prev = float(np.mean(ndtr(edges[0] - mu)))
    total = 0.0
    for q in range(n_buckets):
        fbar_new = float(np.mean(ndtr(edges[q + 1] - mu)))
        sbar_mid = float(np.mean(ndtr(mu - mids[q])))
        total += (fbar_new - fbar_prev) * sbar_mid
        fbar_prev = fbar_new
    return total


def _rmst_parts(locations: np.ndarray, scales, tau: float, n_buckets: int):
    """(E[T ^ tau | X], E[(T ^ tau)^2 | X]) by midpoint quadrature in t."""
    width = tau / n_buckets
    t_mid = (np.arange(n_buckets) + 0.5) * width
    first = np.zeros_like(locations)
    second = np.zeros_like(locations)
    log_t = np.log(t_mid)
    for q in range(n_buckets):
        s_q = ndtr((locations - log_t[q]) / scales)
        first += s_q * width
        second += 2.0 * t_mid[q] * s_q * width
    return first, second


def true_vim(spec: ScenarioSpec, kind: str, tau: float, s,
             mc: int = 2_000_000, seed: int = 0, n_buckets: int = 256) -> float:
    """Population importance of dropping set s, by covariate-only Monte Carlo."""
    if tau <= 0:
        raise ConfigurationError("tau must be positive")
    key = _normalize_set(s)
    if key == (6,):
        # the location never uses x6, so the reduced law equals the full law
        return 0.0
    z = _draw_z6(spec, mc, seed)
    mu = event_location(z)
    M, sd = reduced_law(spec, key, z)
    log_tau = np.log(tau)

    if kind == "auc":
        F = ndtr(log_tau - mu)
        S = 1.0 - F
        f_red = ndtr((log_tau - M) / sd)
        v1_full = _sorted_pair_sum(F, F, S) / mc**2
        v1_red = _sorted_pair_sum(f_red, F, S) / mc**2
        v2 = float(F.mean() * S.mean())
        return (v1_full - v1_red) / v2

    if kind == "brier":
        F = ndtr(log_tau - mu)
        S = 1.0 - F
        f_red = ndtr((M - log_tau) / sd)      # reduced survival probability
        v1_full = float(np.mean(F * S))
        v1_red = float(np.mean(F * f_red**2 + S * (f_red - 1.0) ** 2))
        return v1_red - v1_full

    if kind == "survival-mse":
        rmst_full, second = _rmst_parts(mu, np.ones_like(mu), tau, max(n_buckets, 512))
        rmst_red, _ = _rmst_parts(M, sd, tau, max(n_buckets, 512))
        # risks differ by exactly the squared gap between the two regressions
        return float(np.mean((rmst_red - rmst_full) ** 2))

    if kind == "cindex":
        # concordance depends on a score only through its ordering, and the
        # best reduced ordering prefers i before j when P(T_i < T_j) > 1/2,
        # i.e. by the conditional location of log T; the conditional mean
        # exp(M + V/2) reorders high-variance subjects and scores worse
        v1_full = _cindex_v1(mu, -mu, tau, n_buckets)
        v1_red = _cindex_v1(mu, -M, tau, n_buckets)
        v2 = _cindex_v2(mu, tau, n_buckets)
        return (v1_full - v1_red) / v2

    raise ConfigurationError(f"unknown measure kind '{kind}'")


# ---------------------------------------------------------------------------
# replicated studies


REPLICATE_COLUMNS = ("rep", "data_seed", "est_seed", "status", "error", "psi",
                     "se", "ci_lower", "ci_upper", "p_one_sided", "v_full",
                     "v_reduced")


@dataclass(frozen=True)
class StudyMetrics:
    reps: int
    failures: int
    mean_psi: float
    sd_psi: float
    mean_se: float
    bias: float | None
    bias_mcse: float | None
    coverage: float | None
    coverage_mcse: float | None
    rejection: float
    rejection_mcse: float
    replicates_path: str
    summary_path: str


def summarize_replicates(rows, truth: float | None, alpha: float):
    """Aggregate replicate rows into (metric, value, mcse) triples.

    Deterministic given the rows, so the summary can be rebuilt from the
    replicates file alone.
    """
    ok = [r for r in rows if r["status"] == "ok"]
    n_ok = len(ok)
    out = [("reps", float(len(rows)), 0.0), ("reps_ok", float(n_ok), 0.0),
           ("failures", float(len(rows) - n_ok), 0.0)]
    if n_ok == 0:
        return out
    psi = np.array([float(r["psi"]) for r in ok])
    se = np.array([float(r["se"]) for r in ok])
    pvals = np.array([float(r["p_one_sided"]) for r in ok])
    sd = float(psi.std(ddof=1)) if n_ok > 1 else 0.0
    out.append(("mean_psi", float(psi.mean()), sd / np.sqrt(n_ok)))
    out.append(("sd_psi", sd, 0.0))
    out.append(("mean_se", float(se.mean()), 0.0))
    rej = float(np.mean(pvals < alpha))
    out.append(("rejection", rej, float(np.sqrt(rej * (1 - rej) / n_ok))))
    if truth is not None:
        bias = float(psi.mean() - truth)
        out.append(("bias", bias, sd / np.sqrt(n_ok)))
        lo = np.array([float(r["ci_lower"]) for r in ok])
        hi = np.array([float(r["ci_upper"]) for r in ok])
        cov = float(np.mean((lo <= truth) & (truth <= hi)))
        out.append(("coverage", cov, float(np.sqrt(cov * (1 - cov) / n_ok))))
    return out


def run_study(spec: ScenarioSpec, n: int, reps: int, measure: MeasureSpec, s,
              config: EstimatorConfig, seed: int, out_dir,
              truth: float | None = None, splits: int = 1,
              max_failure_rate: float = 0.2, threads: int = 1,
              progress=None) -> StudyMetrics:
    """Replicate generate -> estimate, recording every outcome to CSV."""
    if reps < 1:
        raise ConfigurationError(f"need reps >= 1, got {reps}")
    if threads < 1:
        raise ConfigurationError(f"need threads >= 1, got {threads}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    states = np.random.SeedSequence(seed).generate_state(2 * reps)

    def one_replicate(r: int) -> dict:
        data_seed = int(states[2 * r])
        est_seed = int(states[2 * r + 1])
        row = {"rep": r + 1, "data_seed": data_seed, "est_seed": est_seed,
               "status": "ok", "error": ""}
        try:
            data = generate_scenario(spec, n, data_seed)
            run_config = replace(config, seed=est_seed)
            if splits > 1:
                est = repeat_and_aggregate(data, measure, s, run_config, splits)
            else:
                est = estimate_vim(data, measure, s, run_config)
            row.update(psi=est.psi, se=est.se, ci_lower=est.ci_lower,
                       ci_upper=est.ci_upper, p_one_sided=est.p_one_sided,
                       v_full=est.v_full, v_reduced=est.v_reduced)
        except (NumericalError, DegenerateDataError, IdentificationError) as exc:
            row["status"] = "error"
            row["error"] = f"{type(exc).__name__}: {exc}"
            row.update(psi="", se="", ci_lower="", ci_upper="",
                       p_one_sided="", v_full="", v_reduced="")
        return row

    # replicate seeds are fixed up front, so rows come out identical (and in
    # the same order) no matter how many workers share the loop
    if threads == 1:
        rows = []
        for r in range(reps):
            rows.append(one_replicate(r))
            if progress is not None:
                progress(rows[-1])
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = []
            for row in pool.map(one_replicate, range(reps)):
                rows.append(row)
                if progress is not None:
                    progress(row)

    rep_path = out / "replicates.csv"
    with open(rep_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPLICATE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    failures = sum(1 for r in rows if r["status"] != "ok")
    if failures > max_failure_rate * reps:
        raise StudyError(
            f"{failures}/{reps} replicates failed, above the "
            f"{max_failure_rate:.0%} tolerance; see {rep_path}"
        )

    summary = summarize_replicates(rows, truth, config.alpha)
    sum_path = out / "summary.csv"
    with open(sum_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value", "mcse"])
        writer.writerows(summary)

    lookup = {name: (val, mcse) for name, val, mcse in summary}
    ok = reps - failures

    def metric(name):
        return lookup.get(name, (None, None))

    return StudyMetrics(
        reps=reps, failures=failures,
        mean_psi=metric("mean_psi")[0] if ok else float("nan"),
        sd_psi=metric("sd_psi")[0] if ok else float("nan"),
        mean_se=metric("mean_se")[0] if ok else float("nan"),
        bias=metric("bias")[0], bias_mcse=metric("bias")[1],
        coverage=metric("coverage")[0], coverage_mcse=metric("coverage")[1],
        rejection=metric("rejection")[0] if ok else float("nan"),
        rejection_mcse=metric("rejection")[1] if ok else float("nan"),
        replicates_path=str(rep_path), summary_path=str(sum_path),
    )
