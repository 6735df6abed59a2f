"""Command-line front end: single estimates, replicated studies, truth values.

All commands read a JSON config document; unknown keys anywhere in the
document are rejected so a typo cannot silently fall back to a default.
Outputs are JSON and CSV only, each carrying a provenance block (version,
config hash, seed) that pins the run well enough to reproduce it
bit-identically on the same build.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import importlib.resources
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cindex import BoostConfig
from .data import load_dataset
from .errors import ConfigurationError, SchemaError, SurvimError, EXIT_OK
from .inference import ALGORITHMS, EstimatorConfig, estimate_vim, repeat_and_aggregate
from .measures import (
    MEASURE_KINDS,
    MeasureSpec,
    RegressionLearnerSpec,
    validate_feature_set,
)
from .nuisance import BasisSpec, CENSORING, EVENT, NuisanceModelSpec
from .simlab import (
    SCENARIOS,
    generate_scenario,
    run_study,
    scenario_spec,
    true_vim,
)

PROG = "survim"

# families the CLI exposes; the injected family is a testing hook and stays
# library-only
CLI_FAMILIES = ("marginal-km", "lognormal-aft", "discrete-hazard")


# ---------------------------------------------------------------------------
# config document validation


def _where(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _expect_keys(doc, path: str, required: tuple, optional: tuple) -> None:
    if not isinstance(doc, dict):
        raise SchemaError(f"{path or 'config'}: expected an object")
    unknown = sorted(set(doc) - set(required) - set(optional))
    if unknown:
        raise SchemaError(f"{path or 'config'}: unknown keys {unknown}")
    missing = sorted(set(required) - set(doc))
    if missing:
        raise SchemaError(f"{path or 'config'}: missing required keys {missing}")


def _as_int(doc, path, key, default=None):
    value = doc.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{_where(path, key)}: expected an integer, got {value!r}")
    return value


def _as_number(doc, path, key, default=None):
    value = doc.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{_where(path, key)}: expected a number, got {value!r}")
    return float(value)


def _as_str(doc, path, key, default=None, choices=None):
    value = doc.get(key, default)
    if value is None:
        return None
    if not isinstance(value, str):
        raise SchemaError(f"{_where(path, key)}: expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise SchemaError(
            f"{_where(path, key)}: must be one of {list(choices)}, got '{value}'"
        )
    return value


def _as_bool(doc, path, key, default=None):
    value = doc.get(key, default)
    if value is None:
        return None
    if not isinstance(value, bool):
        raise SchemaError(f"{_where(path, key)}: expected true/false, got {value!r}")
    return value


def _parse_basis(value, path: str) -> BasisSpec:
    """Accept the shorthand strings or an explicit object with 1-based pairs."""
    if value is None or isinstance(value, str):
        try:
            return BasisSpec.parse(value)
        except (ConfigurationError, SchemaError):
            raise SchemaError(
                f"{path}: basis must be 'main', 'interactions', 'quadratic' or an object"
            )
    _expect_keys(value, path, (), ("pairs", "all_pairs", "squares"))
    pairs = value.get("pairs", [])
    if not isinstance(pairs, list):
        raise SchemaError(f"{path}.pairs: expected a list of [i, j] pairs")
    converted = []
    for k, pair in enumerate(pairs):
        if (not isinstance(pair, list) or len(pair) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in pair)):
            raise SchemaError(f"{path}.pairs[{k}]: expected a pair of integers")
        if min(pair) < 1:
            raise SchemaError(f"{path}.pairs[{k}]: feature indices are 1-based")
        converted.append((pair[0] - 1, pair[1] - 1))
    return BasisSpec(
        pairs=tuple(converted),
        all_pairs=bool(_as_bool(value, path, "all_pairs", False)),
        squares=bool(_as_bool(value, path, "squares", False)),
    )


def _parse_nuisance(doc, path: str, target: str, default: NuisanceModelSpec) -> NuisanceModelSpec:
    if doc is None:
        return default
    _expect_keys(doc, path, ("family",), ("basis",))
    family = _as_str(doc, path, "family", choices=CLI_FAMILIES)
    return NuisanceModelSpec(family, target, _parse_basis(doc.get("basis"), f"{path}.basis"))


def _parse_learner(doc, path: str) -> RegressionLearnerSpec:
    if doc is None:
        return RegressionLearnerSpec()
    _expect_keys(doc, path, (), ("family", "basis", "k"))
    return RegressionLearnerSpec(
        family=_as_str(doc, path, "family", "least-squares-basis",
                       choices=("least-squares-basis", "knn")),
        basis=_parse_basis(doc.get("basis"), f"{path}.basis"),
        k=_as_int(doc, path, "k", 5),
    )


def _parse_boost(doc, path: str, default: BoostConfig) -> BoostConfig:
    if doc is None:
        return default
    _expect_keys(doc, path, (), ("mstop", "zeta", "learning_rate", "cv_folds",
                                 "subsample", "mstop_candidates", "zeta_candidates"))
    kwargs = {}
    if "mstop" in doc:
        kwargs["mstop"] = _as_int(doc, path, "mstop")
    if "zeta" in doc:
        kwargs["zeta"] = _as_number(doc, path, "zeta")
    if "learning_rate" in doc:
        kwargs["learning_rate"] = _as_number(doc, path, "learning_rate")
    if "cv_folds" in doc:
        kwargs["cv_folds"] = _as_int(doc, path, "cv_folds")
    if "subsample" in doc:
        kwargs["subsample"] = _as_number(doc, path, "subsample")
    for key in ("mstop_candidates", "zeta_candidates"):
        if key in doc:
            value = doc[key]
            if not isinstance(value, list) or not value:
                raise SchemaError(f"{_where(path, key)}: expected a non-empty list")
            kwargs[key] = tuple(value)
    return BoostConfig(**kwargs)


def _parse_measure(doc, path: str) -> MeasureSpec:
    _expect_keys(doc, path, ("kind", "tau"), ())
    kind = _as_str(doc, path, "kind", choices=MEASURE_KINDS)
    tau = _as_number(doc, path, "tau")
    return MeasureSpec(kind, tau)


def _parse_scenario(doc, path: str, extra: tuple = ()):
    _expect_keys(doc, path, ("name",), ("beta0_c",) + extra)
    name = _as_str(doc, path, "name", choices=SCENARIOS)
    return scenario_spec(name, _as_number(doc, path, "beta0_c"))


ESTIMATOR_KEYS = ("algorithm", "n_folds", "seed", "alpha", "event_model",
                  "censor_model", "predictor_route", "reduced_learner",
                  "pseudo_learner", "boost", "grid_policy", "grid_size",
                  "eta_floor")


def _parse_estimator(doc, path: str = "") -> EstimatorConfig:
    default = EstimatorConfig()
    return EstimatorConfig(
        algorithm=_as_str(doc, path, "algorithm", default.algorithm, choices=ALGORITHMS),
        n_folds=_as_int(doc, path, "n_folds", default.n_folds),
        seed=_as_int(doc, path, "seed", default.seed),
        alpha=_as_number(doc, path, "alpha", default.alpha),
        event_model=_parse_nuisance(doc.get("event_model"), _where(path, "event_model"),
                                    EVENT, default.event_model),
        censor_model=_parse_nuisance(doc.get("censor_model"), _where(path, "censor_model"),
                                     CENSORING, default.censor_model),
        predictor_route=_as_str(doc, path, "predictor_route", default.predictor_route),
        reduced_learner=_parse_learner(doc.get("reduced_learner"),
                                       _where(path, "reduced_learner")),
        pseudo_learner=_parse_learner(doc.get("pseudo_learner"),
                                      _where(path, "pseudo_learner")),
        boost=_parse_boost(doc.get("boost"), _where(path, "boost"), default.boost),
        grid_policy=_as_str(doc, path, "grid_policy", default.grid_policy),
        grid_size=_as_int(doc, path, "grid_size", default.grid_size),
        eta_floor=_as_number(doc, path, "eta_floor", default.eta_floor),
    )


# ---------------------------------------------------------------------------
# data sources


def toy_dataset_path() -> Path:
    """Filesystem path of the bundled 60-subject example table."""
    return Path(importlib.resources.files("survim").joinpath("assets/toy.csv"))


def _read_dataset(source: str):
    path = toy_dataset_path() if source == "toy" else Path(source)
    if not path.exists():
        raise SchemaError(f"dataset file not found: {path}")
    return load_dataset(path)


def _resolve_features(s, feature_names, path: str) -> list:
    """Feature references: 1-based indices or column names, to 1-based indices."""
    if not isinstance(s, list) or not s:
        raise SchemaError(f"{path}: expected a non-empty list of indices or names")
    name_to_index = {name: j + 1 for j, name in enumerate(feature_names)}
    out = []
    for item in s:
        if isinstance(item, bool):
            raise SchemaError(f"{path}: expected integer or string entries")
        if isinstance(item, int):
            out.append(item)
        elif isinstance(item, str):
            if item not in name_to_index:
                raise SchemaError(
                    f"{path}: no feature named '{item}' "
                    f"(have {', '.join(feature_names)})"
                )
            out.append(name_to_index[item])
        else:
            raise SchemaError(f"{path}: expected integer or string entries")
    return out


# ---------------------------------------------------------------------------
# provenance and output


def _config_hash(doc) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _provenance(command: str, doc, seed) -> dict:
    return {
        "tool": PROG,
        "version": __version__,
        "command": command,
        "config_sha256": _config_hash(doc),
        "seed": seed,
    }


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(args) -> dict:
    if args.config is None:
        raise SchemaError("--config PATH is required for this command")
    path = Path(args.config)
    if not path.exists():
        raise SchemaError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})")
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top-level config must be an object")
    return doc


def _apply_overrides(doc: dict, args) -> dict:
    doc = dict(doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["out"] = str(args.out)
    return doc


# ---------------------------------------------------------------------------
# commands


ESTIMATE_COLUMNS = ("measure", "tau", "s", "n", "algorithm", "reps", "psi",
                    "se", "ci_lower", "ci_upper", "p_one_sided", "v_full",
                    "v_reduced", "seed", "config_sha256")


def cmd_estimate(args) -> int:
    doc = _apply_overrides(_load_config(args), args)
    _expect_keys(doc, "", ("measure", "s"),
                 ("dataset", "scenario", "reps", "out") + ESTIMATOR_KEYS)
    if ("dataset" in doc) == ("scenario" in doc):
        raise SchemaError("config: provide exactly one of 'dataset' or 'scenario'")

    if "dataset" in doc:
        data = _read_dataset(_as_str(doc, "", "dataset"))
    else:
        spec = _parse_scenario(doc["scenario"], "scenario", extra=("n", "data_seed"))
        n = _as_int(doc["scenario"], "scenario", "n")
        if n is None:
            raise SchemaError("scenario.n: required to draw a dataset")
        data = generate_scenario(spec, n, _as_int(doc["scenario"], "scenario", "data_seed", 0))

    measure = _parse_measure(doc["measure"], "measure")
    s = _resolve_features(doc["s"], data.feature_names, "s")
    validate_feature_set(s, data.p)
    config = _parse_estimator(doc)
    reps = _as_int(doc, "", "reps", 1)
    if reps < 1:
        raise SchemaError("reps: must be >= 1")

    if reps > 1:
        est = repeat_and_aggregate(data, measure, s, config, reps)
    else:
        est = estimate_vim(data, measure, s, config)

    result = {
        "provenance": _provenance("estimate", doc, config.seed),
        "measure": {"kind": measure.kind, "tau": measure.tau},
        "s": s,
        "n": data.n,
        "algorithm": config.algorithm,
        "reps": reps,
        "estimate": {
            "psi": est.psi,
            "se": est.se,
            "ci_lower": est.ci_lower,
            "ci_upper": est.ci_upper,
            "p_one_sided": est.p_one_sided,
            "v_full": est.v_full,
            "v_reduced": est.v_reduced,
        },
    }
    out = Path(doc.get("out", "."))
    _write_json(out / "result.json", result)
    with open(out / "estimate.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ESTIMATE_COLUMNS)
        writer.writeheader()
        writer.writerow({
            "measure": measure.kind, "tau": measure.tau,
            "s": " ".join(str(j) for j in s), "n": data.n,
            "algorithm": config.algorithm, "reps": reps,
            "psi": est.psi, "se": est.se, "ci_lower": est.ci_lower,
            "ci_upper": est.ci_upper, "p_one_sided": est.p_one_sided,
            "v_full": est.v_full, "v_reduced": est.v_reduced,
            "seed": config.seed,
            "config_sha256": result["provenance"]["config_sha256"],
        })
    print(f"{measure.kind} tau={measure.tau:g} s={s}: "
          f"psi={est.psi:.6f} se={est.se:.6f} "
          f"ci=[{est.ci_lower:.6f}, {est.ci_upper:.6f}] p={est.p_one_sided:.4g}")
    print(f"wrote {out / 'result.json'} and {out / 'estimate.csv'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.profile is not None:
        if args.config is not None:
            raise SchemaError("give either --config or --profile, not both")
        doc = _apply_overrides(_profile_document(args.profile), args)
    else:
        doc = _apply_overrides(_load_config(args), args)
    _expect_keys(doc, "", ("scenario", "n", "reps", "measure", "s"),
                 ("seed", "splits", "truth", "max_failure_rate", "out") + ESTIMATOR_KEYS)

    spec = _parse_scenario(doc["scenario"], "scenario")
    n = _as_int(doc, "", "n")
    reps = _as_int(doc, "", "reps")
    measure = _parse_measure(doc["measure"], "measure")
    config = _parse_estimator(doc)
    seed = _as_int(doc, "", "seed", 0)
    splits = _as_int(doc, "", "splits", 1)
    truth = _as_number(doc, "", "truth")
    max_failure_rate = _as_number(doc, "", "max_failure_rate", 0.2)
    s = [int(v) for v in doc["s"]] if all(isinstance(v, int) for v in doc["s"]) else None
    if s is None:
        raise SchemaError("s: studies draw their own data, so use 1-based indices")
    validate_feature_set(s, spec.p)

    out = Path(doc.get("out", f"study-{spec.name}-{measure.kind}"))
    out.mkdir(parents=True, exist_ok=True)
    resolved = {**doc, "out": str(out)}
    _write_json(out / "config.json", {
        "provenance": _provenance("simulate", resolved, seed),
        "config": resolved,
    })

    def progress(row):
        shown = f"psi={row['psi']:.6f}" if row["status"] == "ok" else row["error"]
        print(f"[{row['rep']}/{reps}] {row['status']} {shown}", flush=True)

    metrics = run_study(spec, n, reps, measure, s, config, seed, out,
                        truth=truth, splits=splits,
                        max_failure_rate=max_failure_rate,
                        threads=args.threads, progress=progress)
    print(f"reps={metrics.reps} failures={metrics.failures} "
          f"mean_psi={metrics.mean_psi:.6f} sd_psi={metrics.sd_psi:.6f} "
          f"rejection={metrics.rejection:.3f}")
    if metrics.bias is not None:
        print(f"bias={metrics.bias:+.6f} coverage={metrics.coverage:.3f}")
    print(f"wrote {metrics.replicates_path} and {metrics.summary_path}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    doc = _apply_overrides(_load_config(args), args)
    _expect_keys(doc, "", ("scenario", "measure", "s"),
                 ("mc_size", "chunks", "seed", "out"))
    spec = _parse_scenario(doc["scenario"], "scenario")
    measure = _parse_measure(doc["measure"], "measure")
    s = tuple(sorted(_resolve_features(doc["s"], tuple(f"x{i+1}" for i in range(spec.p)), "s")))
    mc_size = _as_int(doc, "", "mc_size", 800_000)
    chunks = _as_int(doc, "", "chunks", 8)
    seed = _as_int(doc, "", "seed", 0)
    if mc_size < chunks or chunks < 2:
        raise SchemaError("need mc_size >= chunks and chunks >= 2")

    # independent chunks give the point estimate and its Monte Carlo error
    draws = np.array([
        true_vim(spec, measure.kind, measure.tau, s, mc=mc_size // chunks, seed=seed + i)
        for i in range(chunks)
    ])
    psi = float(draws.mean())
    mc_se = float(draws.std(ddof=1) / np.sqrt(chunks))
    print(f"scenario {spec.name} {measure.kind} tau={measure.tau:g} s={list(s)}: "
          f"psi0 = {psi:.6f} +/- {mc_se:.6f} "
          f"(mc {mc_size // chunks} x {chunks} chunks)")
    if "out" in doc:
        payload = {
            "provenance": _provenance("oracle", doc, seed),
            "scenario": spec.name,
            "measure": {"kind": measure.kind, "tau": measure.tau},
            "s": list(s),
            "psi0": psi,
            "mc_se": mc_se,
        }
        _write_json(Path(doc["out"]) / "oracle.json", payload)
        print(f"wrote {Path(doc['out']) / 'oracle.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# reproduction profiles


def _profile_document(name: str) -> dict:
    profiles = {
        # scenario I, AUC at the earlier horizon, the non-null feature:
        # the headline single-feature panel of the main simulation grid
        "paper-fig1": {
            "scenario": {"name": "I"},
            "n": 1000,
            "reps": 200,
            "measure": {"kind": "auc", "tau": 0.5},
            "s": [1],
            "algorithm": "crossfit",
            "n_folds": 5,
            "seed": 0,
            "event_model": {
                "family": "lognormal-aft",
                "basis": {"pairs": [[1, 2], [3, 4], [1, 5]]},
            },
            "censor_model": {"family": "lognormal-aft"},
            "out": "paper-fig1",
        },
    }
    if name not in profiles:
        raise ConfigurationError(
            f"unknown profile '{name}' (available: {', '.join(sorted(profiles))})"
        )
    return profiles[name]


def cmd_reproduce(args) -> int:
    doc = _apply_overrides(_profile_document(args.profile), args)
    out = Path(doc.get("out", args.profile))
    path = out / "config.json"
    _write_json(path, doc)
    print(json.dumps(doc, indent=2, sort_keys=True))
    print(f"wrote {path}; run: {PROG} simulate --config {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Variable importance for right-censored prediction models.",
    )
    parser.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", metavar="PATH", default=None,
                       help="JSON run configuration" + ("" if config_required else " (optional)"))
        p.add_argument("--seed", type=int, default=None, metavar="N",
                       help="override the config seed")
        p.add_argument("--threads", type=int, default=1, metavar="N",
                       help="worker-thread cap for replicated studies")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="override the config output directory")

    p_est = sub.add_parser("estimate", help="one VIM estimate on a dataset or drawn scenario")
    common(p_est)
    p_est.set_defaults(func=cmd_estimate)

    p_sim = sub.add_parser("simulate", help="replicated study with CSV outputs")
    common(p_sim, config_required=False)
    p_sim.add_argument("--profile", default=None, metavar="NAME",
                       help="run a built-in profile instead of --config")
    p_sim.set_defaults(func=cmd_simulate)

    p_orc = sub.add_parser("oracle", help="population truth value with MC error")
    common(p_orc)
    p_orc.set_defaults(func=cmd_oracle)

    p_rep = sub.add_parser("reproduce", help="emit a built-in profile's config")
    p_rep.add_argument("profile", help="profile name, e.g. paper-fig1")
    common(p_rep, config_required=False)
    p_rep.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SurvimError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
