"""Variable importance for right-censored time-to-event prediction."""

__version__ = "0.1.0"

from .cindex import BoostConfig, boost_cindex, pair_weights, plugin_cindex
from .data import Dataset, TimeGrid, build_time_grid, make_folds
from .errors import SurvimError
from .inference import (
    AggregatedEstimate,
    EstimatorConfig,
    VimEstimate,
    aggregate_pvalues,
    estimate_vim,
    invert_confidence_interval,
    repeat_and_aggregate,
)
from .measures import (
    MeasureSpec,
    RegressionLearnerSpec,
    oracle_prediction,
    pseudo_outcomes,
    residual_oracle,
)
from .nuisance import (
    BasisSpec,
    NuisanceModelSpec,
    SurvivalCurveSet,
    fit_nuisance,
    predict_curves,
)
from .simlab import (
    ScenarioSpec,
    StudyMetrics,
    generate_scenario,
    run_study,
    scenario_spec,
    true_vim,
)

__all__ = [
    "__version__",
    "AggregatedEstimate",
    "BasisSpec",
    "BoostConfig",
    "Dataset",
    "EstimatorConfig",
    "MeasureSpec",
    "NuisanceModelSpec",
    "RegressionLearnerSpec",
    "ScenarioSpec",
    "StudyMetrics",
    "SurvimError",
    "SurvivalCurveSet",
    "TimeGrid",
    "VimEstimate",
    "aggregate_pvalues",
    "boost_cindex",
    "build_time_grid",
    "estimate_vim",
    "fit_nuisance",
    "generate_scenario",
    "invert_confidence_interval",
    "make_folds",
    "oracle_prediction",
    "pair_weights",
    "plugin_cindex",
    "predict_curves",
    "pseudo_outcomes",
    "repeat_and_aggregate",
    "residual_oracle",
    "run_study",
    "scenario_spec",
    "true_vim",
]
