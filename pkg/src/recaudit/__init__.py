"""Simulator-backed audit framework for recommender bias and forgetting
time, estimated with control and rule-following counterfactual bots."""

from .catalog import (Catalog, CategoryThresholds, build_synthetic_catalog,
                      label_category)
from .platform import (AccountState, CatalogIndex, RecommenderParams,
                       expected_state, generate_slate, record_watch,
                       reset_account)
from .bots import BotPolicy, PacingRule, Session, run_session
from .experiments import (ExperimentSpecA, ExperimentSpecB,
                          run_bias_experiment, run_forgetting_experiment)
from .estimators import (fit_wls, forgetting_curve, preference_gap,
                         bias_regressions, burst_regressions)

__version__ = "0.1.0"

__all__ = [
    "Catalog", "CategoryThresholds", "build_synthetic_catalog",
    "label_category", "AccountState", "CatalogIndex", "RecommenderParams",
    "expected_state", "generate_slate", "record_watch", "reset_account",
    "BotPolicy", "PacingRule", "Session", "run_session",
    "ExperimentSpecA", "ExperimentSpecB", "run_bias_experiment",
    "run_forgetting_experiment", "fit_wls", "forgetting_curve",
    "preference_gap", "bias_regressions", "burst_regressions",
]
