from .folds import Fold, FoldError, FoldPlan, make_folds
from .metrics import AUCError, auc, auc_by_pairs, mean_task_auc
from .stats import StatsError, betainc_reg, mean_and_se, paired_t_test, t_sf_two_sided

# experiment depends on train and baselines, which import metrics from here,
# so its names are resolved on first access
_EXPERIMENT_NAMES = (
    "CLASSIFIERS", "MC_TASKS", "MHNS_TASKS", "Cell", "Comparison", "EvalReport",
    "ExperimentConfig", "ExperimentError", "run_experiment", "write_report",
)


def __getattr__(name):
    if name in _EXPERIMENT_NAMES:
        from . import experiment

        return getattr(experiment, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = [
    "CLASSIFIERS", "MC_TASKS", "MHNS_TASKS", "AUCError", "Cell", "Comparison", "EvalReport",
    "ExperimentConfig", "ExperimentError", "Fold", "FoldError", "FoldPlan", "StatsError", "auc",
    "auc_by_pairs", "betainc_reg", "make_folds", "mean_and_se", "mean_task_auc", "paired_t_test",
    "run_experiment", "t_sf_two_sided", "write_report",
]
