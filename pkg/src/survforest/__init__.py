"""Random survival forests for right-censored data.

Public surface re-exported here: dataset handling, survival estimators and
metrics, split evaluation, tree and forest growth, and imputation.
"""

from .dataset import (SurvivalDataset, MissingnessReport, MissingCell,
                      load_csv, save_csv, simulate, inject_missing,
                      bundled_pbc_path)
from .survstat import (StepCHF, ConcordanceResult, nelson_aalen,
                       conservation_sum, concordance, prediction_error)
from .splitting import (NodeSample, SplitCandidate, RULES, logrank_stat,
                        logrank_score_stat, conserve_measure, best_split)
from .tree import GrowParams, SurvivalTree, grow_tree, tree_chf
from .forest import (Forest, FitReport, fit, oob_chf, ensemble_chf,
                     mortality, oob_error, vimp, proximity_matrix)
from .impute import (ImputationState, IterationReport, fit_with_imputation,
                     iterate_impute, impute_test, proximity_impute,
                     rough_impute)

__all__ = [
    "SurvivalDataset", "MissingnessReport", "MissingCell", "load_csv",
    "save_csv", "simulate", "inject_missing", "bundled_pbc_path",
    "StepCHF", "ConcordanceResult", "nelson_aalen", "conservation_sum",
    "concordance", "prediction_error",
    "NodeSample", "SplitCandidate", "RULES", "logrank_stat",
    "logrank_score_stat", "conserve_measure", "best_split",
    "GrowParams", "SurvivalTree", "grow_tree", "tree_chf",
    "Forest", "FitReport", "fit", "oob_chf", "ensemble_chf", "mortality",
    "oob_error", "vimp", "proximity_matrix",
    "ImputationState", "IterationReport", "fit_with_imputation",
    "iterate_impute", "impute_test", "proximity_impute", "rough_impute",
]

__version__ = "0.1.0"
