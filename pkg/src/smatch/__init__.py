"""Multi-treatment matching on minimal-sufficient balancing scores."""

__version__ = "0.1.0"

from smatch.dataset import Dataset, ScalingParams, TreatmentId, Unit, load_csv, standardize
from smatch.scores import (
    KnownDensityModel,
    MultinomialLogitModel,
    PriorWeights,
    ScoreTable,
    ScoreVector,
    binary_propensity,
    check_pfc,
    fit_multinomial_logit,
    glm_score,
    pivot_transform,
    score_known,
)
from smatch.ratio_estim import BasisConfig, DensityRatioModel, fit_ratio, predict_ratio, ratio_score_model
from smatch.matching import (
    MatchSpec,
    MatchedGroup,
    MatchingResult,
    PcaReduction,
    match_all_pivots,
    match_units,
    reduce_scores_pca,
    select_best_pivot,
)
from smatch.effects import BalanceReport, DoseResponseChain, EffectEstimate, balance_report, dose_chain, estimate_pairwise
from smatch.simulation import ExperimentReport, PipelineConfig, SimulationScenario, generate, run_experiment, true_ate

__all__ = [name for name in dir() if not name.startswith("_")]
