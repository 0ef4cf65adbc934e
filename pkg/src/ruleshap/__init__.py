"""Rule ensembles with horseshoe shrinkage and exact Shapley inference."""

from .dataset import (
    Dataset,
    DataError,
    FriedmanConfig,
    Preprocessing,
    dummy_code,
    fit_preprocessing,
    friedman_generate,
    load_csv,
    write_csv,
)
from .horseshoe import DesignMatrices, GibbsConfig, PosteriorDraws, gibbs_fit, posterior_summary
from .inference import (
    EffectReport,
    InteractionReport,
    effect_report,
    interaction_report,
    rejection_rates,
    rulefit_importance,
)
from .model import RuleShapModel, StageError, fit_ruleshap
from .rulegen import Condition, Rule, RuleSet, SmoothingConfig, extract_rules, rule_scale, smoothing_forest
from .shapley import (
    ShapleyCube,
    binom_sum_identity_check,
    brute_force_shapley,
    linear_shapley,
    model_shapley,
    rule_interaction_shapley,
    rule_shapley,
)

__all__ = [
    "Condition",
    "DataError",
    "Dataset",
    "DesignMatrices",
    "EffectReport",
    "FriedmanConfig",
    "GibbsConfig",
    "InteractionReport",
    "PosteriorDraws",
    "Preprocessing",
    "Rule",
    "RuleSet",
    "RuleShapModel",
    "ShapleyCube",
    "SmoothingConfig",
    "StageError",
    "binom_sum_identity_check",
    "brute_force_shapley",
    "dummy_code",
    "effect_report",
    "extract_rules",
    "fit_preprocessing",
    "fit_ruleshap",
    "friedman_generate",
    "gibbs_fit",
    "interaction_report",
    "linear_shapley",
    "load_csv",
    "model_shapley",
    "posterior_summary",
    "rejection_rates",
    "rule_interaction_shapley",
    "rule_scale",
    "rule_shapley",
    "rulefit_importance",
    "smoothing_forest",
    "write_csv",
]
