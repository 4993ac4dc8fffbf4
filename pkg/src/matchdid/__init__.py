"""Paired difference-in-differences pipeline over survey clusters.

Stages: geographic pairing of early/late clusters, prevalence-based pair
classification, balance-constrained cardinality matching of treated and
control pairs, multiple imputation of the missing binary outcome,
random-intercept linear probability estimation pooled by Rubin's rules,
and an omitted-variable sensitivity sweep. A synthetic scenario generator
with known ground truth makes every stage testable end to end.
"""

from .model import (
    BirthRecord,
    BirthSize,
    ClusterPair,
    ClusterRecord,
    Coefficients,
    GeoPoint,
    ModelSpec,
    PairCategory,
    PrevalenceLevel,
    Quadruple,
    Role,
    SensitivityParams,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DataValidationError,
    MatchDidError,
)
from .geomatch import (
    CaliperSpec,
    DistanceMatrix,
    haversine_km,
    match_country,
    optimal_pairing,
    rank_mahalanobis,
)
from .classify import classify_pairs, pair_category, prevalence_level
from .cardmatch import (
    BalanceReport,
    cardinality_match,
    pair_within_selection,
    std_diff,
)
from .impute import (
    ImputationModel,
    ImputedSet,
    draw_imputations,
    fit_imputation_model,
)
from .infer import (
    InferenceDesign,
    MixedFit,
    PooledEstimate,
    PrimaryResult,
    build_design,
    did_contrasts,
    fit_mixed_lpm,
    rubin_combine,
    run_primary_analysis,
)
from .ingest import (
    AvailabilityTable,
    CountryAvailability,
    StudySelection,
    aggregate_cluster_covariates,
    filter_births,
    select_study_years,
)
from .report import MatchDiagnostics, match_diagnostics
from .sensan import (
    SensitivityResult,
    SensitivityRow,
    gen_u,
    sensitivity_fit,
    sensitivity_grid,
)
from .synth import ScenarioConfig, ScenarioData, UTrue, gen_scenario, generate

__version__ = "0.1.0"

__all__ = [
    "AvailabilityTable", "BalanceReport", "BirthRecord", "BirthSize",
    "CaliperSpec", "ClusterPair", "ClusterRecord", "Coefficients",
    "ConfigError", "ConvergenceError", "CountryAvailability",
    "DataValidationError", "DistanceMatrix", "GeoPoint", "ImputationModel",
    "ImputedSet", "InferenceDesign", "MatchDiagnostics", "MatchDidError",
    "MixedFit", "ModelSpec", "PairCategory", "PooledEstimate",
    "PrevalenceLevel",
    "PrimaryResult", "Quadruple", "Role", "ScenarioConfig", "ScenarioData",
    "SensitivityParams", "SensitivityResult", "SensitivityRow",
    "StudySelection", "UTrue", "aggregate_cluster_covariates",
    "build_design", "cardinality_match", "classify_pairs", "did_contrasts",
    "draw_imputations", "filter_births", "fit_imputation_model",
    "fit_mixed_lpm", "gen_scenario", "gen_u", "generate", "haversine_km",
    "match_country", "match_diagnostics", "optimal_pairing", "pair_category",
    "pair_within_selection", "prevalence_level", "rank_mahalanobis",
    "rubin_combine", "run_primary_analysis", "select_study_years",
    "sensitivity_fit", "sensitivity_grid", "std_diff",
]
