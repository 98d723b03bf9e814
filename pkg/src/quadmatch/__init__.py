"""Pair-of-pairs matching for difference-in-differences with a continuous exposure.

Clusters surveyed in an early and a late year are paired by geography
(stage one), the resulting pairs are paired again on covariate trajectories
while forcing unequal exposure changes (stage two), missing outcomes are
multiply imputed, and the exposure slope of a fixed-effects working model is
pooled across imputations and probed for omitted-variable sensitivity.
"""

__version__ = "0.1.0"

from .analyze import (
    PooledEstimate,
    RegressionFit,
    dose_effect,
    fit_working_model,
    fit_working_model_dummies,
    pool,
    rubin_pool,
)
from .bipartite import ClusterPair, run_stage1, solve_assignment, stage1_diagnostics
from .distances import stage1_distance_matrix, stage2_distance_matrix
from .geo import GeoPoint, haversine_km, spherical_distance_km
from .impute import ImputationModelSpec, draw_imputations, fit_imputation_model
from .ingest import (
    COVARIATES,
    ClusterMeta,
    ClusterRecord,
    IndividualRecord,
    aggregate_cluster,
    filter_records,
    load_clusters,
    load_individuals,
)
from .nonbipartite import QuadMatch, balance_table, run_stage2, solve_perfect_matching
from .pipeline import AnalysisSettings, run_analysis
from .sensitivity import partial_r2, robustness_values, run_sensitivity
from .synthetic import SyntheticConfig, generate_synthetic
