"""In-memory orchestration of the whole analysis on individual records.

The command-line front end writes the intermediate artifacts to disk; this
module is the plain-Python path used by tests and demos.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .analyze import PooledEstimate, RegressionFit, fit_working_model, pool_table, rubin_pool
from .bipartite import ClusterPair, Stage1Audit, run_stage1
from .impute import ImputationModelSpec, ImputationPosterior, ImputedDataset, draw_imputations, fit_imputation_model
from .ingest import (
    ClusterMeta,
    ClusterRecord,
    FilterAudit,
    IndividualRecord,
    aggregate_clusters,
    fill_missing_covariates,
    filter_records,
)
from .nonbipartite import BalanceTable, QuadMatch, Stage2Audit, balance_table, run_stage2
from .sensitivity import SensitivityReport, run_sensitivity


@dataclass(frozen=True)
class AnalysisSettings:
    caliper_multiplier: float = 0.2
    rho: float = 1000.0
    max_km: float = 100.0
    rho_prime: float = 1000.0
    xi: float = 0.05
    n_phantoms: int | None = None
    imputation: ImputationModelSpec = field(default_factory=ImputationModelSpec)
    benchmarks: tuple[str, ...] = ("mother_education", "child_sex", "marital_status")
    sensitivity_df: float | None = None

    def __post_init__(self):
        if self.caliper_multiplier <= 0:
            raise ValueError("caliper_multiplier must be positive")
        if self.rho < 0 or self.rho_prime <= 0:
            raise ValueError("rho must be non-negative and rho_prime positive")
        if self.xi < 0:
            raise ValueError("xi must be non-negative")
        if self.max_km <= 0:
            raise ValueError("max_km must be positive")
        if self.n_phantoms is not None and self.n_phantoms < 0:
            raise ValueError("n_phantoms must be non-negative")


@dataclass
class AnalysisResult:
    clusters: list[ClusterRecord]
    pairs: list[ClusterPair]
    stage1: Stage1Audit
    quads: list[QuadMatch]
    stage2: Stage2Audit
    balance: BalanceTable
    filter_audit: FilterAudit
    posterior: ImputationPosterior
    imputations: list[ImputedDataset]
    fits: list[RegressionFit]
    pooled: PooledEstimate
    table: list
    sensitivity: SensitivityReport


def quad_records(records: Sequence[IndividualRecord], quads: Sequence[QuadMatch]) -> list[IndividualRecord]:
    """Individual records belonging to a cluster of some pair of pairs."""
    keep = {c.cluster_id for q in quads for p in q.members for c in (p.early, p.late)}
    return [r for r in records if r.cluster_id in keep]


def run_analysis(
    individuals: Sequence[IndividualRecord],
    metas: Sequence[ClusterMeta],
    settings: AnalysisSettings = AnalysisSettings(),
) -> AnalysisResult:
    """Matching, imputation, pooled estimation and sensitivity in one call."""
    filled = fill_missing_covariates(individuals)
    clusters = aggregate_clusters(filled, metas)
    pairs, a1 = run_stage1(clusters, max_km=settings.max_km,
                           caliper_multiplier=settings.caliper_multiplier, rho=settings.rho)
    quads, a2 = run_stage2(pairs, rho_prime=settings.rho_prime, xi=settings.xi,
                           n_phantoms=settings.n_phantoms)
    bal = balance_table(quads, pairs)
    kept, fa = filter_records(quad_records(filled, quads))
    posterior = fit_imputation_model(kept, settings.imputation)
    imputations = draw_imputations(kept, posterior)
    fits = [fit_working_model(quads, ds) for ds in imputations]
    pooled = rubin_pool(fits)
    sens = run_sensitivity(fits, settings.benchmarks, df=settings.sensitivity_df)
    return AnalysisResult(
        clusters=clusters, pairs=pairs, stage1=a1, quads=quads, stage2=a2, balance=bal,
        filter_audit=fa, posterior=posterior, imputations=imputations, fits=fits,
        pooled=pooled, table=pool_table(fits), sensitivity=sens,
    )
