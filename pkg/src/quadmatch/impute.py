"""Multiple imputation of missing birthweights with a Bayesian linear regression.

Priors: Student-t(df, loc, scale) on the intercept (loc = 3200) and on every
slope (loc = 0), and a half-Student-t(df, 0, scale) on the residual SD. The
sampler is a Gibbs sampler over the usual scale-mixture representation:

    beta_j | lambda_j ~ N(m_j, scale^2 * lambda_j),  lambda_j ~ IG(df/2, df/2)
    sigma^2 | a ~ IG(df/2, df/a),                    a ~ IG(1/2, 1/scale^2)

which makes every full conditional normal or inverse-gamma.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import linalg

from . import mcmc
from .ingest import COVARIATES, SIZE_LARGE, SIZE_SMALL, IndividualRecord, write_csv

log = logging.getLogger(__name__)

# Table-S2 order: age, age^2, wealth, order, order^2, urban, education, sex,
# marital status, antenatal care, low size, large size
DEFAULT_PREDICTORS: tuple[str, ...] = (
    "mother_age_years",
    "mother_age_years_sq",
    "wealth_index",
    "birth_order",
    "birth_order_sq",
    "urban",
    "mother_education",
    "child_sex",
    "marital_status",
    "antenatal_care",
    "size_low",
    "size_large",
)

RHAT_WARN = 1.05


class RankDeficiencyError(ValueError):
    def __init__(self, columns: list[str]):
        self.columns = columns
        super().__init__(f"design matrix is rank deficient; collinear column(s): {columns}")


@dataclass(frozen=True)
class ImputationModelSpec:
    predictors: tuple[str, ...] = DEFAULT_PREDICTORS
    prior_location: float = 3200.0
    prior_scale: float = 593.0
    prior_df: float = 3.0
    chains: int = 2
    iterations_per_chain: int = 1000
    warmup_fraction: float = 0.5
    m_imputations: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.m_imputations < 2:
            raise ValueError("m_imputations must be at least 2")
        if self.chains < 2:
            raise ValueError("at least 2 chains are needed for R-hat")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        if self.prior_scale <= 0 or self.prior_df <= 0:
            raise ValueError("prior scale and df must be positive")
        for name in self.predictors:
            _predictor_source(name)

    @property
    def n_warmup(self) -> int:
        return int(round(self.iterations_per_chain * self.warmup_fraction))

    @property
    def n_kept(self) -> int:
        return self.iterations_per_chain - self.n_warmup

    @property
    def parameter_names(self) -> list[str]:
        return ["intercept", *self.predictors]


def _predictor_source(name: str) -> str:
    if name in ("size_low", "size_large"):
        return "reported_birth_size"
    base = name[:-3] if name.endswith("_sq") else name
    if base not in COVARIATES:
        raise ValueError(f"unknown predictor '{name}'")
    return base


def design_matrix(records: Sequence[IndividualRecord], predictors: Sequence[str]) -> np.ndarray:
    """Intercept column followed by one column per named predictor."""
    cols = [np.ones(len(records))]
    for name in predictors:
        source = _predictor_source(name)
        raw = [getattr(r, source) for r in records]
        if any(v is None for v in raw):
            bad = next(r.record_id for r, v in zip(records, raw) if v is None)
            raise ValueError(f"predictor '{name}' is missing (first at record {bad})")
        v = np.asarray(raw, dtype=float)
        if name == "size_low":
            v = (v == SIZE_SMALL).astype(float)
        elif name == "size_large":
            v = (v == SIZE_LARGE).astype(float)
        elif name.endswith("_sq"):
            v = v * v
        cols.append(v)
    return np.column_stack(cols)


def check_rank(X: np.ndarray, names: Sequence[str]) -> None:
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    _, R, piv = linalg.qr(X / scale, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = max(X.shape) * np.finfo(float).eps * (d[0] if d.size else 0.0) * 1e3
    rank = int(np.sum(d > tol))
    if rank < X.shape[1]:
        raise RankDeficiencyError([names[k] for k in sorted(piv[rank:])])


@dataclass(frozen=True)
class McmcDiagnostics:
    names: tuple[str, ...]
    rhat: np.ndarray
    bulk_ess: np.ndarray
    tail_ess: np.ndarray

    @property
    def warning(self) -> bool:
        """True when any R-hat exceeds 1.05 (draws usable, convergence doubtful)."""
        return bool(np.any(~(self.rhat <= RHAT_WARN)))

    def as_dict(self) -> dict[str, dict[str, float]]:
        return {
            n: {"rhat": float(r), "bulk_ess": float(b), "tail_ess": float(t)}
            for n, r, b, t in zip(self.names, self.rhat, self.bulk_ess, self.tail_ess)
        }


def compute_diagnostics(draws: np.ndarray, names: Sequence[str]) -> McmcDiagnostics:
    """Per-parameter diagnostics for draws of shape (chains, draws, parameters)."""
    k = draws.shape[2]
    return McmcDiagnostics(
        names=tuple(names),
        rhat=np.array([mcmc.rhat(draws[:, :, j]) for j in range(k)]),
        bulk_ess=np.array([mcmc.ess_bulk(draws[:, :, j]) for j in range(k)]),
        tail_ess=np.array([mcmc.ess_tail(draws[:, :, j]) for j in range(k)]),
    )


@dataclass(frozen=True)
class ImputationPosterior:
    spec: ImputationModelSpec
    draws: np.ndarray            # (chains, kept, p + 1); last column is sigma
    diagnostics: McmcDiagnostics
    n_obs: int

    @property
    def names(self) -> list[str]:
        return [*self.spec.parameter_names, "sigma"]

    @property
    def beta(self) -> np.ndarray:
        return self.draws[:, :, :-1]

    @property
    def sigma(self) -> np.ndarray:
        return self.draws[:, :, -1]

    def flat(self) -> np.ndarray:
        """Retained draws pooled chain after chain, shape (chains * kept, p + 1)."""
        return self.draws.reshape(-1, self.draws.shape[2])

    def summary(self) -> list[dict]:
        """Posterior mean, SD, 95% interval and diagnostics per parameter."""
        flat = self.flat()
        rows = []
        for j, name in enumerate(self.names):
            lo, hi = np.quantile(flat[:, j], [0.025, 0.975])
            rows.append({
                "parameter": name,
                "estimate": float(flat[:, j].mean()),
                "se": float(flat[:, j].std(ddof=1)),
                "ci_low": float(lo),
                "ci_high": float(hi),
                "rhat": float(self.diagnostics.rhat[j]),
                "bulk_ess": float(self.diagnostics.bulk_ess[j]),
                "tail_ess": float(self.diagnostics.tail_ess[j]),
            })
        return rows

    def write_summary(self, path) -> None:
        cols = ["parameter", "estimate", "se", "ci_low", "ci_high", "rhat", "bulk_ess", "tail_ess"]
        write_csv(path, cols, ([row[c] for c in cols] for row in self.summary()))


def _inv_gamma(rng: np.random.Generator, shape, scale):
    return scale / rng.gamma(shape, 1.0, size=np.shape(scale) or None)


def _gibbs_chain(XtX, Xty, yty, n, spec: ImputationModelSpec, rng, init_scale: float):
    p = XtX.shape[0]
    nu = spec.prior_df
    s2 = spec.prior_scale ** 2
    m = np.zeros(p)
    m[0] = spec.prior_location
    A2 = spec.prior_scale ** 2

    lam = np.ones(p)
    sigma2 = init_scale * rng.uniform(0.5, 2.0)
    a = 1.0
    out = np.empty((spec.iterations_per_chain, p + 1))
    for it in range(spec.iterations_per_chain):
        prec = 1.0 / (s2 * lam)
        Q = XtX / sigma2 + np.diag(prec)
        b = Xty / sigma2 + prec * m
        d = np.sqrt(np.diag(Q))
        L = np.linalg.cholesky(Q / np.outer(d, d))
        mu = linalg.cho_solve((L, True), b / d)
        gamma = mu + linalg.solve_triangular(L.T, rng.standard_normal(p), lower=False)
        beta = gamma / d

        lam = _inv_gamma(rng, (nu + 1) / 2, (nu + (beta - m) ** 2 / s2) / 2)
        rss = max(yty - 2.0 * beta @ Xty + beta @ XtX @ beta, 0.0)
        sigma2 = float(_inv_gamma(rng, (n + nu) / 2, rss / 2 + nu / a))
        a = float(_inv_gamma(rng, (nu + 1) / 2, nu / sigma2 + 1.0 / A2))
        out[it, :p] = beta
        out[it, p] = math.sqrt(sigma2)
    return out[spec.n_warmup:]


def fit_imputation_model(
    records: Sequence[IndividualRecord], spec: ImputationModelSpec = ImputationModelSpec()
) -> ImputationPosterior:
    """Sample the posterior of the imputation regression on observed birthweights.

    Records with a missing birthweight are ignored. Chains use independent
    random streams spawned from ``spec.seed``.
    """
    obs = [r for r in records if r.birthweight_g is not None]
    names = spec.parameter_names
    p = len(names)
    if len(obs) < 10 * p:
        raise ValueError(f"need at least {10 * p} complete cases for {p} parameters, got {len(obs)}")
    X = design_matrix(obs, spec.predictors)
    y = np.array([r.birthweight_g for r in obs], dtype=float)
    check_rank(X, names)

    XtX = X.T @ X
    Xty = X.T @ y
    yty = float(y @ y)
    streams = np.random.SeedSequence(spec.seed).spawn(spec.chains)
    init_scale = float(np.var(y))
    chains = [
        _gibbs_chain(XtX, Xty, yty, len(obs), spec, np.random.default_rng(s), init_scale)
        for s in streams
    ]
    draws = np.stack(chains)
    diag = compute_diagnostics(draws, [*names, "sigma"])
    if diag.warning:
        log.warning("imputation model: some R-hat exceed %.2f", RHAT_WARN)
    return ImputationPosterior(spec=spec, draws=draws, diagnostics=diag, n_obs=len(obs))


@dataclass(frozen=True)
class ImputedDataset:
    """One completed copy of the outcome column, aligned with the input records."""

    imputation_index: int
    record_ids: tuple[str, ...]
    cluster_ids: tuple[str, ...]
    birthweight_g: np.ndarray
    imputed: np.ndarray
    draw: tuple[int, int]               # (chain, retained iteration)

    def records(self, base: Sequence[IndividualRecord]) -> list[IndividualRecord]:
        return [
            replace(r, birthweight_g=float(bw)) if imp else r
            for r, bw, imp in zip(base, self.birthweight_g, self.imputed)
        ]

    def cluster_means(self) -> dict[str, float]:
        sums: dict[str, list[float]] = {}
        for cid, bw in zip(self.cluster_ids, self.birthweight_g.tolist()):
            sums.setdefault(cid, []).append(bw)
        return {cid: math.fsum(v) / len(v) for cid, v in sums.items()}

    def write_csv(self, path) -> None:
        chain, it = self.draw
        write_csv(
            path, IMPUTED_FIELDS,
            ((self.imputation_index, chain, it, rid, cid, bw, int(imp)) for rid, cid, bw, imp
             in zip(self.record_ids, self.cluster_ids, self.birthweight_g.tolist(),
                    self.imputed.tolist())),
        )


IMPUTED_FIELDS = ("imputation_index", "chain", "iteration", "record_id", "cluster_id",
                  "birthweight_g", "imputed")


def read_imputed_csv(path) -> ImputedDataset:
    """Inverse of ``ImputedDataset.write_csv``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in IMPUTED_FIELDS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: header lacks columns {missing}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no records")
    first = rows[0]
    return ImputedDataset(
        imputation_index=int(first["imputation_index"]),
        record_ids=tuple(r["record_id"] for r in rows),
        cluster_ids=tuple(r["cluster_id"] for r in rows),
        birthweight_g=np.array([float(r["birthweight_g"]) for r in rows]),
        imputed=np.array([r["imputed"] == "1" for r in rows]),
        draw=(int(first["chain"]), int(first["iteration"])),
    )


def draw_indices(total: int, m: int) -> np.ndarray:
    """``m`` evenly spaced indices into ``total`` pooled draws."""
    if m > total:
        raise ValueError(f"cannot take {m} distinct draws from {total}")
    return np.floor((np.arange(m) + 0.5) * total / m).astype(int)


def draw_imputations(
    records: Sequence[IndividualRecord],
    posterior: ImputationPosterior,
    spec: ImputationModelSpec | None = None,
) -> list[ImputedDataset]:
    """Create ``m_imputations`` completed datasets from the posterior draws.

    Each dataset uses one retained draw (evenly spaced over the pooled
    chains) and fills each missing birthweight with the linear predictor plus
    normal noise with that draw's residual SD. Observed values pass through.
    """
    spec = spec or posterior.spec
    if tuple(spec.predictors) != tuple(posterior.spec.predictors):
        raise ValueError("imputation spec predictors differ from the fitted model's")
    missing = np.array([r.birthweight_g is None for r in records])
    bw = np.array([np.nan if r.birthweight_g is None else r.birthweight_g for r in records])
    X_miss = design_matrix([r for r, mi in zip(records, missing) if mi], spec.predictors)
    flat = posterior.flat()
    kept = posterior.draws.shape[1]
    idx = draw_indices(flat.shape[0], spec.m_imputations)
    streams = np.random.SeedSequence([spec.seed, 1]).spawn(spec.m_imputations)
    record_ids = tuple(r.record_id for r in records)
    cluster_ids = tuple(r.cluster_id for r in records)
    out = []
    for k, (t, ss) in enumerate(zip(idx.tolist(), streams), start=1):
        rng = np.random.default_rng(ss)
        beta, sigma = flat[t, :-1], flat[t, -1]
        filled = bw.copy()
        filled[missing] = X_miss @ beta + sigma * rng.standard_normal(int(missing.sum()))
        out.append(ImputedDataset(
            imputation_index=k, record_ids=record_ids, cluster_ids=cluster_ids,
            birthweight_g=filled, imputed=missing.copy(), draw=(t // kept, t % kept),
        ))
    return out


@dataclass(frozen=True)
class GateReport:
    passed: bool
    offenders: list[str] = field(default_factory=list)


def diagnostics_gate(diag: McmcDiagnostics, rhat_max: float = 1.01, ess_min: float = 400.0) -> GateReport:
    """Pass iff every R-hat <= ``rhat_max`` and every bulk and tail ESS >= ``ess_min``."""
    offenders = []
    for name, r, b, t in zip(diag.names, diag.rhat, diag.bulk_ess, diag.tail_ess):
        if not r <= rhat_max:
            offenders.append(f"{name}: rhat={r:.3f}")
        if not b >= ess_min:
            offenders.append(f"{name}: bulk_ess={b:.0f}")
        if not t >= ess_min:
            offenders.append(f"{name}: tail_ess={t:.0f}")
    return GateReport(passed=not offenders, offenders=offenders)
