"""Outcome analysis: the post-matching working model and Rubin's-rule pooling.

Within each pair of pairs the outcome change of the two cluster pairs is
regressed on their exposure change and on the 12 early and 12 late covariate
means, with one fixed effect per pair of pairs. Because every matched set has
exactly two rows, the fixed effects are absorbed by differencing the two rows
(BEC minus SEC) and regressing without an intercept; coefficients, standard
errors and residual degrees of freedom then coincide with ordinary least
squares on the full dummy-variable design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg, stats

from .impute import ImputedDataset
from .ingest import COVARIATE_LABELS, COVARIATES, write_csv
from .nonbipartite import QuadMatch

N_COVARIATE_COLUMNS = 2 * len(COVARIATES)


class CollinearityError(ValueError):
    def __init__(self, columns: list[str]):
        self.columns = columns
        super().__init__(f"collinear regressors after differencing: {columns}")


def coefficient_names() -> list[str]:
    return ["z_diff"] + [f"{c}_early" for c in COVARIATES] + [f"{c}_late" for c in COVARIATES]


def coefficient_labels() -> list[str]:
    return (
        ["Change in exposure (PfPR late - early)"]
        + [f"{COVARIATE_LABELS[c]} (early)" for c in COVARIATES]
        + [f"{COVARIATE_LABELS[c]} (late)" for c in COVARIATES]
    )


@dataclass(frozen=True)
class RegressionFit:
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    residual_df: int
    intercept: float
    n_quads: int
    design: np.ndarray = field(repr=False)
    response: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not np.all(self.se > 0):
            raise ValueError("standard errors must be positive")

    @property
    def beta1(self) -> float:
        return float(self.coef[0])

    @property
    def se_beta1(self) -> float:
        return float(self.se[0])

    @property
    def t_beta1(self) -> float:
        return self.beta1 / self.se_beta1

    @property
    def t_values(self) -> np.ndarray:
        return self.coef / self.se

    @property
    def coefficients(self) -> dict[str, float]:
        return {"intercept": self.intercept, **dict(zip(self.names, self.coef.tolist()))}

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no regressor named '{name}'") from None


def pair_rows(quads: Sequence[QuadMatch], outcomes=None):
    """Per-quad (BEC, SEC) arrays of Y_diff, Z_diff and the 24 covariates.

    ``outcomes`` maps cluster_id to a mean birthweight; an ``ImputedDataset``
    is accepted, and ``None`` uses the cluster records' observed means.
    """
    if isinstance(outcomes, ImputedDataset):
        outcomes = outcomes.cluster_means()

    def y(cluster):
        if outcomes is None:
            v = cluster.mean_birthweight_g
        else:
            v = outcomes.get(cluster.cluster_id)
        if v is None:
            raise ValueError(f"cluster {cluster.cluster_id} has no outcome value")
        return float(v)

    Y = np.empty((len(quads), 2))
    Z = np.empty((len(quads), 2))
    X = np.empty((len(quads), 2, N_COVARIATE_COLUMNS))
    for i, q in enumerate(quads):
        for j, p in enumerate(q.members):
            Y[i, j] = y(p.late) - y(p.early)
            Z[i, j] = p.z_diff
            X[i, j] = np.concatenate([p.early.covariates, p.late.covariates])
    return Y, Z, X


def _ols(X: np.ndarray, y: np.ndarray, names: Sequence[str]):
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = max(X.shape) * np.finfo(float).eps * (d[0] if d.size else 0.0) * 1e3
    rank = int(np.sum(d > tol))
    if rank < X.shape[1]:
        raise CollinearityError([names[k] for k in sorted(piv[rank:])])
    coef_p = linalg.solve_triangular(R, Q.T @ y)
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    cov_p = Rinv @ Rinv.T
    coef = np.empty_like(coef_p)
    coef[piv] = coef_p
    cov = np.empty_like(cov_p)
    cov[np.ix_(piv, piv)] = cov_p
    resid = y - X @ coef
    return coef, cov, resid


def fit_working_model(
    quads: Sequence[QuadMatch],
    outcomes: Mapping[str, float] | ImputedDataset | None = None,
) -> RegressionFit:
    """Fixed-effects working model fitted by within-quad differencing.

    Residual degrees of freedom are ``2I - (I + 25)`` = ``I - 25``: 2I rows,
    I matched-set effects (which absorb the intercept), the exposure slope
    and 24 covariate slopes.
    """
    I = len(quads)
    k = 1 + N_COVARIATE_COLUMNS
    df = I - k
    if df < 1:
        raise ValueError(f"{I} pairs of pairs leave {df} residual degrees of freedom; need more than {k}")
    Y, Z, X = pair_rows(quads, outcomes)
    names = coefficient_names()
    dy = Y[:, 0] - Y[:, 1]
    dX = np.column_stack([Z[:, 0] - Z[:, 1], X[:, 0] - X[:, 1]])
    coef, cov, resid = _ols(dX, dy, names)
    s2 = float(resid @ resid) / df
    se = np.sqrt(s2 * np.diag(cov))
    full = np.column_stack([Z.reshape(-1), X.reshape(-1, N_COVARIATE_COLUMNS)])
    intercept = float(np.mean(Y.reshape(-1) - full @ coef))
    return RegressionFit(
        names=tuple(names), coef=coef, se=se, residual_df=df, intercept=intercept,
        n_quads=I, design=dX, response=dy,
    )


def fit_working_model_dummies(
    quads: Sequence[QuadMatch],
    outcomes: Mapping[str, float] | ImputedDataset | None = None,
) -> RegressionFit:
    """The same model fitted on the stacked 2I rows with explicit matched-set dummies.

    Slower; kept as a cross-check of the differenced path. The intercept
    column plus dummies for sets 2..I span the I fixed effects.
    """
    I = len(quads)
    Y, Z, X = pair_rows(quads, outcomes)
    y = Y.reshape(-1)
    dummies = np.zeros((2 * I, I - 1))
    for i in range(1, I):
        dummies[2 * i: 2 * i + 2, i - 1] = 1.0
    slopes = np.column_stack([Z.reshape(-1), X.reshape(-1, N_COVARIATE_COLUMNS)])
    design = np.column_stack([np.ones(2 * I), slopes, dummies])
    names = ["intercept", *coefficient_names(), *[f"set_{i + 1}" for i in range(1, I)]]
    df = 2 * I - design.shape[1]
    if df < 1:
        raise ValueError(f"{I} pairs of pairs leave {df} residual degrees of freedom")
    coef, cov, resid = _ols(design, y, names)
    s2 = float(resid @ resid) / df
    se = np.sqrt(s2 * np.diag(cov))
    k = 1 + N_COVARIATE_COLUMNS
    fe = np.concatenate([[0.0], coef[1 + k:]])
    return RegressionFit(
        names=tuple(coefficient_names()), coef=coef[1:1 + k], se=se[1:1 + k], residual_df=df,
        intercept=float(coef[0] + fe.mean()), n_quads=I, design=design, response=y,
    )


# --------------------------------------------------------------------------
# Rubin's rule
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PooledEstimate:
    estimate: float
    within_var: float
    between_var: float
    total_var: float
    df_rubin: float
    ci_low: float
    ci_high: float
    p_value: float
    m: int

    @property
    def se(self) -> float:
        return math.sqrt(self.total_var)

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.ci_low, self.ci_high)


def pool(estimates, variances, level: float = 0.95) -> PooledEstimate:
    """Combine one scalar estimate and its variance from each of M imputations.

    ``total_var = W + (1 + 1/M) B`` and the reference distribution is Student-t
    with ``(M - 1) (1 + W / ((1 + 1/M) B))^2`` degrees of freedom (normal when
    B = 0).
    """
    q = np.asarray(estimates, dtype=float)
    u = np.asarray(variances, dtype=float)
    m = q.size
    if m < 2 or u.size != m:
        raise ValueError("pooling needs at least 2 estimates with matching variances")
    qbar = math.fsum(np.sort(q)) / m
    w = math.fsum(np.sort(u)) / m
    b = math.fsum(np.sort((q - qbar) ** 2)) / (m - 1)
    t = w + (1.0 + 1.0 / m) * b
    if b > 0:
        df = (m - 1) * (1.0 + w / ((1.0 + 1.0 / m) * b)) ** 2
        ref = stats.t(df)
    else:
        df = math.inf
        ref = stats.norm()
    se = math.sqrt(t)
    half = float(ref.ppf(0.5 + level / 2)) * se
    p = float(2 * ref.sf(abs(qbar) / se)) if se > 0 else (0.0 if qbar != 0 else 1.0)
    return PooledEstimate(
        estimate=qbar, within_var=w, between_var=b, total_var=t, df_rubin=df,
        ci_low=qbar - half, ci_high=qbar + half, p_value=p, m=m,
    )


def rubin_pool(fits: Sequence[RegressionFit], name: str = "z_diff") -> PooledEstimate:
    """Pool one coefficient (the exposure slope by default) across imputations."""
    if len(fits) < 2:
        raise ValueError("need at least 2 fitted imputations")
    if len({f.names for f in fits}) != 1:
        raise ValueError("fits do not share the same design")
    k = fits[0].index(name)
    return pool([f.coef[k] for f in fits], [f.se[k] ** 2 for f in fits])


def pool_table(fits: Sequence[RegressionFit]) -> list[tuple[str, str, PooledEstimate]]:
    """Pooled (name, label, estimate) for every regressor, in model order."""
    return [
        (name, label, rubin_pool(fits, name))
        for name, label in zip(fits[0].names, coefficient_labels())
    ]


def write_pooled_table(path, table) -> None:
    write_csv(
        path, ["regressor", "label", "estimate", "ci_low", "ci_high", "p_value", "se", "df_rubin"],
        ((n, lab, p.estimate, p.ci_low, p.ci_high, p.p_value, p.se, p.df_rubin)
         for n, lab, p in table),
    )


def format_pooled_table(table) -> str:
    width = max(len(lab) for _, lab, _ in table)
    lines = [f"{'Regressor':<{width}}  {'Est.':>10}  {'95% CI':>22}  {'p-value':>8}"]
    for _, lab, p in table:
        pv = "<0.001" if p.p_value < 0.001 else f"{p.p_value:.3f}"
        ci = f"[{p.ci_low:.3f}, {p.ci_high:.3f}]"
        lines.append(f"{lab:<{width}}  {p.estimate:>10.3f}  {ci:>22}  {pv:>8}")
    return "\n".join(lines)


@dataclass(frozen=True)
class DoseEffect:
    reduction: float
    effect: float
    ci_low: float
    ci_high: float


def dose_effect(pooled: PooledEstimate, reduction: float) -> DoseEffect:
    """Outcome change implied by lowering PfPR by ``reduction`` (grams).

    A reduction ``d`` corresponds to an exposure change of ``-d``, so the
    effect is ``-beta1 * d`` and the interval is scaled the same way.
    """
    if not math.isfinite(reduction):
        raise ValueError("reduction must be finite")
    ends = sorted((-pooled.ci_low * reduction, -pooled.ci_high * reduction))
    return DoseEffect(reduction=reduction, effect=-pooled.estimate * reduction,
                      ci_low=ends[0], ci_high=ends[1])
