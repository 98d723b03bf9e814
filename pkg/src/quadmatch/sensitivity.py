"""Sensitivity of the exposure effect to an unobserved confounder.

The confounder's strength is expressed through partial R^2 values with the
exposure and with the outcome, so robustness values have closed forms in
the t-statistic and the residual degrees of freedom. No confounder is ever
simulated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .analyze import RegressionFit, _ols
from .ingest import COVARIATES, write_csv


def partial_r2(t_value: float, df: float) -> float:
    """Partial R^2 of a regressor from its t-statistic: t^2 / (t^2 + df)."""
    if df < 1:
        raise ValueError("df must be at least 1")
    t2 = t_value * t_value
    return t2 / (t2 + df)


def _rv_from_f(f: float) -> float:
    f2 = f * f
    return 0.5 * (math.sqrt(f2 * f2 + 4.0 * f2) - f2)


def critical_f(df: float, alpha: float = 0.05) -> float:
    """Partial Cohen's f at which significance is lost; one df goes to the confounder."""
    return float(stats.t.ppf(1.0 - alpha / 2.0, df - 1)) / math.sqrt(df - 1)


def robustness_values(t_value: float, df: float, alpha: float = 0.05) -> tuple[float, float]:
    """Robustness values for the sign and for significance at level ``alpha``.

    Returns
    -------
    rv_sign, rv_alpha : float
        Minimal equal partial R^2 with exposure and outcome that a confounder
        needs to drive the estimate to zero, or to make it insignificant.
    """
    if df < 2:
        raise ValueError("df must be at least 2")
    f = abs(t_value) / math.sqrt(df)
    fa = max(f - critical_f(df, alpha), 0.0)
    return _rv_from_f(f), _rv_from_f(fa)


def df_from_rv_sign(t_value: float, rv_sign: float) -> float:
    """Residual df at which ``t_value`` yields the given sign robustness value."""
    f = rv_sign / math.sqrt(1.0 - rv_sign)
    return (t_value / f) ** 2


@dataclass(frozen=True)
class SensitivityRow:
    estimate: float
    se: float
    t_value: float
    df: float
    rv_sign: float
    rv_alpha: float


@dataclass(frozen=True)
class SensitivityReport:
    rows: list[SensitivityRow]
    average: SensitivityRow
    benchmarks: dict[str, float] = field(default_factory=dict)
    alpha: float = 0.05

    @property
    def robust_to_benchmarks(self) -> bool:
        """Both average robustness values exceed every benchmark partial R^2."""
        top = max(self.benchmarks.values(), default=0.0)
        return self.average.rv_sign > top and self.average.rv_alpha > top

    def write_csv(self, path) -> None:
        cols = ["row", "estimate", "se", "t_value", "df", "rv_sign", "rv_alpha"]
        body = [
            [str(k), r.estimate, r.se, r.t_value, r.df, r.rv_sign, r.rv_alpha]
            for k, r in enumerate(self.rows, start=1)
        ]
        a = self.average
        body.append(["average", a.estimate, a.se, a.t_value, a.df, a.rv_sign, a.rv_alpha])
        write_csv(path, cols, body)


def change_benchmark_t(fit: RegressionFit, covariate: str) -> tuple[float, int]:
    """t-statistic of a covariate's change when its early and late slopes are tied.

    The model is refitted with ``covariate_early`` and ``covariate_late``
    replaced by the single column ``late - early``; the residual df grows by 1.
    """
    names = list(fit.names)
    ke, kl = fit.index(f"{covariate}_early"), fit.index(f"{covariate}_late")
    keep = [k for k in range(len(names)) if k not in (ke, kl)]
    change = fit.design[:, kl] - fit.design[:, ke]
    X = np.column_stack([fit.design[:, keep], change])
    cols = [names[k] for k in keep] + [f"{covariate}_change"]
    coef, cov, resid = _ols(X, fit.response, cols)
    df = fit.residual_df + 1
    se = math.sqrt(float(resid @ resid) / df * cov[-1, -1])
    return float(coef[-1]) / se, df


def benchmark_r2(fit: RegressionFit, name: str) -> float:
    """Partial R^2 of a named regressor with the outcome.

    ``name`` is either a model column (``wealth_index_late``) or a bare
    covariate (``mother_education``), the latter meaning its early-to-late
    change with equal and opposite early/late slopes.
    """
    if name in fit.names:
        k = fit.index(name)
        return partial_r2(float(fit.t_values[k]), fit.residual_df)
    if name in COVARIATES:
        t, df = change_benchmark_t(fit, name)
        return partial_r2(t, df)
    raise KeyError(f"unknown benchmark covariate '{name}'")


def run_sensitivity(
    fits: Sequence[RegressionFit],
    benchmark_covariates: Sequence[str] = (),
    df: float | None = None,
    alpha: float = 0.05,
) -> SensitivityReport:
    """Robustness values per imputation, their averages and benchmark partial R^2.

    Parameters
    ----------
    fits : sequence of RegressionFit
        One fit per imputed dataset.
    benchmark_covariates : sequence of str
        Observed covariates whose partial R^2 (averaged over fits) is reported
        for comparison.
    df : float, optional
        Residual df for the robustness values; defaults to each fit's own.
    """
    if not fits:
        raise ValueError("need at least one fit")
    for name in benchmark_covariates:
        if name not in fits[0].names and name not in COVARIATES:
            raise KeyError(f"unknown benchmark covariate '{name}'")
    rows = []
    for fit in fits:
        d = fit.residual_df if df is None else df
        rv_s, rv_a = robustness_values(fit.t_beta1, d, alpha)
        rows.append(SensitivityRow(fit.beta1, fit.se_beta1, fit.t_beta1, d, rv_s, rv_a))
    average = SensitivityRow(*(
        float(np.mean([getattr(r, f) for r in rows]))
        for f in ("estimate", "se", "t_value", "df", "rv_sign", "rv_alpha")
    ))
    benchmarks = {
        name: float(np.mean([benchmark_r2(fit, name) for fit in fits]))
        for name in benchmark_covariates
    }
    return SensitivityReport(rows=rows, average=average, benchmarks=benchmarks, alpha=alpha)
