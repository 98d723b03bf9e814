"""Penalized distance matrices for the two matching stages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.spatial.distance import cdist

from .geo import GeoPoint, max_rank

if TYPE_CHECKING:
    from .bipartite import ClusterPair

# finite cost that no optimal matching will ever use (self-matches, forbidden edges)
FORBIDDEN = 1e15

RIDGE_FACTOR = 1e-8
_SINGULAR_RTOL = 1e-10


class SingularCovarianceError(ValueError):
    pass


@dataclass(frozen=True)
class RankCovariance:
    sigma11: float
    sigma12: float
    sigma22: float
    ridge: float = 0.0

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.sigma11, self.sigma12], [self.sigma12, self.sigma22]])


@dataclass(frozen=True)
class DistanceMatrix:
    """Dense cost matrix with its unpenalized part and the penalty pattern."""

    entries: np.ndarray
    base: np.ndarray
    penalty_mask: np.ndarray
    penalty: float
    threshold: float | None = None

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    def to_csv(self, path) -> None:
        np.savetxt(path, self.entries, delimiter=",", fmt="%.17g")


def regularized_covariance(X: np.ndarray) -> tuple[np.ndarray, float]:
    """Sample covariance of the rows of ``X`` with a ridge when it is singular.

    The ridge is ``1e-8 * trace / dim`` added to the diagonal. A zero matrix
    (all rows identical) is returned unchanged with ridge 0.
    """
    S = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    trace = float(np.trace(S))
    if trace == 0.0:
        return S, 0.0
    eig = np.linalg.eigvalsh(S)
    if eig[0] > _SINGULAR_RTOL * eig[-1]:
        return S, 0.0
    ridge = RIDGE_FACTOR * trace / S.shape[0]
    return S + ridge * np.eye(S.shape[0]), ridge


def _whiten(X: np.ndarray, S: np.ndarray) -> np.ndarray:
    try:
        L = cholesky(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("covariance is singular even after the ridge") from exc
    return solve_triangular(L, X.T, lower=True).T


def mahalanobis_cross(A: np.ndarray, B: np.ndarray, S: np.ndarray) -> np.ndarray:
    """All Mahalanobis distances between rows of ``A`` and rows of ``B`` under ``S``."""
    if np.trace(S) == 0.0:
        # every pooled observation is identical, so every difference is zero
        return np.zeros((A.shape[0], B.shape[0]))
    WA = _whiten(A, S)
    WB = _whiten(B, S)
    return cdist(WA, WB)


def rank_covariance(early: Sequence[GeoPoint], late: Sequence[GeoPoint]):
    """Rank-transform coordinates per epoch and estimate the pooled rank covariance.

    Returns the early rank matrix (m, 2), the late rank matrix (n, 2) and the
    ``RankCovariance``.
    """
    if not early or not late:
        raise ValueError("both epochs need at least one cluster")
    lon_e = [p.longitude_deg for p in early]
    lat_e = [p.latitude_deg for p in early]
    lon_l = [p.longitude_deg for p in late]
    lat_l = [p.latitude_deg for p in late]
    R_e = np.column_stack([max_rank(lon_e), max_rank(lat_e)]).astype(float)
    R_l = np.column_stack([max_rank(lon_l), max_rank(lat_l)]).astype(float)
    S, ridge = regularized_covariance(np.vstack([R_e, R_l]))
    cov = RankCovariance(S[0, 0], S[0, 1], S[1, 1], ridge)
    return R_e, R_l, cov


def stage1_distance_matrix(
    early: Sequence[GeoPoint],
    late: Sequence[GeoPoint],
    caliper_multiplier: float = 0.2,
    rho: float = 1000.0,
) -> DistanceMatrix:
    """Rank-based Mahalanobis distances between early (rows) and late (columns) clusters.

    Ranks are taken separately within each epoch and coordinate; the 2x2
    covariance pools the early and late rank vectors. The caliper is
    ``caliper_multiplier`` times the standard deviation of all m*n distances,
    and every entry at or above the caliper gets ``rho`` added.
    """
    R_e, R_l, cov = rank_covariance(early, late)
    D = mahalanobis_cross(R_e, R_l, cov.matrix)
    ddof = 1 if D.size > 1 else 0
    caliper = caliper_multiplier * float(np.std(D, ddof=ddof))
    mask = D >= caliper
    return DistanceMatrix(entries=D + rho * mask, base=D, penalty_mask=mask,
                          penalty=rho, threshold=caliper)


def pair_covariate_matrix(pairs: Sequence["ClusterPair"]) -> np.ndarray:
    """Stack each pair's 24-vector: 12 early covariates, then 12 late covariates."""
    return np.array([np.concatenate([p.early.covariates, p.late.covariates]) for p in pairs],
                    dtype=float)


def stage2_distance_matrix(
    pairs: Sequence["ClusterPair"],
    rho_prime: float = 1000.0,
    xi: float = 0.05,
) -> DistanceMatrix:
    """Covariate Mahalanobis distance between cluster pairs plus an exposure penalty.

    ``rho_prime`` is added whenever two pairs' exposure changes differ by less
    than ``xi`` (raw PfPR units). The diagonal holds ``FORBIDDEN``.
    """
    if len(pairs) < 2:
        raise ValueError("stage-two matching needs at least 2 cluster pairs")
    X = pair_covariate_matrix(pairs)
    z = np.array([p.z_diff for p in pairs], dtype=float)
    S, _ = regularized_covariance(X)
    D = mahalanobis_cross(X, X, S)
    # mirror the upper triangle so the matrix is exactly symmetric
    iu = np.triu_indices(len(pairs), 1)
    D[(iu[1], iu[0])] = D[iu]
    np.fill_diagonal(D, 0.0)
    mask = np.abs(z[:, None] - z[None, :]) < xi
    np.fill_diagonal(mask, False)
    entries = D + rho_prime * mask
    np.fill_diagonal(entries, FORBIDDEN)
    return DistanceMatrix(entries=entries, base=D, penalty_mask=mask,
                          penalty=rho_prime, threshold=xi)
