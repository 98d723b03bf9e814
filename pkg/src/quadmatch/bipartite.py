"""Stage-one matching: pair early-year and late-year clusters within each country."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .distances import DistanceMatrix, stage1_distance_matrix
from .geo import spherical_distance_km
from .ingest import ClusterRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterPair:
    """An early-year and a late-year cluster treated as one site observed twice."""

    pair_id: str
    early: ClusterRecord
    late: ClusterRecord
    distance_km: float
    elevation_diff_m: float

    def __post_init__(self):
        if self.early.epoch != "early" or self.late.epoch != "late":
            raise ValueError(f"pair {self.pair_id}: epochs must be (early, late)")
        if self.early.country != self.late.country:
            raise ValueError(f"pair {self.pair_id}: clusters come from different countries")

    @property
    def country(self) -> str:
        return self.early.country

    @property
    def z_early(self) -> float:
        return self.early.pfpr

    @property
    def z_late(self) -> float:
        return self.late.pfpr

    @property
    def z_diff(self) -> float:
        return self.late.pfpr - self.early.pfpr

    @property
    def y_early(self) -> float | None:
        return self.early.mean_birthweight_g

    @property
    def y_late(self) -> float | None:
        return self.late.mean_birthweight_g


def make_pair(pair_id: str, early: ClusterRecord, late: ClusterRecord) -> ClusterPair:
    return ClusterPair(
        pair_id=pair_id, early=early, late=late,
        distance_km=spherical_distance_km(early.point, late.point),
        elevation_diff_m=late.elevation_m - early.elevation_m,
    )


@dataclass(frozen=True)
class Assignment:
    """Optimal injective assignment in the orientation of the cost matrix."""

    rows: np.ndarray
    cols: np.ndarray
    total: float
    rows_are_smaller: bool = True

    @property
    def mapping(self) -> dict[int, int]:
        """Map from the smaller side's indices to the larger side's indices."""
        if self.rows_are_smaller:
            return dict(zip(self.rows.tolist(), self.cols.tolist()))
        return dict(zip(self.cols.tolist(), self.rows.tolist()))


def solve_assignment(costs) -> Assignment:
    """Exact minimum-cost injective assignment of the smaller side into the larger.

    Parameters
    ----------
    costs : array_like or DistanceMatrix
        Finite (m, n) cost matrix.
    """
    C = costs.entries if isinstance(costs, DistanceMatrix) else np.asarray(costs, dtype=float)
    if C.ndim != 2 or C.size == 0:
        raise ValueError("assignment needs a non-empty 2-d cost matrix")
    if not np.all(np.isfinite(C)):
        raise ValueError("assignment costs must be finite")
    rows, cols = linear_sum_assignment(C)
    total = float(C[rows, cols].sum())
    return Assignment(rows=rows, cols=cols, total=total, rows_are_smaller=C.shape[0] <= C.shape[1])


@dataclass
class CountryAudit:
    n_early: int
    n_late: int
    n_matched: int = 0
    distance_dropped: int = 0
    zero_pfpr_dropped: int = 0
    n_retained: int = 0
    assignment_cost: float = 0.0
    caliper: float = 0.0
    n_penalized: int = 0


@dataclass
class Stage1Audit:
    countries: dict[str, CountryAudit] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)
    max_km: float = 100.0

    @property
    def distance_dropped(self) -> int:
        return sum(a.distance_dropped for a in self.countries.values())

    @property
    def zero_pfpr_dropped(self) -> int:
        return sum(a.zero_pfpr_dropped for a in self.countries.values())

    @property
    def n_matched(self) -> int:
        return sum(a.n_matched for a in self.countries.values())

    @property
    def n_retained(self) -> int:
        return sum(a.n_retained for a in self.countries.values())

    def to_dict(self) -> dict:
        return {
            "max_km": self.max_km,
            "countries": {k: asdict(v) for k, v in self.countries.items()},
            "skipped": dict(self.skipped),
            "total": {
                "n_matched": self.n_matched,
                "distance_dropped": self.distance_dropped,
                "zero_pfpr_dropped": self.zero_pfpr_dropped,
                "n_retained": self.n_retained,
            },
        }


def too_far(pair: ClusterPair, max_km: float) -> bool:
    return pair.distance_km > max_km


def malaria_free(pair: ClusterPair) -> bool:
    return pair.z_early == 0.0 and pair.z_late == 0.0


def _by_country(clusters) -> dict[str, dict[str, list[ClusterRecord]]]:
    if isinstance(clusters, Mapping):
        clusters = [c for group in clusters.values() for c in group]
    grouped: dict[str, dict[str, list[ClusterRecord]]] = defaultdict(lambda: {"early": [], "late": []})
    for c in clusters:
        grouped[c.country][c.epoch].append(c)
    return dict(grouped)


def match_country(
    early: Sequence[ClusterRecord],
    late: Sequence[ClusterRecord],
    country: str,
    caliper_multiplier: float = 0.2,
    rho: float = 1000.0,
) -> tuple[list[ClusterPair], DistanceMatrix, Assignment]:
    """Optimally pair one country's early and late clusters (no filtering)."""
    dist = stage1_distance_matrix([c.point for c in early], [c.point for c in late],
                                  caliper_multiplier=caliper_multiplier, rho=rho)
    sol = solve_assignment(dist)
    order = np.argsort(sol.rows, kind="stable")
    pairs = [
        make_pair(f"{country}-{k:04d}", early[i], late[j])
        for k, (i, j) in enumerate(zip(sol.rows[order].tolist(), sol.cols[order].tolist()))
    ]
    return pairs, dist, sol


def run_stage1(
    clusters: Iterable[ClusterRecord] | Mapping[str, Sequence[ClusterRecord]],
    max_km: float = 100.0,
    caliper_multiplier: float = 0.2,
    rho: float = 1000.0,
) -> tuple[list[ClusterPair], Stage1Audit]:
    """Stage-one matching for every country, then the distance and zero-PfPR filters.

    Countries are processed in sorted order. A country lacking one of the two
    epochs is skipped and noted in ``audit.skipped``.
    """
    audit = Stage1Audit(max_km=max_km)
    retained: list[ClusterPair] = []
    for country, epochs in sorted(_by_country(clusters).items()):
        early, late = epochs["early"], epochs["late"]
        if not early or not late:
            missing = "early" if not early else "late"
            audit.skipped[country] = f"no {missing}-year clusters"
            log.warning("stage 1: skipping %s (no %s-year clusters)", country, missing)
            continue
        pairs, dist, sol = match_country(early, late, country, caliper_multiplier, rho)
        ca = CountryAudit(n_early=len(early), n_late=len(late), n_matched=len(pairs),
                          assignment_cost=sol.total, caliper=float(dist.threshold),
                          n_penalized=int(dist.penalty_mask[sol.rows, sol.cols].sum()))
        near = [p for p in pairs if not too_far(p, max_km)]
        ca.distance_dropped = len(pairs) - len(near)
        kept = [p for p in near if not malaria_free(p)]
        ca.zero_pfpr_dropped = len(near) - len(kept)
        ca.n_retained = len(kept)
        audit.countries[country] = ca
        retained.extend(kept)
    return retained, audit


@dataclass(frozen=True)
class Stage1Diagnostics:
    n_pairs: int
    corr_longitude: float
    corr_latitude: float
    mean_distance_km: float
    mean_abs_elevation_diff_m: float
    early_mean_longitude: float
    early_mean_latitude: float
    early_mean_pfpr: float
    late_mean_longitude: float
    late_mean_latitude: float
    late_mean_pfpr: float

    def to_dict(self) -> dict:
        return asdict(self)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return math.nan
    return float(dx @ dy) / math.sqrt(sxx * syy)


def stage1_diagnostics(pairs: Sequence[ClusterPair]) -> Stage1Diagnostics:
    """Geographic closeness of matched clusters, laid out like a descriptive table."""
    if len(pairs) < 2:
        raise ValueError("diagnostics need at least 2 pairs")
    lon_e = np.array([p.early.longitude_deg for p in pairs])
    lat_e = np.array([p.early.latitude_deg for p in pairs])
    lon_l = np.array([p.late.longitude_deg for p in pairs])
    lat_l = np.array([p.late.latitude_deg for p in pairs])
    return Stage1Diagnostics(
        n_pairs=len(pairs),
        corr_longitude=_pearson(lon_e, lon_l),
        corr_latitude=_pearson(lat_e, lat_l),
        mean_distance_km=float(np.mean([p.distance_km for p in pairs])),
        mean_abs_elevation_diff_m=float(np.mean([abs(p.elevation_diff_m) for p in pairs])),
        early_mean_longitude=float(lon_e.mean()),
        early_mean_latitude=float(lat_e.mean()),
        early_mean_pfpr=float(np.mean([p.z_early for p in pairs])),
        late_mean_longitude=float(lon_l.mean()),
        late_mean_latitude=float(lat_l.mean()),
        late_mean_pfpr=float(np.mean([p.z_late for p in pairs])),
    )
