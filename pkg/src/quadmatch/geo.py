"""Geodesic and ordinal primitives used by stage-one matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class GeoPoint:
    longitude_deg: float
    latitude_deg: float
    elevation_m: float = 0.0

    def __post_init__(self):
        if not -180.0 <= self.longitude_deg <= 180.0:
            raise ValueError(f"longitude_deg out of range: {self.longitude_deg}")
        if not -90.0 <= self.latitude_deg <= 90.0:
            raise ValueError(f"latitude_deg out of range: {self.latitude_deg}")


def haversine_km(lon1, lat1, lon2, lat2, radius_km: float = EARTH_RADIUS_KM):
    """Great-circle distance in km between (lon1, lat1) and (lon2, lat2).

    Arguments are in degrees and broadcast like numpy arrays.
    """
    lon1, lat1, lon2, lat2 = map(np.radians, (lon1, lat1, lon2, lat2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    # rounding can push h a hair above 1 near antipodes
    h = np.clip(h, 0.0, 1.0)
    return 2.0 * radius_km * np.arcsin(np.sqrt(h))


def spherical_distance_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points on a sphere of radius 6371 km."""
    return float(haversine_km(a.longitude_deg, a.latitude_deg, b.longitude_deg, b.latitude_deg))


def elevation_difference_m(a: GeoPoint, b: GeoPoint) -> float:
    return b.elevation_m - a.elevation_m


def max_rank(values) -> np.ndarray:
    """Rank each value by the number of entries less than or equal to it.

    Ties all receive the largest rank of their group, so ``[2, 2, 1]`` maps to
    ``[3, 3, 1]``.

    Parameters
    ----------
    values : array_like
        One-dimensional, non-empty.

    Returns
    -------
    numpy.ndarray of int
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("max_rank expects a non-empty 1-d vector")
    return np.searchsorted(np.sort(x), x, side="right").astype(np.int64)
