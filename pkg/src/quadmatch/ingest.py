"""Data model, CSV input/output, record filters and cluster aggregation.

Two CSV files describe a study: one row per child (``IndividualRecord``) and
one row per survey cluster-year (``ClusterMeta``). Missing values are empty
strings. Cluster covariates are within-cluster means of the individual
fields, in the fixed order of ``COVARIATES``.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geo import GeoPoint

# Order of the 12 cluster-level matching covariates. Every 12-vector and
# 24-vector (early then late) in the package follows this order.
COVARIATES: tuple[str, ...] = (
    "electricity",
    "floor_material",
    "toilet_facility",
    "urban",
    "mother_education",
    "modern_contraception",
    "mother_age_years",
    "birth_order",
    "wealth_index",
    "child_sex",
    "marital_status",
    "antenatal_care",
)

COVARIATE_LABELS: dict[str, str] = {
    "electricity": "Electricity",
    "floor_material": "Floor material",
    "toilet_facility": "Toilet facility",
    "urban": "Urban/rural",
    "mother_education": "Mother's education",
    "modern_contraception": "Modern method of contraception",
    "mother_age_years": "Mother's age",
    "birth_order": "Child's birth order",
    "wealth_index": "Household wealth index",
    "child_sex": "Child's sex",
    "marital_status": "Mother's current marital or union status",
    "antenatal_care": "Antenatal care",
}

EPOCHS = ("early", "late")

# reported birth size: 1 = smaller than average, 2 = average, 3 = larger
SIZE_SMALL, SIZE_AVERAGE, SIZE_LARGE = 1, 2, 3

_BINARY = {0, 1}
_CATEGORIES: dict[str, set[int]] = {
    "reported_birth_size": {SIZE_SMALL, SIZE_AVERAGE, SIZE_LARGE},
    "birth_order": {1, 2, 3},
    "wealth_index": {1, 2, 3, 4, 5},
    "urban": _BINARY,
    "mother_education": {0, 1, 2},
    "child_sex": _BINARY,
    "marital_status": _BINARY,
    "antenatal_care": _BINARY,
    "modern_contraception": _BINARY,
    "electricity": _BINARY,
    "floor_material": {1, 2, 3},
    "toilet_facility": _BINARY,
}


class ValidationError(ValueError):
    """A field value violates the data model."""

    def __init__(self, field_name: str, value, reason: str, row: int | None = None):
        self.field = field_name
        self.value = value
        self.reason = reason
        self.row = row
        where = f"row {row}: " if row is not None else ""
        super().__init__(f"{where}field '{field_name}' = {value!r}: {reason}")


class LoadError(ValueError):
    """Raised by the CSV loaders in strict mode; carries every rejected row."""

    def __init__(self, path, rejects: list[ValidationError]):
        self.path = path
        self.rejects = rejects
        head = "; ".join(str(r) for r in rejects[:5])
        more = f" (+{len(rejects) - 5} more)" if len(rejects) > 5 else ""
        super().__init__(f"{path}: {len(rejects)} invalid row(s): {head}{more}")


@dataclass(frozen=True)
class IndividualRecord:
    record_id: str
    cluster_id: str
    birthweight_g: float | None
    reported_birth_size: int | None
    multiple_birth: bool
    mother_age_years: float | None
    birth_order: int | None
    wealth_index: int | None
    urban: int | None
    mother_education: int | None
    child_sex: int | None
    marital_status: int | None
    antenatal_care: int | None
    modern_contraception: int | None
    electricity: int | None
    floor_material: int | None
    toilet_facility: int | None

    def __post_init__(self):
        validate_individual(self)

    def covariate_vector(self) -> np.ndarray:
        return np.array(
            [np.nan if getattr(self, c) is None else float(getattr(self, c)) for c in COVARIATES]
        )


def validate_individual(rec: IndividualRecord) -> None:
    bw = rec.birthweight_g
    if bw is not None and not (0.0 < bw < 10000.0):
        raise ValidationError("birthweight_g", bw, "must lie in (0, 10000) grams")
    age = rec.mother_age_years
    if age is not None and not (10.0 <= age <= 60.0):
        raise ValidationError("mother_age_years", age, "must lie in [10, 60]")
    for name, allowed in _CATEGORIES.items():
        v = getattr(rec, name)
        if v is not None and v not in allowed:
            raise ValidationError(name, v, f"must be one of {sorted(allowed)}")


@dataclass(frozen=True)
class ClusterMeta:
    """Location, elevation and exposure of one cluster-year."""

    cluster_id: str
    country: str
    epoch: str
    longitude_deg: float
    latitude_deg: float
    elevation_m: float
    pfpr: float

    def __post_init__(self):
        if self.epoch not in EPOCHS:
            raise ValidationError("epoch", self.epoch, "must be 'early' or 'late'")
        if not (0.0 <= self.pfpr <= 1.0):
            raise ValidationError("pfpr", self.pfpr, "must lie in [0, 1]")
        if not (-180.0 <= self.longitude_deg <= 180.0):
            raise ValidationError("longitude_deg", self.longitude_deg, "must lie in [-180, 180]")
        if not (-90.0 <= self.latitude_deg <= 90.0):
            raise ValidationError("latitude_deg", self.latitude_deg, "must lie in [-90, 90]")


@dataclass(frozen=True)
class ClusterRecord:
    cluster_id: str
    country: str
    epoch: str
    longitude_deg: float
    latitude_deg: float
    elevation_m: float
    pfpr: float
    covariates: tuple[float, ...]
    mean_birthweight_g: float | None = None
    n_individuals: int = 0

    def __post_init__(self):
        ClusterMeta(
            self.cluster_id, self.country, self.epoch,
            self.longitude_deg, self.latitude_deg, self.elevation_m, self.pfpr,
        )
        if len(self.covariates) != len(COVARIATES):
            raise ValidationError(
                "covariates", len(self.covariates), f"need exactly {len(COVARIATES)} entries"
            )

    @property
    def point(self) -> GeoPoint:
        return GeoPoint(self.longitude_deg, self.latitude_deg, self.elevation_m)

    @property
    def meta(self) -> ClusterMeta:
        return ClusterMeta(
            self.cluster_id, self.country, self.epoch,
            self.longitude_deg, self.latitude_deg, self.elevation_m, self.pfpr,
        )


# --------------------------------------------------------------------------
# CSV parsing
# --------------------------------------------------------------------------

INDIVIDUAL_FIELDS: tuple[str, ...] = tuple(f.name for f in fields(IndividualRecord))
CLUSTER_META_FIELDS: tuple[str, ...] = tuple(f.name for f in fields(ClusterMeta))

_FLOAT_FIELDS = {"birthweight_g", "mother_age_years", "longitude_deg", "latitude_deg",
                 "elevation_m", "pfpr"}
_STR_FIELDS = {"record_id", "cluster_id", "country", "epoch"}
_BOOL_FIELDS = {"multiple_birth"}


def _parse_value(name: str, raw: str, row: int):
    raw = raw.strip()
    if raw == "":
        if name in _STR_FIELDS or name in _BOOL_FIELDS or name in CLUSTER_META_FIELDS:
            raise ValidationError(name, raw, "required value is missing", row)
        return None
    if name in _STR_FIELDS:
        return raw
    if name in _BOOL_FIELDS:
        low = raw.lower()
        if low in ("1", "true", "yes"):
            return True
        if low in ("0", "false", "no"):
            return False
        raise ValidationError(name, raw, "not a boolean", row)
    try:
        value = float(raw)
    except ValueError:
        raise ValidationError(name, raw, "not a number", row) from None
    if not math.isfinite(value):
        raise ValidationError(name, raw, "not finite", row)
    if name in _FLOAT_FIELDS:
        return value
    if value != int(value):
        raise ValidationError(name, raw, "not an integer code", row)
    return int(value)


def _resolve_schema(wanted: Sequence[str], schema: Mapping[str, str] | None) -> dict[str, str]:
    mapping = {name: name for name in wanted}
    if schema:
        unknown = set(schema) - set(wanted)
        if unknown:
            raise ValueError(f"schema names unknown fields: {sorted(unknown)}")
        mapping.update(schema)
    return mapping


def _read_rows(path, wanted, schema):
    mapping = _resolve_schema(wanted, schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [col for col in mapping.values() if col not in header]
        if missing:
            raise ValueError(f"{path}: header lacks columns {missing}")
        # row 1 is the header
        for rownum, row in enumerate(reader, start=2):
            yield rownum, {name: row[col] for name, col in mapping.items()}


@dataclass
class LoadResult:
    records: list
    rejects: list[ValidationError] = field(default_factory=list)
    n_rows: int = 0
    n_missing_birthweight: int = 0
    n_missing_birth_size: int = 0

    @property
    def missing_birthweight_rate(self) -> float:
        return self.n_missing_birthweight / len(self.records) if self.records else 0.0

    @property
    def missing_birth_size_rate(self) -> float:
        return self.n_missing_birth_size / len(self.records) if self.records else 0.0


def load_individuals(path, schema: Mapping[str, str] | None = None, strict: bool = True) -> LoadResult:
    """Read and validate an individual-level CSV.

    Parameters
    ----------
    path : path-like
    schema : mapping, optional
        Field name -> CSV column header overrides.
    strict : bool
        If True any invalid row raises ``LoadError`` listing every offending
        row and field; otherwise invalid rows are collected in ``rejects``.
    """
    out = LoadResult(records=[])
    for rownum, raw in _read_rows(path, INDIVIDUAL_FIELDS, schema):
        out.n_rows += 1
        try:
            values = {name: _parse_value(name, raw[name], rownum) for name in INDIVIDUAL_FIELDS}
            rec = IndividualRecord(**values)
        except ValidationError as err:
            err.row = rownum
            err.args = (f"row {rownum}: field '{err.field}' = {err.value!r}: {err.reason}",)
            out.rejects.append(err)
            continue
        out.records.append(rec)
        out.n_missing_birthweight += rec.birthweight_g is None
        out.n_missing_birth_size += rec.reported_birth_size is None
    if strict and out.rejects:
        raise LoadError(path, out.rejects)
    return out


def load_clusters(path, schema: Mapping[str, str] | None = None, strict: bool = True) -> LoadResult:
    """Read and validate a cluster metadata CSV (one row per cluster-year)."""
    out = LoadResult(records=[])
    seen: set[str] = set()
    for rownum, raw in _read_rows(path, CLUSTER_META_FIELDS, schema):
        out.n_rows += 1
        try:
            values = {name: _parse_value(name, raw[name], rownum) for name in CLUSTER_META_FIELDS}
            meta = ClusterMeta(**values)
            if meta.cluster_id in seen:
                raise ValidationError("cluster_id", meta.cluster_id, "duplicate id")
        except ValidationError as err:
            err.row = rownum
            err.args = (f"row {rownum}: field '{err.field}' = {err.value!r}: {err.reason}",)
            out.rejects.append(err)
            continue
        seen.add(meta.cluster_id)
        out.records.append(meta)
    if strict and out.rejects:
        raise LoadError(path, out.rejects)
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return ""
        return repr(float(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def write_individuals(path, records: Iterable[IndividualRecord]) -> Path:
    return write_csv(
        path, INDIVIDUAL_FIELDS,
        ([getattr(r, name) for name in INDIVIDUAL_FIELDS] for r in records),
    )


def write_cluster_meta(path, metas: Iterable[ClusterMeta]) -> Path:
    return write_csv(
        path, CLUSTER_META_FIELDS,
        ([getattr(m, name) for name in CLUSTER_META_FIELDS] for m in metas),
    )


CLUSTER_TABLE_FIELDS: tuple[str, ...] = (
    CLUSTER_META_FIELDS + tuple(f"cov_{c}" for c in COVARIATES)
    + ("mean_birthweight_g", "n_individuals")
)


def write_cluster_table(path, clusters: Iterable[ClusterRecord]) -> Path:
    """Write aggregated clusters (metadata, 12 covariate means, outcome mean)."""
    def row(c: ClusterRecord):
        return (
            [getattr(c, name) for name in CLUSTER_META_FIELDS]
            + list(c.covariates) + [c.mean_birthweight_g, c.n_individuals]
        )
    return write_csv(path, CLUSTER_TABLE_FIELDS, (row(c) for c in clusters))


def read_cluster_table(path) -> list[ClusterRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CLUSTER_TABLE_FIELDS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: header lacks columns {missing}")
        for rownum, row in enumerate(reader, start=2):
            meta = {name: _parse_value(name, row[name], rownum) for name in CLUSTER_META_FIELDS}
            covs = tuple(float(row[f"cov_{c}"]) for c in COVARIATES)
            bw = row["mean_birthweight_g"].strip()
            out.append(ClusterRecord(
                **meta, covariates=covs,
                mean_birthweight_g=float(bw) if bw else None,
                n_individuals=int(row["n_individuals"]),
            ))
    return out


# --------------------------------------------------------------------------
# Filters and aggregation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterAudit:
    n_input: int
    multiple_birth_removed: int
    missing_size_removed: int
    n_kept: int

    @property
    def multiple_birth_fraction(self) -> float:
        return self.multiple_birth_removed / self.n_input if self.n_input else 0.0

    @property
    def missing_size_fraction(self) -> float:
        """Share removed for a missing size report, relative to the singletons."""
        base = self.n_input - self.multiple_birth_removed
        return self.missing_size_removed / base if base else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["multiple_birth_fraction"] = self.multiple_birth_fraction
        d["missing_size_fraction"] = self.missing_size_fraction
        return d


def filter_records(records: Sequence[IndividualRecord]) -> tuple[list[IndividualRecord], FilterAudit]:
    """Drop multiple births, then records without a reported birth size."""
    singletons = [r for r in records if not r.multiple_birth]
    kept = [r for r in singletons if r.reported_birth_size is not None]
    audit = FilterAudit(
        n_input=len(records),
        multiple_birth_removed=len(records) - len(singletons),
        missing_size_removed=len(singletons) - len(kept),
        n_kept=len(kept),
    )
    return kept, audit


def aggregate_cluster(records: Sequence[IndividualRecord], meta: ClusterMeta) -> ClusterRecord:
    """Collapse one cluster's individual records into a ``ClusterRecord``.

    Covariates are available-case means; the outcome mean ignores missing
    birthweights and is ``None`` when every birthweight is missing.
    """
    if not records:
        raise ValueError(f"cluster {meta.cluster_id}: no individual records to aggregate")
    bad = {r.cluster_id for r in records} - {meta.cluster_id}
    if bad:
        raise ValueError(f"cluster {meta.cluster_id}: records from other clusters {sorted(bad)}")
    X = np.array([r.covariate_vector() for r in records])
    observed = ~np.isnan(X)
    counts = observed.sum(axis=0)
    if np.any(counts == 0):
        empty = [COVARIATES[k] for k in np.flatnonzero(counts == 0)]
        raise ValueError(f"cluster {meta.cluster_id}: no observed values for {empty}")
    # sort before summing so the result does not depend on record order
    means = tuple(
        float(math.fsum(np.sort(X[observed[:, k], k])) / counts[k]) for k in range(X.shape[1])
    )
    bws = sorted(r.birthweight_g for r in records if r.birthweight_g is not None)
    mean_bw = math.fsum(bws) / len(bws) if bws else None
    return ClusterRecord(
        cluster_id=meta.cluster_id, country=meta.country, epoch=meta.epoch,
        longitude_deg=meta.longitude_deg, latitude_deg=meta.latitude_deg,
        elevation_m=meta.elevation_m, pfpr=meta.pfpr,
        covariates=means, mean_birthweight_g=mean_bw, n_individuals=len(records),
    )


def group_by_cluster(records: Iterable[IndividualRecord]) -> dict[str, list[IndividualRecord]]:
    groups: dict[str, list[IndividualRecord]] = defaultdict(list)
    for r in records:
        groups[r.cluster_id].append(r)
    return dict(groups)


def aggregate_clusters(
    records: Iterable[IndividualRecord], metas: Iterable[ClusterMeta]
) -> list[ClusterRecord]:
    """Aggregate every cluster that has at least one individual record."""
    groups = group_by_cluster(records)
    return [aggregate_cluster(groups[m.cluster_id], m) for m in metas if m.cluster_id in groups]


def fill_missing_covariates(records: Sequence[IndividualRecord]) -> list[IndividualRecord]:
    """Replace missing covariate cells by the within-cluster mean of that field.

    Integer-coded fields receive the rounded mean so the result still
    satisfies the category constraints.
    """
    from dataclasses import replace

    out = []
    for cid, group in group_by_cluster(records).items():
        X = np.array([r.covariate_vector() for r in group])
        if not np.isnan(X).any():
            out.extend(group)
            continue
        means = np.nanmean(X, axis=0)
        for r, row in zip(group, X):
            changes = {}
            for k, name in enumerate(COVARIATES):
                if np.isnan(row[k]):
                    if np.isnan(means[k]):
                        raise ValueError(f"cluster {cid}: no observed values for {name}")
                    v = float(means[k])
                    changes[name] = v if name == "mother_age_years" else int(round(v))
            out.append(replace(r, **changes) if changes else r)
    order = {r.record_id: i for i, r in enumerate(records)}
    out.sort(key=lambda r: order[r.record_id])
    return out
