"""Synthetic survey data with a known exposure effect.

Each country is a square region with smooth random surfaces for malaria
prevalence, its decline, elevation, socioeconomic development and a
time-invariant site effect on birthweight. Survey sites are scattered over
the region; each epoch surveys a subset of sites, displaced by a few km.

Birthweight is linear in the cluster's PfPR (slope ``true_beta1``), in the
child's covariates and in the site effect, so cluster means follow the
post-matching working model exactly. Development improves more where
malaria declines more, which confounds a naive before/after comparison.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .ingest import (
    COVARIATES,
    SIZE_AVERAGE,
    SIZE_LARGE,
    SIZE_SMALL,
    ClusterMeta,
    IndividualRecord,
    write_cluster_meta,
    write_individuals,
)

KM_PER_DEG = 111.195

# grams per unit of each covariate, before covariate_effect_scale
OUTCOME_EFFECTS: dict[str, float] = {
    "electricity": 30.0,
    "floor_material": 20.0,
    "toilet_facility": 25.0,
    "urban": -20.0,
    "mother_education": 70.0,
    "modern_contraception": 10.0,
    "mother_age_years": 3.0,
    "birth_order": 50.0,
    "wealth_index": 10.0,
    "child_sex": 60.0,
    "marital_status": -20.0,
    "antenatal_care": -30.0,
}

# log-odds of a missing birthweight per unit covariate
MISSINGNESS_EFFECTS: dict[str, float] = {
    "urban": -0.4,
    "mother_education": -0.35,
    "wealth_index": -0.15,
    "antenatal_care": -0.5,
    "mother_age_years": 0.01,
    "birth_order": 0.15,
    "marital_status": 0.1,
}


@dataclass(frozen=True)
class SyntheticConfig:
    n_countries: int = 20
    clusters_per_country_early: int = 40
    clusters_per_country_late: int = 40
    individuals_per_cluster: int = 30
    true_beta1: float = -150.0
    covariate_effect_scale: float = 1.0
    missingness_rate_target: float = 0.49
    spatial_smoothness: float = 1.0
    seed: int = 0
    twin_rate: float = 0.037
    missing_size_rate: float = 0.065
    jitter_km: float = 10.0
    confounding: float = 0.15
    baseline_confounding: float = 0.05
    covariate_own_weight: float = 0.15
    covariate_noise_sd: float = 0.1
    development_scale: float = 1.5
    malaria_free_fraction: float = 0.04
    region_half_width_deg: float = 2.5
    outcome_noise_sd: float = 450.0
    site_effect_sd: float = 80.0
    size_report_noise_sd: float = 150.0

    def __post_init__(self):
        for name in ("n_countries", "clusters_per_country_early", "clusters_per_country_late",
                     "individuals_per_cluster"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("missingness_rate_target", "twin_rate", "missing_size_rate",
                     "malaria_free_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.spatial_smoothness <= 0:
            raise ValueError("spatial_smoothness must be positive")
        if self.jitter_km < 0 or self.outcome_noise_sd < 0:
            raise ValueError("jitter_km and outcome_noise_sd must be non-negative")


@dataclass
class SyntheticData:
    individuals: list[IndividualRecord]
    clusters: list[ClusterMeta]
    truth: dict

    def write(self, outdir) -> dict[str, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "individuals": write_individuals(outdir / "individuals.csv", self.individuals),
            "clusters": write_cluster_meta(outdir / "clusters.csv", self.clusters),
            "truth": outdir / "truth.json",
        }
        paths["truth"].write_text(json.dumps(self.truth, indent=2, sort_keys=True) + "\n")
        return paths


class _Surface:
    """Sum of Gaussian bumps, standardized over a reference set of points."""

    def __init__(self, rng, lo, hi, length, n_bumps=10, ref=None):
        self.centers = rng.uniform(lo, hi, size=(n_bumps, 2))
        self.weights = rng.standard_normal(n_bumps)
        self.length = length
        self.mu, self.sd = 0.0, 1.0
        if ref is not None:
            v = self(ref)
            self.mu, self.sd = float(v.mean()), float(v.std()) or 1.0

    def __call__(self, pts):
        d2 = ((pts[:, None, :] - self.centers[None, :, :]) ** 2).sum(-1)
        raw = np.exp(-d2 / (2 * self.length ** 2)) @ self.weights
        return (raw - self.mu) / self.sd


def _displace(rng, pts, jitter_km):
    theta = rng.uniform(0, 2 * np.pi, len(pts))
    dist = rng.uniform(0, jitter_km, len(pts))
    dlat = dist * np.cos(theta) / KM_PER_DEG
    dlon = dist * np.sin(theta) / (KM_PER_DEG * np.cos(np.radians(pts[:, 1])))
    return np.column_stack([pts[:, 0] + dlon, pts[:, 1] + dlat])


def _draw_covariates(rng, latent: np.ndarray, n: int) -> dict[str, np.ndarray]:
    """Individual covariates for one cluster from its 12 latent levels."""
    L = dict(zip(COVARIATES, latent))
    e = rng.standard_normal
    out = {
        "electricity": rng.random(n) < expit(-1.0 + 1.2 * L["electricity"]),
        "floor_material": np.digitize(L["floor_material"] + e(n), [-0.3, 0.9]) + 1,
        "toilet_facility": rng.random(n) < expit(-1.0 + 1.0 * L["toilet_facility"]),
        "urban": rng.random(n) < expit(-0.6 + 1.2 * L["urban"]),
        "mother_education": np.digitize(L["mother_education"] + e(n), [-0.2, 1.0]),
        "modern_contraception": rng.random(n) < expit(0.8 + 0.6 * L["modern_contraception"]),
        "mother_age_years": np.clip(np.round(28.0 + 1.5 * L["mother_age_years"] + 6.0 * e(n)), 15, 49),
        "birth_order": np.digitize(-0.6 * L["birth_order"] + e(n), [-0.8, 1.0]) + 1,
        "wealth_index": np.digitize(L["wealth_index"] + e(n), [-0.85, -0.25, 0.25, 0.85]) + 1,
        "child_sex": rng.random(n) < 0.51,
        "marital_status": rng.random(n) < expit(2.0 - 0.2 * L["marital_status"]),
        "antenatal_care": rng.random(n) < expit(0.5 + 0.6 * L["antenatal_care"]),
    }
    return {k: v.astype(float) for k, v in out.items()}


# how strongly each covariate follows the development surface
_LOADINGS = np.array([1.0, 1.0, 1.0, 0.8, 1.0, 0.6, 0.4, 0.8, 1.0, 0.0, 0.3, 0.7])


def generate_synthetic(cfg: SyntheticConfig) -> SyntheticData:
    """Generate individuals, cluster metadata and a ground-truth report.

    Deterministic given ``cfg.seed``.
    """
    rng = np.random.default_rng(cfg.seed)
    gamma = np.array([OUTCOME_EFFECTS[c] for c in COVARIATES]) * cfg.covariate_effect_scale
    w = cfg.region_half_width_deg
    length = cfg.spatial_smoothness

    metas: list[ClusterMeta] = []
    cov_blocks: list[dict[str, np.ndarray]] = []
    cluster_of: list[int] = []
    det_part: list[np.ndarray] = []
    latent_means: dict[str, dict] = {}

    for c in range(cfg.n_countries):
        country = f"C{c + 1:02d}"
        center = np.array([rng.uniform(-15, 40), rng.uniform(-15, 12)])
        lo, hi = center - w, center + w
        ne, nl = cfg.clusters_per_country_early, cfg.clusters_per_country_late
        n_sites = max(ne, nl)
        sites = rng.uniform(lo, hi, size=(n_sites, 2))

        dev = _Surface(rng, lo, hi, length, ref=sites)
        endemic_own = _Surface(rng, lo, hi, length, ref=sites)
        decline = _Surface(rng, lo, hi, length, ref=sites)
        relief = _Surface(rng, lo, hi, length, ref=sites)
        site_fx = _Surface(rng, lo, hi, length, ref=sites)
        own = [_Surface(rng, lo, hi, length, ref=sites) for _ in COVARIATES]
        free_cut = np.quantile(relief(sites), 1.0 - cfg.malaria_free_fraction) \
            if cfg.malaria_free_fraction > 0 else np.inf
        base_shift = rng.normal(0.0, 0.5)

        for epoch, n_ep in (("early", ne), ("late", nl)):
            chosen = rng.permutation(n_sites)[:n_ep]
            pts = _displace(rng, sites[chosen], cfg.jitter_km)
            d = dev(pts)
            r = relief(pts)
            endemic = -cfg.baseline_confounding * d + 0.8 * endemic_own(pts)
            p_early = expit(-0.9 + base_shift + 1.1 * endemic)
            drop = expit(-0.3 + 1.4 * decline(pts))
            free = r >= free_cut
            if epoch == "early":
                pfpr = p_early
                growth = np.zeros(n_ep)
            else:
                pfpr = p_early * (1.0 - drop)
                growth = 0.25 + cfg.confounding * 0.6 * decline(pts)
            pfpr = np.clip(pfpr + rng.normal(0, 0.005, n_ep), 0.0, 1.0)
            pfpr[free] = 0.0
            elev = 900.0 + 450.0 * r + rng.normal(0, 3.0, n_ep)

            for k in range(n_ep):
                cid = f"{country}-{epoch[0].upper()}{k + 1:03d}"
                lon, lat = float(np.clip(pts[k, 0], -180, 180)), float(np.clip(pts[k, 1], -90, 90))
                meta = ClusterMeta(cid, country, epoch, lon, lat, float(elev[k]), float(pfpr[k]))
                metas.append(meta)
                latent = (_LOADINGS * cfg.development_scale * (d[k] + growth[k])
                          + cfg.covariate_own_weight * np.array([s(pts[k:k + 1])[0] for s in own])
                          + rng.normal(0, cfg.covariate_noise_sd, len(COVARIATES)))
                n = cfg.individuals_per_cluster
                x = _draw_covariates(rng, latent, n)
                X = np.column_stack([x[c_] for c_ in COVARIATES])
                mu = (3000.0 + cfg.site_effect_sd * site_fx(pts[k:k + 1])[0]
                      + (20.0 if epoch == "late" else 0.0)
                      + cfg.true_beta1 * meta.pfpr + X @ gamma)
                cov_blocks.append(x)
                cluster_of.extend([len(metas) - 1] * n)
                det_part.append(np.full(n, mu) if np.ndim(mu) == 0 else mu)
                latent_means[cid] = {
                    "expected_mean_birthweight_g": float(np.mean(mu)),
                    "pfpr": meta.pfpr,
                }

    cluster_of = np.array(cluster_of)
    mu = np.concatenate(det_part)
    cov = {c_: np.concatenate([b[c_] for b in cov_blocks]) for c_ in COVARIATES}
    n_total = mu.size

    twins = rng.random(n_total) < cfg.twin_rate
    bw = mu + cfg.outcome_noise_sd * rng.standard_normal(n_total) - 700.0 * twins
    bw = np.clip(bw, 400.0, 6500.0)

    size_latent = bw + cfg.size_report_noise_sd * rng.standard_normal(n_total)
    size = np.where(size_latent < 2750, SIZE_SMALL, np.where(size_latent > 3550, SIZE_LARGE, SIZE_AVERAGE))
    size_missing = rng.random(n_total) < cfg.missing_size_rate

    eta = sum(MISSINGNESS_EFFECTS[c_] * cov[c_] for c_ in MISSINGNESS_EFFECTS)
    eta = eta - eta.mean()
    target = cfg.missingness_rate_target
    if 0.0 < target < 1.0:
        alpha = brentq(lambda a: float(expit(a + eta).mean()) - target, -50, 50)
        bw_missing = rng.random(n_total) < expit(alpha + eta)
    else:
        bw_missing = np.full(n_total, target >= 1.0)

    ints = {c_: cov[c_].astype(int) for c_ in COVARIATES if c_ != "mother_age_years"}
    individuals = []
    counters = np.zeros(len(metas), dtype=int)
    for i in range(n_total):
        m = cluster_of[i]
        counters[m] += 1
        cid = metas[m].cluster_id
        individuals.append(IndividualRecord(
            record_id=f"{cid}-{counters[m]:03d}",
            cluster_id=cid,
            birthweight_g=None if bw_missing[i] else float(bw[i]),
            reported_birth_size=None if size_missing[i] else int(size[i]),
            multiple_birth=bool(twins[i]),
            mother_age_years=float(cov["mother_age_years"][i]),
            **{c_: int(ints[c_][i]) for c_ in ints},
        ))

    truth = {
        "true_beta1": cfg.true_beta1,
        "config": asdict(cfg),
        "outcome_effects": dict(zip(COVARIATES, gamma.tolist())),
        "realized": {
            "n_individuals": int(n_total),
            "n_clusters": len(metas),
            "twin_rate": float(twins.mean()),
            "missing_birthweight_rate": float(bw_missing.mean()),
            "missing_size_rate": float(size_missing.mean()),
        },
        "clusters": latent_means,
    }
    return SyntheticData(individuals=individuals, clusters=metas, truth=truth)
