"""Small factories shared by the test modules."""

import numpy as np

from quadmatch.bipartite import make_pair
from quadmatch.ingest import COVARIATES, ClusterRecord, IndividualRecord
from quadmatch.nonbipartite import label_quad


def cluster(cid, epoch="early", lon=0.0, lat=0.0, pfpr=0.3, covs=None, country="AA",
            elevation=0.0, y=None):
    covs = tuple(float(v) for v in (covs if covs is not None else np.zeros(len(COVARIATES))))
    return ClusterRecord(cid, country, epoch, float(lon), float(lat), float(elevation), float(pfpr),
                         covs, y, 1)


def pair(pid, z_early=0.4, z_late=0.2, covs_early=None, covs_late=None, country="AA",
         y_early=None, y_late=None):
    e = cluster(f"{pid}e", "early", pfpr=z_early, covs=covs_early, country=country, y=y_early)
    l = cluster(f"{pid}l", "late", pfpr=z_late, covs=covs_late, country=country, y=y_late)
    return make_pair(pid, e, l)


def person(rid, cid="c1", bw=3000.0, size=2, twin=False, **cov):
    base = dict(electricity=1, floor_material=2, toilet_facility=1, urban=0, mother_education=1,
                modern_contraception=0, mother_age_years=27.0, birth_order=2, wealth_index=3,
                child_sex=1, marital_status=1, antenatal_care=1)
    base.update(cov)
    return IndividualRecord(record_id=rid, cluster_id=cid, birthweight_g=bw,
                            reported_birth_size=size, multiple_birth=twin, **base)


def random_quads(rng, I, beta1=-150.0, noise=50.0):
    gamma_e = rng.normal(0, 20, 12)
    gamma_l = rng.normal(0, 20, 12)
    quads = []
    for i in range(I):
        members = []
        fe = rng.normal(0, 100)
        for j in range(2):
            ce, cl = rng.normal(size=12), rng.normal(size=12)
            ze, zl = rng.uniform(0.2, 0.8), rng.uniform(0.0, 0.5)
            dy = fe + beta1 * (zl - ze) + ce @ gamma_e + cl @ gamma_l + noise * rng.standard_normal()
            ye = 3000.0 + rng.normal(0, 100)
            members.append(pair(f"q{i}p{j}", ze, zl, ce, cl, y_early=ye, y_late=ye + dy))
        quads.append(label_quad(i + 1, *members, 0.0))
    return quads


# one line per acceptance criterion, echoed in the pytest terminal summary
ACCEPTANCE: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line
