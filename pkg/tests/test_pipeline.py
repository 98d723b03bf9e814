import numpy as np
import pytest

from helpers import cluster, person
from quadmatch.bipartite import make_pair
from quadmatch.impute import ImputationModelSpec
from quadmatch.nonbipartite import label_quad
from quadmatch.pipeline import AnalysisSettings, quad_records, run_analysis
from quadmatch.synthetic import SyntheticConfig, generate_synthetic


def test_settings_validation():
    with pytest.raises(ValueError):
        AnalysisSettings(xi=-0.01)
    with pytest.raises(ValueError):
        AnalysisSettings(rho_prime=0.0)
    with pytest.raises(ValueError):
        AnalysisSettings(caliper_multiplier=0.0)
    with pytest.raises(ValueError):
        AnalysisSettings(n_phantoms=-1)


def test_quad_records_keeps_matched_clusters_only():
    a = make_pair("a", cluster("e1", "early", pfpr=0.5), cluster("l1", "late", pfpr=0.1))
    b = make_pair("b", cluster("e2", "early", pfpr=0.5), cluster("l2", "late", pfpr=0.4))
    quads = [label_quad(1, a, b, 0.0)]
    recs = [person(f"r{k}", cid) for k, cid in enumerate(["e1", "l1", "e2", "l2", "e3", "l9"])]
    assert [r.cluster_id for r in quad_records(recs, quads)] == ["e1", "l1", "e2", "l2"]


@pytest.fixture(scope="module")
def result():
    data = generate_synthetic(SyntheticConfig(n_countries=6, seed=11))
    settings = AnalysisSettings(imputation=ImputationModelSpec(m_imputations=4, iterations_per_chain=400))
    return data, run_analysis(data.individuals, data.clusters, settings)


def test_run_analysis_is_consistent(result):
    data, res = result
    assert len(res.fits) == len(res.imputations) == 4
    assert res.pooled.estimate == pytest.approx(np.mean([f.beta1 for f in res.fits]), abs=1e-9)
    assert res.table[0][0] == "z_diff" and len(res.table) == 25
    assert len(res.sensitivity.rows) == 4
    used = {c.cluster_id for q in res.quads for p in q.members for c in (p.early, p.late)}
    assert {cid for ds in res.imputations for cid in ds.cluster_ids} == used
    assert res.stage2.n_quads == len(res.quads) == res.balance.n_quads
    assert res.stage1.n_retained == len(res.pairs)
    # every BEC pair has the larger PfPR decline
    assert all(q.bec.z_diff <= q.sec.z_diff for q in res.quads)


def test_run_analysis_is_deterministic(result):
    data, res = result
    settings = AnalysisSettings(imputation=ImputationModelSpec(m_imputations=4, iterations_per_chain=400))
    again = run_analysis(data.individuals, data.clusters, settings)
    assert again.pooled == res.pooled
