import math

import numpy as np
import pytest

from helpers import person
from quadmatch.impute import (
    DEFAULT_PREDICTORS,
    ImputationModelSpec,
    McmcDiagnostics,
    RankDeficiencyError,
    design_matrix,
    diagnostics_gate,
    draw_imputations,
    draw_indices,
    fit_imputation_model,
    read_imputed_csv,
)
from quadmatch import mcmc


def simulate(rng, n, beta, sigma=300.0, missing=0.0):
    """Records whose birthweight is linear in (age, wealth, sex) plus noise."""
    recs = []
    for k in range(n):
        age = float(rng.integers(15, 45))
        wealth = int(rng.integers(1, 6))
        sex = int(rng.integers(0, 2))
        bw = beta[0] + beta[1] * age + beta[2] * wealth + beta[3] * sex + sigma * rng.standard_normal()
        recs.append(person(f"r{k}", cid=f"c{k % 20}", bw=None if rng.random() < missing else float(bw),
                           mother_age_years=age, wealth_index=wealth, child_sex=sex))
    return recs


SMALL = ("mother_age_years", "wealth_index", "child_sex")


def test_design_matrix_columns():
    recs = [person("a", size=1, birth_order=3), person("b", size=3, birth_order=1)]
    X = design_matrix(recs, ("birth_order", "birth_order_sq", "size_low", "size_large"))
    assert X.tolist() == [[1, 3, 9, 1, 0], [1, 1, 1, 0, 1]]


def test_spec_validation():
    with pytest.raises(ValueError):
        ImputationModelSpec(predictors=("shoe_size",))
    with pytest.raises(ValueError):
        ImputationModelSpec(m_imputations=1)
    spec = ImputationModelSpec()
    assert spec.predictors == DEFAULT_PREDICTORS
    assert (spec.n_warmup, spec.n_kept) == (500, 500)


def test_rank_deficiency_names_column(rng):
    recs = simulate(rng, 300, [3000, 5, 10, 50])
    recs = [r for r in recs]
    spec = ImputationModelSpec(predictors=("wealth_index", "wealth_index"))
    with pytest.raises(RankDeficiencyError) as info:
        fit_imputation_model(recs, spec)
    assert "wealth_index" in info.value.columns


def test_too_few_complete_cases(rng):
    with pytest.raises(ValueError):
        fit_imputation_model(simulate(rng, 20, [3000, 5, 10, 50]), ImputationModelSpec(predictors=SMALL))


def test_posterior_covers_truth_across_seeds():
    beta = [2800.0, 6.0, 15.0, 60.0]
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        recs = simulate(rng, 5000, beta)
        post = fit_imputation_model(recs, ImputationModelSpec(predictors=SMALL, seed=seed))
        flat = post.flat()
        z = np.abs(flat[:, :4].mean(0) - beta) / flat[:, :4].std(0)
        hits += bool(np.all(z < 3))
    assert hits >= 19


def test_same_seed_same_draws(rng):
    recs = simulate(rng, 500, [3000, 5, 10, 50])
    spec = ImputationModelSpec(predictors=SMALL, seed=7)
    a = fit_imputation_model(recs, spec)
    b = fit_imputation_model(recs, spec)
    assert np.array_equal(a.draws, b.draws)
    assert not np.array_equal(a.draws[0], a.draws[1])


def test_size_coefficient_signs():
    from quadmatch.ingest import filter_records
    from quadmatch.synthetic import SyntheticConfig, generate_synthetic

    data = generate_synthetic(SyntheticConfig(seed=2, n_countries=3))
    kept, _ = filter_records(data.individuals)
    post = fit_imputation_model(kept)
    est = {row["parameter"]: row["estimate"] for row in post.summary()}
    assert est["size_low"] < -300 and est["size_large"] > 300


def test_flat_prior_matches_ols():
    # with a very wide prior the posterior mean of beta is the OLS estimate
    rng = np.random.default_rng(0)
    recs = simulate(rng, 400, [3000.0, 0.0, 40.0, 0.0], sigma=200.0)
    spec = ImputationModelSpec(predictors=("wealth_index",), prior_scale=1e7, seed=0,
                               chains=4, iterations_per_chain=2000)
    post = fit_imputation_model(recs, spec)
    X = design_matrix(recs, spec.predictors)
    y = np.array([r.birthweight_g for r in recs])
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    for j in range(2):
        draws = post.beta[:, :, j]
        assert abs(draws.mean() - ols[j]) < 2 * mcmc.mcse_mean(draws)


def test_default_run_diagnostics(rng):
    recs = simulate(rng, 3000, [3000, 5, 10, 50])
    post = fit_imputation_model(recs, ImputationModelSpec(predictors=SMALL))
    d = post.diagnostics
    assert np.all((d.rhat >= 0.99) & (d.rhat <= 1.01))
    assert np.all(d.bulk_ess >= 400) and np.all(d.tail_ess >= 400)
    assert diagnostics_gate(d).passed


def test_gate_examples():
    names = ("a", "b")
    ok = McmcDiagnostics(names, np.array([1.0, 1.0]), np.array([800.0, 800.0]), np.array([800.0, 800.0]))
    assert diagnostics_gate(ok).passed
    bad = McmcDiagnostics(names, np.array([1.0, 1.2]), np.array([800.0, 800.0]), np.array([800.0, 800.0]))
    report = diagnostics_gate(bad)
    assert not report.passed and report.offenders[0].startswith("b:")
    assert bad.warning and not ok.warning


def test_draw_indices_distinct():
    idx = draw_indices(1000, 20)
    assert len(set(idx.tolist())) == 20 and idx.min() >= 0 and idx.max() < 1000
    with pytest.raises(ValueError):
        draw_indices(5, 6)


def test_imputations(rng, tmp_path):
    recs = simulate(rng, 800, [3000, 5, 10, 50], missing=0.4)
    spec = ImputationModelSpec(predictors=SMALL, seed=3)
    post = fit_imputation_model(recs, spec)
    sets = draw_imputations(recs, post)
    assert len(sets) == 20
    assert len({ds.draw for ds in sets}) == 20
    observed = np.array([r.birthweight_g is not None for r in recs])
    stack = np.array([ds.birthweight_g for ds in sets])
    obs_vals = np.array([r.birthweight_g for r in recs if r.birthweight_g is not None])
    for row in stack:
        assert np.array_equal(row[observed], obs_vals)
    assert np.all(stack[:, ~observed].var(axis=0) > 0)
    assert not np.any(np.isnan(stack))
    completed = sets[0].records(recs)
    assert all(r.birthweight_g is not None for r in completed)
    path = tmp_path / "imp.csv"
    sets[4].write_csv(path)
    back = read_imputed_csv(path)
    assert back.draw == sets[4].draw and np.array_equal(back.birthweight_g, sets[4].birthweight_g)
    assert back.cluster_means() == sets[4].cluster_means()
