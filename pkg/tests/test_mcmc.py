import math

import numpy as np
import pytest

from quadmatch import mcmc


def test_split_chains_drops_middle_draw():
    x = np.arange(7.0)[None, :]
    s = mcmc.split_chains(x)
    assert s.tolist() == [[0, 1, 2], [4, 5, 6]]


def test_z_scale_blom():
    z = mcmc.z_scale(np.array([[3.0, 1.0], [2.0, 4.0]]))
    from scipy.stats import norm
    expect = norm.ppf((np.array([[3, 1], [2, 4]]) - 0.375) / 4.25)
    np.testing.assert_allclose(z, expect)


def test_iid_normal_chains_rhat_near_one():
    inside = 0
    for seed in range(20):
        x = np.random.default_rng(seed).standard_normal((2, 1000))
        r = mcmc.rhat(x)
        inside += 0.99 <= r <= 1.01
    assert inside >= 18


def test_rhat_detects_shifted_chain():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 1000))
    x[1] += 1.0
    assert mcmc.rhat(x) > 1.1


def test_ess_iid_is_close_to_draw_count():
    x = np.random.default_rng(2).standard_normal((2, 1000))
    assert 1600 < mcmc.ess_bulk(x) < 2500
    assert mcmc.ess_tail(x) > 1200


def test_ess_ar1_matches_theory():
    # AR(1) with phi has integrated autocorrelation time (1 + phi) / (1 - phi)
    rng = np.random.default_rng(3)
    phi, n = 0.8, 20000
    x = np.empty((4, n))
    for c in range(4):
        e = rng.standard_normal(n)
        x[c, 0] = e[0] / math.sqrt(1 - phi ** 2)
        for t in range(1, n):
            x[c, t] = phi * x[c, t - 1] + e[t]
    expect = 4 * n * (1 - phi) / (1 + phi)
    assert mcmc.ess_basic(x) == pytest.approx(expect, rel=0.15)


def test_constant_draws_are_nan():
    x = np.ones((2, 100))
    assert math.isnan(mcmc.rhat(x))
    assert math.isnan(mcmc.ess_basic(x))


def test_mcse_mean_iid():
    x = np.random.default_rng(4).standard_normal((2, 2000))
    assert mcmc.mcse_mean(x) == pytest.approx(1 / math.sqrt(4000), rel=0.2)
