import itertools
import math

import numpy as np
import pytest

from helpers import cluster
from quadmatch.bipartite import make_pair, run_stage1, solve_assignment, stage1_diagnostics
from quadmatch.geo import haversine_km


def brute_min(C):
    m, n = C.shape
    if m <= n:
        return min(sum(C[i, j] for i, j in enumerate(p)) for p in itertools.permutations(range(n), m))
    return brute_min(C.T)


def test_two_by_two():
    sol = solve_assignment([[1, 2], [3, 1]])
    assert sol.mapping == {0: 0, 1: 1} and sol.total == 2


def test_zero_diagonal():
    C = 1 - np.eye(5)
    sol = solve_assignment(C)
    assert sol.mapping == {k: k for k in range(5)} and sol.total == 0


def test_seven_by_nine_brute_force(rng):
    for _ in range(3):
        C = rng.integers(0, 50, (7, 9)).astype(float)
        assert solve_assignment(C).total == brute_min(C)


def test_random_rectangular_brute_force(rng):
    for _ in range(100):
        m, n = rng.integers(1, 7, 2)
        C = rng.integers(0, 20, (m, n)).astype(float)
        sol = solve_assignment(C)
        assert sol.total == brute_min(C)
        small, large = (m, n) if m <= n else (n, m)
        mp = sol.mapping
        assert len(mp) == small and len(set(mp.values())) == small
        assert all(0 <= v < large for v in mp.values())


def test_assignment_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_assignment([[np.inf, 1.0]])
    with pytest.raises(ValueError):
        solve_assignment(np.zeros((0, 3)))


def _km_east(km, lat=0.0):
    return km / (6371.0 * math.pi / 180.0) / math.cos(math.radians(lat))


def test_single_pair_retained():
    e = cluster("e1", "early", lon=10.0, lat=0.0, pfpr=0.3)
    l = cluster("l1", "late", lon=10.0 + _km_east(5.0), lat=0.0, pfpr=0.2)
    pairs, audit = run_stage1([e, l])
    assert len(pairs) == 1
    assert pairs[0].distance_km == pytest.approx(5.0, abs=1e-9)
    assert audit.n_retained == 1


def test_far_pair_dropped():
    e = cluster("e1", "early", lon=10.0, pfpr=0.3)
    l = cluster("l1", "late", lon=10.0 + _km_east(150.0), pfpr=0.2)
    pairs, audit = run_stage1([e, l])
    assert pairs == [] and audit.distance_dropped == 1


def test_zero_pfpr_dropped_and_country_skipped():
    e = cluster("e1", "early", pfpr=0.0)
    l = cluster("l1", "late", lon=0.01, pfpr=0.0)
    lonely = cluster("x1", "early", country="BB", pfpr=0.4)
    pairs, audit = run_stage1([e, l, lonely])
    assert pairs == [] and audit.zero_pfpr_dropped == 1
    assert "BB" in audit.skipped


def test_stage1_pairs_nearest_neighbours_on_a_grid():
    # well-separated sites; each late cluster is the jittered copy of one early cluster
    rng = np.random.default_rng(0)
    sites = [(float(x), float(y)) for x in range(4) for y in range(4)]
    order = rng.permutation(len(sites))
    early = [cluster(f"e{k}", "early", lon=x, lat=y) for k, (x, y) in enumerate(sites)]
    late = [cluster(f"l{k}", "late", lon=sites[k][0] + 0.01, lat=sites[k][1] - 0.01) for k in order]
    pairs, _ = run_stage1(early + late)
    assert len(pairs) == 16
    assert all(p.early.cluster_id[1:] == p.late.cluster_id[1:] for p in pairs)


def test_diagnostics_identical_coordinates():
    pairs = [make_pair(f"p{k}", cluster(f"e{k}", "early", lon=k, lat=2 * k, pfpr=0.1 * k + 0.1),
                       cluster(f"l{k}", "late", lon=k, lat=2 * k, pfpr=0.05 * k))
             for k in range(4)]
    d = stage1_diagnostics(pairs)
    assert d.corr_longitude == 1.0 and d.corr_latitude == 1.0
    assert d.mean_distance_km == 0.0


def test_diagnostics_hand_example():
    p1 = make_pair("p1", cluster("e1", "early", lon=0, lat=0, pfpr=0.4, elevation=100),
                   cluster("l1", "late", lon=0.1, lat=0, pfpr=0.2, elevation=130))
    p2 = make_pair("p2", cluster("e2", "early", lon=1, lat=1, pfpr=0.6, elevation=200),
                   cluster("l2", "late", lon=1, lat=1.2, pfpr=0.5, elevation=190))
    d = stage1_diagnostics([p1, p2])
    dist = (haversine_km(0, 0, 0.1, 0) + haversine_km(1, 1, 1, 1.2)) / 2
    assert d.mean_distance_km == pytest.approx(dist, abs=1e-12)
    assert d.mean_abs_elevation_diff_m == pytest.approx(20.0, abs=1e-12)
    assert d.early_mean_pfpr == pytest.approx(0.5, abs=1e-12)
    assert d.late_mean_pfpr == pytest.approx(0.35, abs=1e-12)
    assert d.late_mean_latitude == pytest.approx(0.6, abs=1e-12)
    assert d.corr_longitude == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        stage1_diagnostics([p1])


def test_pair_validation():
    with pytest.raises(ValueError):
        make_pair("p", cluster("a", "late"), cluster("b", "early"))
    with pytest.raises(ValueError):
        make_pair("p", cluster("a", "early"), cluster("b", "late", country="ZZ"))
