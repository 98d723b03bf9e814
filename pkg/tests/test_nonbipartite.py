import numpy as np
import pytest

from helpers import pair
from quadmatch.nonbipartite import (
    BALANCE_THRESHOLD,
    MatchingError,
    QuadMatch,
    balance_table,
    label_quad,
    prematch_balance,
    run_stage2,
    solve_perfect_matching,
)


def matchings(nodes):
    if not nodes:
        yield []
        return
    a, rest = nodes[0], nodes[1:]
    for k, b in enumerate(rest):
        for m in matchings(rest[:k] + rest[k + 1:]):
            yield [(a, b)] + m


def brute(C):
    return min(sum(C[a, b] for a, b in m) for m in matchings(list(range(len(C)))))


def random_symmetric(rng, n, integer=True):
    A = rng.integers(0, 100, (n, n)).astype(float) if integer else rng.uniform(0, 10, (n, n))
    A = np.triu(A, 1)
    return A + A.T


def test_four_node_example():
    C = np.full((4, 4), 10.0)
    C[0, 1] = C[1, 0] = C[2, 3] = C[3, 2] = 1.0
    sol = solve_perfect_matching(C)
    assert sol.pairs == [(0, 1), (2, 3)] and sol.total == 2.0


def test_two_nodes():
    sol = solve_perfect_matching(np.array([[0.0, 7.0], [7.0, 0.0]]))
    assert sol.pairs == [(0, 1)] and sol.total == 7.0


def test_matches_enumeration(rng):
    for n in (2, 4, 6, 8, 10):
        for _ in range(10):
            C = random_symmetric(rng, n, integer=bool(rng.integers(2)))
            sol = solve_perfect_matching(C)
            assert sol.total == pytest.approx(brute(C), abs=1e-9)
            covered = sorted(v for p in sol.pairs for v in p)
            assert covered == list(range(n))


def test_odd_cycles_need_cuts():
    # two disjoint cheap triangles joined by expensive edges: the degree LP is half-integral
    C = np.full((6, 6), 100.0)
    for tri in ((0, 1, 2), (3, 4, 5)):
        for a in tri:
            for b in tri:
                if a != b:
                    C[a, b] = 1.0
    C[2, 3] = C[3, 2] = 50.0
    sol = solve_perfect_matching(C)
    assert sol.total == brute(C) == 52.0


def test_phantom_discards_exactly_one(rng):
    C = random_symmetric(rng, 5)
    sol = solve_perfect_matching(C, n_phantoms=1)
    assert len(sol.discarded) == 1 and len(sol.pairs) == 2
    best = min(brute(np.delete(np.delete(C, k, 0), k, 1)) for k in range(5))
    assert sol.total == best


def test_parity_errors():
    with pytest.raises(MatchingError):
        solve_perfect_matching(np.zeros((3, 3)))
    with pytest.raises(MatchingError):
        solve_perfect_matching(np.zeros((2, 2)), n_phantoms=4)


def test_large_instance_against_milp(rng):
    # column generation path (more than 120 nodes) versus a plain MILP on all edges
    from scipy.optimize import Bounds, LinearConstraint, milp
    from scipy import sparse

    n = 130
    pts = rng.normal(size=(n, 3))
    C = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    sol = solve_perfect_matching(C)
    iu = np.triu_indices(n, 1)
    m = iu[0].size
    A = sparse.csr_matrix((np.ones(2 * m), (np.r_[iu[0], iu[1]], np.r_[np.arange(m), np.arange(m)])),
                          shape=(n, m))
    res = milp(C[iu], constraints=LinearConstraint(A, 1, 1), integrality=np.ones(m),
               bounds=Bounds(0, 1), options={"mip_rel_gap": 0})
    assert sol.total == pytest.approx(res.fun, rel=1e-9)


def test_stage2_crosses_exposure_groups():
    base = np.zeros(12)
    ps = [pair("a", 0.5, 0.30, base, base), pair("b", 0.5, 0.31, base + 0.01, base),
          pair("c", 0.5, 0.50, base, base + 0.01), pair("d", 0.5, 0.49, base + 0.01, base + 0.01)]
    quads, audit = run_stage2(ps)
    assert len(quads) == 2 and audit.n_penalized_edges == 0
    for q in quads:
        assert {q.bec.pair_id, q.sec.pair_id} & {"a", "b"}
        assert {q.bec.pair_id, q.sec.pair_id} & {"c", "d"}
        assert q.bec.z_diff < q.sec.z_diff


def test_stage2_forced_match_with_equal_exposure():
    ps = [pair("p2", 0.5, 0.3), pair("p1", 0.5, 0.3, covs_early=np.ones(12))]
    quads, audit = run_stage2(ps)
    assert len(quads) == 1 and audit.n_penalized_edges == 1
    assert quads[0].bec.pair_id == "p1"


def test_stage2_odd_count_discards_one(rng):
    ps = [pair(f"p{k}", 0.6, rng.uniform(0, 0.5), rng.normal(size=12), rng.normal(size=12)) for k in range(5)]
    quads, audit = run_stage2(ps)
    assert len(quads) == 2 and len(audit.discarded) == 1 and audit.n_phantoms == 1


def test_penalty_is_monotone(rng):
    # raising rho' never increases the number of penalized edges used
    ps = [pair(f"p{k}", 0.6, rng.uniform(0.3, 0.5), rng.normal(size=12), rng.normal(size=12)) for k in range(30)]
    used = [run_stage2(ps, rho_prime=r)[1].n_penalized_edges for r in (0.01, 1.0, 10.0, 1000.0)]
    assert all(a >= b for a, b in zip(used, used[1:]))


def test_label_quad_validation():
    a, b = pair("a", 0.5, 0.1), pair("b", 0.5, 0.4)
    q = label_quad(1, b, a, 0.0)
    assert q.bec is a and q.sec is b
    with pytest.raises(ValueError):
        QuadMatch(1, b, a, 0.0)


def test_balance_identical_groups_is_zero(rng):
    covs = [rng.normal(size=12) for _ in range(4)]
    quads = [QuadMatch(k + 1, pair(f"b{k}", 0.6, 0.1, covs[k], covs[k]),
                       pair(f"s{k}", 0.6, 0.5, covs[k], covs[k]), 0.0) for k in range(4)]
    pre = [p for q in quads for p in q.members]
    table = balance_table(quads, pre)
    assert all(r.std_diff == 0.0 for r in table.covariates)
    assert table.exposure.std_diff > 0


def test_balance_hand_example():
    def cv(v):
        x = np.zeros(12)
        x[8] = v      # wealth index
        return x

    q1 = QuadMatch(1, pair("b1", 0.5, 0.1, cv(1), cv(2)), pair("s1", 0.5, 0.4, cv(2), cv(3)), 0.0)
    q2 = QuadMatch(2, pair("b2", 0.6, 0.3, cv(3), cv(3)), pair("s2", 0.6, 0.6, cv(4), cv(5)), 0.0)
    pre = [q1.bec, q1.sec, q2.bec, q2.sec]
    t = balance_table([q1, q2], pre)
    row = next(r for r in t.covariates if r.name == "wealth_index_early")
    sd = np.std([1, 2, 3, 4], ddof=1)
    assert row.mean_bec == 2.0 and row.mean_sec == 3.0
    assert row.std_diff == pytest.approx(1.0 / sd, abs=1e-12)
    z = [-0.4, -0.1, -0.3, 0.0]
    assert t.exposure.std_diff == pytest.approx((-0.05 - (-0.35)) / np.std(z, ddof=1), abs=1e-12)
    assert row.imbalanced and abs(row.std_diff) >= BALANCE_THRESHOLD
    degenerate = next(r for r in t.covariates if r.name == "electricity_early")
    assert degenerate.std_diff == 0.0 and not degenerate.degenerate


def test_prematch_balance_splits_at_median():
    ps = [pair(f"p{k}", 0.6, 0.6 - 0.1 * k, covs_early=np.full(12, float(k))) for k in range(4)]
    t = prematch_balance(ps)
    assert t.exposure.mean_bec < t.exposure.mean_sec
    row = t.covariates[0]
    assert row.mean_bec == 2.5 and row.mean_sec == 0.5
