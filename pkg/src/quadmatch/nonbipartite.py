"""Stage-two matching: pair the cluster pairs into pairs of pairs.

The minimum-weight perfect matching is solved exactly as a linear program
over the matching polytope. Degree constraints alone admit half-integral
vertices on odd cycles, so violated odd-set (blossom) inequalities are added
until the optimum is integral. On large graphs only a sparse edge subset is
priced into the LP at first; edges with negative reduced cost under the
current duals are added until none remain, which certifies optimality over
the complete graph. A mixed-integer solve is kept as a last resort.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp
from scipy.sparse.csgraph import connected_components

from .bipartite import ClusterPair
from .distances import FORBIDDEN, DistanceMatrix, pair_covariate_matrix, stage2_distance_matrix
from .ingest import COVARIATE_LABELS, COVARIATES

log = logging.getLogger(__name__)

_INT_TOL = 1e-6
_RC_TOL = 1e-9
_DENSE_LIMIT = 120      # below this many nodes the LP uses every edge
_NEIGHBOURS = 12        # initial cheapest edges per node on large graphs
_MAX_ROUNDS = 200


class MatchingError(ValueError):
    pass


@dataclass(frozen=True)
class PerfectMatching:
    pairs: list[tuple[int, int]]          # real-real edges, i < j
    discarded: list[int]                  # real nodes absorbed by phantoms
    total: float                          # cost over real-real edges
    lp_rounds: int = 0
    n_cuts: int = 0
    used_milp: bool = False


def _edge_index(n_real: int, n_phantoms: int, cost: np.ndarray):
    """All admissible edges (u < v) of the graph augmented with phantom nodes."""
    N = n_real + n_phantoms
    iu, ju = np.triu_indices(N, 1)
    c = np.zeros(iu.size)
    real = ju < n_real
    c[real] = cost[iu[real], ju[real]]
    # phantom-real edges cost 0; phantom-phantom and forbidden edges are dropped
    keep = (iu < n_real) & (c < FORBIDDEN) & np.isfinite(c)
    return iu[keep], ju[keep], c[keep]


def _incidence(N: int, u: np.ndarray, v: np.ndarray) -> sparse.csr_matrix:
    k = np.arange(u.size)
    return sparse.csr_matrix(
        (np.ones(2 * u.size), (np.concatenate([u, v]), np.concatenate([k, k]))),
        shape=(N, u.size),
    )


def _initial_edges(N: int, n_real: int, u, v, c) -> np.ndarray:
    """Edge subset for the first LP: each node's cheapest edges plus one perfect matching."""
    if N <= _DENSE_LIMIT:
        return np.ones(u.size, dtype=bool)
    chosen = np.zeros(u.size, dtype=bool)
    by_node: dict[int, list[int]] = defaultdict(list)
    order = np.argsort(c, kind="stable")
    for e in order.tolist():
        a, b = int(u[e]), int(v[e])
        if len(by_node[a]) < _NEIGHBOURS or len(by_node[b]) < _NEIGHBOURS:
            chosen[e] = True
            by_node[a].append(e)
            by_node[b].append(e)
    # a feasible perfect matching: phantoms take the first reals, the rest pair up in order
    lookup = {(int(a), int(b)): k for k, (a, b) in enumerate(zip(u, v))}
    n_ph = N - n_real
    seq = list(range(n_ph, n_real))
    needed = [(k, n_real + k) for k in range(n_ph)] + list(zip(seq[0::2], seq[1::2]))
    for a, b in needed:
        k = lookup.get((min(a, b), max(a, b)))
        if k is None:
            # the fallback pairing is not admissible; price in everything
            return np.ones(u.size, dtype=bool)
        chosen[k] = True
    return chosen


def _odd_components(N: int, u, v, x) -> list[np.ndarray]:
    frac = (x > _INT_TOL) & (x < 1 - _INT_TOL)
    if not frac.any():
        return []
    fu, fv = u[frac], v[frac]
    g = sparse.coo_matrix((np.ones(fu.size), (fu, fv)), shape=(N, N))
    _, labels = connected_components(g, directed=False)
    touched = np.unique(np.concatenate([fu, fv]))
    out = []
    for lab in np.unique(labels[touched]):
        members = np.flatnonzero(labels == lab)
        if members.size % 2 == 1 and members.size >= 3:
            out.append(members)
    return out


def _cut_rows(cuts: list[np.ndarray], N: int, u, v) -> sparse.csr_matrix:
    rows = []
    for S in cuts:
        inside = np.zeros(N, dtype=bool)
        inside[S] = True
        rows.append(sparse.csr_matrix((inside[u] & inside[v]).astype(float)))
    return sparse.vstack(rows).tocsr()


def _solve_lp(N, u, v, c, cuts):
    kw = {}
    if cuts:
        kw["A_ub"] = _cut_rows(cuts, N, u, v)
        kw["b_ub"] = np.array([(S.size - 1) / 2 for S in cuts])
    res = linprog(c, A_eq=_incidence(N, u, v), b_eq=np.ones(N), bounds=(0, 1),
                  method="highs-ds", **kw)
    return res


def _reduced_costs(N, u, v, c, y, cuts, z) -> np.ndarray:
    rc = c - y[u] - y[v]
    for S, zs in zip(cuts, z):
        if zs != 0.0:
            inside = np.zeros(N, dtype=bool)
            inside[S] = True
            rc -= zs * (inside[u] & inside[v])
    return rc


def _solve_milp(N, u, v, c, cuts):
    cons = [LinearConstraint(_incidence(N, u, v), 1, 1)]
    if cuts:
        cons.append(LinearConstraint(_cut_rows(cuts, N, u, v), -np.inf,
                                     np.array([(S.size - 1) / 2 for S in cuts])))
    res = milp(c, constraints=cons, integrality=np.ones(u.size), bounds=Bounds(0, 1),
               options={"mip_rel_gap": 0.0})
    if res.status != 0:
        raise MatchingError(f"mixed-integer fallback failed: {res.message}")
    return res.x


def solve_perfect_matching(dist, n_phantoms: int = 0) -> PerfectMatching:
    """Exact minimum-weight perfect matching on a complete graph.

    Parameters
    ----------
    dist : (n, n) array_like or DistanceMatrix
        Symmetric costs between real nodes. Entries at or above ``FORBIDDEN``
        (and non-finite entries) are treated as missing edges.
    n_phantoms : int
        Extra nodes joined to every real node at zero cost and never to each
        other. A real node matched to a phantom is discarded.

    Returns
    -------
    PerfectMatching
    """
    C = dist.entries if isinstance(dist, DistanceMatrix) else np.asarray(dist, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("distance matrix must be square")
    n = C.shape[0]
    if n_phantoms < 0:
        raise ValueError("n_phantoms must be non-negative")
    N = n + n_phantoms
    if N % 2:
        raise MatchingError(
            f"{n} real node(s) + {n_phantoms} phantom(s) is odd; add or remove one phantom"
        )
    if n_phantoms > n:
        raise MatchingError("more phantoms than real nodes: phantoms cannot be matched")
    if N == 0:
        return PerfectMatching([], [], 0.0)
    sym = np.minimum(C, C.T)
    u, v, c = _edge_index(n, n_phantoms, sym)

    active = _initial_edges(N, n, u, v, c)
    cuts: list[np.ndarray] = []
    used_milp = False
    x_full = None
    rounds = 0
    for rounds in range(1, _MAX_ROUNDS + 1):
        idx = np.flatnonzero(active)
        res = _solve_lp(N, u[idx], v[idx], c[idx], cuts)
        if res.status != 0:
            if not active.all():
                active[:] = True
                continue
            raise MatchingError(f"no perfect matching exists: {res.message}")
        y = res.eqlin.marginals
        z = res.ineqlin.marginals if cuts else np.zeros(0)
        if not active.all():
            rc = _reduced_costs(N, u, v, c, y, cuts, z)
            entering = np.flatnonzero(~active & (rc < -_RC_TOL * max(1.0, np.abs(c).max())))
            if entering.size:
                # add the most violated columns first
                take = entering[np.argsort(rc[entering])[: max(N, 50)]]
                active[take] = True
                continue
        x = np.zeros(u.size)
        x[idx] = res.x
        new_cuts = _odd_components(N, u, v, x)
        if not new_cuts:
            # fractional without a violated odd set falls through to the MILP
            if np.all((x < _INT_TOL) | (x > 1 - _INT_TOL)):
                x_full = x
            break
        cuts.extend(new_cuts)
    if x_full is None:
        log.info("perfect matching: LP did not close after %d rounds, using MILP", rounds)
        x_full = _solve_milp(N, u, v, c, cuts)
        used_milp = True

    chosen = np.flatnonzero(x_full > 0.5)
    mate = -np.ones(N, dtype=np.int64)
    for e in chosen.tolist():
        a, b = int(u[e]), int(v[e])
        if mate[a] != -1 or mate[b] != -1:
            raise MatchingError("solver returned an invalid matching")
        mate[a], mate[b] = b, a
    if np.any(mate < 0):
        raise MatchingError("solver returned an imperfect matching")
    pairs = sorted((i, int(mate[i])) for i in range(n) if i < mate[i] < n)
    discarded = sorted(i for i in range(n) if mate[i] >= n)
    total = float(sum(C[i, j] for i, j in pairs))
    return PerfectMatching(pairs=pairs, discarded=discarded, total=total,
                           lp_rounds=rounds, n_cuts=len(cuts), used_milp=used_milp)


# --------------------------------------------------------------------------
# Pairs of pairs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadMatch:
    """Two cluster pairs matched together; ``bec`` has the larger PfPR decline."""

    quad_id: int
    bec: ClusterPair
    sec: ClusterPair
    distance: float

    def __post_init__(self):
        if self.bec.pair_id == self.sec.pair_id:
            raise ValueError("a pair cannot be matched with itself")
        if self.bec.z_diff > self.sec.z_diff:
            raise ValueError(f"quad {self.quad_id}: BEC must have the smaller z_diff")

    @property
    def members(self) -> tuple[ClusterPair, ClusterPair]:
        return (self.bec, self.sec)


def label_quad(quad_id: int, a: ClusterPair, b: ClusterPair, distance: float) -> QuadMatch:
    """Order two matched pairs into (BEC, SEC); ties go to the lower pair_id as BEC."""
    if (a.z_diff, a.pair_id) <= (b.z_diff, b.pair_id):
        return QuadMatch(quad_id, a, b, distance)
    return QuadMatch(quad_id, b, a, distance)


@dataclass
class Stage2Audit:
    n_input: int
    n_phantoms: int
    n_quads: int = 0
    discarded: list[str] = field(default_factory=list)
    total_distance: float = 0.0
    n_penalized_edges: int = 0
    per_country: bool = False

    @property
    def retention_rate(self) -> float:
        return 2 * self.n_quads / self.n_input if self.n_input else 0.0

    def to_dict(self) -> dict:
        return {
            "n_input": self.n_input,
            "n_phantoms": self.n_phantoms,
            "n_quads": self.n_quads,
            "n_discarded": len(self.discarded),
            "discarded": list(self.discarded),
            "retention_rate": self.retention_rate,
            "total_distance": self.total_distance,
            "n_penalized_edges": self.n_penalized_edges,
            "per_country": self.per_country,
        }


def _match_group(pairs, rho_prime, xi, n_phantoms):
    dist = stage2_distance_matrix(pairs, rho_prime=rho_prime, xi=xi)
    if n_phantoms is None:
        n_phantoms = len(pairs) % 2
    sol = solve_perfect_matching(dist, n_phantoms=n_phantoms)
    penalized = sum(bool(dist.penalty_mask[i, j]) for i, j in sol.pairs)
    return dist, sol, n_phantoms, penalized


def run_stage2(
    pairs: Sequence[ClusterPair],
    rho_prime: float = 1000.0,
    xi: float = 0.05,
    n_phantoms: int | None = None,
    per_country: bool = False,
) -> tuple[list[QuadMatch], Stage2Audit]:
    """Optimal non-bipartite matching of cluster pairs into pairs of pairs.

    Parameters
    ----------
    pairs : sequence of ClusterPair
    rho_prime, xi : float
        Exposure-proximity penalty and its threshold.
    n_phantoms : int, optional
        Zero-cost sink nodes; defaults to the fewest that make the node count
        even (0 or 1). With ``per_country`` the default applies per country.
    per_country : bool
        Match within each country separately instead of pooling.
    """
    if len(pairs) < 2:
        raise ValueError("stage-two matching needs at least 2 cluster pairs")
    if per_country:
        groups: dict[str, list[ClusterPair]] = defaultdict(list)
        for p in pairs:
            groups[p.country].append(p)
        batches = [groups[k] for k in sorted(groups)]
    else:
        batches = [list(pairs)]

    audit = Stage2Audit(n_input=len(pairs), n_phantoms=0, per_country=per_country)
    quads: list[QuadMatch] = []
    for batch in batches:
        if len(batch) < 2:
            audit.discarded.extend(p.pair_id for p in batch)
            continue
        dist, sol, used, penalized = _match_group(batch, rho_prime, xi, n_phantoms)
        audit.n_phantoms += used
        audit.n_penalized_edges += penalized
        audit.total_distance += sol.total
        audit.discarded.extend(batch[i].pair_id for i in sol.discarded)
        for i, j in sol.pairs:
            quads.append(label_quad(len(quads) + 1, batch[i], batch[j], float(dist.entries[i, j])))
    audit.n_quads = len(quads)
    return quads, audit


# --------------------------------------------------------------------------
# Balance
# --------------------------------------------------------------------------

BALANCE_THRESHOLD = 0.1


@dataclass(frozen=True)
class BalanceRow:
    name: str
    mean_bec: float
    mean_sec: float
    std_diff: float
    sd_pre: float
    degenerate: bool = False

    @property
    def imbalanced(self) -> bool:
        return self.degenerate or abs(self.std_diff) >= BALANCE_THRESHOLD


@dataclass(frozen=True)
class BalanceTable:
    exposure: BalanceRow
    covariates: list[BalanceRow]
    n_quads: int

    @property
    def max_abs_std_diff(self) -> float:
        return max(abs(r.std_diff) for r in self.covariates if not r.degenerate)

    @property
    def flagged(self) -> list[str]:
        return [r.name for r in self.covariates if r.imbalanced]

    @property
    def rows(self) -> list[BalanceRow]:
        return [self.exposure, *self.covariates]


def balance_columns() -> list[str]:
    """Names of the 24 covariate columns in 24-vector order."""
    return [f"{c}_{epoch}" for epoch in ("early", "late") for c in COVARIATES]


def balance_labels() -> list[str]:
    return [f"{COVARIATE_LABELS[c]} ({epoch})" for epoch in ("early", "late") for c in COVARIATES]


def _row(name, bec_vals, sec_vals, pre_vals) -> BalanceRow:
    mb = float(np.mean(bec_vals))
    ms = float(np.mean(sec_vals))
    sd = float(np.std(pre_vals, ddof=1)) if len(pre_vals) > 1 else 0.0
    if sd > 0.0:
        return BalanceRow(name, mb, ms, (ms - mb) / sd, sd)
    if ms == mb:
        return BalanceRow(name, mb, ms, 0.0, sd)
    return BalanceRow(name, mb, ms, float("nan"), sd, degenerate=True)


def balance_table(quads: Sequence[QuadMatch], pre_match_pairs: Sequence[ClusterPair]) -> BalanceTable:
    """Standardized BEC/SEC differences for the exposure change and 24 covariates.

    ``std_diff = (mean_SEC - mean_BEC) / SD_pre`` where ``SD_pre`` is the
    standard deviation of the column over all cluster pairs before stage two.
    """
    if not quads:
        raise ValueError("balance table needs at least one quad")
    bec = pair_covariate_matrix([q.bec for q in quads])
    sec = pair_covariate_matrix([q.sec for q in quads])
    pre = pair_covariate_matrix(pre_match_pairs)
    rows = [_row(name, bec[:, k], sec[:, k], pre[:, k]) for k, name in enumerate(balance_columns())]
    exposure = _row("z_diff", [q.bec.z_diff for q in quads], [q.sec.z_diff for q in quads],
                    [p.z_diff for p in pre_match_pairs])
    return BalanceTable(exposure=exposure, covariates=rows, n_quads=len(quads))


def prematch_balance(pairs: Sequence[ClusterPair]) -> BalanceTable:
    """Balance of the unmatched pairs, split at the median exposure change.

    The half with the more negative ``z_diff`` plays the BEC role. This is the
    reference that the post-matching table is compared against.
    """
    if len(pairs) < 2:
        raise ValueError("need at least 2 pairs")
    order = sorted(pairs, key=lambda p: (p.z_diff, p.pair_id))
    half = len(order) // 2
    bec_pairs, sec_pairs = order[:half], order[len(order) - half:]
    bec = pair_covariate_matrix(bec_pairs)
    sec = pair_covariate_matrix(sec_pairs)
    pre = pair_covariate_matrix(pairs)
    rows = [_row(name, bec[:, k], sec[:, k], pre[:, k]) for k, name in enumerate(balance_columns())]
    exposure = _row("z_diff", [p.z_diff for p in bec_pairs], [p.z_diff for p in sec_pairs],
                    [p.z_diff for p in pairs])
    return BalanceTable(exposure=exposure, covariates=rows, n_quads=half)
