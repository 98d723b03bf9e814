"""Pair each early-survey cluster with a nearby late-survey cluster.

A small synthetic survey is generated, individual records are averaged to
cluster level, and within each country the early and late clusters are
matched on rank-based Mahalanobis distance of their coordinates. Pairs more
than 100 km apart or malaria-free in both epochs are dropped.

Run: python3 demos/01_geographic_pairing.py
"""

from quadmatch.bipartite import run_stage1, stage1_diagnostics
from quadmatch.geo import GeoPoint, spherical_distance_km
from quadmatch.ingest import aggregate_clusters, fill_missing_covariates
from quadmatch.synthetic import SyntheticConfig, generate_synthetic

# great-circle distance from the equator to the pole
print(f"equator to pole: {spherical_distance_km(GeoPoint(0, 0), GeoPoint(0, 90)):.3f} km")

data = generate_synthetic(SyntheticConfig(n_countries=5, seed=1))
clusters = aggregate_clusters(fill_missing_covariates(data.individuals), data.clusters)
pairs, audit = run_stage1(clusters)

total = audit.to_dict()["total"]
print(f"{len(clusters)} clusters -> {total['n_matched']} matched pairs, "
      f"{total['distance_dropped']} too far, {total['zero_pfpr_dropped']} malaria-free, "
      f"{total['n_retained']} retained")

diag = stage1_diagnostics(pairs)
print(f"mean pair distance {diag.mean_distance_km:.2f} km, "
      f"longitude correlation {diag.corr_longitude:.4f}, latitude correlation {diag.corr_latitude:.4f}")
print(f"mean PfPR early {diag.early_mean_pfpr:.3f} -> late {diag.late_mean_pfpr:.3f}")

for p in pairs[:5]:
    print(f"  {p.pair_id}: {p.early.cluster_id} + {p.late.cluster_id}, "
          f"{p.distance_km:5.1f} km, PfPR change {p.z_diff:+.3f}")
