"""Command-line front end.

Every subcommand reads one JSON config (``--config``), optionally overrides
its master seed (``--seed``), runs one stage (or all of them for
``pipeline``) and writes its artifacts plus ``manifest.json`` into the
configured output directory. Stages read their inputs from the artifacts
written by the stage before, so a single stage can be re-run from cache.

Exit status is 0 on success, 2 for an invalid config and 1 when a stage
fails; failures leave a ``.partial`` marker naming the stage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .analyze import dose_effect, fit_working_model, format_pooled_table, pool_table, rubin_pool, write_pooled_table
from .bipartite import make_pair, run_stage1, stage1_diagnostics
from .impute import (
    ImputationModelSpec,
    diagnostics_gate,
    draw_imputations,
    fit_imputation_model,
    read_imputed_csv,
)
from .ingest import (
    COVARIATES,
    aggregate_clusters,
    fill_missing_covariates,
    filter_records,
    load_clusters,
    load_individuals,
    read_cluster_table,
    write_cluster_table,
    write_csv,
)
from .nonbipartite import QuadMatch, balance_labels, balance_table, run_stage2
from .pipeline import quad_records
from .sensitivity import run_sensitivity
from .synthetic import SyntheticConfig, generate_synthetic

log = logging.getLogger("quadmatch")

STAGES = ("synth", "stage1", "stage2", "impute", "analyze", "sensitivity")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs; unknown JSON keys are rejected."""

    outdir: str = "out"
    individuals: str | None = None
    clusters: str | None = None
    individuals_schema: dict | None = None
    clusters_schema: dict | None = None
    synth: dict | None = None
    seed: int = 0
    # stage one
    caliper_multiplier: float = 0.2
    rho: float = 1000.0
    max_km: float = 100.0
    # stage two
    rho_prime: float = 1000.0
    xi: float = 0.05
    n_phantoms: int | None = None
    per_country: bool = False
    # imputation
    imputation: dict = field(default_factory=dict)
    # analysis and sensitivity
    dose_reductions: tuple[float, ...] = (0.635,)
    benchmarks: tuple[str, ...] = ("mother_education", "child_sex", "marital_status")
    sensitivity_df: float | None = None
    alpha: float = 0.05

    def __post_init__(self):
        if self.caliper_multiplier <= 0:
            raise ConfigError("caliper_multiplier must be positive")
        if self.rho < 0:
            raise ConfigError("rho must be non-negative")
        if self.max_km <= 0:
            raise ConfigError("max_km must be positive")
        if self.rho_prime <= 0:
            raise ConfigError("rho_prime must be positive")
        if self.xi < 0:
            raise ConfigError("xi must be non-negative")
        if self.n_phantoms is not None and self.n_phantoms < 0:
            raise ConfigError("n_phantoms must be non-negative")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.sensitivity_df is not None and self.sensitivity_df < 2:
            raise ConfigError("sensitivity_df must be at least 2")
        for name in self.benchmarks:
            if name not in COVARIATES:
                raise ConfigError(f"unknown benchmark covariate '{name}'")
        if self.synth is None and (self.individuals is None or self.clusters is None):
            raise ConfigError("give either a 'synth' block or both 'individuals' and 'clusters' paths")
        paths = [p for p in (self.individuals, self.clusters) if p is not None]
        if len({str(Path(p).resolve()) for p in paths}) != len(paths):
            raise ConfigError("input paths must be distinct")
        if any(Path(p).resolve() == Path(self.outdir).resolve() for p in paths):
            raise ConfigError("outdir must differ from the input paths")
        try:
            self.synthetic_config()
            self.imputation_spec()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        d = dict(d)
        for key in ("dose_reductions", "benchmarks"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def stage_seed(self, stage: str) -> int:
        """Independent seed for one stage, derived from the master seed."""
        ss = np.random.SeedSequence([self.seed, zlib.crc32(stage.encode())])
        return int(ss.generate_state(1)[0])

    def synthetic_config(self) -> SyntheticConfig | None:
        if self.synth is None:
            return None
        return SyntheticConfig(**{**self.synth, "seed": self.stage_seed("synth")})

    def imputation_spec(self) -> ImputationModelSpec:
        d = dict(self.imputation)
        if "predictors" in d:
            d["predictors"] = tuple(d["predictors"])
        return ImputationModelSpec(**{**d, "seed": self.stage_seed("impute")})

    @property
    def out(self) -> Path:
        return Path(self.outdir)

    @property
    def individuals_path(self) -> Path:
        return Path(self.individuals) if self.individuals else self.out / "synth" / "individuals.csv"

    @property
    def clusters_path(self) -> Path:
        return Path(self.clusters) if self.clusters else self.out / "synth" / "clusters.csv"


# --------------------------------------------------------------------------
# Artifacts
# --------------------------------------------------------------------------

def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg: PipelineConfig) -> Path:
    """List every artifact under the output directory with its SHA-256."""
    out = cfg.out
    files = sorted(
        p for p in out.rglob("*")
        if p.is_file() and p.name not in ("manifest.json", ".partial")
    )
    manifest = {
        "version": __version__,
        "config": asdict(cfg),
        "files": {p.relative_to(out).as_posix(): sha256_file(p) for p in files},
    }
    return _write_json(out / "manifest.json", manifest)


def _load_inputs(cfg: PipelineConfig):
    ind = load_individuals(cfg.individuals_path, cfg.individuals_schema)
    met = load_clusters(cfg.clusters_path, cfg.clusters_schema)
    return ind, met


def _read_pairs(cfg: PipelineConfig):
    clusters = {c.cluster_id: c for c in read_cluster_table(cfg.out / "stage1" / "cluster_table.csv")}
    pairs = []
    import csv
    with open(cfg.out / "stage1" / "pairs.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            pairs.append(make_pair(row["pair_id"], clusters[row["early_id"]], clusters[row["late_id"]]))
    return pairs


def _read_quads(cfg: PipelineConfig) -> list[QuadMatch]:
    import csv
    pairs = {p.pair_id: p for p in _read_pairs(cfg)}
    quads = []
    with open(cfg.out / "stage2" / "quads.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            quads.append(QuadMatch(int(row["quad_id"]), pairs[row["bec_pair"]],
                                   pairs[row["sec_pair"]], float(row["distance"])))
    return quads


def _read_imputations(cfg: PipelineConfig):
    files = sorted((cfg.out / "impute").glob("imputation_*.csv"))
    if not files:
        raise FileNotFoundError(f"no imputed datasets under {cfg.out / 'impute'}")
    return [read_imputed_csv(p) for p in files]


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------

def stage_synth(cfg: PipelineConfig) -> None:
    scfg = cfg.synthetic_config()
    if scfg is None:
        raise ValueError("config has no 'synth' block")
    generate_synthetic(scfg).write(cfg.out / "synth")


def stage_stage1(cfg: PipelineConfig) -> None:
    ind, met = _load_inputs(cfg)
    clusters = aggregate_clusters(fill_missing_covariates(ind.records), met.records)
    pairs, audit = run_stage1(clusters, max_km=cfg.max_km,
                              caliper_multiplier=cfg.caliper_multiplier, rho=cfg.rho)
    d = cfg.out / "stage1"
    write_cluster_table(d / "cluster_table.csv", clusters)
    write_csv(d / "pairs.csv",
              ["pair_id", "early_id", "late_id", "distance_km", "elevation_diff_m", "z_diff"],
              ((p.pair_id, p.early.cluster_id, p.late.cluster_id, p.distance_km,
                p.elevation_diff_m, p.z_diff) for p in pairs))
    report = {"audit": audit.to_dict(),
              "ingest": {"individual_rows": ind.n_rows, "cluster_rows": met.n_rows,
                         "missing_birthweight_rate": ind.missing_birthweight_rate}}
    if len(pairs) >= 2:
        report["diagnostics"] = stage1_diagnostics(pairs).to_dict()
    _write_json(d / "stage1_report.json", report)


def stage_stage2(cfg: PipelineConfig) -> None:
    pairs = _read_pairs(cfg)
    quads, audit = run_stage2(pairs, rho_prime=cfg.rho_prime, xi=cfg.xi,
                              n_phantoms=cfg.n_phantoms, per_country=cfg.per_country)
    d = cfg.out / "stage2"
    write_csv(d / "quads.csv", ["quad_id", "bec_pair", "sec_pair", "distance"],
              ((q.quad_id, q.bec.pair_id, q.sec.pair_id, q.distance) for q in quads))
    bal = balance_table(quads, pairs)
    labels = ["Change in exposure (PfPR late - early)", *balance_labels()]
    write_csv(d / "balance.csv", ["column", "label", "mean_bec", "mean_sec", "std_diff", "flagged"],
              ((r.name, lab, r.mean_bec, r.mean_sec, r.std_diff, int(r.imbalanced))
               for r, lab in zip(bal.rows, labels)))
    _write_json(d / "stage2_report.json", {
        "audit": audit.to_dict(),
        "max_abs_std_diff": bal.max_abs_std_diff,
        "flagged": bal.flagged,
        "exposure_std_diff": bal.exposure.std_diff,
    })


def stage_impute(cfg: PipelineConfig) -> None:
    ind, _ = _load_inputs(cfg)
    quads = _read_quads(cfg)
    kept, faudit = filter_records(quad_records(fill_missing_covariates(ind.records), quads))
    spec = cfg.imputation_spec()
    posterior = fit_imputation_model(kept, spec)
    d = cfg.out / "impute"
    posterior.write_summary(d / "posterior_summary.csv")
    gate = diagnostics_gate(posterior.diagnostics)
    if not gate.passed:
        log.warning("[impute] MCMC diagnostics below target: %s", "; ".join(gate.offenders))
    _write_json(d / "impute_report.json", {
        "filter": faudit.to_dict(),
        "n_observed": posterior.n_obs,
        "diagnostics": posterior.diagnostics.as_dict(),
        "gate_passed": gate.passed,
        "gate_offenders": gate.offenders,
    })
    for ds in draw_imputations(kept, posterior):
        ds.write_csv(d / f"imputation_{ds.imputation_index:03d}.csv")


def _fits(cfg: PipelineConfig):
    quads = _read_quads(cfg)
    return [fit_working_model(quads, ds) for ds in _read_imputations(cfg)]


def stage_analyze(cfg: PipelineConfig) -> None:
    fits = _fits(cfg)
    table = pool_table(fits)
    pooled = rubin_pool(fits)
    d = cfg.out / "analyze"
    write_pooled_table(d / "pooled_table.csv", table)
    (d / "pooled_table.txt").write_text(format_pooled_table(table) + "\n")
    doses = [asdict(dose_effect(pooled, r)) for r in cfg.dose_reductions]
    _write_json(d / "pooled.json", {"exposure": asdict(pooled), "dose_effects": doses,
                                    "n_quads": fits[0].n_quads, "residual_df": fits[0].residual_df})


def stage_sensitivity(cfg: PipelineConfig) -> None:
    fits = _fits(cfg)
    report = run_sensitivity(fits, cfg.benchmarks, df=cfg.sensitivity_df, alpha=cfg.alpha)
    d = cfg.out / "sensitivity"
    d.mkdir(parents=True, exist_ok=True)
    report.write_csv(d / "robustness_values.csv")
    _write_json(d / "sensitivity.json", {
        "average": asdict(report.average),
        "benchmarks": report.benchmarks,
        "robust_to_benchmarks": report.robust_to_benchmarks,
        "alpha": report.alpha,
    })


STAGE_FUNCS = {
    "synth": stage_synth,
    "stage1": stage_stage1,
    "stage2": stage_stage2,
    "impute": stage_impute,
    "analyze": stage_analyze,
    "sensitivity": stage_sensitivity,
}


def run_stages(cfg: PipelineConfig, stages) -> Path:
    """Run stages in order, then write the manifest. Raises StageError on failure."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    marker = cfg.out / ".partial"
    if marker.exists():
        marker.unlink()
    for stage in stages:
        log.info("[%s] running", stage)
        try:
            STAGE_FUNCS[stage](cfg)
        except Exception as exc:
            marker.write_text(f"{stage}: {type(exc).__name__}: {exc}\n")
            raise StageError(stage, exc) from exc
    return write_manifest(cfg)


def run_pipeline(cfg: PipelineConfig) -> Path:
    """All stages; ``synth`` runs only when the config asks for synthetic data."""
    stages = [s for s in STAGES if s != "synth" or cfg.synth is not None]
    return run_stages(cfg, stages)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadmatch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "pipeline"):
        p = sub.add_parser(name, help="run all stages" if name == "pipeline" else f"run the {name} stage")
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--outdir", help="override the output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="quadmatch: %(message)s", stream=sys.stderr)
    try:
        cfg = PipelineConfig.from_json(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.outdir is not None:
            overrides["outdir"] = args.outdir
        if overrides:
            cfg = PipelineConfig.from_dict({**asdict(cfg), **overrides})
    except ConfigError as exc:
        print(f"quadmatch: [config] error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "pipeline":
            manifest = run_pipeline(cfg)
        else:
            manifest = run_stages(cfg, [args.command])
    except StageError as exc:
        print(f"quadmatch: [{exc.stage}] error: {type(exc.cause).__name__}: {exc.cause}", file=sys.stderr)
        return 1
    print(manifest)
    return 0
