import json
import subprocess
import sys

import pytest

from quadmatch.cli import ConfigError, PipelineConfig, main

SMALL = {
    "seed": 42,
    "synth": {"n_countries": 3, "clusters_per_country_early": 20, "clusters_per_country_late": 20,
              "individuals_per_cluster": 10},
    "imputation": {"m_imputations": 3, "iterations_per_chain": 200},
}


def write_config(tmp_path, name="cfg.json", **extra):
    cfg = {**SMALL, "outdir": str(tmp_path / "out"), **extra}
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def manifest(outdir):
    return json.loads((outdir / "manifest.json").read_text())


@pytest.fixture(scope="module")
def first_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = write_config(tmp)
    assert main(["pipeline", "--config", str(cfg)]) == 0
    return tmp


def test_pipeline_writes_all_artifacts(first_run):
    files = manifest(first_run / "out")["files"]
    for name in ("synth/individuals.csv", "stage1/pairs.csv", "stage2/quads.csv", "stage2/balance.csv",
                 "impute/posterior_summary.csv", "impute/imputation_001.csv", "analyze/pooled_table.csv",
                 "analyze/pooled.json", "sensitivity/robustness_values.csv"):
        assert name in files
    assert not (first_run / "out" / ".partial").exists()


def test_same_seed_same_manifest(first_run, tmp_path):
    assert main(["pipeline", "--config", str(write_config(tmp_path))]) == 0
    assert manifest(tmp_path / "out")["files"] == manifest(first_run / "out")["files"]


def test_seed_override_changes_outputs(first_run, tmp_path):
    assert main(["pipeline", "--config", str(write_config(tmp_path)), "--seed", "43"]) == 0
    a, b = manifest(tmp_path / "out"), manifest(first_run / "out")
    assert a["config"]["seed"] == 43
    assert a["files"]["synth/individuals.csv"] != b["files"]["synth/individuals.csv"]


def test_single_stage_rerun_is_reproducible(first_run):
    before = manifest(first_run / "out")["files"]
    cfg = first_run / "cfg.json"
    for stage in ("stage2", "impute", "analyze"):
        assert main([stage, "--config", str(cfg)]) == 0
    assert manifest(first_run / "out")["files"] == before


def test_negative_xi_exits_2(tmp_path, capsys):
    assert main(["pipeline", "--config", str(write_config(tmp_path, xi=-0.1))]) == 2
    err = capsys.readouterr().err
    assert "[config]" in err and "xi" in err
    assert not (tmp_path / "out").exists()


def test_unknown_key_and_bad_json(tmp_path):
    assert main(["pipeline", "--config", str(write_config(tmp_path, colour="red"))]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["stage1", "--config", str(bad)]) == 2


def test_failed_stage_leaves_partial_marker(tmp_path, capsys):
    cfg = write_config(tmp_path)
    # stage2 before stage1 has no pairs to read
    assert main(["stage2", "--config", str(cfg)]) == 1
    assert "[stage2] error" in capsys.readouterr().err
    marker = tmp_path / "out" / ".partial"
    assert marker.read_text().startswith("stage2:")
    assert main(["synth", "--config", str(cfg)]) == 0
    assert not marker.exists()


def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig()
    with pytest.raises(ConfigError):
        PipelineConfig(synth={}, rho_prime=0)
    with pytest.raises(ConfigError):
        PipelineConfig(individuals="a.csv", clusters="a.csv")
    with pytest.raises(ConfigError):
        PipelineConfig(synth={"n_countries": 0})
    with pytest.raises(ConfigError):
        PipelineConfig(synth={}, benchmarks=("shoe_size",))
    cfg = PipelineConfig(synth={}, seed=5)
    assert cfg.stage_seed("impute") != cfg.stage_seed("synth")
    assert cfg.stage_seed("impute") == PipelineConfig(synth={}, seed=5).stage_seed("impute")


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "quadmatch", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "quadmatch" in res.stdout
