import json

import pytest

from evognas.cli import main
from evognas.config import load_config
from evognas.errors import ConfigError

SMALL_CONFIG = """
seed = 11

[dataset]
kind = "sbm"
[dataset.sbm]
blocks = [12, 12, 12]
p_in = 0.35
p_out = 0.02
features = 6
noise = 0.4
seed = 3

[evolution]
population_size = 6
generations = 2

[tuning]
interval = 2
trials = 3
startup = 3

[training]
max_epochs = 50
patience = 10
"""


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text(SMALL_CONFIG)
    return path


def test_empty_config_reproduces_reference_defaults(tmp_path):
    path = tmp_path / "empty.toml"
    path.write_text("")
    cfg = load_config(path)
    assert cfg.population_size == 20
    assert cfg.generations == 20
    assert cfg.tuning_interval == 5
    assert cfg.genome_bounds == (3, 15)
    assert cfg.smoothing == 0.5
    assert cfg.max_epochs == 300
    assert cfg.split_ratios == (0.6, 0.2, 0.2)
    by_name = {d.name: d for d in cfg.space.dimensions}
    assert by_name["hidden_dim"].high == 256
    assert by_name["learning_rate"].low == 1e-4


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[evolution]\npopulation_sise = 10\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_invalid_interval_combination(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[evolution]\ngenerations = 7\n[tuning]\ninterval = 5\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_gen_sbm_then_eval_round_trip(tmp_path, capsys):
    data_dir = tmp_path / "data"
    rc = main([
        "gen-sbm", "--out", str(data_dir), "--blocks", "10,10",
        "--p-in", "0.4", "--p-out", "0.02", "--features", "4",
        "--noise", "0.2", "--seed", "5",
    ])
    assert rc == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n_nodes"] == 20

    cfg_path = tmp_path / "files.toml"
    cfg_path.write_text(
        f"""
[dataset]
kind = "files"
[dataset.files]
edges = {json.dumps(info["edges"])}
features = {json.dumps(info["features"])}
labels = {json.dumps(info["labels"])}

[training]
max_epochs = 40
patience = 10
"""
    )
    rc = main(["eval", "P1-T1-P1-T1", "--config", str(cfg_path)])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["genome"] == "P1-T1-P1-T1"
    assert 0.0 <= report["validation_macro_f1"] <= 1.0


def test_search_writes_outputs(tmp_path, config_file, capsys):
    out_dir = tmp_path / "run"
    rc = main(["search", "--config", str(config_file), "--out", str(out_dir)])
    assert rc == 0
    for name in ("convergence.csv", "trials.csv", "result.json", "checkpoint.json"):
        assert (out_dir / name).exists(), name
    report = json.loads((out_dir / "result.json").read_text())
    assert report["generations_completed"] == 2
    printed = json.loads(capsys.readouterr().out)
    assert printed["best_genome"] == report["best_genome"]


def test_search_ablation_flags(tmp_path, config_file, capsys):
    out_dir = tmp_path / "ablate"
    rc = main([
        "search", "--config", str(config_file), "--out", str(out_dir),
        "--no-bgtm", "--no-adaptive", "--restricted-space",
    ])
    assert rc == 0
    report = json.loads((out_dir / "result.json").read_text())
    assert report["ablation"]["tuning_enabled"] is False
    assert report["ablation"]["stage_policy"] == "pinned-exploitation"
    assert report["ablation"]["alphabet"] == ["P1", "T1"]
    capsys.readouterr()


def test_resume_from_checkpoint_matches_straight_run(tmp_path, config_file, capsys):
    full_dir = tmp_path / "full"
    rc = main(["search", "--config", str(config_file), "--out", str(full_dir)])
    assert rc == 0
    full = json.loads(capsys.readouterr().out)

    part_dir = tmp_path / "part"
    rc = main([
        "search", "--config", str(config_file), "--out", str(part_dir),
        "--checkpoint-every", "1",
    ])
    assert rc == 0
    capsys.readouterr()
    rc = main([
        "resume", "--checkpoint", str(part_dir / "checkpoint.json"),
        "--config", str(config_file), "--out", str(part_dir),
    ])
    assert rc == 0
    resumed = json.loads(capsys.readouterr().out)
    assert resumed["best_genome"] == full["best_genome"]
    assert resumed["validation_fitness"] == full["validation_fitness"]


def test_exit_code_2_on_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[evolution]\npopulation_size = 7\n")
    rc = main(["search", "--config", str(bad)])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_exit_code_3_on_missing_dataset_file(tmp_path, capsys):
    cfg = tmp_path / "files.toml"
    cfg.write_text(
        """
[dataset]
kind = "files"
[dataset.files]
edges = "/nonexistent/edges.txt"
features = "/nonexistent/features.csv"
labels = "/nonexistent/labels.csv"
"""
    )
    rc = main(["eval", "P1-T1", "--config", str(cfg)])
    assert rc == 3
    assert "ingestion error" in capsys.readouterr().err


def test_exit_code_4_on_budget_exhaustion(tmp_path, config_file, capsys):
    rc = main(["search", "--config", str(config_file), "--budget", "7"])
    assert rc == 4
    printed = json.loads(capsys.readouterr().out)
    assert printed["budget_exhausted"] is True


def test_eval_rejects_malformed_genome(config_file, capsys):
    rc = main(["eval", "P9-XX", "--config", str(config_file)])
    assert rc == 2
    capsys.readouterr()


def test_baseline_cli_runs(config_file, capsys):
    rc = main(["baseline", "--config", str(config_file), "--budget", "3"])
    assert rc == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["evaluations"] == 3
