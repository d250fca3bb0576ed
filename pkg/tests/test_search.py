import json

import pytest

from evognas.config import SbmSpec, SearchConfig, config_hash
from evognas.engine import evaluate_fitness
from evognas.errors import CheckpointError, ConfigError
from evognas.evolution import StageParams, StageSchedule
from evognas.genome import parse
from evognas.search import (
    SearchDriver,
    derive_eval_seed,
    run_random_baseline,
    run_search,
    write_outputs,
)
from evognas.tuning import HyperparamConfig


def tiny_config(**over):
    base = dict(
        dataset=SbmSpec(blocks=(12, 12, 12), p_in=0.35, p_out=0.02,
                        features=6, noise=0.4, seed=3),
        population_size=6,
        generations=4,
        tuning_interval=2,
        tuning_trials=3,
        tuning_startup=3,
        max_epochs=60,
        patience=12,
        seed=11,
    )
    base.update(over)
    return SearchConfig(**base)


@pytest.fixture(scope="module")
def tiny_result():
    return run_search(tiny_config())


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        tiny_config(population_size=5).validate()  # odd
    with pytest.raises(ConfigError):
        tiny_config(generations=5).validate()  # not a multiple of interval
    with pytest.raises(ConfigError):
        tiny_config(genome_bounds=(0, 4)).validate()
    with pytest.raises(ConfigError):
        tiny_config(smoothing=1.0).validate()
    with pytest.raises(ConfigError):
        SearchDriver(tiny_config(evaluation_budget=3))  # below population size


def test_search_runs_and_reports(tiny_result):
    res = tiny_result
    assert res.generations_completed == 4
    assert 0.0 <= res.validation_fitness <= 1.0
    assert 0.0 <= res.test_macro_f1 <= 1.0
    assert not res.budget_exhausted
    assert len(res.generation_log) == 5  # generations 0..4


def test_evaluation_accounting_rows_sum_to_total(tiny_result):
    assert sum(r.evaluations for r in tiny_result.generation_log) == (
        tiny_result.evaluations
    )


def test_tuning_invocations_at_exact_generations(tiny_result):
    # interval 2, 4 generations -> tuned at 0 (bootstrap), 2, and 4
    generations = sorted({row["generation"] for row in tiny_result.trial_log})
    assert generations == [0, 2, 4]


def test_reported_fitness_is_recomputable(tiny_result):
    cfg = tiny_config()
    from evognas.config import build_dataset

    ds = build_dataset(cfg)
    hp = HyperparamConfig.from_point(tiny_result.best_hyperparams)
    seed = derive_eval_seed(cfg.seed, tiny_result.best_genome, hp.key())
    again = evaluate_fitness(
        parse(tiny_result.best_genome), hp, ds, seed,
        max_epochs=cfg.max_epochs, patience=cfg.patience,
    )
    assert again.macro_f1 == tiny_result.validation_fitness


def test_same_seed_runs_identical(tiny_result):
    res2 = run_search(tiny_config())
    assert res2.summary() == tiny_result.summary()


def test_delta_trace_satisfies_recurrence(tiny_result):
    lam = tiny_config().smoothing
    rows = tiny_result.generation_log
    assert rows[0].delta_fitness == 0.0
    for prev, row in zip(rows, rows[1:]):
        expected = lam * row.mean_fitness + (1 - lam) * prev.delta_fitness
        assert row.delta_fitness == pytest.approx(expected, abs=1e-12)
        assert row.stage == (
            "exploration" if row.delta_fitness <= 0.5 else "exploitation"
        )


def test_monotone_elite_under_cached_fitness(tiny_result):
    best = [r.best_fitness for r in tiny_result.generation_log]
    assert all(b >= a for a, b in zip(best, best[1:]))


def test_zero_generations_returns_tuned_initial_best():
    res = run_search(tiny_config(generations=0))
    assert res.generations_completed == 0
    assert len(res.generation_log) == 1
    assert sorted({r["generation"] for r in res.trial_log}) == [0]
    assert res.evaluations == 6 + 3  # initial population + one tuning pass


def test_static_operators_with_elitism_preserve_initial_best():
    schedule = StageSchedule(
        exploration=StageParams(2, 0.0, 0.0), exploitation=StageParams(2, 0.0, 0.0)
    )
    cfg = tiny_config(schedule=schedule, disable_bgtm=True)
    driver = SearchDriver(cfg)
    driver.bootstrap()
    initial_best = driver.population.genomes[driver.population.best_index]
    res = driver.run()
    assert res.best_genome == str(initial_best)


def test_checkpoint_resume_bit_identical(tmp_path):
    cfg = tiny_config()
    straight = run_search(cfg)

    driver = SearchDriver(cfg)
    driver.bootstrap()
    for _ in range(3):
        driver.step()
    ckpt = tmp_path / "ckpt.json"
    driver.save_checkpoint(ckpt)
    driver.evaluator.close()

    resumed = SearchDriver.from_checkpoint(ckpt, expected=cfg)
    result = resumed.run()
    assert result.summary() == straight.summary()


def test_checkpoint_truncated_file_refused(tmp_path):
    cfg = tiny_config()
    driver = SearchDriver(cfg)
    driver.bootstrap()
    ckpt = tmp_path / "ckpt.json"
    driver.save_checkpoint(ckpt)
    driver.evaluator.close()
    blob = ckpt.read_text()
    ckpt.write_text(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError):
        SearchDriver.from_checkpoint(ckpt)


def test_checkpoint_config_mismatch_refused(tmp_path):
    cfg = tiny_config()
    driver = SearchDriver(cfg)
    driver.bootstrap()
    ckpt = tmp_path / "ckpt.json"
    driver.save_checkpoint(ckpt)
    driver.evaluator.close()
    other = tiny_config(seed=999)
    assert config_hash(other) != config_hash(cfg)
    with pytest.raises(CheckpointError):
        SearchDriver.from_checkpoint(ckpt, expected=other)


def test_budget_exhaustion_graceful():
    cfg = tiny_config(evaluation_budget=8)
    res = run_search(cfg)
    assert res.budget_exhausted
    assert res.evaluations <= 8
    assert res.best_genome
    assert sum(r.evaluations for r in res.generation_log) == res.evaluations


def test_baseline_single_evaluation():
    cfg = tiny_config()
    res = run_random_baseline(cfg, budget=1)
    assert res.evaluations == 1
    assert len(res.generation_log) == 1
    assert 0.0 <= res.validation_fitness <= 1.0


def test_baseline_budget_equality(tiny_result):
    cfg = tiny_config()
    base = run_random_baseline(cfg, budget=tiny_result.evaluations)
    assert base.evaluations == tiny_result.evaluations


def test_baseline_running_max_over_shared_prefix():
    cfg = tiny_config()
    small = run_random_baseline(cfg, budget=5)
    large = run_random_baseline(cfg, budget=12)
    small_best = [r.best_fitness for r in small.generation_log]
    large_best = [r.best_fitness for r in large.generation_log]
    assert large_best[:5] == small_best
    assert all(b >= a for a, b in zip(large_best, large_best[1:]))


def test_ablation_disable_bgtm_pins_midpoint():
    cfg = tiny_config(disable_bgtm=True)
    res = run_search(cfg)
    assert res.trial_log == []
    assert res.best_hyperparams == cfg.space.midpoint()
    assert res.ablation["tuning_enabled"] is False
    assert res.ablation["hyperparam_policy"] == "fixed-midpoint"


def test_ablation_disable_adaptive_pins_exploitation():
    cfg = tiny_config(disable_adaptive=True)
    res = run_search(cfg)
    assert {r.stage for r in res.generation_log} == {"exploitation"}
    assert res.ablation["stage_policy"] == "pinned-exploitation"


def test_ablation_restricted_space_shrinks_alphabet():
    cfg = tiny_config(restricted_space=True)
    res = run_search(cfg)
    assert res.ablation["alphabet"] == ["P1", "T1"]
    used = set()
    for row in res.generation_log:
        used.update(row.best_genome.split("-"))
    assert used <= {"P1", "T1"}


def test_workers_do_not_change_results(tiny_result):
    res2 = run_search(tiny_config(workers=2))
    assert res2.summary() == tiny_result.summary()


def test_write_outputs_files(tmp_path, tiny_result):
    cfg = tiny_config()
    paths = write_outputs(tiny_result, tmp_path / "out", cfg.space.names)
    for p in paths.values():
        assert json.loads(json.dumps(str(p)))  # paths stringify
    report = json.loads((tmp_path / "out" / "result.json").read_text())
    assert report["best_genome"] == tiny_result.best_genome
    assert "seconds" in report
    convergence = (tmp_path / "out" / "convergence.csv").read_text().splitlines()
    assert len(convergence) == len(tiny_result.generation_log) + 1
    trials = (tmp_path / "out" / "trials.csv").read_text().splitlines()
    assert len(trials) == len(tiny_result.trial_log) + 1
