"""End-to-end architecture search: population initialization, the adaptive
generation loop with periodic hyperparameter tuning, checkpoint/resume, a
budget-matched random baseline, and result reporting.

One control thread owns the search state; fitness evaluations are pure
functions of (genome, hyperparameters, seed) and may be fanned out to a
process pool.  Fitness values are cached by genome + hyperparameter key so
survivors are never retrained; when tuning moves the incumbent
hyperparameters, stale cache entries simply stop being hit while historical
population scores are kept as recorded.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .config import SearchConfig, build_dataset, config_hash
from .engine import (
    HyperparamConfig,
    compile_plan,
    evaluate_fitness,
    score_test_set,
    train,
)
from .errors import CheckpointError, ConfigError
from .evolution import (
    EXPLOITATION,
    GenerationRecord,
    Population,
    SwitchState,
    environmental_selection,
    generate_offspring,
    stage_params,
    update_delta_fitness,
    write_generation_log,
)
from .genome import Genome, parse, random_genome, render
from .graphdata import GraphDataset
from .tuning import TrialHistory, optimize

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1

_WORKER_DATASET = None
_WORKER_LIMITS = None


def _worker_init(dataset, max_epochs, patience):
    global _WORKER_DATASET, _WORKER_LIMITS
    _WORKER_DATASET = dataset
    _WORKER_LIMITS = (max_epochs, patience)


def _worker_eval(job):
    genome_str, point, seed = job
    hp = HyperparamConfig.from_point(point)
    return evaluate_fitness(
        parse(genome_str), hp, _WORKER_DATASET, seed,
        max_epochs=_WORKER_LIMITS[0], patience=_WORKER_LIMITS[1],
    ).macro_f1


def derive_eval_seed(master_seed: int, genome_str: str, hp_key: str) -> int:
    """Stable per-evaluation seed, independent of evaluation order."""
    digest = hashlib.sha256(
        f"{master_seed}|{genome_str}|{hp_key}".encode("utf-8")
    ).digest()
    return int.from_bytes(digest[:8], "little")


class FitnessEvaluator:
    """Cached, counted, optionally parallel fitness evaluation."""

    def __init__(self, dataset: GraphDataset, cfg: SearchConfig):
        self.dataset = dataset
        self.cfg = cfg
        self.cache: dict[str, float] = {}
        self.evaluations = 0
        self._pool = None

    @property
    def remaining(self) -> float:
        if self.cfg.evaluation_budget <= 0:
            return math.inf
        return self.cfg.evaluation_budget - self.evaluations

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _key(self, genome_str: str, point: dict) -> tuple[str, str]:
        hp_key = HyperparamConfig.from_point(point).key()
        return f"{genome_str}|{hp_key}", hp_key

    def _train_missing(self, jobs: list[tuple[str, dict, int]]) -> list[float]:
        if self.cfg.workers > 1 and len(jobs) > 1:
            if self._pool is None:
                self._pool = ProcessPoolExecutor(
                    max_workers=self.cfg.workers,
                    initializer=_worker_init,
                    initargs=(self.dataset, self.cfg.max_epochs, self.cfg.patience),
                )
            return list(self._pool.map(_worker_eval, jobs))
        out = []
        for genome_str, point, seed in jobs:
            hp = HyperparamConfig.from_point(point)
            out.append(
                evaluate_fitness(
                    parse(genome_str), hp, self.dataset, seed,
                    max_epochs=self.cfg.max_epochs, patience=self.cfg.patience,
                ).macro_f1
            )
        return out

    def fitness(self, genome_str: str, point: dict) -> float:
        """Cache-or-train lookup; does not touch the evaluation counter."""
        key, hp_key = self._key(genome_str, point)
        if key not in self.cache:
            seed = derive_eval_seed(self.cfg.seed, genome_str, hp_key)
            value = self._train_missing([(genome_str, point, seed)])[0]
            self.cache[key] = float(value)
        return self.cache[key]

    def score_wave(
        self, genomes: list[Genome], point: dict, count_all: bool = False
    ) -> list[float] | None:
        """Score a population wave; returns None (consuming nothing) when the
        remaining budget cannot cover the wave's cache misses."""
        keys = []
        jobs = []
        job_keys = []
        for g in genomes:
            genome_str = render(g)
            key, hp_key = self._key(genome_str, point)
            keys.append(key)
            if key not in self.cache and key not in job_keys:
                seed = derive_eval_seed(self.cfg.seed, genome_str, hp_key)
                jobs.append((genome_str, point, seed))
                job_keys.append(key)
        cost = len(genomes) if count_all else len(jobs)
        if cost > self.remaining:
            return None
        values = self._train_missing(jobs)
        for key, value in zip(job_keys, values):
            self.cache[key] = float(value)
        self.evaluations += cost
        return [self.cache[k] for k in keys]

    def counted_objective(self, genome_str: str):
        """Per-trial objective for the tuner: every call consumes budget."""

        def _objective(point: dict) -> float:
            self.evaluations += 1
            return self.fitness(genome_str, point)

        return _objective

    def train_final(self, genome: Genome, point: dict):
        """Train the reported (genome, hyperparameters) pair once for the
        held-out test metric; not budget-accounted (reporting, not search)."""
        genome_str = render(genome)
        _, hp_key = self._key(genome_str, point)
        seed = derive_eval_seed(self.cfg.seed, genome_str, hp_key)
        hp = HyperparamConfig.from_point(point)
        plan = compile_plan(genome, hp, self.dataset.n_features, self.dataset.n_classes)
        return train(
            plan, self.dataset,
            max_epochs=self.cfg.max_epochs, patience=self.cfg.patience, seed=seed,
        )


@dataclass
class SearchResult:
    """Final report of one search or baseline run."""

    best_genome: str
    best_hyperparams: dict
    validation_fitness: float
    test_macro_f1: float
    evaluations: int
    generations_completed: int
    seconds: float
    budget_exhausted: bool
    config_digest: str
    ablation: dict
    generation_log: list[GenerationRecord]
    trial_log: list[dict]

    def summary(self) -> dict:
        """Everything reproducible under a fixed seed (wall-clock excluded)."""
        return {
            "best_genome": self.best_genome,
            "best_hyperparams": dict(self.best_hyperparams),
            "validation_fitness": self.validation_fitness,
            "test_macro_f1": self.test_macro_f1,
            "evaluations": self.evaluations,
            "generations_completed": self.generations_completed,
            "budget_exhausted": self.budget_exhausted,
            "config_digest": self.config_digest,
            "ablation": self.ablation,
            "generation_log": [asdict(r) for r in self.generation_log],
            "trial_log": [
                {k: v for k, v in row.items() if k != "seconds"}
                for row in self.trial_log
            ],
        }


class SearchDriver:
    """Owns the search state and advances it generation by generation."""

    def __init__(self, cfg: SearchConfig, dataset: GraphDataset | None = None,
                 checkpoint_path=None, checkpoint_every: int = 0):
        cfg.validate()
        if 0 < cfg.evaluation_budget < cfg.population_size:
            raise ConfigError(
                "evaluation budget cannot cover the initial population"
            )
        self.cfg = cfg
        self.dataset = dataset if dataset is not None else build_dataset(cfg)
        self.evaluator = FitnessEvaluator(self.dataset, cfg)
        self.rng = np.random.default_rng(cfg.seed)
        self.switch = SwitchState(
            smoothing=cfg.smoothing,
            threshold=cfg.threshold,
            smooth_improvement=cfg.smooth_improvement,
        )
        self.incumbent = cfg.space.midpoint()
        self.history = TrialHistory()
        self.population: Population | None = None
        self.generation = 0
        self.bootstrapped = False
        self.exhausted = False
        self.gen_log: list[GenerationRecord] = []
        self.trial_log: list[dict] = []
        self._logged_evals = 0
        self.checkpoint_path = checkpoint_path
        self.checkpoint_every = checkpoint_every

    # -- state advancement ------------------------------------------------

    def bootstrap(self) -> None:
        """Initialize and score the generation-0 population, then tune the
        hyperparameters of its best individual."""
        if self.bootstrapped:
            return
        cfg = self.cfg
        genomes = [
            random_genome(self.rng, cfg.genome_bounds, cfg.alphabet)
            for _ in range(cfg.population_size)
        ]
        scores = self.evaluator.score_wave(genomes, self.incumbent, count_all=True)
        if scores is None:  # pragma: no cover - blocked by the budget precheck
            raise ConfigError("evaluation budget cannot cover the initial population")
        self.population = Population(0, genomes, scores)
        if cfg.smooth_improvement:
            self.switch = replace(self.switch, prev_mean=self.population.mean_fitness)
        self.bootstrapped = True
        if not cfg.disable_bgtm:
            self._tune()
        self._log_generation()

    def _stage(self):
        if self.cfg.disable_adaptive:
            return self.cfg.schedule.exploitation, EXPLOITATION
        params = stage_params(self.switch, self.cfg.schedule)
        return params, self.switch.stage

    def step(self) -> bool:
        """One generation: offspring, scoring, survivor selection, smoothing
        update, and periodic tuning.  Returns False when the run stops."""
        if not self.bootstrapped:
            self.bootstrap()
        if self.exhausted or self.generation >= self.cfg.generations:
            return False
        cfg = self.cfg
        params, _ = self._stage()
        offspring = generate_offspring(
            self.population, params, self.rng, cfg.genome_bounds, cfg.alphabet
        )
        scores = self.evaluator.score_wave(offspring, self.incumbent)
        if scores is None:
            self.exhausted = True
            logger.warning("evaluation budget exhausted before generation %d",
                           self.generation + 1)
            return False
        self.population = environmental_selection(
            self.population, offspring, scores, self.rng
        )
        self.switch = update_delta_fitness(self.switch, self.population.mean_fitness)
        self.generation += 1
        if self.generation % cfg.tuning_interval == 0 and not cfg.disable_bgtm:
            self._tune()
        self._log_generation()
        if (
            self.checkpoint_path is not None
            and self.checkpoint_every > 0
            and self.generation % self.checkpoint_every == 0
        ):
            self.save_checkpoint(self.checkpoint_path)
        return not self.exhausted

    def _tune(self) -> None:
        cfg = self.cfg
        remaining = self.evaluator.remaining
        n_trials = cfg.tuning_trials
        if remaining < n_trials:
            n_trials = int(max(remaining, 0))
            self.exhausted = True
            if n_trials < 1:
                return
        best_genome = self.population.genomes[self.population.best_index]
        genome_str = render(best_genome)
        result = optimize(
            self.evaluator.counted_objective(genome_str),
            cfg.space,
            n_trials,
            self.rng,
            history=self.history,
            incumbent=self.incumbent,
            gamma=cfg.tuning_gamma,
            n_candidates=cfg.tuning_candidates,
            n_startup=cfg.tuning_startup,
        )
        if math.isfinite(result.best_objective):
            self.incumbent = dict(result.best_point)
        for rec in result.trials:
            self.trial_log.append(
                {
                    "generation": self.generation,
                    "trial": rec.index,
                    **{k: rec.point[k] for k in cfg.space.names},
                    "objective": rec.objective,
                    "seconds": rec.seconds,
                }
            )

    def _log_generation(self) -> None:
        pop = self.population
        _, stage = self._stage()
        best = pop.best_index
        self.gen_log.append(
            GenerationRecord(
                generation=self.generation,
                stage=stage,
                delta_fitness=self.switch.delta_fitness,
                best_fitness=pop.scores[best],
                mean_fitness=pop.mean_fitness,
                min_fitness=float(min(pop.scores)),
                best_genome=render(pop.genomes[best]),
                evaluations=self.evaluator.evaluations - self._logged_evals,
            )
        )
        self._logged_evals = self.evaluator.evaluations

    def run(self) -> SearchResult:
        """Execute the full loop and build the result report."""
        started = time.perf_counter()
        try:
            self.bootstrap()
            while self.step():
                pass
            return self._finalize(time.perf_counter() - started)
        finally:
            self.evaluator.close()

    def _finalize(self, seconds: float) -> SearchResult:
        pop = self.population
        best_genome = pop.genomes[pop.best_index]
        genome_str = render(best_genome)
        validation_fitness = self.evaluator.fitness(genome_str, self.incumbent)
        final_model = self.evaluator.train_final(best_genome, self.incumbent)
        test_f1 = score_test_set(final_model, self.dataset)
        return SearchResult(
            best_genome=genome_str,
            best_hyperparams=dict(self.incumbent),
            validation_fitness=validation_fitness,
            test_macro_f1=test_f1,
            evaluations=self.evaluator.evaluations,
            generations_completed=self.generation,
            seconds=seconds,
            budget_exhausted=self.exhausted,
            config_digest=config_hash(self.cfg),
            ablation=ablation_report(self.cfg),
            generation_log=list(self.gen_log),
            trial_log=list(self.trial_log),
        )

    # -- checkpointing -----------------------------------------------------

    def save_checkpoint(self, path) -> None:
        state = {
            "format": CHECKPOINT_FORMAT,
            "config": self.cfg.to_dict(),
            "config_digest": config_hash(self.cfg),
            "generation": self.generation,
            "bootstrapped": self.bootstrapped,
            "exhausted": self.exhausted,
            "population": {
                "generation": self.population.generation,
                "genomes": [render(g) for g in self.population.genomes],
                "scores": list(self.population.scores),
            },
            "switch": {
                "delta_fitness": self.switch.delta_fitness,
                "prev_mean": self.switch.prev_mean,
            },
            "incumbent": dict(self.incumbent),
            "history": [[t.point, t.objective] for t in self.history],
            "cache": dict(self.evaluator.cache),
            "evaluations": self.evaluator.evaluations,
            "logged_evaluations": self._logged_evals,
            "rng": self.rng.bit_generator.state,
            "generation_log": [asdict(r) for r in self.gen_log],
            "trial_log": list(self.trial_log),
        }
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(state, fh)
        os.replace(tmp, path)

    @classmethod
    def from_checkpoint(cls, path, expected: SearchConfig | None = None,
                        checkpoint_path=None, checkpoint_every: int = 0):
        """Rebuild a driver mid-run; continues bit-identically.

        When an expected config is supplied its hash must match the stored
        one, otherwise the resume is refused.
        """
        try:
            with open(path, encoding="utf-8") as fh:
                state = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot load checkpoint {path}: {exc}")
        try:
            if state["format"] != CHECKPOINT_FORMAT:
                raise CheckpointError(
                    f"unsupported checkpoint format {state['format']}"
                )
            cfg = SearchConfig.from_dict(state["config"])
            digest = state["config_digest"]
            if expected is not None and config_hash(expected) != digest:
                raise CheckpointError(
                    "checkpoint was produced under a different config "
                    f"(stored {digest[:12]}, requested {config_hash(expected)[:12]})"
                )
            driver = cls(cfg, checkpoint_path=checkpoint_path,
                         checkpoint_every=checkpoint_every)
            pop = state["population"]
            driver.population = Population(
                pop["generation"],
                [parse(s) for s in pop["genomes"]],
                [float(s) for s in pop["scores"]],
            )
            driver.generation = state["generation"]
            driver.bootstrapped = state["bootstrapped"]
            driver.exhausted = state["exhausted"]
            driver.switch = replace(
                driver.switch,
                delta_fitness=state["switch"]["delta_fitness"],
                prev_mean=state["switch"]["prev_mean"],
            )
            driver.incumbent = dict(state["incumbent"])
            driver.history = TrialHistory()
            for point, objective in state["history"]:
                driver.history.append(point, objective)
            driver.evaluator.cache = {k: float(v) for k, v in state["cache"].items()}
            driver.evaluator.evaluations = state["evaluations"]
            driver._logged_evals = state["logged_evaluations"]
            driver.rng.bit_generator.state = state["rng"]
            driver.gen_log = [GenerationRecord(**r) for r in state["generation_log"]]
            driver.trial_log = list(state["trial_log"])
        except CheckpointError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"corrupt checkpoint {path}: {exc!r}")
        return driver


def ablation_report(cfg: SearchConfig) -> dict:
    """Config introspection confirming which components are active."""
    return {
        "adaptive_switching": not cfg.disable_adaptive,
        "stage_policy": "pinned-exploitation" if cfg.disable_adaptive else "adaptive",
        "tuning_enabled": not cfg.disable_bgtm,
        "hyperparam_policy": "fixed-midpoint" if cfg.disable_bgtm else "tuned",
        "alphabet": [g.token for g in cfg.alphabet],
        "alphabet_size": len(cfg.alphabet),
    }


def run_search(cfg: SearchConfig, dataset: GraphDataset | None = None,
               checkpoint_path=None, checkpoint_every: int = 0) -> SearchResult:
    """Run the full architecture search for a validated config."""
    driver = SearchDriver(cfg, dataset=dataset, checkpoint_path=checkpoint_path,
                          checkpoint_every=checkpoint_every)
    return driver.run()


def run_random_baseline(cfg: SearchConfig, budget: int,
                        dataset: GraphDataset | None = None) -> SearchResult:
    """Best of `budget` uniform-random genomes under the midpoint
    hyperparameters; the budget-matched control for the search."""
    cfg.validate()
    if budget < 1:
        raise ConfigError("baseline budget must be >= 1")
    started = time.perf_counter()
    ds = dataset if dataset is not None else build_dataset(cfg)
    baseline_cfg = replace(cfg, evaluation_budget=0)
    evaluator = FitnessEvaluator(ds, baseline_cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    point = cfg.space.midpoint()
    best_genome = None
    best_fitness = -math.inf
    log: list[GenerationRecord] = []
    try:
        for i in range(budget):
            genome = random_genome(rng, cfg.genome_bounds, cfg.alphabet)
            value = evaluator.fitness(render(genome), point)
            evaluator.evaluations += 1
            if value > best_fitness:
                best_fitness = value
                best_genome = genome
            log.append(
                GenerationRecord(
                    generation=i,
                    stage="baseline",
                    delta_fitness=0.0,
                    best_fitness=best_fitness,
                    mean_fitness=value,
                    min_fitness=value,
                    best_genome=render(best_genome),
                    evaluations=1,
                )
            )
        final_model = evaluator.train_final(best_genome, point)
        test_f1 = score_test_set(final_model, ds)
    finally:
        evaluator.close()
    return SearchResult(
        best_genome=render(best_genome),
        best_hyperparams=dict(point),
        validation_fitness=best_fitness,
        test_macro_f1=test_f1,
        evaluations=evaluator.evaluations,
        generations_completed=0,
        seconds=time.perf_counter() - started,
        budget_exhausted=False,
        config_digest=config_hash(cfg),
        ablation=ablation_report(cfg),
        generation_log=log,
        trial_log=[],
    )


def write_outputs(result: SearchResult, out_dir, space_names) -> dict[str, str]:
    """Emit convergence.csv, trials.csv, and result.json into out_dir."""
    import csv

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "convergence": os.path.join(out_dir, "convergence.csv"),
        "trials": os.path.join(out_dir, "trials.csv"),
        "result": os.path.join(out_dir, "result.json"),
    }
    write_generation_log(paths["convergence"], result.generation_log)
    with open(paths["trials"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "trial", *space_names, "objective", "seconds"])
        for row in result.trial_log:
            writer.writerow(
                [row["generation"], row["trial"]]
                + [row[n] for n in space_names]
                + [row["objective"], f"{row['seconds']:.6f}"]
            )
    payload = result.summary()
    payload["seconds"] = result.seconds
    with open(paths["result"], "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    return paths
