"""Adaptive genetic optimizer: population lifecycle, smoothed-fitness stage
switching, k-tournament parent selection, and elitism-roulette survivor
selection.

The optimizer exponentially smooths the population's mean fitness; while the
smoothed value stays at or below a threshold the search runs exploration
stage parameters (larger tournaments, more crossover and mutation), and
switches to the exploitation triple once it rises above the threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .genome import (
    DEFAULT_LENGTH_BOUNDS,
    FULL_ALPHABET,
    Genome,
    crossover_single_point,
    mutate,
)

EXPLORATION = "exploration"
EXPLOITATION = "exploitation"

ROULETTE_EPSILON = 1e-9


@dataclass(frozen=True)
class StageParams:
    """Genetic operator intensities for one stage."""

    tournament_k: int
    crossover_prob: float
    mutation_prob: float

    def __post_init__(self):
        if self.tournament_k < 2:
            raise ConfigError("tournament size must be >= 2")
        for p in (self.crossover_prob, self.mutation_prob):
            if not 0.0 <= p <= 1.0:
                raise ConfigError("operator probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class StageSchedule:
    """The exploration/exploitation parameter pair.

    Defaults keep every exploration intensity above its exploitation
    counterpart; all six numbers are config-overridable.
    """

    exploration: StageParams = StageParams(4, 0.9, 0.5)
    exploitation: StageParams = StageParams(2, 0.6, 0.2)


@dataclass(frozen=True)
class SwitchState:
    """Exponentially smoothed mean-fitness signal driving stage selection.

    delta_fitness follows delta(g) = smoothing * mean(g) + (1 - smoothing) *
    delta(g-1) with delta(0) = 0.  With smooth_improvement enabled the
    recurrence smooths the generation-over-generation change of the mean
    instead of the mean itself.
    """

    delta_fitness: float = 0.0
    smoothing: float = 0.5
    threshold: float = 0.5
    smooth_improvement: bool = False
    prev_mean: float | None = None

    def __post_init__(self):
        if not 0.0 < self.smoothing < 1.0:
            raise ConfigError("smoothing factor must lie in (0, 1)")

    @property
    def stage(self) -> str:
        return EXPLORATION if self.delta_fitness <= self.threshold else EXPLOITATION


def update_delta_fitness(state: SwitchState, mean_fitness: float) -> SwitchState:
    """One step of the smoothing recurrence (generation 0 never updates)."""
    if state.smooth_improvement:
        signal = 0.0 if state.prev_mean is None else mean_fitness - state.prev_mean
    else:
        signal = mean_fitness
    new_delta = state.smoothing * signal + (1.0 - state.smoothing) * state.delta_fitness
    return replace(state, delta_fitness=new_delta, prev_mean=mean_fitness)


def stage_params(state: SwitchState, schedule: StageSchedule) -> StageParams:
    """Exploration triple while delta <= threshold (inclusive), else the
    exploitation triple."""
    return schedule.exploration if state.stage == EXPLORATION else schedule.exploitation


@dataclass
class Population:
    """Scored individuals of one generation."""

    generation: int
    genomes: list[Genome]
    scores: list[float]

    def __post_init__(self):
        if len(self.genomes) != len(self.scores):
            raise ValueError("genomes and scores must align")

    @property
    def size(self) -> int:
        return len(self.genomes)

    @property
    def mean_fitness(self) -> float:
        return float(np.mean(self.scores))

    @property
    def best_index(self) -> int:
        return _argmax_lowest(self.scores)


def _argmax_lowest(scores) -> int:
    """Index of the maximum; ties break to the lowest index."""
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best


def k_tournament(pop: Population, k: int, rng: np.random.Generator) -> int:
    """Index of the fittest of k distinct uniformly sampled individuals;
    ties break to the lowest index."""
    if not 2 <= k <= pop.size:
        raise ConfigError(f"tournament size {k} outside [2, {pop.size}]")
    entrants = rng.choice(pop.size, size=k, replace=False)
    best = None
    for i in sorted(int(e) for e in entrants):
        if best is None or pop.scores[i] > pop.scores[best]:
            best = i
    return best


def generate_offspring(
    pop: Population,
    params: StageParams,
    rng: np.random.Generator,
    bounds: tuple[int, int] = DEFAULT_LENGTH_BOUNDS,
    alphabet=FULL_ALPHABET,
) -> list[Genome]:
    """One offspring population of exactly pop.size individuals.

    size/2 parent pairs are drawn by two independent k-tournaments each
    (a pair may repeat an individual); each pair crosses over with
    probability crossover_prob, else the parents are cloned; every
    resulting individual then mutates with probability mutation_prob.
    """
    if pop.size % 2 != 0:
        raise ConfigError("population size must be even")
    offspring: list[Genome] = []
    for _ in range(pop.size // 2):
        a = pop.genomes[k_tournament(pop, params.tournament_k, rng)]
        b = pop.genomes[k_tournament(pop, params.tournament_k, rng)]
        if rng.random() < params.crossover_prob:
            a, b, _ = crossover_single_point(a, b, rng, bounds)
        for child in (a, b):
            if rng.random() < params.mutation_prob:
                child = mutate(child, rng, bounds, alphabet)
            offspring.append(child)
    return offspring


def environmental_selection(
    parents: Population,
    offspring: list[Genome],
    offspring_scores: list[float],
    rng: np.random.Generator,
    epsilon: float = ROULETTE_EPSILON,
) -> Population:
    """Next parent population from the parent/offspring union.

    The fittest member of the union always survives; the remaining size-1
    slots are filled by fitness-proportional sampling without replacement,
    with every weight floored by epsilon so zero-fitness pools stay
    drawable.
    """
    union = list(parents.genomes) + list(offspring)
    scores = list(parents.scores) + [float(s) for s in offspring_scores]
    elite = _argmax_lowest(scores)
    chosen = [elite]
    pool = [i for i in range(len(union)) if i != elite]
    for _ in range(parents.size - 1):
        weights = np.array([scores[i] + epsilon for i in pool])
        r = float(rng.random()) * float(weights.sum())
        acc = 0.0
        pick = len(pool) - 1
        for j, w in enumerate(weights):
            acc += float(w)
            if r < acc:
                pick = j
                break
        chosen.append(pool.pop(pick))
    return Population(
        generation=parents.generation + 1,
        genomes=[union[i] for i in chosen],
        scores=[scores[i] for i in chosen],
    )


@dataclass
class GenerationRecord:
    """One row of the per-generation convergence log."""

    generation: int
    stage: str
    delta_fitness: float
    best_fitness: float
    mean_fitness: float
    min_fitness: float
    best_genome: str
    evaluations: int  # evaluations consumed since the previous row


def write_generation_log(path, records: list[GenerationRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "generation",
                "stage",
                "delta_fitness",
                "best_fitness",
                "mean_fitness",
                "min_fitness",
                "best_genome",
                "evaluations",
            ]
        )
        for r in records:
            writer.writerow(
                [
                    r.generation,
                    r.stage,
                    repr(r.delta_fitness),
                    repr(r.best_fitness),
                    repr(r.mean_fitness),
                    repr(r.min_fitness),
                    r.best_genome,
                    r.evaluations,
                ]
            )
