"""Hyperparameter space and the Tree-structured Parzen Estimator tuner.

The tuner splits observed trials into good/bad sets at a quantile of the
objective (maximization convention), fits per-dimension truncated-Gaussian
kernel densities l(x) and g(x) in transformed coordinates, and proposes the
candidate maximizing the density ratio l(x)/g(x).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.25
DEFAULT_N_CANDIDATES = 24
DEFAULT_N_STARTUP = 5
DEFAULT_N_TRIALS = 20

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Dimension:
    """One search-space axis: a bounded float, optionally log-scaled and/or
    rounded to an integer on the way out."""

    name: str
    low: float
    high: float
    log: bool = False
    integer: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise ConfigError(f"{self.name}: bounds must be finite")
        if not self.low < self.high:
            raise ConfigError(f"{self.name}: low must be < high")
        if self.log and self.low <= 0:
            raise ConfigError(f"{self.name}: log dimension needs positive bounds")

    def transform(self, value: float) -> float:
        return math.log(value) if self.log else float(value)

    def untransform(self, t: float) -> float:
        value = math.exp(t) if self.log else float(t)
        value = min(max(value, self.low), self.high)
        if self.integer:
            value = int(min(max(round(value), math.ceil(self.low)), math.floor(self.high)))
        return value

    @property
    def bounds_t(self) -> tuple[float, float]:
        return self.transform(self.low), self.transform(self.high)

    def sample(self, rng: np.random.Generator) -> float:
        lo, hi = self.bounds_t
        return self.untransform(lo + (hi - lo) * float(rng.random()))


@dataclass(frozen=True)
class HyperparamSpace:
    """A product of dimensions.  The default space covers the six training
    hyperparameters of the micro GNN trainer."""

    dimensions: tuple[Dimension, ...]

    def __post_init__(self):
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate dimension names")

    @classmethod
    def default(cls) -> "HyperparamSpace":
        return cls(
            (
                Dimension("hidden_dim", 4, 256, log=True, integer=True),
                Dimension("forward_dropout", 0.4, 0.6),
                Dimension("middle_dropout", 0.2, 0.4),
                Dimension("overall_dropout", 0.3, 0.5),
                Dimension("learning_rate", 1e-4, 1e-1, log=True),
                Dimension("weight_decay", 1e-5, 1e-2, log=True),
            )
        )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dimensions)

    def sample(self, rng: np.random.Generator) -> dict[str, float]:
        return {d.name: d.sample(rng) for d in self.dimensions}

    def midpoint(self) -> dict[str, float]:
        """Center of each dimension in transformed coordinates (a geometric
        midpoint for log dimensions)."""
        out = {}
        for d in self.dimensions:
            lo, hi = d.bounds_t
            out[d.name] = d.untransform(0.5 * (lo + hi))
        return out

    def contains(self, point: dict[str, float]) -> bool:
        if set(point) != set(self.names):
            return False
        for d in self.dimensions:
            v = point[d.name]
            if not (d.low <= v <= d.high):
                return False
            if d.integer and v != int(v):
                return False
        return True


@dataclass(frozen=True)
class HyperparamConfig:
    """One point of the default space, typed for the trainer."""

    hidden_dim: int = 32
    forward_dropout: float = 0.5
    middle_dropout: float = 0.3
    overall_dropout: float = 0.4
    learning_rate: float = 3.1622776601683794e-03
    weight_decay: float = 3.1622776601683794e-04

    @classmethod
    def from_point(cls, point: dict[str, float]) -> "HyperparamConfig":
        return cls(
            hidden_dim=int(point["hidden_dim"]),
            forward_dropout=float(point["forward_dropout"]),
            middle_dropout=float(point["middle_dropout"]),
            overall_dropout=float(point["overall_dropout"]),
            learning_rate=float(point["learning_rate"]),
            weight_decay=float(point["weight_decay"]),
        )

    def key(self) -> str:
        """Canonical cache key; float repr round-trips exactly."""
        return (
            f"h={self.hidden_dim},fd={self.forward_dropout!r},"
            f"md={self.middle_dropout!r},od={self.overall_dropout!r},"
            f"lr={self.learning_rate!r},wd={self.weight_decay!r}"
        )


@dataclass
class Trial:
    point: dict[str, float]
    objective: float


class TrialHistory:
    """Append-only record of (point, objective) observations."""

    def __init__(self, trials: list[Trial] | None = None):
        self.trials: list[Trial] = list(trials) if trials else []

    def append(self, point: dict[str, float], objective: float) -> None:
        self.trials.append(Trial(dict(point), float(objective)))

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)


def split_history(
    history: TrialHistory, gamma: float = DEFAULT_GAMMA
) -> tuple[list[Trial], list[Trial], float]:
    """Split trials at the (1-gamma) objective quantile, maximizing.

    y* is the ceil(gamma * n)-th largest objective; trials with objective
    >= y* form the good set (never empty), the rest the bad set.
    """
    n = len(history)
    if n < 2:
        raise ValueError("need at least 2 trials to split; sample randomly instead")
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
    n_good = min(max(int(math.ceil(gamma * n)), 1), n)
    y_star = sorted((t.objective for t in history), reverse=True)[n_good - 1]
    good = [t for t in history if t.objective >= y_star]
    bad = [t for t in history if t.objective < y_star]
    return good, bad, y_star


class _DimDensity:
    """Truncated Gaussian-kernel mixture on one transformed axis; a uniform
    density over the bounds when there are no samples."""

    def __init__(self, dim: Dimension, samples_t: np.ndarray):
        self.dim = dim
        self.lo, self.hi = dim.bounds_t
        self.centers = np.asarray(samples_t, dtype=np.float64)
        if len(self.centers):
            n = len(self.centers)
            spread = float(np.std(self.centers))
            base = max(spread, 0.05 * (self.hi - self.lo))
            self.bandwidth = base * n ** (-1.0 / 5.0)
            # Per-kernel mass inside the bounds, for truncation renormalization.
            self._mass = self._phi(self.hi) - self._phi(self.lo)
        else:
            self.bandwidth = 0.0
            self._mass = None

    def _phi(self, x):
        return ndtr((x - self.centers) / self.bandwidth)

    def pdf(self, value: float) -> float:
        t = self.dim.transform(value)
        if not len(self.centers):
            return 1.0 / (self.hi - self.lo)
        if not self.lo <= t <= self.hi:
            return 0.0
        z = (t - self.centers) / self.bandwidth
        kernels = np.exp(-0.5 * z * z) / (self.bandwidth * _SQRT_2PI)
        return float(np.mean(kernels / self._mass))

    def sample(self, rng: np.random.Generator) -> float:
        if not len(self.centers):
            return self.dim.sample(rng)
        center = float(self.centers[int(rng.integers(0, len(self.centers)))])
        for _ in range(100):
            draw = center + self.bandwidth * float(rng.standard_normal())
            if self.lo <= draw <= self.hi:
                return self.dim.untransform(draw)
        return self.dim.untransform(min(max(center, self.lo), self.hi))


class DensityEstimate:
    """Product density over all dimensions of a space."""

    def __init__(self, space: HyperparamSpace, points: list[dict[str, float]]):
        self.space = space
        self._dims = [
            _DimDensity(d, np.array([d.transform(p[d.name]) for p in points]))
            for d in space.dimensions
        ]

    def log_pdf(self, point: dict[str, float]) -> float:
        total = 0.0
        for dd in self._dims:
            p = dd.pdf(point[dd.dim.name])
            if p <= 0.0:
                return -math.inf
            total += math.log(p)
        return total

    def pdf(self, point: dict[str, float]) -> float:
        return math.exp(self.log_pdf(point))

    def sample(self, rng: np.random.Generator) -> dict[str, float]:
        return {dd.dim.name: dd.sample(rng) for dd in self._dims}


def fit_densities(
    good: list[Trial], bad: list[Trial], space: HyperparamSpace
) -> tuple[DensityEstimate, DensityEstimate]:
    """Kernel densities of the good and bad trial sets.  An empty bad set
    yields a uniform prior."""
    if not good:
        raise ValueError("good set must be non-empty")
    l_density = DensityEstimate(space, [t.point for t in good])
    g_density = DensityEstimate(space, [t.point for t in bad])
    return l_density, g_density


def propose(
    history: TrialHistory,
    space: HyperparamSpace,
    rng: np.random.Generator,
    n_candidates: int = DEFAULT_N_CANDIDATES,
    gamma: float = DEFAULT_GAMMA,
    n_startup: int = DEFAULT_N_STARTUP,
) -> dict[str, float]:
    """Next point to evaluate: random while the history is short, otherwise
    the best of n_candidates draws from l(x) ranked by l(x)/g(x)."""
    if len(history) < max(n_startup, 2):
        return space.sample(rng)
    good, bad, _ = split_history(history, gamma)
    l_density, g_density = fit_densities(good, bad, space)
    best_point = None
    best_score = -math.inf
    for _ in range(n_candidates):
        candidate = l_density.sample(rng)
        score = l_density.log_pdf(candidate) - g_density.log_pdf(candidate)
        if score > best_score:
            best_score = score
            best_point = candidate
    return best_point


@dataclass
class TrialRecord:
    index: int
    point: dict[str, float]
    objective: float
    seconds: float


@dataclass
class TuneResult:
    best_point: dict[str, float]
    best_objective: float
    trials: list[TrialRecord] = field(default_factory=list)


def optimize(
    objective,
    space: HyperparamSpace,
    n_trials: int,
    rng: np.random.Generator,
    history: TrialHistory | None = None,
    incumbent: dict[str, float] | None = None,
    gamma: float = DEFAULT_GAMMA,
    n_candidates: int = DEFAULT_N_CANDIDATES,
    n_startup: int = DEFAULT_N_STARTUP,
) -> TuneResult:
    """Run n_trials propose-evaluate cycles against an objective callable.

    Trial 0 re-evaluates the incumbent when one is given, so the returned
    best is never worse than the incumbent.  Observations accumulate into
    the supplied history (useful to warm-start later sessions); the returned
    best is taken over this session's trials only.  Non-finite objectives
    are logged, excluded from the history, and skipped in the ranking.
    """
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    if history is None:
        history = TrialHistory()
    records: list[TrialRecord] = []
    best_point = None
    best_objective = -math.inf
    for index in range(n_trials):
        if index == 0 and incumbent is not None:
            point = dict(incumbent)
        else:
            point = propose(
                history, space, rng,
                n_candidates=n_candidates, gamma=gamma, n_startup=n_startup,
            )
        started = time.perf_counter()
        value = float(objective(point))
        elapsed = time.perf_counter() - started
        records.append(TrialRecord(index, dict(point), value, elapsed))
        if math.isfinite(value):
            history.append(point, value)
            if value > best_objective:
                best_objective = value
                best_point = dict(point)
        else:
            logger.warning("trial %d returned a non-finite objective; skipped", index)
    if best_point is None:
        logger.warning("all trials non-finite; returning the incumbent unchanged")
        fallback = dict(incumbent) if incumbent is not None else space.midpoint()
        return TuneResult(fallback, math.nan, records)
    return TuneResult(best_point, best_objective, records)


def tune(
    genome,
    dataset,
    space: HyperparamSpace,
    n_trials: int,
    seed: int,
    incumbent: dict[str, float] | None = None,
    history: TrialHistory | None = None,
    evaluate=None,
    gamma: float = DEFAULT_GAMMA,
    n_candidates: int = DEFAULT_N_CANDIDATES,
    n_startup: int = DEFAULT_N_STARTUP,
) -> TuneResult:
    """Tune training hyperparameters for a fixed genome.

    Each trial trains the genome under the proposed point and scores the
    best validation macro-F1.  A custom evaluate(point) callable may be
    supplied (the search driver injects its cached evaluator).
    """
    if evaluate is None:
        from .engine import evaluate_fitness

        def evaluate(point):
            hp = HyperparamConfig.from_point(point)
            return evaluate_fitness(genome, hp, dataset, seed).macro_f1

    rng = np.random.default_rng(seed)
    return optimize(
        evaluate, space, n_trials, rng,
        history=history, incumbent=incumbent,
        gamma=gamma, n_candidates=n_candidates, n_startup=n_startup,
    )


def write_trial_log(path, records: list[TrialRecord], names: tuple[str, ...]) -> None:
    """CSV trial log: index, one column per dimension, objective, seconds."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", *names, "objective", "seconds"])
        for rec in records:
            writer.writerow(
                [rec.index]
                + [rec.point.get(n, "") for n in names]
                + [rec.objective, f"{rec.seconds:.6f}"]
            )
