"""Search configuration: defaults, TOML loading, and dataset construction.

An empty config file reproduces the reference settings at desk scale:
population and generation counts of 20, tuning every 5 generations, genome
lengths 3..15, smoothing factor 0.5, a 6:2:2 stratified split, and the
six-dimensional hyperparameter space with its standard bounds.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace

from .errors import ConfigError
from .evolution import StageParams, StageSchedule
from .genome import FULL_ALPHABET, RESTRICTED_ALPHABET
from .graphdata import GraphDataset, generate_sbm, load_dataset, make_splits
from .tuning import Dimension, HyperparamSpace

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class SbmSpec:
    """Synthetic stochastic-block-model dataset parameters."""

    blocks: tuple[int, ...] = (75, 75, 75, 75)
    p_in: float = 0.08
    p_out: float = 0.005
    features: int = 16
    noise: float = 0.5
    mean_scale: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class FilesSpec:
    """On-disk dataset file paths."""

    edges: str
    features: str
    labels: str
    seed: int = 0  # split seed


@dataclass(frozen=True)
class SearchConfig:
    dataset: SbmSpec | FilesSpec = field(default_factory=SbmSpec)
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    genome_bounds: tuple[int, int] = (3, 15)
    population_size: int = 20
    generations: int = 20
    tuning_interval: int = 5
    smoothing: float = 0.5
    threshold: float = 0.5
    smooth_improvement: bool = False
    schedule: StageSchedule = field(default_factory=StageSchedule)
    space: HyperparamSpace = field(default_factory=HyperparamSpace.default)
    tuning_trials: int = 20
    tuning_gamma: float = 0.25
    tuning_candidates: int = 24
    tuning_startup: int = 5
    max_epochs: int = 300
    patience: int = 30
    seed: int = 0
    workers: int = 1
    evaluation_budget: int = 0  # 0 = uncapped
    disable_bgtm: bool = False
    disable_adaptive: bool = False
    restricted_space: bool = False

    def validate(self) -> "SearchConfig":
        if self.population_size < 2 or self.population_size % 2 != 0:
            raise ConfigError("population_size must be an even number >= 2")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if self.tuning_interval < 1:
            raise ConfigError("tuning interval must be >= 1")
        if self.generations % self.tuning_interval != 0:
            raise ConfigError(
                "generations must be an integer multiple of the tuning interval"
            )
        d_min, d_max = self.genome_bounds
        if d_min < 1 or d_max < d_min:
            raise ConfigError(f"invalid genome length bounds {self.genome_bounds}")
        if not 0.0 < self.smoothing < 1.0:
            raise ConfigError("smoothing must lie in (0, 1)")
        if self.tuning_trials < 1:
            raise ConfigError("tuning_trials must be >= 1")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.evaluation_budget < 0:
            raise ConfigError("evaluation_budget must be >= 0 (0 = uncapped)")
        required = {
            "hidden_dim",
            "forward_dropout",
            "middle_dropout",
            "overall_dropout",
            "learning_rate",
            "weight_decay",
        }
        if set(self.space.names) != required:
            raise ConfigError(
                "hyperparameter space must keep the six canonical dimensions"
            )
        for k in (
            self.schedule.exploration.tournament_k,
            self.schedule.exploitation.tournament_k,
        ):
            if k > self.population_size:
                raise ConfigError("tournament size exceeds population size")
        return self

    @property
    def alphabet(self):
        return RESTRICTED_ALPHABET if self.restricted_space else FULL_ALPHABET

    def to_dict(self) -> dict:
        data = asdict(self)
        data["dataset"]["kind"] = "files" if isinstance(self.dataset, FilesSpec) else "sbm"
        data["space"] = [asdict(d) for d in self.space.dimensions]
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "SearchConfig":
        data = dict(data)
        ds = dict(data.pop("dataset"))
        kind = ds.pop("kind")
        if kind == "files":
            dataset = FilesSpec(**ds)
        else:
            ds["blocks"] = tuple(ds["blocks"])
            dataset = SbmSpec(**ds)
        sched = data.pop("schedule")
        schedule = StageSchedule(
            exploration=StageParams(**sched["exploration"]),
            exploitation=StageParams(**sched["exploitation"]),
        )
        space = HyperparamSpace(tuple(Dimension(**d) for d in data.pop("space")))
        data["split_ratios"] = tuple(data["split_ratios"])
        data["genome_bounds"] = tuple(data["genome_bounds"])
        return cls(dataset=dataset, schedule=schedule, space=space, **data)


def config_hash(cfg: SearchConfig) -> str:
    """Digest of everything that can influence results; the worker count is
    execution infrastructure and deliberately excluded."""
    data = cfg.to_dict()
    data.pop("workers")
    canon = json.dumps(data, sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def build_dataset(cfg: SearchConfig) -> GraphDataset:
    """Materialize and split the configured dataset (deterministic)."""
    if isinstance(cfg.dataset, FilesSpec):
        ds = load_dataset(cfg.dataset.edges, cfg.dataset.features, cfg.dataset.labels)
    else:
        s = cfg.dataset
        ds = generate_sbm(
            s.blocks, s.p_in, s.p_out, s.features, s.noise,
            seed=s.seed, mean_scale=s.mean_scale,
        )
    return make_splits(ds, cfg.split_ratios, seed=cfg.dataset.seed + 1)


_STAGE_KEYS = {"tournament_k", "crossover_prob", "mutation_prob"}
_DIM_KEYS = {"low", "high", "log", "integer"}


def _require_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {sorted(unknown)}")


def load_config(path=None, overrides: dict | None = None) -> SearchConfig:
    """Read a TOML config file (all keys optional) and apply CLI overrides.

    Recognized layout:

        seed / workers / evaluation_budget            top-level scalars
        [dataset]        kind = "sbm" | "files", plus the matching
                         [dataset.sbm] / [dataset.files] table and
                         split_ratios
        [genome]         min_length, max_length
        [evolution]      population_size, generations, smoothing, threshold,
                         smooth_improvement, [evolution.exploration] and
                         [evolution.exploitation] stage triples
        [tuning]         interval, trials, gamma, candidates, startup, and
                         per-dimension bound tables under [tuning.space.*]
        [training]       max_epochs, patience
    """
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}")

    _require_keys(
        raw,
        {"seed", "workers", "evaluation_budget", "dataset", "genome",
         "evolution", "tuning", "training"},
        "top level",
    )
    cfg = SearchConfig()

    dataset_sec = raw.get("dataset", {})
    _require_keys(dataset_sec, {"kind", "sbm", "files", "split_ratios"}, "dataset")
    kind = dataset_sec.get("kind", "files" if "files" in dataset_sec else "sbm")
    if kind == "sbm":
        sbm = dict(dataset_sec.get("sbm", {}))
        _require_keys(
            sbm,
            {"blocks", "p_in", "p_out", "features", "noise", "mean_scale", "seed"},
            "dataset.sbm",
        )
        if "blocks" in sbm:
            sbm["blocks"] = tuple(int(b) for b in sbm["blocks"])
        dataset = replace(SbmSpec(), **sbm)
    elif kind == "files":
        files = dict(dataset_sec.get("files", {}))
        _require_keys(files, {"edges", "features", "labels", "seed"}, "dataset.files")
        for key in ("edges", "features", "labels"):
            if key not in files:
                raise ConfigError(f"dataset.files.{key} is required for kind='files'")
        dataset = FilesSpec(**files)
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    cfg = replace(cfg, dataset=dataset)
    if "split_ratios" in dataset_sec:
        ratios = tuple(float(r) for r in dataset_sec["split_ratios"])
        if len(ratios) != 3:
            raise ConfigError("split_ratios must have exactly 3 entries")
        cfg = replace(cfg, split_ratios=ratios)

    genome_sec = raw.get("genome", {})
    _require_keys(genome_sec, {"min_length", "max_length"}, "genome")
    d_min = int(genome_sec.get("min_length", cfg.genome_bounds[0]))
    d_max = int(genome_sec.get("max_length", cfg.genome_bounds[1]))
    cfg = replace(cfg, genome_bounds=(d_min, d_max))

    evo = raw.get("evolution", {})
    _require_keys(
        evo,
        {"population_size", "generations", "smoothing", "threshold",
         "smooth_improvement", "exploration", "exploitation"},
        "evolution",
    )
    schedule = cfg.schedule
    for stage_name in ("exploration", "exploitation"):
        if stage_name in evo:
            sec = evo[stage_name]
            _require_keys(sec, _STAGE_KEYS, f"evolution.{stage_name}")
            base = getattr(schedule, stage_name)
            merged = replace(base, **sec)
            schedule = replace(schedule, **{stage_name: merged})
    cfg = replace(
        cfg,
        population_size=int(evo.get("population_size", cfg.population_size)),
        generations=int(evo.get("generations", cfg.generations)),
        smoothing=float(evo.get("smoothing", cfg.smoothing)),
        threshold=float(evo.get("threshold", cfg.threshold)),
        smooth_improvement=bool(evo.get("smooth_improvement", cfg.smooth_improvement)),
        schedule=schedule,
    )

    tun = raw.get("tuning", {})
    _require_keys(
        tun, {"interval", "trials", "gamma", "candidates", "startup", "space"},
        "tuning",
    )
    space = cfg.space
    if "space" in tun:
        dims = []
        for dim in space.dimensions:
            if dim.name in tun["space"]:
                sec = tun["space"][dim.name]
                _require_keys(sec, _DIM_KEYS, f"tuning.space.{dim.name}")
                dims.append(replace(dim, **sec))
            else:
                dims.append(dim)
        unknown = set(tun["space"]) - set(space.names)
        if unknown:
            raise ConfigError(f"unknown tuning.space dimension(s): {sorted(unknown)}")
        space = HyperparamSpace(tuple(dims))
    cfg = replace(
        cfg,
        tuning_interval=int(tun.get("interval", cfg.tuning_interval)),
        tuning_trials=int(tun.get("trials", cfg.tuning_trials)),
        tuning_gamma=float(tun.get("gamma", cfg.tuning_gamma)),
        tuning_candidates=int(tun.get("candidates", cfg.tuning_candidates)),
        tuning_startup=int(tun.get("startup", cfg.tuning_startup)),
        space=space,
    )

    training = raw.get("training", {})
    _require_keys(training, {"max_epochs", "patience"}, "training")
    cfg = replace(
        cfg,
        max_epochs=int(training.get("max_epochs", cfg.max_epochs)),
        patience=int(training.get("patience", cfg.patience)),
        seed=int(raw.get("seed", cfg.seed)),
        workers=int(raw.get("workers", cfg.workers)),
        evaluation_budget=int(raw.get("evaluation_budget", cfg.evaluation_budget)),
    )

    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg.validate()
