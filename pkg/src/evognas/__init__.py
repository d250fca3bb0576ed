"""Evolutionary architecture search for micro-scale graph neural networks.

The package searches over variable-length sequences of propagation and
transformation operations with an adaptive genetic optimizer, trains each
candidate with a built-in full-batch trainer, and periodically re-tunes the
training hyperparameters with a Tree-structured Parzen Estimator.
"""

from .config import FilesSpec, SbmSpec, SearchConfig, build_dataset, load_config
from .engine import (
    FitnessValue,
    ModelPlan,
    TrainedModel,
    compile_plan,
    evaluate_fitness,
    macro_f1,
    propagate,
    train,
    transform,
)
from .errors import (
    CheckpointError,
    ConfigError,
    EvognasError,
    IngestionError,
    SplitError,
)
from .evolution import (
    Population,
    StageParams,
    StageSchedule,
    SwitchState,
    environmental_selection,
    generate_offspring,
    k_tournament,
    stage_params,
    update_delta_fitness,
)
from .genome import (
    FULL_ALPHABET,
    Genome,
    OperationGene,
    RESTRICTED_ALPHABET,
    crossover_single_point,
    mutate,
    parse,
    random_genome,
    render,
)
from .graphdata import (
    GraphDataset,
    NormalizedAdjacency,
    generate_sbm,
    load_dataset,
    make_splits,
    normalize_adjacency,
)
from .search import (
    SearchDriver,
    SearchResult,
    run_random_baseline,
    run_search,
)
from .tuning import (
    Dimension,
    HyperparamConfig,
    HyperparamSpace,
    TrialHistory,
    fit_densities,
    propose,
    split_history,
    tune,
)

__version__ = "0.1.0"
