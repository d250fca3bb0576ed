"""Micro-scale GNN trainer: genome decoding, forward/backward passes,
full-batch Adam training with early stopping, and the macro-F1 fitness.

Everything runs in 64-bit floats on numpy/scipy so analytic gradients can be
checked against finite differences, and a whole training fits in
milliseconds-to-seconds at desk scale.  Models are decoded from a genome as

    input projection (f -> h, no bias, no activation)
    one stage per gene: P = neighborhood aggregation, T = h x h affine map
        followed by the gene's activation
    classifier head (h -> C) with log-softmax

Dropout is active only in training mode: on the raw input features, after
every stage except the last, and immediately before the head.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .genome import Genome, T_VARIANTS
from .graphdata import GraphDataset, NormalizedAdjacency
from .tuning import HyperparamConfig

logger = logging.getLogger(__name__)

DEFAULT_MAX_EPOCHS = 300
DEFAULT_PATIENCE = 30

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _d_relu(z):
    return (z > 0).astype(np.float64)


def _d_elu(z):
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _d_sigmoid(z):
    s = expit(z)
    return s * (1.0 - s)


def _d_tanh(z):
    t = np.tanh(z)
    return 1.0 - t * t


# name -> (activation, derivative w.r.t. the pre-activation)
ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), _d_relu),
    "linear": (lambda z: z, lambda z: np.ones_like(z)),
    "elu": (lambda z: np.where(z > 0, z, np.expm1(np.minimum(z, 0.0))), _d_elu),
    "sigmoid": (expit, _d_sigmoid),
    "tanh": (np.tanh, _d_tanh),
    "relu6": (
        lambda z: np.clip(z, 0.0, 6.0),
        lambda z: ((z > 0) & (z < 6)).astype(np.float64),
    ),
    "softplus": (lambda z: np.logaddexp(0.0, z), expit),
    "leaky_relu": (
        lambda z: np.where(z > 0, z, 0.01 * z),
        lambda z: np.where(z > 0, 1.0, 0.01),
    ),
}

assert set(ACTIVATIONS) == set(T_VARIANTS)


def propagate(variant: str, h: np.ndarray, adj: NormalizedAdjacency) -> np.ndarray:
    """Apply one propagation variant to node features h (n x d).

    gcn multiplies by the symmetric-normalized adjacency; the sage variants
    aggregate over the closed neighborhood N(v) + {v}, so isolated nodes
    fall back to their own features.
    """
    out, _ = _propagate_cached(variant, h, adj)
    return out


def _propagate_cached(variant, h, adj):
    if variant == "gcn":
        return adj.gcn_op @ h, None
    if variant == "sage_mean":
        return adj.mean_op @ h, None
    if variant == "sage_sum":
        return adj.sum_op @ h, None
    if variant == "sage_max":
        gathered = h[adj.closed_index]  # (n, k, d)
        arg = np.argmax(gathered, axis=1)  # (n, d)
        take = np.take_along_axis(adj.closed_index, arg, axis=1)  # source node ids
        out = np.take_along_axis(gathered, arg[:, None, :], axis=1)[:, 0, :]
        return out, take
    raise ValueError(f"unknown propagation variant {variant!r}")


def _propagate_backward(variant, grad, adj, cache, d):
    if variant == "gcn":
        return adj.gcn_op @ grad  # symmetric
    if variant == "sage_mean":
        return adj.mean_op_t @ grad
    if variant == "sage_sum":
        return adj.sum_op @ grad  # symmetric
    if variant == "sage_max":
        out = np.zeros((adj.n_nodes, d))
        flat = cache.ravel() * d + np.tile(np.arange(d), adj.n_nodes)
        np.add.at(out.ravel(), flat, grad.ravel())
        return out
    raise ValueError(f"unknown propagation variant {variant!r}")


def transform(variant: str, weight: np.ndarray, bias: np.ndarray, h: np.ndarray) -> np.ndarray:
    """activation(h @ weight + bias) for one transformation variant."""
    act, _ = ACTIVATIONS[variant]
    return act(h @ weight + bias)


@dataclass(frozen=True)
class StagePlan:
    kind: str  # "P" or "T"
    variant: str  # operation name


@dataclass(frozen=True)
class ModelPlan:
    """Deterministic compilation of (genome, hyperparameters) for a dataset
    shape: the stage list plus every parameter's name and shape."""

    in_dim: int
    hidden_dim: int
    n_classes: int
    stages: tuple[StagePlan, ...]
    hp: HyperparamConfig

    @property
    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        h = self.hidden_dim
        shapes = [("w_in", (self.in_dim, h))]
        for i, stage in enumerate(self.stages):
            if stage.kind == "T":
                shapes.append((f"w_{i}", (h, h)))
                shapes.append((f"b_{i}", (h,)))
        shapes.append(("w_out", (h, self.n_classes)))
        shapes.append(("b_out", (self.n_classes,)))
        return shapes

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_shapes)


def compile_plan(
    genome: Genome, hp: HyperparamConfig, in_dim: int, n_classes: int
) -> ModelPlan:
    """Decode a genome into a trainable model plan.

    Every T gene gets its own independent weight matrix, so the parameter
    count is in_dim*h + n_T*(h*h + h) + h*C + C.
    """
    if hp.hidden_dim < 1:
        raise ValueError("hidden_dim must be >= 1")
    stages = tuple(StagePlan(g.kind, g.name) for g in genome.genes)
    return ModelPlan(in_dim, hp.hidden_dim, n_classes, stages, hp)


def init_params(plan: ModelPlan, rng: np.random.Generator) -> list[np.ndarray]:
    """Seeded Glorot-uniform weights, zero biases."""
    params = []
    for name, shape in plan.param_shapes:
        if len(shape) == 1:
            params.append(np.zeros(shape))
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params.append(rng.uniform(-limit, limit, size=shape))
    return params


@dataclass
class DropoutMasks:
    """Inverted-dropout scale arrays (mask / keep-probability); None entries
    mean the slot is inactive."""

    input_scale: np.ndarray | None
    middle_scales: list
    overall_scale: np.ndarray | None


def make_dropout_masks(
    plan: ModelPlan, n_nodes: int, rng: np.random.Generator
) -> DropoutMasks:
    hp = plan.hp

    def draw(p, shape):
        if p <= 0.0:
            return None
        return (rng.random(shape) >= p) / (1.0 - p)

    n_middle = max(len(plan.stages) - 1, 0)
    return DropoutMasks(
        input_scale=draw(hp.forward_dropout, (n_nodes, plan.in_dim)),
        middle_scales=[
            draw(hp.middle_dropout, (n_nodes, plan.hidden_dim)) for _ in range(n_middle)
        ],
        overall_scale=draw(hp.overall_dropout, (n_nodes, plan.hidden_dim)),
    )


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(
    plan: ModelPlan,
    params: list[np.ndarray],
    features: np.ndarray,
    adj: NormalizedAdjacency,
    dropout: DropoutMasks | None = None,
) -> np.ndarray:
    """Log-probabilities per node.  Evaluation mode when dropout is None."""
    logp, _ = _forward_cached(plan, params, features, adj, dropout)
    return logp


def _forward_cached(plan, params, features, adj, dropout):
    it = iter(params)
    w_in = next(it)
    x0 = features
    if dropout is not None and dropout.input_scale is not None:
        x0 = features * dropout.input_scale
    h = x0 @ w_in
    last = len(plan.stages) - 1
    stage_caches = []
    for i, stage in enumerate(plan.stages):
        if stage.kind == "P":
            out, take = _propagate_cached(stage.variant, h, adj)
            stage_caches.append(("P", stage.variant, take, None, None))
        else:
            w, b = next(it), next(it)
            z = h @ w + b
            act, _ = ACTIVATIONS[stage.variant]
            out = act(z)
            stage_caches.append(("T", stage.variant, h, z, w))
        if dropout is not None and i < last:
            scale = dropout.middle_scales[i]
            if scale is not None:
                out = out * scale
        h = out
    if dropout is not None and dropout.overall_scale is not None:
        h = h * dropout.overall_scale
    w_out, b_out = next(it), next(it)
    logits = h @ w_out + b_out
    logp = _log_softmax(logits)
    return logp, (x0, stage_caches, h)


def nll_loss(logp: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Mean negative log-likelihood over the masked nodes."""
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise ValueError("loss mask selects no nodes")
    return float(-logp[idx, labels[idx]].mean())


def loss_and_grads(
    plan: ModelPlan,
    params: list[np.ndarray],
    features: np.ndarray,
    adj: NormalizedAdjacency,
    labels: np.ndarray,
    mask: np.ndarray,
    dropout: DropoutMasks | None = None,
) -> tuple[float, list[np.ndarray]]:
    """NLL loss on the masked nodes and its gradient for every parameter."""
    logp, (x0, stage_caches, h_head) = _forward_cached(
        plan, params, features, adj, dropout
    )
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise ValueError("loss mask selects no nodes")
    loss = float(-logp[idx, labels[idx]].mean())

    n, c = logp.shape
    d_logits = np.zeros((n, c))
    d_logits[idx] = np.exp(logp[idx])
    d_logits[idx, labels[idx]] -= 1.0
    d_logits[idx] /= len(idx)

    w_out = params[-2]
    grads = [None] * len(params)
    grads[-2] = h_head.T @ d_logits
    grads[-1] = d_logits.sum(axis=0)
    grad = d_logits @ w_out.T

    if dropout is not None and dropout.overall_scale is not None:
        grad = grad * dropout.overall_scale

    # Walk the parameter list backwards in step with the stages; the last
    # T-stage (weight, bias) pair sits just before the head parameters.
    p_idx = len(params) - 4
    last = len(plan.stages) - 1
    for i in range(len(plan.stages) - 1, -1, -1):
        if dropout is not None and i < last:
            scale = dropout.middle_scales[i]
            if scale is not None:
                grad = grad * scale
        kind, variant, a, z, w = stage_caches[i]
        if kind == "P":
            grad = _propagate_backward(variant, grad, adj, a, grad.shape[1])
        else:
            _, dact = ACTIVATIONS[variant]
            dz = grad * dact(z)
            grads[p_idx] = a.T @ dz  # weight
            grads[p_idx + 1] = dz.sum(axis=0)  # bias
            grad = dz @ w.T
            p_idx -= 2
    grads[0] = x0.T @ grad
    return loss, grads


@dataclass
class TrainedModel:
    """Best-epoch snapshot of a training run plus its full trace."""

    plan: ModelPlan
    params: list[np.ndarray]
    best_epoch: int
    best_val_f1: float
    trace: list[tuple[int, float, float]]  # (epoch, train_loss, val_macro_f1)
    diverged: bool = False
    stopped_epoch: int = 0


def macro_f1(pred: np.ndarray, truth: np.ndarray, n_classes: int) -> float:
    """Unweighted mean of per-class F1 over all n_classes classes.

    A class with a zero precision/recall denominator contributes F1 = 0, so
    collapsed predictors are penalized rather than skipped.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have equal length")
    if pred.size == 0:
        raise ValueError("macro_f1 of empty input")
    hits = pred == truth
    tp = np.bincount(truth[hits], minlength=n_classes)[:n_classes].astype(np.float64)
    pred_count = np.bincount(pred, minlength=n_classes)[:n_classes].astype(np.float64)
    truth_count = np.bincount(truth, minlength=n_classes)[:n_classes].astype(np.float64)
    precision = np.divide(
        tp, pred_count, out=np.zeros(n_classes), where=pred_count > 0
    )
    recall = np.divide(
        tp, truth_count, out=np.zeros(n_classes), where=truth_count > 0
    )
    pr = precision + recall
    f1 = np.divide(2.0 * precision * recall, pr, out=np.zeros(n_classes), where=pr > 0)
    return float(f1.mean())


def _masked_f1(plan, params, ds, adj, mask):
    logp = forward(plan, params, ds.features, adj)
    pred = logp.argmax(axis=1)
    idx = np.flatnonzero(mask)
    return macro_f1(pred[idx], ds.labels[idx], ds.n_classes)


def train(
    plan: ModelPlan,
    ds: GraphDataset,
    max_epochs: int = DEFAULT_MAX_EPOCHS,
    patience: int = DEFAULT_PATIENCE,
    seed: int = 0,
) -> TrainedModel:
    """Full-batch training with Adam, decoupled weight decay, and early
    stopping on validation macro-F1.

    The learning rate is fixed for the whole run.  Training stops when the
    validation score has not improved for `patience` epochs or at
    `max_epochs`, whichever comes first, and the best-epoch parameters are
    restored.  A non-finite loss aborts the run and flags the model as
    diverged (fitness 0), signalling degenerate hyperparameters rather than
    a crash.
    """
    if max_epochs < 1:
        raise ValueError("max_epochs must be >= 1")
    if not ds.train_mask.any() or not ds.val_mask.any():
        raise ValueError("dataset needs non-empty train and validation masks")
    hp = plan.hp
    rng = np.random.default_rng(seed)
    params = init_params(plan, rng)
    adj = ds.normalized()

    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    lr, wd = hp.learning_rate, hp.weight_decay

    trace: list[tuple[int, float, float]] = []
    best_params = [p.copy() for p in params]
    best_f1 = -np.inf
    best_epoch = 0
    stale = 0
    epoch = 0
    # Degenerate hyperparameters may overflow before the loss turns
    # non-finite; divergence is detected on the loss, not via warnings.
    with np.errstate(all="ignore"):
        for epoch in range(1, max_epochs + 1):
            masks = make_dropout_masks(plan, ds.n_nodes, rng)
            loss, grads = loss_and_grads(
                plan, params, ds.features, adj, ds.labels, ds.train_mask,
                dropout=masks,
            )
            if not np.isfinite(loss):
                logger.warning(
                    "non-finite training loss at epoch %d; aborting trial", epoch
                )
                return TrainedModel(
                    plan, best_params, best_epoch, 0.0, trace, diverged=True,
                    stopped_epoch=epoch,
                )
            for j, g in enumerate(grads):
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g
                m_hat = m[j] / (1.0 - ADAM_BETA1**epoch)
                v_hat = v[j] / (1.0 - ADAM_BETA2**epoch)
                params[j] = params[j] - lr * (
                    m_hat / (np.sqrt(v_hat) + ADAM_EPS) + wd * params[j]
                )
            val_f1 = _masked_f1(plan, params, ds, adj, ds.val_mask)
            trace.append((epoch, loss, val_f1))
            if val_f1 > best_f1:
                best_f1 = val_f1
                best_epoch = epoch
                best_params = [p.copy() for p in params]
                stale = 0
            else:
                stale += 1
                if stale >= patience:
                    break
    return TrainedModel(
        plan, best_params, best_epoch, float(best_f1), trace, stopped_epoch=epoch
    )


@dataclass(frozen=True)
class FitnessValue:
    macro_f1: float
    evaluated_on: str = "validation"

    def __post_init__(self):
        if not 0.0 <= self.macro_f1 <= 1.0:
            raise ValueError(f"macro-F1 outside [0, 1]: {self.macro_f1}")


def evaluate_fitness(
    genome: Genome,
    hp: HyperparamConfig,
    ds: GraphDataset,
    seed: int = 0,
    max_epochs: int = DEFAULT_MAX_EPOCHS,
    patience: int = DEFAULT_PATIENCE,
) -> FitnessValue:
    """Best validation macro-F1 of the genome trained under hp.

    Deterministic per (genome, hp, seed); training failures score 0 with a
    logged reason instead of raising.
    """
    plan = compile_plan(genome, hp, ds.n_features, ds.n_classes)
    try:
        model = train(plan, ds, max_epochs=max_epochs, patience=patience, seed=seed)
    except FloatingPointError as exc:  # pragma: no cover - defensive
        logger.warning("training failed for %s: %s", genome, exc)
        return FitnessValue(0.0)
    if model.diverged:
        return FitnessValue(0.0)
    return FitnessValue(model.best_val_f1)


def score_test_set(model: TrainedModel, ds: GraphDataset) -> float:
    """Macro-F1 of the best-epoch snapshot on the held-out test mask."""
    return _masked_f1(model.plan, model.params, ds, ds.normalized(), ds.test_mask)


def save_params(path, plan: ModelPlan, params: list[np.ndarray]) -> None:
    """Flat little-endian float64 binary with a JSON header line describing
    the parameter names and shapes."""
    header = {
        "names": [n for n, _ in plan.param_shapes],
        "shapes": [list(s) for _, s in plan.param_shapes],
        "dtype": "<f8",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for p in params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        out = {}
        for name, shape in zip(header["names"], header["shapes"]):
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return out


def write_trace_csv(path, trace) -> None:
    """CSV training trace: epoch, train_loss, val_macro_f1."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_macro_f1"])
        for epoch, loss, f1 in trace:
            writer.writerow([epoch, repr(loss), repr(f1)])
