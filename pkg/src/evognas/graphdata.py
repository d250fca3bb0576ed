"""Graph ingestion, synthetic benchmark generation, splits, and adjacency
normalization.

Datasets are immutable after construction and safe to share across parallel
evaluation workers.  File formats:

  edge file    whitespace-separated "u v" per line, '#' comments allowed
  feature file CSV, one node per row, row index = node id
  label file   CSV "node_id,class_id"
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, IngestionError, SplitError


@dataclass(frozen=True, eq=False)
class GraphDataset:
    """An undirected node-classification graph.

    edges holds each undirected edge once as (u, v) with u < v; labels use
    -1 for unlabeled nodes; the three masks are disjoint and may not cover
    every node.
    """

    n_nodes: int
    edges: np.ndarray  # (E, 2) int64, canonical u < v
    features: np.ndarray  # (n_nodes, f) float64
    labels: np.ndarray  # (n_nodes,) int64, -1 = unlabeled
    n_classes: int
    train_mask: np.ndarray = field(default=None)
    val_mask: np.ndarray = field(default=None)
    test_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("train_mask", "val_mask", "test_mask"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, np.zeros(self.n_nodes, dtype=bool))
        if self.edges.size and (
            self.edges.min() < 0 or self.edges.max() >= self.n_nodes
        ):
            raise ValueError("edge endpoint outside [0, n_nodes)")
        if self.features.shape[0] != self.n_nodes:
            raise ValueError("feature row count != n_nodes")
        if self.labels.shape[0] != self.n_nodes:
            raise ValueError("label count != n_nodes")
        overlap = (
            (self.train_mask & self.val_mask)
            | (self.train_mask & self.test_mask)
            | (self.val_mask & self.test_mask)
        )
        if overlap.any():
            raise ValueError("train/val/test masks overlap")
        object.__setattr__(self, "_adjacency_cache", None)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def normalized(self) -> "NormalizedAdjacency":
        """Normalized adjacency with aggregation operators, built once."""
        cached = object.__getattribute__(self, "_adjacency_cache")
        if cached is None:
            cached = normalize_adjacency(self)
            object.__setattr__(self, "_adjacency_cache", cached)
        return cached


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """Symmetric-normalized adjacency D^-1/2 (A+I) D^-1/2 in coordinate form,
    plus the per-variant aggregation operators derived from it."""

    n_nodes: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    neighbors: tuple  # per-node neighbor id arrays, self excluded
    gcn_op: sp.csr_matrix  # D^-1/2 (A+I) D^-1/2, symmetric
    sum_op: sp.csr_matrix  # A + I (binary)
    mean_op: sp.csr_matrix  # row-normalized A + I
    mean_op_t: sp.csr_matrix  # transpose of mean_op, for backprop
    closed_index: np.ndarray  # (n, max_deg+1) padded closed-neighborhood ids


def canonicalize_edges(edges: np.ndarray, n_nodes: int) -> np.ndarray:
    """Symmetrize, drop self-loops, deduplicate; each edge once as u < v."""
    if len(edges) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.asarray(edges, dtype=np.int64)
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    keep = lo != hi
    pairs = np.unique(np.stack([lo[keep], hi[keep]], axis=1), axis=0)
    return pairs.reshape(-1, 2)


def _parse_int(tok: str, path, line_no: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise IngestionError(path, line_no, f"{what} is not an integer: {tok!r}")


def _open_text(path):
    try:
        return open(path, encoding="utf-8")
    except OSError as exc:
        raise IngestionError(path, 0, f"cannot open: {exc.strerror or exc}")


def load_dataset(edge_file, feature_file, label_file) -> GraphDataset:
    """Read a dataset from the three on-disk files.

    The feature file defines n_nodes; edge and label ids must fall inside
    [0, n_nodes).  Errors name the offending file and line.
    """
    features = _read_features(feature_file)
    n_nodes = features.shape[0]
    edges = _read_edges(edge_file, n_nodes)
    labels, n_classes = _read_labels(label_file, n_nodes)
    return GraphDataset(
        n_nodes=n_nodes,
        edges=canonicalize_edges(edges, n_nodes),
        features=features,
        labels=labels,
        n_classes=n_classes,
    )


def _read_features(path) -> np.ndarray:
    rows = []
    width = None
    with _open_text(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise IngestionError(
                    path, line_no, f"expected {width} columns, got {len(cells)}"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise IngestionError(path, line_no, f"non-numeric feature in {line!r}")
    if not rows:
        raise IngestionError(path, 1, "feature file is empty")
    return np.asarray(rows, dtype=np.float64)


def _read_edges(path, n_nodes: int) -> np.ndarray:
    pairs = []
    with _open_text(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            if len(toks) != 2:
                raise IngestionError(
                    path, line_no, f"expected 'u v', got {line!r}"
                )
            u = _parse_int(toks[0], path, line_no, "node id")
            v = _parse_int(toks[1], path, line_no, "node id")
            if not (0 <= u < n_nodes and 0 <= v < n_nodes):
                raise IngestionError(
                    path, line_no, f"node id out of range in edge ({u}, {v})"
                )
            pairs.append((u, v))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _read_labels(path, n_nodes: int) -> tuple[np.ndarray, int]:
    labels = np.full(n_nodes, -1, dtype=np.int64)
    seen = set()
    with _open_text(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != 2:
                raise IngestionError(
                    path, line_no, f"expected 'node_id,class_id', got {line!r}"
                )
            node = _parse_int(cells[0], path, line_no, "node id")
            cls = _parse_int(cells[1], path, line_no, "class id")
            if not 0 <= node < n_nodes:
                raise IngestionError(path, line_no, f"node id {node} out of range")
            if cls < 0:
                raise IngestionError(path, line_no, f"negative class id {cls}")
            if node in seen:
                raise IngestionError(path, line_no, f"duplicate label for node {node}")
            seen.add(node)
            labels[node] = cls
    if not seen:
        raise IngestionError(path, 1, "label file assigns no labels")
    return labels, int(labels.max()) + 1


def make_splits(
    ds: GraphDataset,
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> GraphDataset:
    """Stratified train/val/test masks, deterministic per seed.

    Each class is shuffled independently and split so that every mask size
    is within one node per class of the exact ratio.  Classes with fewer
    than 3 labeled nodes are rejected.
    """
    r_train, r_val, r_test = ratios
    if min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be positive and sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    train = np.zeros(ds.n_nodes, dtype=bool)
    val = np.zeros(ds.n_nodes, dtype=bool)
    test = np.zeros(ds.n_nodes, dtype=bool)
    for cls in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == cls)
        if len(idx) < 3:
            raise SplitError(f"class {cls} has {len(idx)} labeled nodes, need >= 3")
        idx = rng.permutation(idx)
        n_train = int(np.floor(r_train * len(idx) + 0.5))
        n_val = int(np.floor(r_val * len(idx) + 0.5))
        train[idx[:n_train]] = True
        val[idx[n_train : n_train + n_val]] = True
        test[idx[n_train + n_val :]] = True
    return replace(ds, train_mask=train, val_mask=val, test_mask=test)


def generate_sbm(
    blocks,
    p_in: float,
    p_out: float,
    n_features: int,
    noise: float,
    seed: int = 0,
    mean_scale: float = 1.0,
) -> GraphDataset:
    """Stochastic-block-model graph with Gaussian block-mean features.

    Node labels are block ids; features are mutually orthogonal class-mean
    vectors (basis vectors scaled by mean_scale) plus iid Gaussian noise of
    the given standard deviation.  Edges are Bernoulli(p_in) within a block
    and Bernoulli(p_out) across blocks.  No masks are assigned.
    """
    blocks = [int(b) for b in blocks]
    if len(blocks) < 2:
        raise ConfigError("need at least 2 blocks")
    if min(blocks) < 1:
        raise ConfigError("block sizes must be positive")
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ConfigError("edge probabilities must lie in [0, 1]")
    if noise < 0:
        raise ConfigError("feature noise must be non-negative")
    n_classes = len(blocks)
    if n_features < n_classes:
        raise ConfigError(
            f"need n_features >= {n_classes} for orthogonal class means"
        )
    n = sum(blocks)
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), blocks)
    rng = np.random.default_rng(seed)

    prob = np.full((n, n), p_out, dtype=np.float64)
    same = labels[:, None] == labels[None, :]
    prob[same] = p_in
    draw = rng.random((n, n))
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    adj = upper & (draw < prob)
    u, v = np.nonzero(adj)
    edges = np.stack([u, v], axis=1).astype(np.int64)

    means = np.zeros((n_classes, n_features))
    means[np.arange(n_classes), np.arange(n_classes)] = mean_scale
    features = means[labels] + rng.normal(0.0, noise, size=(n, n_features))

    return GraphDataset(
        n_nodes=n,
        edges=edges,
        features=features,
        labels=labels,
        n_classes=n_classes,
    )


def normalize_adjacency(ds: GraphDataset) -> NormalizedAdjacency:
    """Add self-loops, apply symmetric normalization, and precompute the
    aggregation operators used by the propagation variants."""
    n = ds.n_nodes
    if len(ds.edges):
        sym_r = np.concatenate([ds.edges[:, 0], ds.edges[:, 1]])
        sym_c = np.concatenate([ds.edges[:, 1], ds.edges[:, 0]])
    else:
        sym_r = np.zeros(0, dtype=np.int64)
        sym_c = np.zeros(0, dtype=np.int64)
    loop = np.arange(n, dtype=np.int64)
    rows = np.concatenate([sym_r, loop])
    cols = np.concatenate([sym_c, loop])

    degree_hat = np.bincount(rows, minlength=n).astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(degree_hat)
    values = inv_sqrt[rows] * inv_sqrt[cols]

    ones = np.ones(len(rows), dtype=np.float64)
    sum_op = sp.csr_matrix((ones, (rows, cols)), shape=(n, n))
    gcn_op = sp.csr_matrix((values, (rows, cols)), shape=(n, n))
    mean_op = sp.csr_matrix((ones / degree_hat[rows], (rows, cols)), shape=(n, n))
    mean_op_t = mean_op.T.tocsr()

    neighbors = [sym_c[sym_r == v] for v in range(n)]
    neighbors = tuple(np.sort(a) for a in neighbors)
    max_closed = 1 + max((len(a) for a in neighbors), default=0)
    closed_index = np.tile(loop[:, None], (1, max_closed))
    for v, nbrs in enumerate(neighbors):
        closed_index[v, 1 : 1 + len(nbrs)] = nbrs

    return NormalizedAdjacency(
        n_nodes=n,
        rows=rows,
        cols=cols,
        values=values,
        neighbors=neighbors,
        gcn_op=gcn_op,
        sum_op=sum_op,
        mean_op=mean_op,
        mean_op_t=mean_op_t,
        closed_index=closed_index,
    )


def write_dataset(ds: GraphDataset, out_dir) -> dict[str, str]:
    """Emit the dataset as edge/feature/label files (see module docstring).

    Returns the written paths keyed by role.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "edges": os.path.join(out_dir, "edges.txt"),
        "features": os.path.join(out_dir, "features.csv"),
        "labels": os.path.join(out_dir, "labels.csv"),
    }
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        for u, v in ds.edges:
            fh.write(f"{u} {v}\n")
    with open(paths["features"], "w", encoding="utf-8") as fh:
        for row in ds.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    with open(paths["labels"], "w", encoding="utf-8") as fh:
        for node in range(ds.n_nodes):
            if ds.labels[node] >= 0:
                fh.write(f"{node},{ds.labels[node]}\n")
    return paths
