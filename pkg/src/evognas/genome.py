"""Architecture genomes and their genetic variation operators.

A genome is a variable-length sequence of propagation (P) and transformation
(T) genes drawn from a 12-symbol alphabet: 4 propagation variants and 8
activation variants.  Genomes render to human-readable strings such as
"P3-T4-P1-T2" (1-based variant indices) and support single-point crossover
plus four mutations (add, remove, exchange, alter).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

P_VARIANTS: tuple[str, ...] = ("gcn", "sage_mean", "sage_max", "sage_sum")
T_VARIANTS: tuple[str, ...] = (
    "relu",
    "linear",
    "elu",
    "sigmoid",
    "tanh",
    "relu6",
    "softplus",
    "leaky_relu",
)

N_P = len(P_VARIANTS)
N_T = len(T_VARIANTS)

DEFAULT_LENGTH_BOUNDS: tuple[int, int] = (3, 15)

# Bound violations during crossover/mutation are repaired by redrawing the
# cut points / mutation type this many times before giving up and returning
# the input unchanged.
REPAIR_ATTEMPTS = 8

_TOKEN_RE = re.compile(r"^([PT])([1-9][0-9]*)$")


@dataclass(frozen=True)
class OperationGene:
    """One genome position: a P or T operation variant (0-based index)."""

    kind: str
    variant: int

    def __post_init__(self):
        if self.kind not in ("P", "T"):
            raise ValueError(f"gene kind must be 'P' or 'T', got {self.kind!r}")
        limit = N_P if self.kind == "P" else N_T
        if not 0 <= self.variant < limit:
            raise ValueError(
                f"{self.kind} variant index {self.variant} outside [0, {limit})"
            )

    @property
    def token(self) -> str:
        """1-based textual form, e.g. 'P3'."""
        return f"{self.kind}{self.variant + 1}"

    @property
    def name(self) -> str:
        """Operation name, e.g. 'sage_max' or 'sigmoid'."""
        catalog = P_VARIANTS if self.kind == "P" else T_VARIANTS
        return catalog[self.variant]


FULL_ALPHABET: tuple[OperationGene, ...] = tuple(
    OperationGene("P", i) for i in range(N_P)
) + tuple(OperationGene("T", j) for j in range(N_T))

# Ablation alphabet: plain graph-convolution propagation and ReLU only.
RESTRICTED_ALPHABET: tuple[OperationGene, ...] = (
    OperationGene("P", 0),
    OperationGene("T", 0),
)


@dataclass(frozen=True)
class Genome:
    """An ordered, immutable sequence of operation genes."""

    genes: tuple[OperationGene, ...]

    def __len__(self) -> int:
        return len(self.genes)

    def __str__(self) -> str:
        return render(self)

    @property
    def n_transforms(self) -> int:
        return sum(1 for g in self.genes if g.kind == "T")


def render(genome: Genome) -> str:
    """Canonical string form: uppercase tokens joined with '-', 1-based."""
    return "-".join(g.token for g in genome.genes)


def parse(text: str) -> Genome:
    """Inverse of :func:`render`.  Rejects unknown or malformed tokens."""
    if not text:
        raise ValueError("empty genome string")
    genes = []
    for token in text.split("-"):
        m = _TOKEN_RE.match(token)
        if m is None:
            raise ValueError(f"malformed genome token {token!r}")
        kind, idx = m.group(1), int(m.group(2))
        limit = N_P if kind == "P" else N_T
        if not 1 <= idx <= limit:
            raise ValueError(f"unknown {kind} variant in token {token!r}")
        genes.append(OperationGene(kind, idx - 1))
    return Genome(tuple(genes))


def _check_bounds(bounds: tuple[int, int]) -> tuple[int, int]:
    d_min, d_max = bounds
    if d_min < 1 or d_max < d_min:
        raise ConfigError(f"invalid genome length bounds {bounds}")
    return d_min, d_max


def random_genome(
    rng: np.random.Generator,
    bounds: tuple[int, int] = DEFAULT_LENGTH_BOUNDS,
    alphabet: tuple[OperationGene, ...] = FULL_ALPHABET,
) -> Genome:
    """Uniform-random genome: length uniform over [d_min, d_max], genes
    uniform over the alphabet."""
    d_min, d_max = _check_bounds(bounds)
    length = int(rng.integers(d_min, d_max + 1))
    picks = rng.integers(0, len(alphabet), size=length)
    return Genome(tuple(alphabet[int(i)] for i in picks))


def crossover_single_point(
    parent_a: Genome,
    parent_b: Genome,
    rng: np.random.Generator,
    bounds: tuple[int, int] = DEFAULT_LENGTH_BOUNDS,
) -> tuple[Genome, Genome, bool]:
    """Single-point crossover with an independent cut per parent.

    Each parent is cut at a uniform position in [1, len-1] and the tails are
    exchanged, so offspring lengths may differ from their parents'.  Draw
    order: cut for parent_a, then cut for parent_b, redrawn as a pair on
    bound violations.

    Returns (child_a, child_b, performed).  If either parent is shorter than
    2 genes, or no in-bounds offspring pair is found within REPAIR_ATTEMPTS
    redraws, the parents are returned unchanged with performed=False.
    """
    d_min, d_max = _check_bounds(bounds)
    if len(parent_a) < 2 or len(parent_b) < 2:
        return parent_a, parent_b, False
    for _ in range(REPAIR_ATTEMPTS):
        cut_a = int(rng.integers(1, len(parent_a)))
        cut_b = int(rng.integers(1, len(parent_b)))
        child_a = parent_a.genes[:cut_a] + parent_b.genes[cut_b:]
        child_b = parent_b.genes[:cut_b] + parent_a.genes[cut_a:]
        if d_min <= len(child_a) <= d_max and d_min <= len(child_b) <= d_max:
            return Genome(child_a), Genome(child_b), True
    return parent_a, parent_b, False


def mutate(
    genome: Genome,
    rng: np.random.Generator,
    bounds: tuple[int, int] = DEFAULT_LENGTH_BOUNDS,
    alphabet: tuple[OperationGene, ...] = FULL_ALPHABET,
) -> Genome:
    """Apply exactly one of four mutations, chosen uniformly.

    Types (in draw order 0..3): add inserts a uniform-random gene at a
    uniform position; remove deletes a uniform-random gene; exchange swaps
    two distinct uniform-random positions; alter replaces a uniform-random
    gene with a different uniform-random gene.

    Per-type draw order after the type index:
      add:      position in [0, len], alphabet index
      remove:   position in [0, len)
      exchange: position i in [0, len), then j in [0, len-1) skipping i
      alter:    position in [0, len), replacement index in [0, |alphabet|-1)
                skipping the current gene

    A result that would leave [d_min, d_max] causes the mutation type to be
    redrawn, up to REPAIR_ATTEMPTS times; after that the genome is returned
    unchanged.
    """
    d_min, d_max = _check_bounds(bounds)
    genes = genome.genes
    n = len(genes)
    for _ in range(REPAIR_ATTEMPTS):
        op = int(rng.integers(0, 4))
        if op == 0:  # add
            if n + 1 > d_max:
                continue
            pos = int(rng.integers(0, n + 1))
            gene = alphabet[int(rng.integers(0, len(alphabet)))]
            return Genome(genes[:pos] + (gene,) + genes[pos:])
        if op == 1:  # remove
            if n - 1 < d_min:
                continue
            pos = int(rng.integers(0, n))
            return Genome(genes[:pos] + genes[pos + 1 :])
        if op == 2:  # exchange
            if n < 2:
                continue
            i = int(rng.integers(0, n))
            j = int(rng.integers(0, n - 1))
            if j >= i:
                j += 1
            out = list(genes)
            out[i], out[j] = out[j], out[i]
            return Genome(tuple(out))
        # alter
        pos = int(rng.integers(0, n))
        current = genes[pos]
        candidates = [g for g in alphabet if g != current]
        if not candidates:
            continue
        gene = candidates[int(rng.integers(0, len(candidates)))]
        return Genome(genes[:pos] + (gene,) + genes[pos + 1 :])
    return genome
