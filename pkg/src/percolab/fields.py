"""Seeded uniform labels per vertex and the open-site patterns they induce.

One label field realizes Bernoulli site percolation for every p at once:
a vertex is p-open iff its label is <= p, so the level sets are nested.
Labels are a counter-based hash of (stream key, replica, vertex), which
means any single label can be evaluated without generating the rest.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels as K
from .errors import UsageError
from .graphs import FiniteGraph

STREAMS = ("primary", "reinforcement", "forest")


@dataclass(frozen=True)
class Seed:
    master: int
    stream: str = "primary"
    replica: int = 0

    def __post_init__(self):
        if self.stream not in STREAMS:
            raise UsageError(f"unknown stream {self.stream!r}; expected one of {STREAMS}")
        if self.master < 0 or not 0 <= self.replica < 2**32:
            raise UsageError("master must be >= 0 and replica in [0, 2**32)")

    def with_stream(self, stream: str) -> "Seed":
        return Seed(self.master, stream, self.replica)

    def with_replica(self, replica: int) -> "Seed":
        return Seed(self.master, self.stream, replica)

    @property
    def keys(self) -> tuple[np.uint64, np.uint64]:
        return stream_keys(self.master, self.stream)


@lru_cache(maxsize=256)
def stream_keys(master: int, stream: str) -> tuple[np.uint64, np.uint64]:
    words = np.random.SeedSequence([master, STREAMS.index(stream)]).generate_state(2, np.uint64)
    return np.uint64(words[0]), np.uint64(words[1])


@dataclass(frozen=True, eq=False)
class Configuration:
    """A set of open vertices on a particular graph, stored as a boolean mask."""

    mask: np.ndarray
    graph_key: str

    def __post_init__(self):
        self.mask.setflags(write=False)

    @classmethod
    def from_vertices(cls, g: FiniteGraph, vertices) -> "Configuration":
        mask = np.zeros(g.vertex_count, dtype=bool)
        idx = np.asarray(list(vertices), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= g.vertex_count):
            raise UsageError("configuration contains vertices outside the graph")
        mask[idx] = True
        return cls(mask, g.key)

    @classmethod
    def empty(cls, g: FiniteGraph) -> "Configuration":
        return cls(np.zeros(g.vertex_count, dtype=bool), g.key)

    @classmethod
    def full(cls, g: FiniteGraph) -> "Configuration":
        return cls(np.ones(g.vertex_count, dtype=bool), g.key)

    @property
    def members(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def as_set(self) -> set[int]:
        return set(self.members.tolist())

    def __len__(self):
        return int(self.mask.sum())

    def __contains__(self, v):
        return bool(self.mask[v])

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.graph_key == other.graph_key and np.array_equal(self.mask, other.mask)

    __hash__ = None

    def issubset(self, other: "Configuration") -> bool:
        _same_graph(self, other)
        return not np.any(self.mask & ~other.mask)

    def __or__(self, other):
        return config_ops(self, other, "union")

    def __and__(self, other):
        return config_ops(self, other, "intersection")

    def __sub__(self, other):
        return config_ops(self, other, "difference")

    def __repr__(self):
        shown = self.members[:12].tolist()
        tail = ", ..." if len(self) > 12 else ""
        return f"Configuration({self.graph_key}, {shown}{tail})"


def _same_graph(a: Configuration, b: Configuration) -> None:
    if a.graph_key != b.graph_key or a.mask.shape != b.mask.shape:
        raise UsageError(f"configurations live on different graphs: {a.graph_key} vs {b.graph_key}")


def config_ops(a: Configuration, b: Configuration, op: str) -> Configuration:
    _same_graph(a, b)
    if op == "union":
        mask = a.mask | b.mask
    elif op == "difference":
        mask = a.mask & ~b.mask
    elif op == "intersection":
        mask = a.mask & b.mask
    else:
        raise UsageError(f"unknown set operation {op!r}")
    return Configuration(mask, a.graph_key)


@dataclass(frozen=True, eq=False)
class LabelField:
    labels: np.ndarray
    seed: Seed
    graph_key: str

    def __post_init__(self):
        self.labels.setflags(write=False)

    def label(self, v: int) -> float:
        """Recompute one vertex's label straight from the seed."""
        k1, k2 = self.seed.keys
        return float(K.label_at(k1, k2, self.seed.replica, v))


def sample_field(g: FiniteGraph, seed: Seed) -> LabelField:
    k1, k2 = seed.keys
    labels = np.empty(g.vertex_count)
    K.fill_labels(k1, k2, seed.replica, labels)
    return LabelField(labels, seed, g.key)


def sample_labels(g: FiniteGraph, seed: Seed, count: int) -> np.ndarray:
    """Labels for replicas ``seed.replica .. seed.replica + count - 1`` as a (count, n) array."""
    k1, k2 = seed.keys
    return K.label_block(k1, k2, seed.replica, count, g.vertex_count)


def check_probability(p, name="p") -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise UsageError(f"{name}={p} is outside [0, 1]")
    return p


def level_set(f: LabelField, p: float) -> Configuration:
    p = check_probability(p)
    return Configuration(f.labels <= p, f.graph_key)


def bernoulli(g: FiniteGraph, seed: Seed, p: float) -> Configuration:
    return level_set(sample_field(g, seed), p)
