"""Undirected labeled graphs, k-hop extraction, edge deletion and GCN normalization."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

Edge = tuple[int, int]


class GraphError(ValueError):
    """Raised for malformed graphs or invalid graph operations."""


def canonical_edge(u: int, v: int) -> Edge:
    u, v = int(u), int(v)
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class LabeledGraph:
    """Immutable undirected graph with node features, labels and motif membership.

    ``edges`` is kept as a sorted tuple of canonical ``(min, max)`` pairs.
    """

    node_count: int
    edges: tuple[Edge, ...]
    features: np.ndarray
    labels: tuple[int, ...]
    motif_nodes: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        n = self.node_count
        if n < 1:
            raise GraphError("graph needs at least one node")
        canon = sorted({canonical_edge(u, v) for u, v in self.edges})
        if len(canon) != len(self.edges):
            raise GraphError("duplicate edges")
        for u, v in canon:
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            if u < 0 or v >= n:
                raise GraphError(f"edge ({u}, {v}) out of range for n={n}")
        feats = np.array(self.features, dtype=float)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise GraphError(f"features must be an {n} x d matrix, got {feats.shape}")
        feats.setflags(write=False)
        if len(self.labels) != n:
            raise GraphError("labels length must equal node count")
        if any(m < 0 or m >= n for m in self.motif_nodes):
            raise GraphError("motif node out of range")
        object.__setattr__(self, "edges", tuple(canon))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", tuple(int(c) for c in self.labels))
        object.__setattr__(self, "motif_nodes", frozenset(int(m) for m in self.motif_nodes))

    @classmethod
    def build(
        cls,
        n: int,
        edges: Iterable[Iterable[int]],
        features=None,
        labels=None,
        motif_nodes=(),
        feature_dim: int = 1,
    ) -> "LabeledGraph":
        """Convenience constructor accepting edges in any orientation."""
        pairs = sorted({canonical_edge(*e) for e in edges})
        if features is None:
            features = np.ones((n, feature_dim))
        if labels is None:
            labels = [0] * n
        return cls(n, tuple(pairs), features, tuple(labels), frozenset(motif_nodes))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @cached_property
    def edge_set(self) -> frozenset[Edge]:
        return frozenset(self.edges)

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        deg.setflags(write=False)
        return deg

    def has_edge(self, u: int, v: int) -> bool:
        return canonical_edge(u, v) in self.edge_set

    def with_edges(self, edges: Iterable[Edge]) -> "LabeledGraph":
        return LabeledGraph(
            self.node_count,
            tuple(sorted(canonical_edge(*e) for e in edges)),
            self.features,
            self.labels,
            self.motif_nodes,
        )

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.node_count, self.node_count))
        if self.edges:
            e = np.asarray(self.edges)
            a[e[:, 0], e[:, 1]] = 1.0
            a[e[:, 1], e[:, 0]] = 1.0
        return a

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n": self.node_count,
            "edges": [list(e) for e in self.edges],
            "features": self.features.tolist(),
            "labels": list(self.labels),
            "motif_nodes": sorted(self.motif_nodes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LabeledGraph":
        n = int(data["n"])
        feats = data.get("features")
        return cls.build(
            n,
            data["edges"],
            features=np.ones((n, 1)) if feats is None else np.asarray(feats, dtype=float),
            labels=data.get("labels"),
            motif_nodes=data.get("motif_nodes", ()),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "LabeledGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_node(g: LabeledGraph, v: int) -> None:
    if not 0 <= v < g.node_count:
        raise GraphError(f"node {v} out of range for n={g.node_count}")


def hop_distances(g: LabeledGraph, v: int, hops: int) -> dict[int, int]:
    """BFS distances from ``v``, truncated at ``hops``."""
    _check_node(g, v)
    if hops < 0:
        raise GraphError("hops must be non-negative")
    dist = {v: 0}
    queue = deque([v])
    while queue:
        u = queue.popleft()
        if dist[u] == hops:
            continue
        for w in g.neighbors[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def khop_subgraph(g: LabeledGraph, v: int, hops: int) -> tuple[frozenset[int], list[Edge]]:
    """Nodes within ``hops`` of ``v`` and the induced edges in canonical order."""
    nodes = frozenset(hop_distances(g, v, hops))
    edges = [e for e in g.edges if e[0] in nodes and e[1] in nodes]
    return nodes, edges


def delete_edges(g: LabeledGraph, s: Iterable[Edge]) -> LabeledGraph:
    removed = {canonical_edge(*e) for e in s}
    missing = removed - g.edge_set
    if missing:
        raise GraphError(f"cannot delete non-existent edges {sorted(missing)[:5]}")
    if not removed:
        return g
    return LabeledGraph(
        g.node_count,
        tuple(e for e in g.edges if e not in removed),
        g.features,
        g.labels,
        g.motif_nodes,
    )


def add_edges(g: LabeledGraph, s: Iterable[Edge]) -> LabeledGraph:
    added = {canonical_edge(*e) for e in s}
    return g.with_edges(g.edge_set | added)


def sample_absent_edges(
    g: LabeledGraph, count: int, rng: np.random.Generator, max_attempts: int | None = None
) -> list[Edge]:
    """Uniformly sample ``count`` distinct node pairs that are not edges of ``g``."""
    n = g.node_count
    capacity = n * (n - 1) // 2 - g.edge_count
    if count > capacity:
        raise GraphError(f"graph too dense: asked for {count} new edges, only {capacity} free pairs")
    if max_attempts is None:
        max_attempts = 100 * count + 1000
    taken = set(g.edge_set)
    new: list[Edge] = []
    attempts = 0
    while len(new) < count:
        if attempts >= max_attempts:
            raise GraphError(
                f"placed {len(new)} of {count} noise edges after {attempts} attempts "
                f"(shortfall {count - len(new)})"
            )
        attempts += 1
        u, v = (int(x) for x in rng.integers(0, n, size=2))
        if u == v:
            continue
        e = canonical_edge(u, v)
        if e in taken:
            continue
        taken.add(e)
        new.append(e)
    return new


def inject_noise_edges(g: LabeledGraph, ratio: float, rng: np.random.Generator) -> LabeledGraph:
    """Add ``round(ratio * |E|)`` random edges between non-adjacent node pairs.

    Noise edges may land anywhere, including inside motifs.
    """
    if not 0.0 <= ratio <= 1.0:
        raise GraphError("noise ratio must be in [0, 1]")
    count = int(round(ratio * g.edge_count))
    if count == 0:
        return g
    return add_edges(g, sample_absent_edges(g, count, rng))


def normalized_adjacency(g: LabeledGraph) -> np.ndarray:
    """Symmetric renormalization D^-1/2 (A + I) D^-1/2 with self-loops."""
    a = g.adjacency()
    a[np.diag_indices_from(a)] = 1.0
    d = 1.0 / np.sqrt(a.sum(axis=1))
    # d_i*d_j is commutative, so the result is exactly symmetric
    return a * (d[:, None] * d[None, :])
