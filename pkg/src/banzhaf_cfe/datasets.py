"""Synthetic node-classification benchmarks: BA-SHAPES, TREE-CYCLES, TREE-GRID.

Each graph is a base graph with small motifs hung off random base nodes
plus a handful of random extra edges. Base nodes carry label 0; motif
nodes carry nonzero labels. Node ids are laid out base-first, then motif
by motif.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from banzhaf_cfe.graph import Edge, GraphError, LabeledGraph, canonical_edge, sample_absent_edges


class DatasetKind(str, Enum):
    BA_SHAPES = "ba-shapes"
    TREE_CYCLES = "tree-cycles"
    TREE_GRID = "tree-grid"


@dataclass(frozen=True)
class DatasetSpec:
    kind: DatasetKind
    base_size: int
    motif_count: int
    extra_edge_fraction: float = 0.1
    feature_dim: int = 10
    seed: int = 0
    ba_degree: int = 5

    def __post_init__(self):
        object.__setattr__(self, "kind", DatasetKind(self.kind))
        if self.base_size < 1:
            raise ValueError("base_size must be >= 1")
        if self.motif_count < 0:
            raise ValueError("motif_count must be >= 0")
        if self.extra_edge_fraction < 0:
            raise ValueError("extra_edge_fraction must be >= 0")

    @classmethod
    def default(cls, kind, seed: int = 0, **overrides) -> "DatasetSpec":
        kind = DatasetKind(kind)
        base = {
            DatasetKind.BA_SHAPES: dict(base_size=300, motif_count=80),
            DatasetKind.TREE_CYCLES: dict(base_size=511, motif_count=60),
            DatasetKind.TREE_GRID: dict(base_size=511, motif_count=80),
        }[kind]
        spec = cls(kind=kind, seed=seed, **base)
        return replace(spec, **overrides) if overrides else spec

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "base_size": self.base_size,
            "motif_count": self.motif_count,
            "extra_edge_fraction": self.extra_edge_fraction,
            "feature_dim": self.feature_dim,
            "seed": self.seed,
            "ba_degree": self.ba_degree,
        }


def barabasi_albert(n: int, m: int, rng: np.random.Generator) -> list[Edge]:
    """Preferential attachment grown from a clique on the first ``m`` nodes.

    Nodes ``m .. n-1`` each attach to ``m`` distinct existing nodes chosen with
    probability proportional to degree, so the edge count is
    ``C(m, 2) + (n - m) * m``. With ``m == 1`` the seed is a lone node and the
    first attachment is forced, giving a random tree.
    """
    if not 1 <= m < n:
        raise GraphError(f"need 1 <= m < n, got m={m}, n={n}")
    edges = [(u, v) for u in range(m) for v in range(u + 1, m)]
    # endpoint multiset: sampling uniformly from it is degree-proportional
    pool = [x for e in edges for x in e]
    for new in range(m, n):
        if not pool:
            targets = list(range(m))
        else:
            targets = []
            chosen = set()
            while len(targets) < m:
                t = pool[int(rng.integers(len(pool)))]
                if t not in chosen:
                    chosen.add(t)
                    targets.append(t)
        for t in targets:
            edges.append((t, new))
            pool.extend((t, new))
    return sorted(canonical_edge(u, v) for u, v in edges)


def balanced_binary_tree(depth: int) -> list[Edge]:
    """Heap-ordered binary tree with ``2**(depth+1) - 1`` nodes."""
    n = 2 ** (depth + 1) - 1
    return [(i, c) for i in range(n) for c in (2 * i + 1, 2 * i + 2) if c < n]


def _house() -> tuple[list[Edge], list[int], int]:
    # local ids: 0 top, 1-2 middle, 3-4 bottom; attach through a bottom node
    edges = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4)]
    return edges, [1, 2, 2, 3, 3], 3


def _cycle(size: int = 6) -> tuple[list[Edge], list[int], int]:
    return [(i, (i + 1) % size) for i in range(size)], [1] * size, 0


def _grid(side: int = 3) -> tuple[list[Edge], list[int], int]:
    edges = []
    for r in range(side):
        for c in range(side):
            i = r * side + c
            if c + 1 < side:
                edges.append((i, i + 1))
            if r + 1 < side:
                edges.append((i, i + side))
    return edges, [1] * (side * side), 0


def generate(spec: DatasetSpec) -> LabeledGraph:
    rng = np.random.default_rng(spec.seed)
    if spec.kind is DatasetKind.BA_SHAPES:
        base_edges = barabasi_albert(spec.base_size, spec.ba_degree, rng)
        motif = _house()
    else:
        depth = int(np.log2(spec.base_size + 1)) - 1
        if 2 ** (depth + 1) - 1 != spec.base_size:
            raise ValueError(f"tree base_size must be 2**k - 1, got {spec.base_size}")
        base_edges = balanced_binary_tree(depth)
        motif = _cycle() if spec.kind is DatasetKind.TREE_CYCLES else _grid()

    motif_edges, motif_labels, anchor = motif
    size = len(motif_labels)
    n = spec.base_size + spec.motif_count * size
    labels = [0] * spec.base_size
    edges = list(base_edges)
    motif_nodes: list[int] = []
    hosts = rng.choice(spec.base_size, size=spec.motif_count, replace=spec.motif_count > spec.base_size)
    for k, host in enumerate(hosts):
        offset = spec.base_size + k * size
        edges.extend((offset + a, offset + b) for a, b in motif_edges)
        edges.append((int(host), offset + anchor))
        labels.extend(motif_labels)
        motif_nodes.extend(range(offset, offset + size))

    g = LabeledGraph.build(
        n, edges, features=np.ones((n, spec.feature_dim)), labels=labels, motif_nodes=motif_nodes
    )
    extra = int(round(spec.extra_edge_fraction * n))
    if extra:
        g = g.with_edges(list(g.edges) + sample_absent_edges(g, extra, rng))
    return g
