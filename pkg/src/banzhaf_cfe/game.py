"""Cooperative games over candidate edges.

A game exposes ``n_players``, a reference ``scale`` (the quantity a relative
threshold is measured against) and ``values(coalitions)`` taking a boolean
``(m, n_players)`` matrix. Estimators in :mod:`banzhaf_cfe.semivalues` only
rely on that surface, so tabulated toy games and GCN-backed edge games are
interchangeable.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Protocol, Sequence

import numpy as np

from banzhaf_cfe.gcn import GcnModel, argmax_lowest, forward, softmax
from banzhaf_cfe.graph import Edge, GraphError, LabeledGraph, canonical_edge, hop_distances, khop_subgraph


class GameError(ValueError):
    pass


class CoalitionGame(Protocol):
    n_players: int
    scale: float
    utility_calls: int

    def values(self, coalitions: np.ndarray) -> np.ndarray: ...


# -- thresholds -------------------------------------------------------------


class ThresholdMode(str, Enum):
    NONE = "none"
    HINGE = "hinge"
    PRUNE = "prune"


@dataclass(frozen=True)
class ThresholdPolicy:
    """How low-utility coalitions are damped.

    ``b`` is a ratio of the game's ``scale`` (the original class probability
    for edge games). With ``relative=False`` it is an absolute cutoff, which is
    the constant-threshold form used by the robustness checks.
    A prune policy with ``b == 0`` prunes nothing.
    """

    mode: ThresholdMode = ThresholdMode.NONE
    b: float = 0.0
    relative: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", ThresholdMode(self.mode))
        if self.b < 0:
            raise ValueError("threshold b must be >= 0")

    @classmethod
    def none(cls) -> "ThresholdPolicy":
        return cls()

    @classmethod
    def hinge(cls, b: float, relative: bool = True) -> "ThresholdPolicy":
        return cls(ThresholdMode.HINGE, b, relative)

    @classmethod
    def prune(cls, b: float) -> "ThresholdPolicy":
        return cls(ThresholdMode.PRUNE, b)

    @property
    def prunes(self) -> bool:
        return self.mode is ThresholdMode.PRUNE and self.b > 0

    def cutoff(self, scale: float) -> float:
        return self.b * scale if self.relative else self.b

    def apply(self, values: np.ndarray, scale: float) -> tuple[np.ndarray, np.ndarray]:
        """Return transformed values and the boolean mask of pruned entries."""
        values = np.asarray(values, dtype=float)
        pruned = np.zeros(values.shape, dtype=bool)
        if self.mode is ThresholdMode.HINGE:
            return np.maximum(values - self.cutoff(scale), 0.0), pruned
        if self.prunes:
            pruned = values < self.cutoff(scale)
            return np.where(pruned, 0.0, values), pruned
        return values, pruned

    def label(self) -> str:
        return "none" if self.mode is ThresholdMode.NONE else f"{self.mode.value}:{self.b:g}"

    @classmethod
    def parse(cls, text: str) -> "ThresholdPolicy":
        """Parse ``none``, ``hinge:0.1``, ``prune:0.05`` or a bare number (prune)."""
        text = text.strip().lower()
        if text == "none":
            return cls()
        if ":" in text:
            mode, b = text.split(":", 1)
            return cls(ThresholdMode(mode), float(b))
        return cls.prune(float(text))


# -- coalition encoding -----------------------------------------------------


def masks_to_index(coalitions: np.ndarray) -> np.ndarray:
    """Bit-encode boolean rows (player ``i`` is bit ``i``); needs ``n <= 62``."""
    coalitions = np.atleast_2d(np.asarray(coalitions, dtype=bool))
    n = coalitions.shape[1]
    if n > 62:
        raise GameError("integer coalition indices need n <= 62")
    return coalitions.astype(np.int64) @ (np.int64(1) << np.arange(n, dtype=np.int64))


def key_array(coalitions: np.ndarray) -> np.ndarray:
    """One sortable key per row: bitmask integers, or packed bytes beyond 62 players."""
    coalitions = np.atleast_2d(np.asarray(coalitions, dtype=bool))
    if coalitions.shape[1] <= 62:
        return masks_to_index(coalitions)
    packed = np.packbits(coalitions, axis=1)
    return np.ascontiguousarray(packed).view(f"S{packed.shape[1]}").ravel()


def coalition_keys(coalitions: np.ndarray) -> list:
    """Hashable per-row keys (see :func:`key_array`)."""
    return key_array(coalitions).tolist()


def index_to_masks(index: np.ndarray, n: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    return ((index[..., None] >> np.arange(n, dtype=np.int64)) & 1).astype(bool)


def all_coalitions(n: int) -> np.ndarray:
    return index_to_masks(np.arange(2**n, dtype=np.int64), n)


class TabulatedGame:
    """A game given by its full table of ``2**n`` utilities, indexed by bitmask.

    Every value lookup counts as one utility call (no memoization).
    """

    def __init__(self, table, scale: float = 1.0):
        table = np.asarray(table, dtype=float)
        n = int(round(np.log2(len(table))))
        if 2**n != len(table):
            raise GameError("table length must be a power of two")
        self.n_players = n
        self.table = table
        self.scale = scale
        self.utility_calls = 0

    def __call__(self, s: Iterable[int]) -> float:
        idx = sum(1 << int(i) for i in s)
        return float(self.table[idx])

    def values(self, coalitions: np.ndarray) -> np.ndarray:
        idx = masks_to_index(coalitions)
        self.utility_calls += len(idx)
        return self.table[idx]

    @classmethod
    def from_function(cls, n: int, fn, scale: float = 1.0) -> "TabulatedGame":
        table = [fn(frozenset(np.flatnonzero(m).tolist())) for m in all_coalitions(n)]
        return cls(table, scale)

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, zero_empty: bool = True) -> "TabulatedGame":
        """I.i.d. Uniform(0, 1) utilities; ``U(empty) = 0`` by default."""
        table = rng.random(2**n)
        if zero_empty:
            table[0] = 0.0
        return cls(table)

    @classmethod
    def additive(cls, weights: Sequence[float]) -> "TabulatedGame":
        w = np.asarray(weights, dtype=float)
        return cls(all_coalitions(len(w)).astype(float) @ w)

    def scaled(self, alpha: float) -> "TabulatedGame":
        return TabulatedGame(alpha * self.table, self.scale)

    def __add__(self, other: "TabulatedGame") -> "TabulatedGame":
        return TabulatedGame(self.table + other.table, self.scale)


# -- edge games ---------------------------------------------------------------


class EdgeGame:
    """Utility of deleting edge coalitions around one target node.

    ``U(S) = p0 - Phi(G \\ S, v, c)`` where ``c`` is the class predicted on the
    intact graph and ``p0`` its probability. Values are memoized per coalition;
    ``utility_calls`` counts distinct GCN evaluations, including the one that
    produced ``p0``.

    Evaluation runs the GCN on the ``L``-hop ball around ``v`` only, with node
    degrees taken from the full graph, which is exact for row ``v``. Each new
    coalition costs one forward pass; ``stacked=True`` instead pushes batches of
    new coalitions through a single stacked pass, which is faster but makes
    wall time stop tracking the number of utility calls.
    """

    _BATCH_CELLS = 1 << 21

    def __init__(
        self,
        graph: LabeledGraph,
        model: GcnModel,
        target: int,
        players: Sequence[Edge],
        stacked: bool = False,
    ):
        if not players:
            raise GameError(f"node {target} has no candidate edges")
        missing = [e for e in players if e not in graph.edge_set]
        if missing:
            raise GameError(f"players not in graph: {missing[:3]}")
        self.graph = graph
        self.model = model
        self.target = int(target)
        self.players: tuple[Edge, ...] = tuple(players)
        self.n_players = len(self.players)
        self._index = {e: i for i, e in enumerate(self.players)}
        self._lock = threading.Lock()
        self.stacked = stacked
        self.utility_calls = 0
        self._setup_local()

        probs = self._local_probs(np.zeros(self.n_players, dtype=bool))
        self.utility_calls = 1
        self.original_class = argmax_lowest(probs)
        self.base_prob = float(probs[self.original_class])
        self.scale = self.base_prob
        self._memo: dict = {self._key(np.zeros(self.n_players, dtype=bool)): 0.0}

    def _setup_local(self) -> None:
        g, L = self.graph, self.model.layer_count
        ball = sorted(hop_distances(g, self.target, L))
        pos = {u: i for i, u in enumerate(ball)}
        r = len(ball)
        a = np.eye(r)
        for u in ball:
            for w in g.neighbors[u]:
                if w in pos:
                    a[pos[u], pos[w]] = 1.0
        self._ball = ball
        self._a = a
        self._deg = g.degrees[ball].astype(float) + 1.0
        self._x = g.features[ball]
        self._row = pos[self.target]
        # per player: local endpoint slots (-1 when the endpoint is outside the ball)
        self._ends = np.array(
            [[pos.get(u, -1), pos.get(v, -1)] for u, v in self.players], dtype=np.int64
        )

    def _local_probs_batch(self, masks: np.ndarray) -> np.ndarray:
        """Class probabilities of the target for each deletion mask, ``(m, C)``."""
        m, r = len(masks), len(self._ball)
        a = np.repeat(self._a[None], m, axis=0)
        deg = np.repeat(self._deg[None], m, axis=0)
        rows, players = np.nonzero(masks)
        p, q = self._ends[players, 0], self._ends[players, 1]
        both = (p >= 0) & (q >= 0)
        a[rows[both], p[both], q[both]] = 0.0
        a[rows[both], q[both], p[both]] = 0.0
        np.add.at(deg, (rows[p >= 0], p[p >= 0]), -1.0)
        np.add.at(deg, (rows[q >= 0], q[q >= 0]), -1.0)
        d = 1.0 / np.sqrt(deg)
        a_hat = a * (d[:, :, None] * d[:, None, :])
        h = np.broadcast_to(self._x, (m,) + self._x.shape)
        last = self.model.layer_count - 1
        for l, (w, b) in enumerate(zip(self.model.weights, self.model.biases)):
            if l == last:
                z = np.matmul(a_hat[:, self._row : self._row + 1, :], h @ w)[:, 0, :] + b
                return softmax(z)
            h = np.maximum(np.matmul(a_hat, h @ w) + b, 0.0)
        raise AssertionError("unreachable")

    def _local_probs(self, mask: np.ndarray) -> np.ndarray:
        return self._local_probs_batch(np.asarray(mask, dtype=bool)[None, :])[0]

    def _keys(self, coalitions: np.ndarray) -> list:
        return coalition_keys(coalitions)

    def _key(self, mask: np.ndarray):
        return coalition_keys(np.asarray(mask, dtype=bool)[None, :])[0]

    def is_cached(self, mask: np.ndarray) -> bool:
        return self._key(mask) in self._memo

    def values(self, coalitions: np.ndarray) -> np.ndarray:
        coalitions = np.atleast_2d(np.asarray(coalitions, dtype=bool))
        if coalitions.shape[1] != self.n_players:
            raise GameError("coalition width does not match player count")
        uniq, first, inverse = np.unique(key_array(coalitions), return_index=True, return_inverse=True)
        keys = uniq.tolist()
        with self._lock:
            memo = self._memo
            missing = [i for i, key in enumerate(keys) if key not in memo]
            if missing:
                chunk = max(1, self._BATCH_CELLS // len(self._ball) ** 2) if self.stacked else 1
                for lo in range(0, len(missing), chunk):
                    part = missing[lo : lo + chunk]
                    probs = self._local_probs_batch(coalitions[first[part]])
                    for i, p in zip(part, probs[:, self.original_class]):
                        memo[keys[i]] = self.base_prob - float(p)
                self.utility_calls += len(missing)
            return np.array([memo[key] for key in keys])[inverse.ravel()]

    def mask_of(self, s: Iterable[Edge]) -> np.ndarray:
        mask = np.zeros(self.n_players, dtype=bool)
        for e in s:
            key = canonical_edge(*e)
            if key not in self._index:
                raise GameError(f"edge {key} is not a player of this game")
            mask[self._index[key]] = True
        return mask

    def utility(self, s: Iterable[Edge]) -> float:
        return float(self.values(self.mask_of(s)[None, :])[0])

    def thresholded_utility(self, s: Iterable[Edge], policy: ThresholdPolicy) -> float | None:
        """Thresholded utility; ``None`` when a prune policy drops the coalition."""
        val, pruned = policy.apply(np.array([self.utility(s)]), self.scale)
        return None if pruned[0] else float(val[0])

    def probabilities_after(self, s: Iterable[Edge]) -> np.ndarray:
        """Class probabilities of the target after deleting ``s`` (not memoized)."""
        return self._local_probs(self.mask_of(s))

    @property
    def eval_counter(self) -> int:
        return self.utility_calls


def make_game(
    g: LabeledGraph, model: GcnModel, v: int, hops: int | None = None, stacked: bool = False
) -> EdgeGame:
    """Game whose players are the edges of the ``hops``-hop induced subgraph of ``v``.

    ``hops`` defaults to the model's layer count.
    """
    if not 0 <= v < g.node_count:
        raise GraphError(f"node {v} out of range")
    hops = model.layer_count if hops is None else hops
    _, edges = khop_subgraph(g, v, hops)
    if not edges:
        raise GameError(f"node {v} has no candidate edges within {hops} hops")
    return EdgeGame(g, model, v, edges, stacked)


def full_graph_utility(game: EdgeGame, s: Iterable[Edge]) -> float:
    """Reference utility via a full-graph forward pass (slow; for cross-checks)."""
    from banzhaf_cfe.graph import delete_edges

    probs = forward(game.model, delete_edges(game.graph, s))[game.target]
    return game.base_prob - float(probs[game.original_class])
