"""Edge-deletion explainers and the fidelity metric."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from banzhaf_cfe.game import EdgeGame, ThresholdPolicy, make_game
from banzhaf_cfe.gcn import GcnModel, predicted_class
from banzhaf_cfe.graph import Edge, LabeledGraph, delete_edges
from banzhaf_cfe.semivalues import SamplePolicy, banzhaf_msr, shapley_perm_mc, top_k

log = logging.getLogger(__name__)


class ExplainMethod(str, Enum):
    RANDOM = "random"
    TOPK = "topk"
    GREEDY = "greedy"
    SHAPLEY = "shapley"
    BANZHAF = "banzhaf"


# ``coalition_size`` values other than an integer
SIZE_BUDGET = "budget"
SIZE_UNIFORM = "uniform"


@dataclass(frozen=True)
class ExplainerConfig:
    """One explanation method and its parameters.

    ``coalition_size`` is ``"budget"`` (coalitions of exactly ``budget`` edges),
    ``"uniform"`` (uniform over all subsets) or an explicit size. ``stacked``
    selects the batched utility evaluation of :class:`EdgeGame`. Fields a
    method does not use are ignored.
    """

    method: ExplainMethod = ExplainMethod.BANZHAF
    budget: int = 3
    threshold: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    coalitions: int = 1500
    coalition_size: int | str = SIZE_BUDGET
    shapley_permutations: int = 50
    hops: int | None = None
    stacked: bool = False

    def __post_init__(self):
        object.__setattr__(self, "method", ExplainMethod(self.method))
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.coalitions < 1 or self.shapley_permutations < 1:
            raise ValueError("coalitions and shapley_permutations must be >= 1")
        if isinstance(self.coalition_size, str) and self.coalition_size not in (SIZE_BUDGET, SIZE_UNIFORM):
            raise ValueError(f"bad coalition_size {self.coalition_size!r}")

    def sample_policy(self, k: int, seed: int) -> SamplePolicy:
        if self.coalition_size == SIZE_BUDGET:
            size = k
        elif self.coalition_size == SIZE_UNIFORM:
            size = None
        else:
            size = int(self.coalition_size)
        return SamplePolicy(self.coalitions, size, seed)

    def label(self) -> str:
        if self.method is ExplainMethod.BANZHAF:
            return f"banzhaf[{self.threshold.label()}]"
        return self.method.value

    def to_dict(self) -> dict:
        d = asdict(self)
        d["method"] = self.method.value
        d["threshold"] = self.threshold.label()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExplainerConfig":
        data = dict(data)
        if isinstance(data.get("threshold"), str):
            data["threshold"] = ThresholdPolicy.parse(data["threshold"])
        return cls(**data)

    @classmethod
    def parse(cls, text: str, **common) -> "ExplainerConfig":
        """``random``, ``topk``, ``greedy``, ``shapley``, ``banzhaf``, ``banzhaf:0.05``
        (prune ratio) or ``banzhaf:hinge:0.1``; ``common`` fills the other fields."""
        method, _, rest = text.strip().lower().partition(":")
        if rest:
            common = {**common, "threshold": ThresholdPolicy.parse(rest)}
        return cls(method=ExplainMethod(method), **common)


@dataclass
class Explanation:
    node: int
    edges: list[Edge]
    flipped: bool
    wall_time: float
    utility_calls: int
    pruned: int = 0
    original_class: int = -1
    new_class: int = -1
    candidates: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["edges"] = [list(e) for e in self.edges]
        return d


def node_seed(seed: int, node: int) -> int:
    """A per-node integer seed derived from ``(seed, node)``."""
    return int(np.random.SeedSequence([seed, node]).generate_state(1)[0])


def _greedy(game: EdgeGame, k: int) -> list[int]:
    chosen = np.zeros(game.n_players, dtype=bool)
    picked = []
    for _ in range(k):
        rest = np.flatnonzero(~chosen)
        rows = np.repeat(chosen[None, :], len(rest), axis=0)
        rows[np.arange(len(rest)), rest] = True
        best = rest[int(np.argmax(game.values(rows)))]  # first max: lowest index
        chosen[best] = True
        picked.append(int(best))
    return picked


def select_edges(game: EdgeGame, cfg: ExplainerConfig, k: int, seed: int) -> tuple[list[int], int]:
    """Player indices chosen by ``cfg.method`` plus the pruned-coalition count."""
    n = game.n_players
    method = cfg.method
    if method is ExplainMethod.RANDOM:
        rng = np.random.default_rng(seed)
        return sorted(int(i) for i in rng.choice(n, k, replace=False)), 0
    if method is ExplainMethod.TOPK:
        return top_k(game.values(np.eye(n, dtype=bool)), k), 0
    if method is ExplainMethod.GREEDY:
        return _greedy(game, k), 0
    if method is ExplainMethod.SHAPLEY:
        res = shapley_perm_mc(game, cfg.shapley_permutations, cfg.threshold, np.random.default_rng(seed))
        return top_k(res.values, k), res.pruned_count
    res = banzhaf_msr(game, cfg.threshold, cfg.sample_policy(k, seed))
    return top_k(res.values, k), res.pruned_count


def explain(
    g: LabeledGraph, model: GcnModel, v: int, cfg: ExplainerConfig, seed: int = 0
) -> Explanation:
    """Explain node ``v``: pick ``cfg.budget`` candidate edges whose deletion should flip it.

    ``seed`` is combined with ``v`` so results do not depend on the order in
    which nodes are processed. Wall time covers game setup and selection, not
    the final full-graph check of the flip.
    """
    start = time.perf_counter()
    game = make_game(g, model, v, cfg.hops, cfg.stacked)
    k = cfg.budget
    if k > game.n_players:
        log.warning("node %d has %d candidate edges; budget %d clamped", v, game.n_players, k)
        k = game.n_players
    idx, pruned = select_edges(game, cfg, k, node_seed(seed, v))
    wall = time.perf_counter() - start

    edges = [game.players[i] for i in idx]
    new_class = predicted_class(model, delete_edges(g, edges), v)
    return Explanation(
        node=int(v),
        edges=edges,
        flipped=new_class != game.original_class,
        wall_time=wall,
        utility_calls=game.utility_calls,
        pruned=pruned,
        original_class=game.original_class,
        new_class=new_class,
        candidates=game.n_players,
    )


def fidelity(explanations: Sequence[Explanation]) -> float:
    """Share of explained nodes whose prediction survived the deletion (lower is better)."""
    if not explanations:
        raise ValueError("fidelity needs at least one explanation")
    return float(np.mean([not e.flipped for e in explanations]))


def fidelity_summary(groups: Sequence[Sequence[Explanation]]) -> tuple[float, float]:
    """Mean and population SD of fidelity across repeated node samples."""
    scores = [fidelity(group) for group in groups]
    return float(np.mean(scores)), float(np.std(scores))
