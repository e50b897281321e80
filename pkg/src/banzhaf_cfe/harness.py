"""Experiment orchestration: efficacy tables, coalition sweeps and the sample-complexity study.

Results are plain records. ``write_records`` emits a CSV whose columns are
fixed by the record type; wall-clock times are kept out of the CSV (they
change run to run) and live in the JSON mirror instead.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from banzhaf_cfe.datasets import DatasetKind, DatasetSpec, generate
from banzhaf_cfe.explain import ExplainerConfig, ExplainMethod, Explanation, explain
from banzhaf_cfe.game import GameError, TabulatedGame
from banzhaf_cfe.gcn import GcnModel, TrainConfig, TrainResult, train
from banzhaf_cfe.graph import LabeledGraph, inject_noise_edges
from banzhaf_cfe.semivalues import (
    SamplePolicy,
    banzhaf_mc,
    banzhaf_msr,
    exact_banzhaf,
    mc_count_for_budget,
    required_samples_mc,
    required_samples_msr,
    top_k,
)

log = logging.getLogger(__name__)

DEFAULT_LAYERS = {
    DatasetKind.BA_SHAPES: 3,
    DatasetKind.TREE_CYCLES: 2,
    DatasetKind.TREE_GRID: 2,
}

TABLE_METHODS = ("random", "topk", "greedy", "shapley", "banzhaf:0", "banzhaf:0.01", "banzhaf:0.05")
NOISE_METHODS = ("shapley", "banzhaf:0", "banzhaf:0.01", "banzhaf:0.1")


# -- configuration ------------------------------------------------------------


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=lambda: DatasetSpec.default(DatasetKind.TREE_CYCLES))
    budgets: tuple[int, ...] = (3,)
    methods: tuple[ExplainerConfig, ...] = ()
    node_sample_fraction: float = 0.5
    repeats: int = 3
    noise_ratio: float = 0.0
    seed: int = 0
    layers: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    threads: int = 1

    def __post_init__(self):
        if not self.methods:
            self.methods = tuple(ExplainerConfig.parse(m) for m in TABLE_METHODS)
        self.budgets = tuple(int(k) for k in self.budgets)
        self.methods = tuple(self.methods)
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not 0 < self.node_sample_fraction <= 1:
            raise ValueError("node_sample_fraction must be in (0, 1]")
        if not 0 <= self.noise_ratio <= 1:
            raise ValueError("noise_ratio must be in [0, 1]")
        if not self.budgets or min(self.budgets) < 1:
            raise ValueError("budgets must be a nonempty list of positive integers")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def layer_count(self) -> int:
        return self.layers if self.layers is not None else DEFAULT_LAYERS[self.dataset.kind]

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset.to_dict(),
            "budgets": list(self.budgets),
            "methods": [m.to_dict() for m in self.methods],
            "node_sample_fraction": self.node_sample_fraction,
            "repeats": self.repeats,
            "noise_ratio": self.noise_ratio,
            "seed": self.seed,
            "layers": self.layer_count,
            "train": self.train.to_dict(),
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Build from a JSON-style mapping; methods may be strings like ``"banzhaf:0.05"``."""
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        ds = data.get("dataset")
        if isinstance(ds, str):
            data["dataset"] = DatasetSpec.default(ds)
        elif isinstance(ds, dict):
            ds = dict(ds)
            data["dataset"] = DatasetSpec.default(ds.pop("kind"), **ds)
        if "methods" in data:
            data["methods"] = tuple(
                ExplainerConfig.parse(m) if isinstance(m, str) else ExplainerConfig.from_dict(m)
                for m in data["methods"]
            )
        if isinstance(data.get("train"), dict):
            data["train"] = TrainConfig(**data["train"])
        if "budgets" in data:
            data["budgets"] = tuple(data["budgets"])
        return cls(**data)


@dataclass
class ExperimentRecord:
    dataset: str
    noise_ratio: float
    method: str
    budget: int
    threshold_mode: str
    threshold: float
    coalitions: int
    coalition_size: str
    sweep: str
    fidelity: float
    fidelity_sd: float
    utility_calls: float
    pruned: float
    nodes: int
    skipped: int
    clamped: int
    repeats: int
    seed: int
    wall_time: float = 0.0  # seconds per repeat; JSON only

    def to_dict(self) -> dict:
        return asdict(self)


CSV_EXCLUDE = ("wall_time",)


# -- preparation --------------------------------------------------------------


@dataclass
class Prepared:
    graph: LabeledGraph
    model: GcnModel
    training: TrainResult


def prepare(cfg: ExperimentConfig) -> Prepared:
    """Generate the dataset, add noise edges if requested, then train the GCN on it."""
    g = generate(cfg.dataset)
    if cfg.noise_ratio > 0:
        g = inject_noise_edges(g, cfg.noise_ratio, np.random.default_rng([cfg.seed, 1]))
    result = train(g, cfg.layer_count, cfg.train)
    log.info("trained %d-layer GCN: train acc %.3f, test acc %.3f",
             cfg.layer_count, result.train_accuracy, result.test_accuracy)
    return Prepared(g, result.model, result)


def sample_nodes(n: int, fraction: float, seed: int, repeat: int) -> list[int]:
    rng = np.random.default_rng([seed, 2, repeat])
    count = max(1, int(round(fraction * n)))
    return sorted(int(v) for v in rng.choice(n, count, replace=False))


@dataclass
class NodeSkip:
    node: int
    method: str
    budget: int
    reason: str


@dataclass
class RunOutput:
    records: list[ExperimentRecord]
    skips: list[NodeSkip] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def skip_count(self) -> int:
        return len(self.skips)


def _explain_nodes(prep: Prepared, nodes: Sequence[int], ecfg: ExplainerConfig, seed: int, threads: int):
    def one(v):
        try:
            return explain(prep.graph, prep.model, v, ecfg, seed)
        except GameError as exc:
            return exc

    if threads == 1:
        return [one(v) for v in nodes]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, nodes))


def _evaluate(
    prep: Prepared,
    cfg: ExperimentConfig,
    ecfg: ExplainerConfig,
    node_sets: Sequence[Sequence[int]],
    sweep: str,
    skips: list[NodeSkip],
) -> ExperimentRecord:
    scores, times, calls, pruned = [], [], [], []
    explained = skipped = clamped = 0
    for nodes in node_sets:
        results = _explain_nodes(prep, nodes, ecfg, cfg.seed, cfg.threads)
        done: list[Explanation] = []
        for v, res in zip(nodes, results):
            if isinstance(res, Exception):
                skipped += 1
                skips.append(NodeSkip(v, ecfg.label(), ecfg.budget, str(res)))
            else:
                done.append(res)
                clamped += len(res.edges) < ecfg.budget
        explained += len(done)
        if done:
            scores.append(float(np.mean([not e.flipped for e in done])))
        times.append(math.fsum(e.wall_time for e in done))
        calls.append(sum(e.utility_calls for e in done))
        pruned.append(sum(e.pruned for e in done))
    size = ecfg.coalition_size if isinstance(ecfg.coalition_size, str) else str(ecfg.coalition_size)
    return ExperimentRecord(
        dataset=cfg.dataset.kind.value,
        noise_ratio=cfg.noise_ratio,
        method=ecfg.method.value,
        budget=ecfg.budget,
        threshold_mode=ecfg.threshold.mode.value,
        threshold=ecfg.threshold.b,
        coalitions=ecfg.coalitions,
        coalition_size=size,
        sweep=sweep,
        fidelity=float(np.mean(scores)) if scores else float("nan"),
        fidelity_sd=float(np.std(scores)) if scores else float("nan"),
        utility_calls=float(np.mean(calls)),
        pruned=float(np.mean(pruned)),
        nodes=explained,
        skipped=skipped,
        clamped=clamped,
        repeats=len(node_sets),
        seed=cfg.seed,
        wall_time=float(np.mean(times)),
    )


def _meta(cfg: ExperimentConfig, prep: Prepared) -> dict:
    return {
        "config": cfg.to_dict(),
        "graph": {"nodes": prep.graph.node_count, "edges": prep.graph.edge_count},
        "train_accuracy": prep.training.train_accuracy,
        "test_accuracy": prep.training.test_accuracy,
        "wall_time_note": "seconds of explanation work per repeat; excludes data generation and training",
    }


def run_experiment(cfg: ExperimentConfig, prepared: Prepared | None = None) -> RunOutput:
    """Explain a random node sample per repeat with every (budget, method) pair.

    Fidelity is averaged over repeats (SD across repeats); utility calls,
    pruned coalitions and wall time are per-repeat totals averaged over repeats.
    """
    prep = prepared or prepare(cfg)
    node_sets = [
        sample_nodes(prep.graph.node_count, cfg.node_sample_fraction, cfg.seed, r) for r in range(cfg.repeats)
    ]
    records, skips = [], []
    for k in cfg.budgets:
        for m in cfg.methods:
            records.append(_evaluate(prep, cfg, replace(m, budget=k), node_sets, "", skips))
    return RunOutput(records, skips, _meta(cfg, prep))


def run_coalition_variation(
    cfg: ExperimentConfig,
    counts: Sequence[int] = (),
    sizes: Sequence[int] = (),
    prepared: Prepared | None = None,
) -> RunOutput:
    """Vary the number of sampled coalitions and their fixed size for every Banzhaf method.

    Coalition streams are prefix-stable, so a larger count extends the sample
    drawn for a smaller one under the same seed.
    """
    prep = prepared or prepare(cfg)
    banzhaf = [m for m in cfg.methods if m.method is ExplainMethod.BANZHAF]
    if not banzhaf:
        raise ValueError("coalition sweeps need at least one Banzhaf method")
    node_sets = [
        sample_nodes(prep.graph.node_count, cfg.node_sample_fraction, cfg.seed, r) for r in range(cfg.repeats)
    ]
    records, skips = [], []
    for k in cfg.budgets:
        for m in banzhaf:
            for c in counts:
                ecfg = replace(m, budget=k, coalitions=int(c))
                records.append(_evaluate(prep, cfg, ecfg, node_sets, "count", skips))
            for s in sizes:
                ecfg = replace(m, budget=k, coalition_size=int(s))
                records.append(_evaluate(prep, cfg, ecfg, node_sets, "size", skips))
    return RunOutput(records, skips, _meta(cfg, prep))


# -- estimator studies on tabulated games -------------------------------------


def rank_gap_game(n: int, k: int, epsilon: float, rng: np.random.Generator, max_tries: int = 100) -> TabulatedGame:
    """A game with utilities in ``[0, 1]`` whose exact Banzhaf gap at rank ``k`` exceeds ``epsilon``.

    ``U(S) = 0.8 * sum_{i in S} a_i + 0.2 * r(S)`` with ``k`` heavy players and
    i.i.d. uniform noise ``r``; candidates are regenerated until the gap,
    computed by exact enumeration, is large enough.
    """
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < n")
    heavy = 0.96 / k
    light = 0.04 / (n - k)
    for _ in range(max_tries):
        a = np.full(n, light)
        a[rng.permutation(n)[:k]] = heavy
        noise = TabulatedGame.random(n, rng)
        game = TabulatedGame.additive(a).scaled(0.8) + noise.scaled(0.2)
        if rank_gap(exact_banzhaf(game).values, k) > epsilon:
            game.utility_calls = 0
            return game
    raise RuntimeError("failed to construct a game with the requested rank gap")


def rank_gap(values: np.ndarray, k: int) -> float:
    ordered = np.sort(np.asarray(values))[::-1]
    return float(ordered[k - 1] - ordered[k])


@dataclass
class SampleComplexityRow:
    n: int
    estimator: str
    k: int
    epsilon: float
    delta: float
    budget_calls: int
    samples: int
    mean_utility_calls: float
    players_per_call: float
    trials: int
    failures: int
    failure_rate: float
    within_delta: bool
    min_gap: float
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def run_sample_complexity_study(
    n_values: Sequence[int] = (8,),
    epsilon: float = 0.2,
    delta: float = 0.1,
    trials: int = 200,
    k: int = 3,
    seed: int = 0,
    games: int = 1,
) -> list[SampleComplexityRow]:
    """Top-``k`` failure rates of per-player MC and MSR at the budgets their bounds prescribe.

    For each ``n``, ``games`` constructed games are each estimated ``trials``
    times; a trial fails when the estimated top-``k`` set differs from the
    exact one.
    """
    rows = []
    for n in n_values:
        rng = np.random.default_rng([seed, n])
        built = [rank_gap_game(n, k, epsilon, rng) for _ in range(games)]
        truths = [set(top_k(exact_banzhaf(g).values, k)) for g in built]
        min_gap = min(rank_gap(exact_banzhaf(g).values, k) for g in built)
        mc_calls = required_samples_mc(n, epsilon, delta)
        msr_calls = required_samples_msr(n, epsilon, delta)
        mc_m = mc_count_for_budget(mc_calls, n)
        plans = [
            ("banzhaf_mc", mc_calls, mc_m, 1.0),
            ("banzhaf_msr", msr_calls, msr_calls, float(n)),
        ]
        for name, budget, m, per_call in plans:
            failures, calls = 0, []
            for gi, (game, truth) in enumerate(zip(built, truths)):
                for t in range(trials):
                    policy = SamplePolicy(m, None, int(np.random.SeedSequence([seed, n, gi, t]).generate_state(1)[0]))
                    before = game.utility_calls
                    if name == "banzhaf_mc":
                        est = banzhaf_mc(game, None, policy)
                    else:
                        est = banzhaf_msr(game, None, policy)
                    calls.append(game.utility_calls - before)
                    failures += set(top_k(est.values, k)) != truth
            total = trials * len(built)
            rate = failures / total
            rows.append(
                SampleComplexityRow(
                    n=n,
                    estimator=name,
                    k=k,
                    epsilon=epsilon,
                    delta=delta,
                    budget_calls=budget,
                    samples=m,
                    mean_utility_calls=float(np.mean(calls)),
                    players_per_call=per_call,
                    trials=total,
                    failures=failures,
                    failure_rate=rate,
                    within_delta=rate <= delta,
                    min_gap=min_gap,
                    seed=seed,
                )
            )
    return rows


@dataclass
class ReuseRow:
    estimator: str
    calls: int
    mean_max_error: float
    reached: bool

    def to_dict(self) -> dict:
        return asdict(self)


def calls_to_reach(
    estimator: str,
    games: Sequence[TabulatedGame],
    target: float,
    seeds: int = 10,
    start: int = 500,
    growth: float = 1.25,
    max_calls: int = 2_000_000,
) -> list[ReuseRow]:
    """Grow the call budget geometrically until the mean (over games and seeds)
    of the max absolute estimation error is at most ``target``."""
    exact = [exact_banzhaf(g).values for g in games]
    rows = []
    calls = start
    while calls <= max_calls:
        errs = []
        for gi, game in enumerate(games):
            n = game.n_players
            for s in range(seeds):
                sd = int(np.random.SeedSequence([gi, s, calls]).generate_state(1)[0])
                if estimator == "banzhaf_mc":
                    est = banzhaf_mc(game, None, SamplePolicy(mc_count_for_budget(calls, n), None, sd))
                else:
                    est = banzhaf_msr(game, None, SamplePolicy(calls, None, sd))
                errs.append(float(np.max(np.abs(est.values - exact[gi]))))
        err = float(np.mean(errs))
        rows.append(ReuseRow(estimator, calls, err, err <= target))
        if err <= target:
            break
        calls = int(math.ceil(calls * growth))
    return rows


def run_reuse_study(n: int = 8, target: float = 0.02, games: int = 5, seeds: int = 10, seed: int = 0) -> dict:
    """Utility calls each Banzhaf estimator needs to reach a max-error target on random games."""
    rng = np.random.default_rng([seed, 3])
    pool = [TabulatedGame.random(n, rng) for _ in range(games)]
    out = {}
    for name in ("banzhaf_mc", "banzhaf_msr"):
        out[name] = calls_to_reach(name, pool, target, seeds)
    mc, msr = out["banzhaf_mc"][-1], out["banzhaf_msr"][-1]
    return {
        "n": n,
        "target": target,
        "mc_calls": mc.calls if mc.reached else None,
        "msr_calls": msr.calls if msr.reached else None,
        "ratio": mc.calls / msr.calls if mc.reached and msr.reached else None,
        "series": {k: [r.to_dict() for r in v] for k, v in out.items()},
    }


# -- output -------------------------------------------------------------------


def _csv_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(rows: Sequence, exclude: Sequence[str] = CSV_EXCLUDE) -> str:
    if not rows:
        return ""
    names = [f.name for f in fields(rows[0]) if f.name not in exclude]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for row in rows:
        writer.writerow([_csv_value(getattr(row, name)) for name in names])
    return buf.getvalue()


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_records(rows: Sequence, csv_path, json_path=None, meta: dict | None = None, extra: dict | None = None):
    """CSV of ``rows`` (fixed columns, no timings) plus an optional JSON mirror with everything."""
    atomic_write(csv_path, records_to_csv(rows))
    if json_path is not None:
        doc = {"records": [r.to_dict() for r in rows]}
        if meta:
            doc["meta"] = meta
        if extra:
            doc.update(extra)
        atomic_write(json_path, json.dumps(doc, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
