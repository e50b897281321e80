"""Command-line entry point.

Every subcommand accepts ``--seed`` and ``--threads``. Experiment-style
subcommands read an optional JSON config (``--config``) and apply flag
overrides on top; they write ``<name>.csv``, a ``<name>.json`` mirror and,
unless ``--no-plot``, a ``<name>.png`` figure into ``--out-dir``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from banzhaf_cfe.datasets import DatasetKind, DatasetSpec, generate
from banzhaf_cfe.explain import ExplainerConfig, explain
from banzhaf_cfe.game import GameError, ThresholdPolicy
from banzhaf_cfe.gcn import GcnModel, TrainConfig, train
from banzhaf_cfe.graph import GraphError, LabeledGraph, inject_noise_edges
from banzhaf_cfe.harness import (
    NOISE_METHODS,
    TABLE_METHODS,
    ExperimentConfig,
    Prepared,
    RunOutput,
    prepare,
    run_coalition_variation,
    run_experiment,
    run_sample_complexity_study,
    write_records,
)

log = logging.getLogger("banzhaf_cfe")


def _csv_list(cast):
    def parse(text: str):
        return [cast(t) for t in text.split(",") if t.strip()]

    return parse


def _load_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _dump(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=False))


# -- subcommands ----------------------------------------------------------------


def cmd_gen_dataset(args) -> int:
    conf = _load_config(args.config)
    kind = args.kind or conf.pop("kind", DatasetKind.TREE_CYCLES.value)
    overrides = {k: v for k, v in conf.items() if k != "kind"}
    for key, val in (
        ("base_size", args.base_size),
        ("motif_count", args.motifs),
        ("extra_edge_fraction", args.extra_edge_fraction),
        ("feature_dim", args.feature_dim),
    ):
        if val is not None:
            overrides[key] = val
    overrides["seed"] = args.seed if args.seed is not None else overrides.get("seed", 0)
    spec = DatasetSpec.default(kind, **overrides)
    g = generate(spec)
    if args.noise_ratio:
        import numpy as np

        g = inject_noise_edges(g, args.noise_ratio, np.random.default_rng([spec.seed, 1]))
    g.save(args.out)
    _dump({"out": str(args.out), "nodes": g.node_count, "edges": g.edge_count, "spec": spec.to_dict()})
    return 0


def _train_config(conf: dict, args) -> TrainConfig:
    conf = dict(conf)
    for key, val in (
        ("epochs", args.epochs),
        ("learning_rate", args.lr),
        ("weight_decay", args.weight_decay),
        ("hidden_dim", args.hidden),
        ("restarts", args.restarts),
        ("optimizer", args.optimizer),
    ):
        if val is not None:
            conf[key] = val
    if args.seed is not None:
        conf["seed"] = args.seed
    return TrainConfig(**conf)


def cmd_train(args) -> int:
    conf = _load_config(args.config)
    layers = args.layers or conf.pop("layers", 2)
    cfg = _train_config(conf, args)
    g = LabeledGraph.load(args.graph)
    result = train(g, layers, cfg)
    result.model.save(args.out)
    _dump(
        {
            "out": str(args.out),
            "layers": layers,
            "train_accuracy": result.train_accuracy,
            "test_accuracy": result.test_accuracy,
            "final_loss": result.losses[-1],
            "config": cfg.to_dict(),
        }
    )
    return 0


def _threshold(text: str | None) -> ThresholdPolicy:
    return ThresholdPolicy() if text is None else ThresholdPolicy.parse(text)


def cmd_explain(args) -> int:
    g = LabeledGraph.load(args.graph)
    model = GcnModel.load(args.model)
    size = args.coalition_size
    cfg = ExplainerConfig(
        method=args.method,
        budget=args.budget,
        threshold=_threshold(args.threshold),
        coalitions=args.coalitions,
        coalition_size=int(size) if size not in ("budget", "uniform") else size,
        shapley_permutations=args.permutations,
        hops=args.hops,
    )
    try:
        exp = explain(g, model, args.node, cfg, args.seed or 0)
    except (GameError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 0 if args.allow_skips else 1
    _dump(exp.to_dict())
    return 0


def _experiment_config(args, default_methods) -> ExperimentConfig:
    conf = _load_config(args.config)
    if args.dataset:
        ds = conf.get("dataset")
        extra = {k: v for k, v in ds.items() if k != "kind"} if isinstance(ds, dict) else {}
        conf["dataset"] = {"kind": args.dataset, **extra}
    if args.budgets:
        conf["budgets"] = args.budgets
    if args.methods:
        conf["methods"] = args.methods
    elif "methods" not in conf:
        conf["methods"] = list(default_methods)
    for key, val in (
        ("node_sample_fraction", args.fraction),
        ("repeats", args.repeats),
        ("noise_ratio", args.noise_ratio),
        ("layers", args.layers),
        ("threads", args.threads),
    ):
        if val is not None:
            conf[key] = val
    common = {}
    for key, val in (
        ("coalitions", args.coalitions),
        ("shapley_permutations", args.permutations),
        ("hops", args.hops),
    ):
        if val is not None:
            common[key] = val
    cfg = ExperimentConfig.from_dict(conf)
    if common:
        cfg.methods = tuple(replace(m, **common) for m in cfg.methods)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.dataset = replace(cfg.dataset, seed=args.seed)
        cfg.train = replace(cfg.train, seed=args.seed)
    if args.epochs is not None:
        cfg.train = replace(cfg.train, epochs=args.epochs)
    return cfg


def _prepared(args, cfg: ExperimentConfig) -> Prepared | None:
    if not (args.graph and args.model):
        return None
    from banzhaf_cfe.gcn import TrainResult
    import numpy as np

    g = LabeledGraph.load(args.graph)
    model = GcnModel.load(args.model)
    empty = np.zeros(0, dtype=int)
    return Prepared(g, model, TrainResult(model, math.nan, math.nan, empty, empty))


def _finish(out: RunOutput, args, plot) -> int:
    out_dir = Path(args.out_dir)
    csv_path = out_dir / f"{args.name}.csv"
    json_path = out_dir / f"{args.name}.json"
    skips = [s.__dict__ for s in out.skips]
    write_records(out.records, csv_path, json_path, out.meta, {"skips": skips})
    written = [str(csv_path), str(json_path)]
    if not args.no_plot and out.records:
        written.append(str(plot(out.records, out_dir / f"{args.name}.png")))
    _print_table(out.records)
    print(f"wrote {', '.join(written)}")
    if out.skip_count:
        print(f"{out.skip_count} node explanations failed (see {json_path})", file=sys.stderr)
        return 0 if args.allow_skips else 1
    return 0


def _print_table(records) -> None:
    if not records:
        return
    print(f"{'k':>3} {'method':<10} {'b':>6} {'sweep':>6} {'fidelity':>9} {'sd':>7} {'time(s)':>9} {'calls':>10}")
    for r in records:
        b = f"{r.threshold:g}" if r.method == "banzhaf" else "-"
        sweep = "" if not r.sweep else (str(r.coalitions) if r.sweep == "count" else r.coalition_size)
        print(
            f"{r.budget:>3} {r.method:<10} {b:>6} {sweep:>6} {r.fidelity:>9.3f} {r.fidelity_sd:>7.3f} "
            f"{r.wall_time:>9.3f} {r.utility_calls:>10.0f}"
        )


def cmd_experiment(args) -> int:
    from banzhaf_cfe.plotting import plot_experiment

    defaults = NOISE_METHODS if args.noise_ratio else TABLE_METHODS
    cfg = _experiment_config(args, defaults)
    out = run_experiment(cfg, _prepared(args, cfg))
    return _finish(out, args, plot_experiment)


def cmd_coalition_sweep(args) -> int:
    from banzhaf_cfe.plotting import plot_sweep

    cfg = _experiment_config(args, ("banzhaf:0", "banzhaf:0.01", "banzhaf:0.05"))
    out = run_coalition_variation(cfg, args.counts or [], args.sizes or [], _prepared(args, cfg))
    return _finish(out, args, plot_sweep)


def cmd_sample_complexity(args) -> int:
    from banzhaf_cfe.plotting import plot_sample_complexity

    conf = _load_config(args.config)
    params = {
        "n_values": args.n or conf.get("n_values", [8]),
        "epsilon": args.epsilon if args.epsilon is not None else conf.get("epsilon", 0.2),
        "delta": args.delta if args.delta is not None else conf.get("delta", 0.1),
        "trials": args.trials if args.trials is not None else conf.get("trials", 200),
        "k": args.k if args.k is not None else conf.get("k", 3),
        "games": args.games if args.games is not None else conf.get("games", 1),
        "seed": args.seed if args.seed is not None else conf.get("seed", 0),
    }
    rows = run_sample_complexity_study(**params)
    out_dir = Path(args.out_dir)
    csv_path, json_path = out_dir / f"{args.name}.csv", out_dir / f"{args.name}.json"
    write_records(rows, csv_path, json_path, {"params": params})
    written = [str(csv_path), str(json_path)]
    if not args.no_plot:
        written.append(str(plot_sample_complexity(rows, out_dir / f"{args.name}.png")))
    for r in rows:
        print(
            f"n={r.n} {r.estimator:<12} budget={r.budget_calls:>6} calls/estimate={r.mean_utility_calls:>8.0f} "
            f"failures={r.failures}/{r.trials} rate={r.failure_rate:.3f} (delta {r.delta})"
        )
    print(f"wrote {', '.join(written)}")
    return 0


def cmd_safety_margin(args) -> int:
    from banzhaf_cfe.robustness import brute_force_safety_margin, named_weights

    w = named_weights(args.weights, args.n)
    policy = ThresholdPolicy.hinge(args.threshold, relative=False) if args.threshold > 0 else ThresholdPolicy()
    rep = brute_force_safety_margin(args.n, args.tau, w, policy, restarts=args.restarts, seed=args.seed or 0)
    doc = rep.to_dict()
    doc["ratio"] = rep.epsilon_found / rep.closed_form
    _dump(doc)
    if args.out_dir:
        from banzhaf_cfe.harness import atomic_write

        out_dir = Path(args.out_dir)
        keys = list(doc)
        row = ",".join(repr(doc[k]) if isinstance(doc[k], float) else str(doc[k]).replace(",", ";") for k in keys)
        atomic_write(out_dir / f"{args.name}.csv", ",".join(keys) + "\n" + row + "\n")
        atomic_write(out_dir / f"{args.name}.json", json.dumps(doc, indent=2) + "\n")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default: config or 0)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for node-level parallelism")
    common.add_argument("--config", type=Path, default=None, help="JSON config file; flags override it")
    common.add_argument("--allow-skips", action="store_true", help="exit 0 even if some nodes failed")
    common.add_argument("-v", "--verbose", action="store_true")

    outputs = argparse.ArgumentParser(add_help=False)
    outputs.add_argument("--out-dir", default="results")
    outputs.add_argument("--name", default=None, help="file stem for outputs (default: subcommand name)")
    outputs.add_argument("--no-plot", action="store_true", help="skip the PNG figure")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int)
    training.add_argument("--layers", type=int)

    p = argparse.ArgumentParser(prog="banzhaf-cfe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-dataset", parents=[common], help="generate a synthetic graph as JSON")
    s.add_argument("--kind", choices=[k.value for k in DatasetKind])
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--base-size", type=int)
    s.add_argument("--motifs", type=int)
    s.add_argument("--extra-edge-fraction", type=float)
    s.add_argument("--feature-dim", type=int)
    s.add_argument("--noise-ratio", type=float, default=0.0)
    s.set_defaults(func=cmd_gen_dataset)

    s = sub.add_parser("train", parents=[common, training], help="train a GCN on a graph JSON")
    s.add_argument("--graph", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--lr", type=float)
    s.add_argument("--weight-decay", type=float)
    s.add_argument("--hidden", type=int)
    s.add_argument("--restarts", type=int)
    s.add_argument("--optimizer", choices=["adam", "gd"])
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("explain", parents=[common], help="explain one node")
    s.add_argument("--graph", type=Path, required=True)
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--node", type=int, required=True)
    s.add_argument("--method", default="banzhaf", choices=["random", "topk", "greedy", "shapley", "banzhaf"])
    s.add_argument("--budget", type=int, default=3)
    s.add_argument("--threshold", default=None, help="prune ratio (e.g. 0.05), 'hinge:B' or 'none'")
    s.add_argument("--coalitions", type=int, default=1500)
    s.add_argument("--coalition-size", default="budget", help="'budget', 'uniform' or an integer")
    s.add_argument("--permutations", type=int, default=50)
    s.add_argument("--hops", type=int, default=None)
    s.set_defaults(func=cmd_explain)

    for name, func, helptext in (
        ("experiment", cmd_experiment, "fidelity/time table over methods and budgets"),
        ("coalition-sweep", cmd_coalition_sweep, "vary coalition count and size for Banzhaf"),
    ):
        s = sub.add_parser(name, parents=[common, outputs, training], help=helptext)
        s.add_argument("--dataset", choices=[k.value for k in DatasetKind])
        s.add_argument("--budgets", type=_csv_list(int))
        s.add_argument("--methods", type=_csv_list(str), help="e.g. random,shapley,banzhaf:0,banzhaf:0.05")
        s.add_argument("--fraction", type=float, help="share of nodes sampled per repeat")
        s.add_argument("--repeats", type=int)
        s.add_argument("--noise-ratio", type=float)
        s.add_argument("--coalitions", type=int)
        s.add_argument("--permutations", type=int)
        s.add_argument("--hops", type=int)
        s.add_argument("--graph", type=Path, help="use this graph JSON instead of generating one")
        s.add_argument("--model", type=Path, help="use this model JSON instead of training")
        if name == "coalition-sweep":
            s.add_argument("--counts", type=_csv_list(int))
            s.add_argument("--sizes", type=_csv_list(int))
        s.set_defaults(func=func)

    s = sub.add_parser("sample-complexity", parents=[common, outputs], help="top-k failure rates at bound budgets")
    s.add_argument("--n", type=_csv_list(int))
    s.add_argument("--epsilon", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--trials", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--games", type=int)
    s.set_defaults(func=cmd_sample_complexity)

    s = sub.add_parser("safety-margin", parents=[common], help="closed-form vs brute-force safety margin")
    s.add_argument("--n", type=int, default=4)
    s.add_argument("--tau", type=float, default=1.0)
    s.add_argument("--weights", choices=["banzhaf", "shapley"], default="banzhaf")
    s.add_argument("--threshold", type=float, default=0.0, help="hinge cutoff B (absolute); 0 disables")
    s.add_argument("--restarts", type=int, default=8)
    s.add_argument("--out-dir", default=None, help="also write CSV/JSON here")
    s.add_argument("--name", default="safety-margin")
    s.set_defaults(func=cmd_safety_margin)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.ERROR,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "name", "") is None:
        args.name = args.command
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
