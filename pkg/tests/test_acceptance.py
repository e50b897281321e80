"""Acceptance criteria 1-10.

Each test prints exactly one ``PASS``/``FAIL`` line for its criterion (also
repeated in the end-of-session summary) and then asserts the same verdict.
Tolerances are the stated ones; nothing is loosened. The end-to-end
criteria (7-9) run the full default protocol on TREE-CYCLES and take a few
minutes on one core.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from banzhaf_cfe.cli import main as cli_main
from banzhaf_cfe.datasets import DatasetKind, DatasetSpec, generate
from banzhaf_cfe.explain import ExplainerConfig
from banzhaf_cfe.game import TabulatedGame, ThresholdPolicy
from banzhaf_cfe.gcn import GcnModel, forward, grad_check
from banzhaf_cfe.graph import delete_edges, hop_distances
from banzhaf_cfe.harness import (
    DEFAULT_LAYERS,
    NOISE_METHODS,
    ExperimentConfig,
    prepare,
    run_experiment,
    run_reuse_study,
    run_sample_complexity_study,
)
from banzhaf_cfe.robustness import brute_force_safety_margin, safety_margin_closed_form
from banzhaf_cfe.semivalues import (
    SamplePolicy,
    banzhaf_mc,
    banzhaf_msr,
    banzhaf_weights,
    exact_banzhaf,
    exact_semivalue,
    exact_shapley,
    required_samples_mc,
    required_samples_msr,
    shapley_perm_mc,
    shapley_weights,
)

import oracles

VERDICTS: list[str] = []


def verdict(capsys, number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    VERDICTS.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


# -- 1 ----------------------------------------------------------------------------


def _dummy_game(n, rng, c):
    base = rng.random(2 ** (n - 1))
    base[0] = 0.0
    return TabulatedGame(np.concatenate([base, base + c]))


def _symmetric_game(n, rng):
    inner = rng.random((3, 2 ** (n - 2)))
    idx = np.arange(2**n)
    table = inner[(idx & 1) + ((idx >> 1) & 1), idx >> 2]
    return TabulatedGame(table - table[0])


def test_criterion_1_axioms(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = dict(efficiency=0.0, dummy=0.0, symmetry=0.0, linearity=0.0)
    for t in range(100):
        n = 2 + t % 9  # 2..10
        g = TabulatedGame.random(n, rng)
        worst["efficiency"] = max(worst["efficiency"], abs(exact_shapley(g).values.sum() - g.table[-1]))

        c = float(rng.normal())
        d = _dummy_game(n, rng, c)
        s = _symmetric_game(n, rng)
        g2 = TabulatedGame.random(n, rng)
        alpha, gamma = rng.normal(size=2) * 3
        mix = g.scaled(alpha) + g2.scaled(gamma)
        for w in (shapley_weights(n), banzhaf_weights(n)):
            worst["dummy"] = max(worst["dummy"], abs(exact_semivalue(d, w).values[-1] - c))
            sv = exact_semivalue(s, w).values
            worst["symmetry"] = max(worst["symmetry"], abs(sv[0] - sv[1]))
            lin = exact_semivalue(mix, w).values - (
                alpha * exact_semivalue(g, w).values + gamma * exact_semivalue(g2, w).values
            )
            worst["linearity"] = max(worst["linearity"], float(np.max(np.abs(lin))))
    elapsed = time.perf_counter() - start
    ok = (
        worst["efficiency"] <= 1e-9
        and worst["dummy"] <= 1e-12
        and worst["symmetry"] <= 1e-12
        and worst["linearity"] <= 1e-9
        and elapsed < 60
    )
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(capsys, 1, ok, f"100 games n=2..10: max {detail}; {elapsed:.1f}s")


# -- 2 ----------------------------------------------------------------------------


def test_criterion_2_estimators_match_exact(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    games = [TabulatedGame.random(8, rng) for _ in range(20)]
    seeds = 5
    mc_ok = msr_ok = shap_ok = 0
    worst = dict(mc=0.0, msr=0.0, shapley=0.0)
    for gi, g in enumerate(games):
        exact_b = exact_banzhaf(g).values
        exact_s = exact_shapley(g).values
        for s in range(seeds):
            sp = SamplePolicy(100_000, None, 1000 * gi + s)
            e_mc = float(np.max(np.abs(banzhaf_mc(g, None, sp).values - exact_b)))
            e_msr = float(np.max(np.abs(banzhaf_msr(g, None, sp).values - exact_b)))
            mc_ok += e_mc < 0.01
            msr_ok += e_msr < 0.01
            worst["mc"], worst["msr"] = max(worst["mc"], e_mc), max(worst["msr"], e_msr)
        e_s = float(np.max(np.abs(shapley_perm_mc(g, 20_000, None, gi).values - exact_s)))
        shap_ok += e_s < 0.02
        worst["shapley"] = max(worst["shapley"], e_s)
    runs = len(games) * seeds
    elapsed = time.perf_counter() - start
    ok = mc_ok >= 0.99 * runs and msr_ok >= 0.99 * runs and shap_ok == len(games) and elapsed < 300
    verdict(
        capsys,
        2,
        ok,
        f"MC {mc_ok}/{runs}, MSR {msr_ok}/{runs} below 0.01 (worst {worst['mc']:.4f}, {worst['msr']:.4f}); "
        f"Shapley {shap_ok}/{len(games)} below 0.02 (worst {worst['shapley']:.4f}); {elapsed:.0f}s",
    )


# -- 3 ----------------------------------------------------------------------------


def test_criterion_3_sample_complexity(capsys):
    start = time.perf_counter()
    mc_budget, msr_budget = required_samples_mc(8, 0.2, 0.1), required_samples_msr(8, 0.2, 0.1)
    rows = run_sample_complexity_study((8,), epsilon=0.2, delta=0.1, trials=200, k=3, seed=0)
    elapsed = time.perf_counter() - start
    by = {r.estimator: r for r in rows}
    ok = (
        mc_budget == oracles.mc_bound(8, 0.2, 0.1)
        and msr_budget == oracles.msr_bound(8, 0.2, 0.1)
        and all(r.failure_rate <= 0.1 and r.min_gap > 0.2 for r in rows)
        and elapsed < 600
    )
    verdict(
        capsys,
        3,
        ok,
        f"gap {by['banzhaf_mc'].min_gap:.3f} > 0.2; MC {mc_budget} calls -> failure "
        f"{by['banzhaf_mc'].failure_rate:.3f}, MSR {msr_budget} calls (ceil 3200 ln 400) -> failure "
        f"{by['banzhaf_msr'].failure_rate:.3f}, delta 0.1; {elapsed:.0f}s",
    )


# -- 4 ----------------------------------------------------------------------------


def test_criterion_4_msr_reuse(capsys):
    out = run_reuse_study(n=8, target=0.02, games=5, seeds=10, seed=0)
    ratio = out["ratio"]
    ok = ratio is not None and ratio >= 3
    verdict(
        capsys,
        4,
        ok,
        f"calls to mean max error 0.02 on n=8: MC {out['mc_calls']}, MSR {out['msr_calls']}, "
        f"ratio {ratio:.2f} (need >= 3, target 4)" if ratio else "target not reached",
    )


# -- 5 ----------------------------------------------------------------------------


def test_criterion_5_safety_margin(capsys):
    start = time.perf_counter()
    worst_match = worst_hinge = 0.0
    ratios = set()
    ordered = True
    for n in (3, 4, 5):
        for tau in (0.5, 1.0, 2.0):
            found = {}
            for name, w in (("banzhaf", banzhaf_weights(n)), ("shapley", shapley_weights(n))):
                plain = brute_force_safety_margin(n, tau, w)
                hinged = brute_force_safety_margin(n, tau, w, ThresholdPolicy.hinge(0.1, relative=False))
                closed = safety_margin_closed_form(n, tau, w)
                worst_match = max(worst_match, abs(plain.epsilon_found - closed))
                worst_hinge = max(worst_hinge, abs(hinged.epsilon_found - plain.epsilon_found))
                ratios.add(round(plain.epsilon_found / closed, 9))
                found[name] = (plain.epsilon_found, closed)
            ordered &= found["banzhaf"][0] >= found["shapley"][0] - 1e-9
            ordered &= found["banzhaf"][1] >= found["shapley"][1] - 1e-9
            if n == 3:
                ordered &= math.isclose(found["banzhaf"][1], tau * math.sqrt(2), rel_tol=1e-12)
    elapsed = time.perf_counter() - start
    match = worst_match <= 1e-3
    hinge = worst_hinge <= 1e-3
    ok = match and ordered and hinge and elapsed < 120
    verdict(
        capsys,
        5,
        ok,
        f"brute vs closed form max gap {worst_match:.3f} ({'ok' if match else 'exceeds 1e-3'}; "
        f"brute/closed ratios {sorted(ratios)}), Banzhaf >= Shapley {ordered}, "
        f"hinge vs plain max gap {worst_hinge:.1e}; {elapsed:.0f}s",
    )


# -- 6 ----------------------------------------------------------------------------


def test_criterion_6_gcn_numerics(capsys):
    worst_grad = worst_norm = 0.0
    pairs = 0
    local_ok = True
    for kind in DatasetKind:
        g = generate(DatasetSpec.default(kind, seed=0))
        layers = DEFAULT_LAYERS[kind]
        classes = max(g.labels) + 1
        model = GcnModel.init([g.feature_dim] + [20] * (layers - 1) + [classes], np.random.default_rng(6), 2.0)
        worst_grad = max(worst_grad, grad_check(model, g, g.labels, 1e-4, samples=60, weight_decay=5e-4))
        probs = forward(model, g)
        worst_norm = max(worst_norm, float(np.max(np.abs(probs.sum(axis=1) - 1))))
        rng = np.random.default_rng(60)
        count = 0
        for v in rng.permutation(g.node_count):
            near = hop_distances(g, int(v), layers)
            far = [e for e in g.edges if e[0] not in near and e[1] not in near]
            if not far:
                continue
            e = far[int(rng.integers(len(far)))]
            local_ok &= bool(np.array_equal(forward(model, delete_edges(g, [e]))[v], probs[v]))
            count += 1
            if count == 50:
                break
        pairs += count
    ok = worst_grad < 1e-4 and worst_norm <= 1e-9 and local_ok and pairs == 150
    verdict(
        capsys,
        6,
        ok,
        f"grad check max rel err {worst_grad:.1e}, softmax row deviation {worst_norm:.1e}, "
        f"locality bit-exact on {pairs} (node, far edge) pairs: {local_ok}",
    )


# -- 7 & 8: one full default run -------------------------------------------------


@pytest.fixture(scope="module")
def table_run():
    cfg = ExperimentConfig()  # TREE-CYCLES, k=3, 50% of nodes x 3 repeats, defaults throughout
    start = time.perf_counter()
    prep = prepare(cfg)
    out = run_experiment(cfg, prep)
    return prep, out, time.perf_counter() - start


def _by_label(records):
    return {(r.method if r.method != "banzhaf" else f"banzhaf:{r.threshold:g}"): r for r in records}


def test_criterion_7_table_reproduction(capsys, table_run):
    prep, out, elapsed = table_run
    r = _by_label(out.records)
    acc = prep.training.test_accuracy
    b0, rand, shap = r["banzhaf:0"], r["random"], r["shapley"]
    banzhaf = [r[k] for k in ("banzhaf:0", "banzhaf:0.01", "banzhaf:0.05")]
    time_ratio = b0.wall_time / shap.wall_time
    checks = {
        "accuracy": acc >= 0.80,
        "vs random": b0.fidelity <= rand.fidelity - 0.10,
        "vs shapley": all(b.fidelity <= shap.fidelity + 0.05 for b in banzhaf),
        "time": time_ratio <= 0.5,
        "runtime": elapsed < 1800,
        "no skips": out.skip_count == 0,
    }
    table = "; ".join(f"{k} {v.fidelity:.3f}/{v.wall_time:.1f}s" for k, v in r.items())
    failed = [k for k, v in checks.items() if not v]
    verdict(
        capsys,
        7,
        not failed,
        f"test acc {acc:.3f}; fidelity/time per repeat: {table}; Banzhaf b=0 / Shapley time "
        f"{time_ratio:.2f}; run {elapsed:.0f}s" + (f"; failed: {failed}" if failed else ""),
    )


def test_criterion_8_threshold_efficiency(capsys, table_run):
    _, out, _ = table_run
    r = _by_label(out.records)
    b0, b5 = r["banzhaf:0"], r["banzhaf:0.05"]
    ok = (
        b5.utility_calls < b0.utility_calls
        and b5.wall_time < b0.wall_time
        and abs(b5.fidelity - b0.fidelity) <= 0.05
    )
    verdict(
        capsys,
        8,
        ok,
        f"b=0.05 vs b=0: calls {b5.utility_calls:.0f} vs {b0.utility_calls:.0f}, time {b5.wall_time:.2f}s vs "
        f"{b0.wall_time:.2f}s, fidelity {b5.fidelity:.3f} vs {b0.fidelity:.3f}",
    )


# -- 9 ----------------------------------------------------------------------------


def test_criterion_9_noise(capsys):
    cfg = ExperimentConfig(noise_ratio=0.05, methods=tuple(ExplainerConfig.parse(m) for m in NOISE_METHODS))
    out = run_experiment(cfg)
    r = _by_label(out.records)
    shap = r["shapley"]
    banzhaf = [r[k] for k in ("banzhaf:0", "banzhaf:0.01", "banzhaf:0.1")]
    ok = (
        all(b.fidelity <= shap.fidelity + 0.05 for b in banzhaf)
        and all(b.wall_time < shap.wall_time for b in banzhaf)
        and out.skip_count == 0
    )
    table = "; ".join(f"{k} {v.fidelity:.3f}/{v.wall_time:.1f}s" for k, v in r.items())
    verdict(capsys, 9, ok, f"noise 5%, test acc {out.meta['test_accuracy']:.3f}: {table}")


# -- 10 ---------------------------------------------------------------------------


def test_criterion_10_cli_reproducibility(capsys, tmp_path):
    import json

    config = tmp_path / "small.json"
    config.write_text(
        json.dumps(
            {
                "dataset": {"kind": "tree-cycles", "base_size": 127, "motif_count": 15},
                "node_sample_fraction": 0.25,
                "repeats": 2,
                "train": {"epochs": 200, "restarts": 1},
            }
        )
    )
    commands = {
        "experiment": ["experiment", "--config", str(config)],
        "experiment-noise": ["experiment", "--config", str(config), "--noise-ratio", "0.05"],
        "coalition-sweep": ["coalition-sweep", "--config", str(config), "--counts", "200,400", "--sizes", "2,4"],
        "sample-complexity": ["sample-complexity", "--n", "6", "--trials", "10"],
        "safety-margin": ["safety-margin", "--n", "4", "--threshold", "0.1"],
    }
    same = {}
    for name, argv in commands.items():
        blobs = []
        for run in ("a", "b"):
            out_dir = tmp_path / run / name
            code = cli_main(argv + ["--threads", "1", "--seed", "11", "--out-dir", str(out_dir), "--name", name])
            assert code == 0
            blobs.append((out_dir / f"{name}.csv").read_bytes())
        same[name] = blobs[0] == blobs[1] and len(blobs[0]) > 0
    capsys.readouterr()
    ok = all(same.values())
    verdict(capsys, 10, ok, "byte-identical CSV on rerun: " + ", ".join(f"{k} {v}" for k, v in same.items()))
