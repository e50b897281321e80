"""Figures for harness outputs, written as PNG files next to the CSVs."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _label(rec) -> str:
    if rec.method != "banzhaf":
        return rec.method
    return f"banzhaf b={rec.threshold:g}"


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_experiment(records: Sequence, path) -> Path:
    """Fidelity (with SD) and per-repeat wall time for each method, one group per budget."""
    budgets = sorted({r.budget for r in records})
    labels = list(dict.fromkeys(_label(r) for r in records))
    by_key = {(r.budget, _label(r)): r for r in records}
    width = 0.8 / max(1, len(labels))

    fig, (ax_f, ax_t) = plt.subplots(1, 2, figsize=(11, 4))
    for j, name in enumerate(labels):
        xs, fid, sd, wt = [], [], [], []
        for i, k in enumerate(budgets):
            rec = by_key.get((k, name))
            if rec is None:
                continue
            xs.append(i + (j - (len(labels) - 1) / 2) * width)
            fid.append(rec.fidelity)
            sd.append(rec.fidelity_sd)
            wt.append(rec.wall_time)
        ax_f.bar(xs, fid, width, yerr=sd, label=name, capsize=2)
        ax_t.bar(xs, wt, width, label=name)
    for ax, title in ((ax_f, "fidelity (lower is better)"), (ax_t, "wall time per repeat (s)")):
        ax.set_xticks(range(len(budgets)))
        ax.set_xticklabels([f"k={k}" for k in budgets])
        ax.set_title(title)
    ax_f.set_ylim(0, 1)
    ax_t.legend(fontsize=8)
    return _save(fig, path)


def plot_sweep(records: Sequence, path) -> Path:
    """Fidelity against coalition count and coalition size, one line per threshold."""
    panels = [s for s in ("count", "size") if any(r.sweep == s for r in records)]
    fig, axes = plt.subplots(1, max(1, len(panels)), figsize=(5.5 * max(1, len(panels)), 4), squeeze=False)
    for ax, sweep in zip(axes[0], panels):
        series = defaultdict(list)
        for r in records:
            if r.sweep != sweep:
                continue
            x = r.coalitions if sweep == "count" else int(r.coalition_size)
            series[(r.budget, r.threshold)].append((x, r.fidelity))
        for (k, b), pts in sorted(series.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"k={k}, b={b:g}")
        ax.set_xlabel("number of coalitions" if sweep == "count" else "coalition size")
        ax.set_ylabel("fidelity")
        ax.set_ylim(0, 1)
        ax.legend(fontsize=8)
    return _save(fig, path)


def plot_sample_complexity(rows: Sequence, path) -> Path:
    """Observed top-k failure rate per estimator against the allowed delta."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    names = [f"{r.estimator}\nn={r.n}" for r in rows]
    ax.bar(range(len(rows)), [r.failure_rate for r in rows], color="tab:blue")
    for i, r in enumerate(rows):
        ax.hlines(r.delta, i - 0.4, i + 0.4, colors="tab:red", linestyles="--")
        ax.text(i, r.failure_rate, f"{r.budget_calls} calls", ha="center", va="bottom", fontsize=8)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, fontsize=8)
    ax.set_ylabel("top-k failure rate")
    return _save(fig, path)
