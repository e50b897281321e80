"""A small dense GCN classifier with hand-written backpropagation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from banzhaf_cfe.graph import LabeledGraph, normalized_adjacency


class TrainingError(RuntimeError):
    pass


@dataclass
class GcnModel:
    """Stacked GCN layers ``H <- act(A_hat H W + b)``; no activation on the last layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float).reshape(-1) for b in self.biases]
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("need one bias per weight matrix and at least one layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {l}: weight {w.shape} / bias {b.shape} mismatch")
            if l and self.weights[l - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {l} input dim does not chain from layer {l - 1}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l} has non-finite parameters")

    @property
    def layer_count(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def class_count(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [w.shape[1] for w in self.weights]

    @classmethod
    def init(cls, dims: Sequence[int], rng: np.random.Generator, bias_scale: float = 0.0) -> "GcnModel":
        """Glorot-uniform weights; hidden biases uniform in ``[-bias_scale, bias_scale]``.

        Constant node features make every hidden unit linear in the aggregated
        degree signal when biases start at zero, and training then stalls at the
        class prior. Spread-out biases place the ReLU kinks inside that range.
        """
        weights, biases = [], []
        last = len(dims) - 2
        for l, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            if l < last and bias_scale > 0:
                biases.append(rng.uniform(-bias_scale, bias_scale, size=fan_out))
            else:
                biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "GcnModel":
        return cls(
            [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
            [np.zeros(b) for b in dims[1:]],
        )

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "GcnModel":
        return GcnModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "layers": [
                {"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GcnModel":
        layers = data["layers"]
        return cls([l["weight"] for l in layers], [l["bias"] for l in layers])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "GcnModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logits(model: GcnModel, a_hat: np.ndarray, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"feature dim {x.shape[-1]} != model input dim {model.input_dim}")
    h = x
    last = model.layer_count - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = a_hat @ (h @ w) + b
        if l < last:
            h = np.maximum(h, 0.0)
    return h


def forward_with(model: GcnModel, a_hat: np.ndarray, x: np.ndarray) -> np.ndarray:
    return softmax(logits(model, a_hat, x))


def forward(model: GcnModel, g: LabeledGraph) -> np.ndarray:
    """Class probabilities for every node, shape ``(n, C)``."""
    if g.feature_dim != model.input_dim:
        raise ValueError(f"feature dim {g.feature_dim} != model input dim {model.input_dim}")
    return forward_with(model, normalized_adjacency(g), g.features)


def argmax_lowest(row: np.ndarray) -> int:
    # np.argmax already returns the first maximal index
    return int(np.argmax(row))


def predicted_class(model: GcnModel, g: LabeledGraph, v: int) -> int:
    if not 0 <= v < g.node_count:
        raise ValueError(f"node {v} out of range")
    return argmax_lowest(forward(model, g)[v])


# -- training -----------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 0.05
    weight_decay: float = 5e-4
    train_fraction: float = 0.8
    seed: int = 0
    hidden_dim: int = 32
    optimizer: str = "adam"
    bias_init: float = 2.0
    restarts: int = 3

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must be in (0, 1]")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError("optimizer must be 'adam' or 'gd'")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainResult:
    model: GcnModel
    train_accuracy: float
    test_accuracy: float
    train_idx: np.ndarray
    test_idx: np.ndarray
    losses: list[float] = field(default_factory=list)


def loss_and_grads(
    model: GcnModel,
    a_hat: np.ndarray,
    x: np.ndarray,
    labels: np.ndarray,
    idx: np.ndarray,
    weight_decay: float = 0.0,
) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy over ``idx`` plus L2 on weights; gradients in ``parameters()`` order."""
    hs = [x]  # layer inputs
    pre = []  # pre-activations
    h = x
    last = model.layer_count - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a_hat @ (h @ w) + b
        pre.append(z)
        h = np.maximum(z, 0.0) if l < last else z
        if l < last:
            hs.append(h)
    p = softmax(pre[-1])
    m = len(idx)
    y = labels[idx]
    loss = -np.mean(np.log(p[idx, y] + 1e-300))
    loss += 0.5 * weight_decay * sum(float(np.sum(w * w)) for w in model.weights)

    dz = np.zeros_like(p)
    dz[idx] = p[idx]
    dz[idx, y] -= 1.0
    dz /= m
    grads: list[np.ndarray] = [None] * (2 * model.layer_count)  # type: ignore[list-item]
    for l in range(last, -1, -1):
        agg = a_hat @ hs[l]  # A_hat symmetric: d/dW of A_hat H W
        grads[2 * l] = agg.T @ dz + weight_decay * model.weights[l]
        grads[2 * l + 1] = dz.sum(axis=0)
        if l:
            dh = a_hat @ (dz @ model.weights[l].T)
            dz = dh * (pre[l - 1] > 0)
    return float(loss), grads


def split_nodes(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def _fit(model, a_hat, x, labels, train_idx, cfg: TrainConfig) -> list[float]:
    params = model.parameters()
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    losses = []
    for epoch in range(1, cfg.epochs + 1):
        loss, grads = loss_and_grads(model, a_hat, x, labels, train_idx, cfg.weight_decay)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        losses.append(loss)
        for i, (p, gr) in enumerate(zip(params, grads)):
            if cfg.optimizer == "gd":
                p -= cfg.learning_rate * gr
                continue
            m1[i] = beta1 * m1[i] + (1 - beta1) * gr
            m2[i] = beta2 * m2[i] + (1 - beta2) * gr * gr
            mhat = m1[i] / (1 - beta1**epoch)
            vhat = m2[i] / (1 - beta2**epoch)
            p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
    losses.append(loss_and_grads(model, a_hat, x, labels, train_idx, cfg.weight_decay)[0])
    return losses


def train(g: LabeledGraph, layers: int, cfg: TrainConfig | None = None) -> TrainResult:
    """Full-batch training on a random ``train_fraction`` split.

    Runs ``cfg.restarts`` independent initializations and keeps the one with
    the lowest final training loss.
    """
    cfg = cfg or TrainConfig()
    if layers < 1:
        raise ValueError("need at least one layer")
    labels = np.asarray(g.labels)
    classes = int(labels.max()) + 1
    dims = [g.feature_dim] + [cfg.hidden_dim] * (layers - 1) + [classes]
    train_idx, test_idx = split_nodes(g.node_count, cfg.train_fraction, cfg.seed)
    a_hat = sparse.csr_matrix(normalized_adjacency(g))
    x = g.features

    best: tuple[float, GcnModel, list[float]] | None = None
    for restart in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, restart])
        model = GcnModel.init(dims, rng, cfg.bias_init)
        losses = _fit(model, a_hat, x, labels, train_idx, cfg)
        if best is None or losses[-1] < best[0]:
            best = (losses[-1], model, losses)
    assert best is not None
    _, model, losses = best

    pred = forward_with(model, a_hat, x).argmax(axis=1)
    train_acc = float(np.mean(pred[train_idx] == labels[train_idx]))
    test_acc = float(np.mean(pred[test_idx] == labels[test_idx])) if len(test_idx) else float("nan")
    return TrainResult(model, train_acc, test_acc, train_idx, test_idx, losses)


GradFn = Callable[[GcnModel, np.ndarray, np.ndarray, np.ndarray, np.ndarray], tuple[float, list[np.ndarray]]]


def grad_check(
    model: GcnModel,
    g: LabeledGraph,
    labels: Sequence[int],
    epsilon: float = 1e-4,
    *,
    samples: int = 50,
    seed: int = 0,
    weight_decay: float = 0.0,
    grad_fn: GradFn | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``samples`` parameter entries are drawn at random across all layers. A probe
    whose ``±epsilon`` step flips any hidden ReLU on or off straddles a kink,
    where the loss is not differentiable and the central difference is
    meaningless; such probes are skipped and another entry is drawn instead.
    ``grad_fn`` substitutes the analytic gradient (used for negative controls).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    a_hat = normalized_adjacency(g)
    x = g.features
    y = np.asarray(labels)
    idx = np.arange(g.node_count)
    probe = model.copy()

    def loss_only() -> float:
        return loss_and_grads(probe, a_hat, x, y, idx, weight_decay)[0]

    if grad_fn is None:
        _, analytic = loss_and_grads(probe, a_hat, x, y, idx, weight_decay)
    else:
        _, analytic = grad_fn(probe, a_hat, x, y, idx)

    def pattern() -> np.ndarray:
        h, signs = x, []
        for w, b in zip(probe.weights[:-1], probe.biases[:-1]):
            h = a_hat @ (h @ w) + b
            signs.append((h > 0).ravel())
            h = np.maximum(h, 0.0)
        return np.concatenate(signs) if signs else np.zeros(0, dtype=bool)

    params = probe.parameters()
    sizes = np.array([p.size for p in params])
    rng = np.random.default_rng(seed)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    base = pattern()
    worst = 0.0
    used = 0
    for f in rng.permutation(int(sizes.sum())):
        if used == samples:
            break
        k = int(np.searchsorted(offsets, f, side="right") - 1)
        pos = np.unravel_index(int(f - offsets[k]), params[k].shape)
        old = params[k][pos]
        params[k][pos] = old + epsilon
        up = loss_only()
        straddles = not np.array_equal(pattern(), base)
        params[k][pos] = old - epsilon
        down = loss_only()
        straddles = straddles or not np.array_equal(pattern(), base)
        params[k][pos] = old
        if straddles:
            continue
        used += 1
        numeric = (up - down) / (2 * epsilon)
        exact = analytic[k][pos]
        denom = max(abs(numeric), abs(exact), 1e-8)
        worst = max(worst, abs(numeric - exact) / denom)
    if used == 0:
        raise ValueError("every probed parameter straddles a ReLU kink; lower epsilon")
    return worst
