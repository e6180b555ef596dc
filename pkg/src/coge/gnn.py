"""Graph convolutional network with hand-written reverse mode.

Layer rule: H' = relu(A_hat @ H @ W + b) with A_hat the symmetrically
normalized adjacency with self-loops, D^{-1/2} (A + I) D^{-1/2}. The final
per-node activations Z feed the transport-based explainer; mean pooling and a
linear head produce the class logits. Everything runs in float64 so the
finite-difference gradient suites are meaningful.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphs import Dataset, Graph

CHECKPOINT_MAGIC = "gcn-checkpoint"
CHECKPOINT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised for unreadable or incompatible checkpoint files."""


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("batch_size and learning_rate must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam hyperparameters")


@dataclass(eq=False)
class GcnModel:
    """Stack of graph-conv layers plus a linear classifier on mean-pooled Z."""

    layers: list[tuple[np.ndarray, np.ndarray]]  # [(W d_in x d_out, b d_out), ...]
    classifier: tuple[np.ndarray, np.ndarray]    # (W hidden x n_classes, b n_classes)

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.classifier[0].shape[1]

    def parameters(self) -> list[np.ndarray]:
        flat: list[np.ndarray] = []
        for W, b in self.layers:
            flat.extend((W, b))
        flat.extend(self.classifier)
        return flat

    def copy(self) -> "GcnModel":
        return GcnModel(
            layers=[(W.copy(), b.copy()) for W, b in self.layers],
            classifier=(self.classifier[0].copy(), self.classifier[1].copy()),
        )

    def check_finite(self) -> None:
        for p in self.parameters():
            if not np.all(np.isfinite(p)):
                raise FloatingPointError("model parameters contain NaN/Inf")


@dataclass
class EmbeddingSet:
    """Final per-node embeddings of one graph (rows align with node ids)."""

    graph_id: int
    Z: np.ndarray  # (n, hidden)


def init_model(
    rng: np.random.Generator,
    input_dim: int = 10,
    hidden_dim: int = 20,
    n_layers: int = 5,
    n_classes: int = 2,
) -> GcnModel:
    """Glorot-uniform weights, zero biases."""

    def glorot(d_in: int, d_out: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (d_in + d_out))
        return rng.uniform(-limit, limit, size=(d_in, d_out))

    layers = []
    d_in = input_dim
    for _ in range(n_layers):
        layers.append((glorot(d_in, hidden_dim), np.zeros(hidden_dim)))
        d_in = hidden_dim
    classifier = (glorot(hidden_dim, n_classes), np.zeros(n_classes))
    return GcnModel(layers=layers, classifier=classifier)


def normalized_adjacency(g: Graph) -> np.ndarray:
    """D^{-1/2} (A + I) D^{-1/2}; constant w.r.t. node features."""
    A = g.adjacency()
    np.fill_diagonal(A, 1.0)
    d = A.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return A * inv_sqrt[:, None] * inv_sqrt[None, :]


def _forward_cached(model: GcnModel, X: np.ndarray, A_hat: np.ndarray):
    """Forward pass retaining the per-layer tensors the backward pass needs."""
    H = X
    cache = []  # (P = A_hat @ H_prev, pre-activation)
    for W, b in model.layers:
        P = A_hat @ H
        pre = P @ W + b
        H = np.maximum(pre, 0.0)
        cache.append((P, pre))
    Z = H
    pooled = Z.mean(axis=0)
    Wc, bc = model.classifier
    logits = pooled @ Wc + bc
    return logits, Z, pooled, cache


def forward(model: GcnModel, g: Graph, A_hat: np.ndarray | None = None):
    """Return (logits, EmbeddingSet). Z is the post-activation output of the
    last graph-conv layer, before pooling."""
    if g.features.shape[1] != model.input_dim:
        raise ValueError(
            f"graph {g.id}: feature dim {g.features.shape[1]} != model input {model.input_dim}"
        )
    if A_hat is None:
        A_hat = normalized_adjacency(g)
    logits, Z, _, _ = _forward_cached(model, g.features, A_hat)
    return logits, EmbeddingSet(graph_id=g.id, Z=Z)


def _backward(model: GcnModel, X: np.ndarray, A_hat: np.ndarray, Z, pooled, cache,
              dlogits: np.ndarray):
    """Reverse mode from dL/dlogits to parameter grads and dL/dX."""
    Wc, _ = model.classifier
    n = X.shape[0]
    dWc = np.outer(pooled, dlogits)
    dbc = dlogits.copy()
    dpooled = Wc @ dlogits
    dH = np.tile(dpooled / n, (n, 1))
    layer_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.layers)
    for l in range(len(model.layers) - 1, -1, -1):
        W, _ = model.layers[l]
        P, pre = cache[l]
        dpre = dH * (pre > 0)
        layer_grads[l] = (P.T @ dpre, dpre.sum(axis=0))
        dH = A_hat @ (dpre @ W.T)  # A_hat is symmetric
    dX = dH
    return layer_grads, (dWc, dbc), dX


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def predict_proba(model: GcnModel, g: Graph, A_hat: np.ndarray | None = None) -> np.ndarray:
    logits, _ = forward(model, g, A_hat)
    return softmax(logits)


def loss_and_grads(model: GcnModel, graphs: list[Graph], labels: list[int],
                   adjs: list[np.ndarray] | None = None):
    """Mean softmax cross-entropy over a batch plus parameter gradients,
    ordered as ``model.parameters()``."""
    if adjs is None:
        adjs = [normalized_adjacency(g) for g in graphs]
    grads = [np.zeros_like(p) for p in model.parameters()]
    total = 0.0
    for g, y, A_hat in zip(graphs, labels, adjs):
        logits, Z, pooled, cache = _forward_cached(model, g.features, A_hat)
        p = softmax(logits)
        total += -np.log(max(p[y], 1e-300))
        dlogits = p.copy()
        dlogits[y] -= 1.0
        layer_grads, (dWc, dbc), _ = _backward(model, g.features, A_hat, Z, pooled, cache, dlogits)
        k = 0
        for dW, db in layer_grads:
            grads[k] += dW
            grads[k + 1] += db
            k += 2
        grads[k] += dWc
        grads[k + 1] += dbc
    B = len(graphs)
    return total / B, [gr / B for gr in grads]


def input_gradient(model: GcnModel, g: Graph, class_idx: int,
                   A_hat: np.ndarray | None = None) -> np.ndarray:
    """Exact gradient of the selected class logit w.r.t. every feature entry."""
    if not (0 <= class_idx < model.n_classes):
        raise ValueError(f"class index {class_idx} out of range")
    if g.features.shape[1] != model.input_dim:
        raise ValueError(f"feature dim {g.features.shape[1]} != model input {model.input_dim}")
    if A_hat is None:
        A_hat = normalized_adjacency(g)
    logits, Z, pooled, cache = _forward_cached(model, g.features, A_hat)
    dlogits = np.zeros_like(logits)
    dlogits[class_idx] = 1.0
    _, _, dX = _backward(model, g.features, A_hat, Z, pooled, cache, dlogits)
    return dX


def accuracy(model: GcnModel, graphs: list[Graph],
             adjs: list[np.ndarray] | None = None) -> float:
    if not graphs:
        return float("nan")
    if adjs is None:
        adjs = [normalized_adjacency(g) for g in graphs]
    hits = 0
    for g, A_hat in zip(graphs, adjs):
        logits, _ = forward(model, g, A_hat)
        hits += int(np.argmax(logits) == g.label)
    return hits / len(graphs)


class AdamState:
    """Plain Adam with bias correction over a flat parameter list."""

    def __init__(self, params: list[np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, gr, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * gr
            v *= self.beta2
            v += (1.0 - self.beta2) * gr * gr
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def train(ds: Dataset, cfg: TrainConfig | None = None):
    """Train on the train split; returns (model, per-epoch history).

    Deterministic given ``cfg.seed``: the RNG initializes the weights first,
    then drives the per-epoch shuffles.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    train_graphs = ds.train_graphs()
    test_graphs = ds.test_graphs()
    labels_present = {g.label for g in train_graphs}
    if labels_present != {0, 1}:
        raise ValueError("training split must contain both classes")
    rng = np.random.default_rng(cfg.seed)
    model = init_model(rng, input_dim=ds.feature_dim or 10)
    adjs_train = [normalized_adjacency(g) for g in train_graphs]
    adjs_test = [normalized_adjacency(g) for g in test_graphs]
    opt = AdamState(model.parameters(), cfg.learning_rate,
                    cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    params = model.parameters()
    history: list[dict] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_graphs))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = [train_graphs[i] for i in idx]
            batch_adjs = [adjs_train[i] for i in idx]
            batch_labels = [g.label for g in batch]
            loss, grads = loss_and_grads(model, batch, batch_labels, batch_adjs)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}, batch {n_batches}"
                )
            opt.step(params, grads)
            epoch_loss += loss * len(batch)
            n_batches += 1
        model.check_finite()
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / len(train_graphs),
            "train_acc": accuracy(model, train_graphs, adjs_train),
            "test_acc": accuracy(model, test_graphs, adjs_test),
        })
    return model, history


def save_model(model: GcnModel, path: str | Path) -> None:
    """Versioned JSON checkpoint; float repr round-trips exactly, so saved
    parameters reload bit-identically."""
    payload = {
        "format": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "layers": [[W.tolist(), b.tolist()] for W, b in model.layers],
        "classifier": [model.classifier[0].tolist(), model.classifier[1].tolist()],
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload), encoding="utf-8")
    tmp.replace(path)


def load_model(path: str | Path) -> GcnModel:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"unreadable checkpoint: {exc.msg}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_MAGIC:
        raise ModelFormatError("not a GCN checkpoint (bad magic)")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ModelFormatError(f"unsupported checkpoint version {payload.get('version')!r}")
    try:
        layers = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64))
                  for W, b in payload["layers"]]
        Wc, bc = payload["classifier"]
        classifier = (np.asarray(Wc, dtype=np.float64), np.asarray(bc, dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed checkpoint payload: {exc}") from exc
    model = GcnModel(layers=layers, classifier=classifier)
    model.check_finite()
    return model
