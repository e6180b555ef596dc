"""Contrastive explanation of graph classifications, plus baselines.

The explainer reweights the nodes of the explained graph on the probability
simplex (w = softmax(theta)) and minimizes

    mean transport distance to the k nearest different-label graphs
  - mean transport distance to the k nearest same-label graphs
  + distance between the reweighted graph and its uniformly weighted self,

all distances measured between final node-embedding sets with the target side
uniformly weighted. Nodes that end up with low weight are the explanation;
node importance is 1/n - w_i and an edge scores the sum of its endpoints.

Baselines: random edge scores, node occlusion (drop all edges incident to a
node, keep the node), and gradient sensitivity (L2 norm of the input-feature
gradient rows).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .gnn import AdamState, GcnModel, forward, input_gradient, normalized_adjacency, predict_proba
from .graphs import Dataset, Edge, Graph
from .transport import (
    TransportProblem,
    _solve_potentials,
    cost_matrix,
    default_epsilon,
    sinkhorn,
    uniform_weights,
)

# variant -> (coef of diff-label term, coef of same-label term, coef of
# uniformity term, distance used for all terms)
VARIANTS: dict[str, tuple[float, float, float, str]] = {
    "neg_same":      (0.0, -1.0, 0.0, "ot"),
    "neg_same_self": (0.0, -1.0, 1.0, "ot"),
    "diff":          (1.0,  0.0, 0.0, "ot"),
    "diff_self":     (1.0,  0.0, 1.0, "ot"),
    "diff_neg_same": (1.0, -1.0, 0.0, "ot"),
    "full_average":  (1.0, -1.0, 1.0, "average"),
    "full_ot":       (1.0, -1.0, 1.0, "ot"),
}

BASELINE_METHODS = ("random", "occlusion", "sensitivity")


@dataclass
class ExplainConfig:
    k: int = 10
    learning_rate: float = 0.1
    steps: int = 200
    seed: int = 0
    variant: str = "full_ot"
    distance_mode: str = "debiased"   # "debiased" | "entropic"
    sign_convention: str = "eq1"      # "eq1" | "flipped"
    eps_scale: float = 0.05
    sinkhorn_tol: float = 1e-7
    sinkhorn_max_iter: int = 2000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.k < 1 or self.steps < 0 or self.learning_rate <= 0:
            raise ValueError("k must be >= 1, steps >= 0, learning_rate > 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; one of {sorted(VARIANTS)}")
        if self.distance_mode not in ("debiased", "entropic"):
            raise ValueError(f"unknown distance_mode {self.distance_mode!r}")
        if self.sign_convention not in ("eq1", "flipped"):
            raise ValueError(f"unknown sign_convention {self.sign_convention!r}")
        if self.eps_scale <= 0 or self.sinkhorn_tol <= 0 or self.sinkhorn_max_iter < 1:
            raise ValueError("eps_scale, sinkhorn_tol, sinkhorn_max_iter must be positive")


@dataclass
class ContrastSets:
    """Nearest training graphs by uniform-weight transport distance."""

    same_label: list[int]
    diff_label: list[int]
    distances: dict[int, float]


@dataclass
class ContrastEmbeddings:
    """Embedding matrices of the contrast graphs, targets of the loss terms."""

    same: list[np.ndarray]
    diff: list[np.ndarray]


@dataclass
class ExplanationResult:
    graph_id: int
    edge_importance: list[tuple[Edge, float]]
    w: np.ndarray | None = None
    node_importance: np.ndarray | None = None
    loss_trace: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def edge_scores(self) -> dict[Edge, float]:
        return {e: s for e, s in self.edge_importance}

    def to_json(self) -> str:
        return json.dumps({
            "graph_id": self.graph_id,
            "w": None if self.w is None else self.w.tolist(),
            "node_importance": (
                None if self.node_importance is None else self.node_importance.tolist()
            ),
            "edge_importance": [[u, v, float(s)] for (u, v), s in self.edge_importance],
            "loss_trace": [float(x) for x in self.loss_trace],
            "config": self.config,
        })

    @classmethod
    def from_json(cls, text: str) -> "ExplanationResult":
        rec = json.loads(text)
        return cls(
            graph_id=rec["graph_id"],
            edge_importance=[((int(u), int(v)), float(s)) for u, v, s in rec["edge_importance"]],
            w=None if rec["w"] is None else np.asarray(rec["w"], dtype=np.float64),
            node_importance=(
                None if rec["node_importance"] is None
                else np.asarray(rec["node_importance"], dtype=np.float64)
            ),
            loss_trace=list(rec["loss_trace"]),
            config=rec.get("config", {}),
        )


def stable_softmax(theta: np.ndarray) -> np.ndarray:
    z = theta - theta.max()
    e = np.exp(z)
    return e / e.sum()


def embed_corpus(model: GcnModel, graphs: list[Graph]) -> dict[int, np.ndarray]:
    """Final node embeddings per graph id; computed once, shared read-only."""
    out: dict[int, np.ndarray] = {}
    for g in graphs:
        _, emb = forward(model, g)
        Z = emb.Z
        Z.setflags(write=False)
        out[g.id] = Z
    return out


def uniform_ot_distance(Z_a: np.ndarray, Z_b: np.ndarray, cfg: ExplainConfig) -> float:
    """Transport cost between two embedding sets at uniform weights; the
    similarity used to pick contrast graphs."""
    C = cost_matrix(Z_a, Z_b)
    res = sinkhorn(
        TransportProblem(uniform_weights(C.shape[0]), uniform_weights(C.shape[1]), C),
        eps=default_epsilon(C, cfg.eps_scale),
        tol=cfg.sinkhorn_tol,
        max_iter=cfg.sinkhorn_max_iter,
    )
    return res.value


def select_contrast_sets(
    g: Graph,
    model: GcnModel,
    ds: Dataset,
    k: int = 10,
    corpus: dict[int, np.ndarray] | None = None,
    distances: dict[int, float] | None = None,
    cfg: ExplainConfig | None = None,
) -> ContrastSets:
    """k nearest same-label and k nearest different-label training graphs.

    ``corpus`` (precomputed embeddings) and ``distances`` (precomputed
    uniform-OT distances from g, keyed by graph id) avoid recomputation when
    explaining many graphs; ties break by ascending graph id.
    """
    cfg = cfg or ExplainConfig()
    train = ds.train_graphs()
    same_pool = [h for h in train if h.label == g.label and h.id != g.id]
    diff_pool = [h for h in train if h.label != g.label]
    if not same_pool or not diff_pool:
        raise ValueError(f"graph {g.id}: empty contrast pool for one of the labels")
    if corpus is None:
        corpus = embed_corpus(model, train)
    if distances is None:
        _, emb_g = forward(model, g)
        distances = {
            h.id: uniform_ot_distance(emb_g.Z, corpus[h.id], cfg)
            for h in same_pool + diff_pool
        }
    def nearest(pool: list[Graph]) -> list[int]:
        ranked = sorted(pool, key=lambda h: (distances[h.id], h.id))
        return [h.id for h in ranked[: min(k, len(ranked))]]
    same_ids = nearest(same_pool)
    diff_ids = nearest(diff_pool)
    kept = {i: float(distances[i]) for i in same_ids + diff_ids}
    return ContrastSets(same_label=same_ids, diff_label=diff_ids, distances=kept)


class _OtPairTerm:
    """Transport distance from the reweighted source set to one uniformly
    weighted target set; keeps warm-start potentials across optimizer steps.

    Values are the regularized (dual) optima and gradients the corresponding
    potentials, so the optimized objective and its gradient agree exactly.
    The potentials' additive gauge is irrelevant: the softmax Jacobian
    downstream annihilates constants.
    """

    def __init__(self, Z_src: np.ndarray, Z_tgt: np.ndarray, cfg: ExplainConfig):
        self.cfg = cfg
        self.C_ab = cost_matrix(Z_src, Z_tgt)
        self.eps = default_epsilon(self.C_ab, cfg.eps_scale)
        self.b = uniform_weights(self.C_ab.shape[1])
        self._same_sets = Z_src.shape == Z_tgt.shape and np.array_equal(Z_src, Z_tgt)
        self._g_ab = None
        self._g_aa = None
        if self.eps <= 0:
            # All-zero cross costs: every embedding coincides, the distance is
            # identically zero for any w.
            self.trivial = True
            self.C_aa = None
            self.bb_dual = 0.0
            return
        self.trivial = False
        if cfg.distance_mode == "debiased":
            self.C_aa = cost_matrix(Z_src, Z_src)
            *_, self.bb_dual, _, _, _ = self._solve(
                self.b, self.b, cost_matrix(Z_tgt, Z_tgt), None)
        else:
            self.C_aa = None
            self.bb_dual = 0.0

    def _solve(self, a, b, C, init_g):
        return _solve_potentials(a, b, C, self.eps, self.cfg.sinkhorn_tol,
                                 self.cfg.sinkhorn_max_iter, init_g)

    def eval(self, w: np.ndarray):
        """Return (value, grad wrt w, n_subproblems, n_unconverged)."""
        if self.trivial:
            return 0.0, np.zeros(len(w)), 0, 0
        if (
            self.cfg.distance_mode == "debiased"
            and self._same_sets
            and np.array_equal(w, self.b)
        ):
            # S(alpha, alpha) = 0 with vanishing tangent gradient; returning
            # exact zeros keeps the optimizer exactly at uniform weights when
            # nothing else pulls on it.
            return 0.0, np.zeros(len(w)), 0, 0
        f_ab, g_ab, dual_ab, _, conv_ab, _ = self._solve(w, self.b, self.C_ab, self._g_ab)
        self._g_ab = g_ab
        if self.cfg.distance_mode == "debiased":
            f_aa, g_aa, dual_aa, _, conv_aa, _ = self._solve(w, w, self.C_aa, self._g_aa)
            self._g_aa = g_aa
            value = dual_ab - 0.5 * dual_aa - 0.5 * self.bb_dual
            grad = f_ab - 0.5 * (f_aa + g_aa)
            return value, grad, 2, int(not conv_ab) + int(not conv_aa)
        return dual_ab, f_ab, 1, int(not conv_ab)


class _AvgPairTerm:
    """Euclidean distance between the w-weighted mean source embedding and the
    uniform mean target embedding (the closed-form ablation distance)."""

    def __init__(self, Z_src: np.ndarray, Z_tgt: np.ndarray):
        self.Z = Z_src
        self.target = Z_tgt.mean(axis=0)

    def eval(self, w: np.ndarray):
        diff = self.Z.T @ w - self.target
        d = float(np.linalg.norm(diff))
        if d < 1e-12:
            return 0.0, np.zeros(len(w)), 0, 0
        return d, (self.Z @ diff) / d, 0, 0


@dataclass
class _LossDiagnostics:
    subproblems: int = 0
    unconverged: int = 0


class CogeObjective:
    """The composed contrastive loss over simplex weights, with one persistent
    warm-started solver per contrast pair."""

    def __init__(self, Z_g: np.ndarray, contrast: ContrastEmbeddings, cfg: ExplainConfig):
        cfg.validate()
        self.cfg = cfg
        diff_c, same_c, self_c, dist = VARIANTS[cfg.variant]
        if cfg.sign_convention == "flipped":
            diff_c, same_c = -diff_c, -same_c
        make = (lambda Zt: _AvgPairTerm(Z_g, Zt)) if dist == "average" else (
            lambda Zt: _OtPairTerm(Z_g, Zt, cfg))
        self.terms: list[tuple[float, object]] = []
        if diff_c != 0.0 and contrast.diff:
            coef = diff_c / len(contrast.diff)
            self.terms.extend((coef, make(Zt)) for Zt in contrast.diff)
        if same_c != 0.0 and contrast.same:
            coef = same_c / len(contrast.same)
            self.terms.extend((coef, make(Zt)) for Zt in contrast.same)
        if self_c != 0.0:
            self.terms.append((self_c, make(Z_g)))
        self.n_nodes = Z_g.shape[0]

    def __call__(self, w: np.ndarray):
        value = 0.0
        grad = np.zeros(self.n_nodes)
        diag = _LossDiagnostics()
        for coef, term in self.terms:
            v, gr, nsub, nbad = term.eval(w)
            value += coef * v
            grad += coef * gr
            diag.subproblems += nsub
            diag.unconverged += nbad
        return value, grad, diag


def softmax_jacobian_apply(w: np.ndarray, grad_w: np.ndarray) -> np.ndarray:
    """Pull a gradient in w back through w = softmax(theta)."""
    return w * (grad_w - float(w @ grad_w))


def coge_loss(
    w: np.ndarray,
    Z_g: np.ndarray,
    contrast: ContrastEmbeddings,
    cfg: ExplainConfig | None = None,
):
    """Loss value at simplex weights w and its gradient w.r.t. the softmax
    logits. Fresh solvers each call; use :class:`CogeObjective` directly when
    evaluating many points on the same instance."""
    cfg = cfg or ExplainConfig()
    objective = CogeObjective(np.asarray(Z_g, dtype=np.float64), contrast, cfg)
    w = np.asarray(w, dtype=np.float64)
    value, grad_w, _ = objective(w)
    return value, softmax_jacobian_apply(w, grad_w)


def _edge_scores_from_nodes(g: Graph, s: np.ndarray) -> list[tuple[Edge, float]]:
    """Edge importance as the sum of endpoint node importances."""
    return [(e, float(s[e[0]] + s[e[1]])) for e in g.edges]


def _result_config(cfg: ExplainConfig, method: str, extra: dict | None = None) -> dict:
    snap = asdict(cfg)
    snap["method"] = method
    if extra:
        snap.update(extra)
    return snap


def explain_coge(
    g: Graph,
    model: GcnModel,
    ds: Dataset,
    cfg: ExplainConfig | None = None,
    contrast: ContrastSets | None = None,
    corpus: dict[int, np.ndarray] | None = None,
    distances: dict[int, float] | None = None,
) -> ExplanationResult:
    """Optimize the node weights of g with Adam and derive importances.

    Deterministic given the config; ``contrast``/``corpus``/``distances``
    allow reusing precomputed selections and embeddings across many calls.
    """
    cfg = cfg or ExplainConfig()
    cfg.validate()
    _, emb = forward(model, g)
    Z_g = emb.Z
    if contrast is None:
        contrast = select_contrast_sets(g, model, ds, cfg.k, corpus=corpus,
                                        distances=distances, cfg=cfg)
    if corpus is None:
        corpus = embed_corpus(model, [ds.by_id(i) for i in
                                      contrast.same_label + contrast.diff_label])
    embeddings = ContrastEmbeddings(
        same=[corpus[i] for i in contrast.same_label],
        diff=[corpus[i] for i in contrast.diff_label],
    )
    objective = CogeObjective(Z_g, embeddings, cfg)
    n = g.n
    theta = np.zeros(n)
    opt = AdamState([theta], cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    trace: list[float] = []
    for step in range(cfg.steps):
        w = stable_softmax(theta)
        value, grad_w, diag = objective(w)
        if diag.subproblems > 0 and diag.unconverged == diag.subproblems:
            raise RuntimeError(
                f"graph {g.id}: all {diag.subproblems} transport sub-problems "
                f"unconverged at step {step} (tol={cfg.sinkhorn_tol})"
            )
        trace.append(float(value))
        opt.step([theta], [softmax_jacobian_apply(w, grad_w)])
    w = stable_softmax(theta)
    importance = 1.0 / n - w
    return ExplanationResult(
        graph_id=g.id,
        edge_importance=_edge_scores_from_nodes(g, importance),
        w=w,
        node_importance=importance,
        loss_trace=trace,
        config=_result_config(cfg, "coge", {
            "contrast_same": contrast.same_label,
            "contrast_diff": contrast.diff_label,
        }),
    )


def ablation_variants(
    g: Graph,
    model: GcnModel,
    ds: Dataset,
    cfg: ExplainConfig | None = None,
    variant: str = "full_ot",
    **kwargs,
) -> ExplanationResult:
    """Run the optimizer with one of the loss/distance variants."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; one of {sorted(VARIANTS)}")
    cfg = replace(cfg or ExplainConfig(), variant=variant)
    return explain_coge(g, model, ds, cfg, **kwargs)


def explain_random(g: Graph, seed: int = 0) -> ExplanationResult:
    """I.i.d. uniform edge scores; deterministic in (seed, graph id)."""
    rng = np.random.default_rng([seed, g.id])
    scores = rng.random(len(g.edges))
    return ExplanationResult(
        graph_id=g.id,
        edge_importance=[(e, float(s)) for e, s in zip(g.edges, scores)],
        config={"method": "random", "seed": seed},
    )


def explain_occlusion(g: Graph, model: GcnModel) -> ExplanationResult:
    """Node importance = drop in the predicted-class probability when all of
    the node's incident edges are removed (the node itself stays)."""
    A_hat = normalized_adjacency(g)
    logits, _ = forward(model, g, A_hat)
    cls = int(np.argmax(logits))
    p0 = predict_proba(model, g, A_hat)[cls]
    imp = np.zeros(g.n)
    for i in range(g.n):
        kept = tuple(e for e in g.edges if i not in e)
        occluded = Graph(id=g.id, n=g.n, edges=kept, features=g.features,
                         label=g.label, ground_truth_edges=())
        imp[i] = p0 - predict_proba(model, occluded)[cls]
    return ExplanationResult(
        graph_id=g.id,
        edge_importance=_edge_scores_from_nodes(g, imp),
        node_importance=imp,
        config={"method": "occlusion"},
    )


def explain_sensitivity(g: Graph, model: GcnModel) -> ExplanationResult:
    """Node importance = L2 norm of the predicted-class logit gradient with
    respect to the node's input features."""
    logits, _ = forward(model, g)
    cls = int(np.argmax(logits))
    grad = input_gradient(model, g, cls)
    imp = np.linalg.norm(grad, axis=1)
    return ExplanationResult(
        graph_id=g.id,
        edge_importance=_edge_scores_from_nodes(g, imp),
        node_importance=imp,
        config={"method": "sensitivity"},
    )


def save_explanation(result: ExplanationResult, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(result.to_json() + "\n", encoding="utf-8")
    tmp.replace(path)
