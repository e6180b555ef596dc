"""Explanation-accuracy metric, per-class aggregation, and report files.

A method scores every edge of a graph; with x the number of ground-truth
motif edges, its accuracy on that graph is the fraction of ground-truth edges
among the x top-scored ones (ties broken by ascending edge index). Reports
aggregate per class as mean +/- population std plus the average of the two
class means.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import explain as ex
from .gnn import GcnModel
from .graphs import LABEL_CLIQUE, LABEL_CYCLE, Dataset, Edge, Graph
from .transport import TransportProblem, cost_matrix, default_epsilon, sinkhorn, uniform_weights

log = logging.getLogger("coge")

METHODS = ("coge",) + ex.BASELINE_METHODS


@dataclass
class EvalConfig:
    split: str = "train"
    workers: int = 1
    seed: int = 0
    explain: ex.ExplainConfig = field(default_factory=ex.ExplainConfig)
    max_error_fraction: float = 0.01

    def validate(self) -> None:
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        self.explain.validate()


@dataclass
class MethodReport:
    method: str
    per_graph: dict[int, float]
    cycle_mean: float
    cycle_std: float
    clique_mean: float
    clique_std: float
    avg: float
    n_errors: int = 0
    errors: list[str] = field(default_factory=list)


def explanation_accuracy(edge_scores, ground_truth_edges) -> float:
    """Fraction of the x ground-truth edges among the x top-scored edges.

    ``edge_scores`` is a sequence of ((u, v), score) covering all edges in
    the graph's edge order; ``ground_truth_edges`` must be non-empty and a
    subset of the scored edges.
    """
    gt = {(u, v) if u < v else (v, u) for u, v in ground_truth_edges}
    if not gt:
        raise ValueError("explanation accuracy is undefined for empty ground truth")
    edges = []
    scores = []
    for (u, v), s in edge_scores:
        edges.append((u, v) if u < v else (v, u))
        scores.append(float(s))
    if not gt <= set(edges):
        raise ValueError("edge scores do not cover every ground-truth edge")
    x = len(gt)
    order = sorted(range(len(edges)), key=lambda i: (-scores[i], i))
    top = {edges[i] for i in order[:x]}
    return len(top & gt) / x


def run_method(
    method: str,
    g: Graph,
    model: GcnModel,
    ds: Dataset,
    cfg: ex.ExplainConfig,
    seed: int = 0,
    contrast: ex.ContrastSets | None = None,
    corpus: dict[int, np.ndarray] | None = None,
) -> ex.ExplanationResult:
    """Dispatch one graph to a named method ('coge', a baseline, or an
    ablation variant name)."""
    if method == "random":
        return ex.explain_random(g, seed)
    if method == "occlusion":
        return ex.explain_occlusion(g, model)
    if method == "sensitivity":
        return ex.explain_sensitivity(g, model)
    if method == "coge":
        return ex.explain_coge(g, model, ds, cfg, contrast=contrast, corpus=corpus)
    if method in ex.VARIANTS:
        return ex.ablation_variants(g, model, ds, cfg, variant=method,
                                    contrast=contrast, corpus=corpus)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Precomputation shared by many explanations: corpus embeddings, pairwise
# uniform-OT distances, and per-graph contrast selections.

_PAIR_CTX: dict = {}


def _pairwise_init(ids, mats, cfg):
    _PAIR_CTX.update(ids=ids, mats=mats, cfg=cfg)


def _pairwise_row(i: int) -> tuple[int, np.ndarray]:
    ids, mats, cfg = _PAIR_CTX["ids"], _PAIR_CTX["mats"], _PAIR_CTX["cfg"]
    return i, _row_distances(i, ids, mats, cfg)


def _row_distances(i, ids, mats, cfg) -> np.ndarray:
    out = np.zeros(len(ids) - i - 1)
    for off, j in enumerate(range(i + 1, len(ids))):
        out[off] = ex.uniform_ot_distance(mats[i], mats[j], cfg)
    return out


def pairwise_uniform_distances(
    corpus: dict[int, np.ndarray],
    cfg: ex.ExplainConfig,
    workers: int = 1,
) -> tuple[list[int], np.ndarray]:
    """Symmetric matrix of uniform-weight OT distances between all corpus
    graphs; rows/columns follow sorted graph ids."""
    ids = sorted(corpus)
    mats = [corpus[i] for i in ids]
    n = len(ids)
    D = np.zeros((n, n))
    if workers <= 1 or n < 8:
        rows = (( i, _row_distances(i, ids, mats, cfg)) for i in range(n - 1))
        for i, row in rows:
            D[i, i + 1:] = row
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_pairwise_init,
                                 initargs=(ids, mats, cfg)) as pool:
            done = 0
            for i, row in pool.map(_pairwise_row, range(n - 1), chunksize=8):
                D[i, i + 1:] = row
                done += 1
                if done % 200 == 0:
                    log.info("pairwise distances: %d/%d rows", done, n - 1)
    D = D + D.T
    return ids, D


def precompute_contrast_sets(
    model: GcnModel,
    ds: Dataset,
    cfg: ex.ExplainConfig,
    split: str = "train",
    workers: int = 1,
    corpus: dict[int, np.ndarray] | None = None,
) -> dict[int, ex.ContrastSets]:
    """Contrast selections for every graph in ``split``, computed from one
    shared pairwise distance matrix. Candidates always come from the training
    split."""
    train = ds.train_graphs()
    targets = ds.subset(split)
    if corpus is None:
        union = {g.id: g for g in train + targets}
        corpus = ex.embed_corpus(model, list(union.values()))
    ids, D = pairwise_uniform_distances(corpus, cfg, workers=workers)
    index = {gid: i for i, gid in enumerate(ids)}
    out: dict[int, ex.ContrastSets] = {}
    for g in targets:
        row = D[index[g.id]]
        distances = {h.id: float(row[index[h.id]]) for h in train if h.id != g.id}
        out[g.id] = ex.select_contrast_sets(g, model, ds, cfg.k, corpus=corpus,
                                            distances=distances, cfg=cfg)
    return out


# ---------------------------------------------------------------------------
# Parallel per-graph evaluation.

_EVAL_CTX: dict = {}


def _eval_init(payload):
    _EVAL_CTX.update(payload)


def _eval_task(gid: int):
    g = _EVAL_CTX["graphs"][gid]
    method = _EVAL_CTX["method"]
    try:
        result = run_method(
            method, g, _EVAL_CTX["model"], _EVAL_CTX["ds"], _EVAL_CTX["cfg"],
            seed=_EVAL_CTX["seed"],
            contrast=_EVAL_CTX["contrast"].get(gid) if _EVAL_CTX["contrast"] else None,
            corpus=_EVAL_CTX["corpus"],
        )
        acc = explanation_accuracy(result.edge_importance, g.ground_truth_edges)
        text = result.to_json() if _EVAL_CTX["keep_results"] else None
        return gid, acc, text, None
    except Exception as exc:  # recorded per graph, judged in aggregate
        return gid, None, None, f"graph {gid}: {exc}"


def _run_over_split(method, ds, model, cfg: EvalConfig,
                    contrast_cache, corpus, keep_results: bool):
    graphs = sorted(ds.subset(cfg.split), key=lambda g: g.id)
    needs_ot = method == "coge" or (method in ex.VARIANTS and ex.VARIANTS[method][3] == "ot")
    if corpus is None and (method == "coge" or method in ex.VARIANTS):
        corpus = ex.embed_corpus(model, ds.train_graphs())
    payload = dict(
        graphs={g.id: g for g in graphs}, method=method, model=model, ds=ds,
        cfg=cfg.explain, seed=cfg.seed, contrast=contrast_cache or {},
        corpus=corpus, keep_results=keep_results,
    )
    gids = [g.id for g in graphs]
    if cfg.workers <= 1 or len(gids) < 4:
        _eval_init(payload)
        results = map(_eval_task, gids)
        yield from results
        _EVAL_CTX.clear()
    else:
        chunk = 4 if needs_ot else 32
        with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_eval_init,
                                 initargs=(payload,)) as pool:
            yield from pool.map(_eval_task, gids, chunksize=chunk)


def evaluate_method(
    method: str,
    ds: Dataset,
    model: GcnModel,
    cfg: EvalConfig | None = None,
    contrast_cache: dict[int, ex.ContrastSets] | None = None,
    corpus: dict[int, np.ndarray] | None = None,
    results_sink=None,
) -> MethodReport:
    """Run a method over the whole evaluation split and aggregate per class.

    Per-graph failures are recorded and excluded; the run aborts if more than
    ``max_error_fraction`` of the graphs fail. ``results_sink(gid, json)`` is
    invoked per graph when provided (used by the CLI to persist explanations).
    """
    cfg = cfg or EvalConfig()
    cfg.validate()
    per_graph: dict[int, float] = {}
    errors: list[str] = []
    total = 0
    for gid, acc, text, err in _run_over_split(
        method, ds, model, cfg, contrast_cache, corpus, results_sink is not None
    ):
        total += 1
        if err is not None:
            errors.append(err)
            continue
        per_graph[gid] = acc
        if results_sink is not None:
            results_sink(gid, text)
        if total % 100 == 0:
            log.info("%s: %d graphs evaluated", method, total)
    if total and len(errors) > cfg.max_error_fraction * total:
        raise RuntimeError(
            f"{method}: {len(errors)}/{total} graphs failed; first: {errors[0]}"
        )
    labels = {g.id: g.label for g in ds.subset(cfg.split)}
    return aggregate_report(method, per_graph, labels, errors)


def aggregate_report(method: str, per_graph: dict[int, float],
                     labels: dict[int, int], errors: list[str] | None = None) -> MethodReport:
    cyc = np.array([a for gid, a in sorted(per_graph.items()) if labels[gid] == LABEL_CYCLE])
    clq = np.array([a for gid, a in sorted(per_graph.items()) if labels[gid] == LABEL_CLIQUE])
    cycle_mean = float(cyc.mean()) if cyc.size else float("nan")
    clique_mean = float(clq.mean()) if clq.size else float("nan")
    return MethodReport(
        method=method,
        per_graph=per_graph,
        cycle_mean=cycle_mean,
        cycle_std=float(cyc.std()) if cyc.size else float("nan"),
        clique_mean=clique_mean,
        clique_std=float(clq.std()) if clq.size else float("nan"),
        avg=(cycle_mean + clique_mean) / 2.0,
        n_errors=len(errors or []),
        errors=list(errors or []),
    )


REPORT_COLUMNS = ("method", "cycle_mean", "cycle_std", "clique_mean", "clique_std", "avg")


def emit_report(reports: list[MethodReport], path: str | Path, format: str = "both") -> None:
    """Write CSV and/or JSON renditions of a list of method reports.

    ``path`` is the extensionless prefix; ``<path>.csv`` and ``<path>.json``
    are produced depending on ``format`` in {csv, json, both}.
    """
    if format not in ("csv", "json", "both"):
        raise ValueError(f"unknown report format {format!r}")
    path = Path(path)
    if format in ("csv", "both"):
        tmp = path.with_name(path.name + ".csv.tmp")
        with tmp.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for r in reports:
                writer.writerow([r.method, repr(r.cycle_mean), repr(r.cycle_std),
                                 repr(r.clique_mean), repr(r.clique_std), repr(r.avg)])
        tmp.replace(path.with_suffix(".csv"))
    if format in ("json", "both"):
        payload = [
            {
                "method": r.method,
                "cycle_mean": r.cycle_mean,
                "cycle_std": r.cycle_std,
                "clique_mean": r.clique_mean,
                "clique_std": r.clique_std,
                "avg": r.avg,
                "n_errors": r.n_errors,
                "per_graph": {str(k): v for k, v in sorted(r.per_graph.items())},
            }
            for r in reports
        ]
        tmp = path.with_name(path.name + ".json.tmp")
        tmp.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        tmp.replace(path.with_suffix(".json"))


def load_report_json(path: str | Path) -> list[MethodReport]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    out = []
    for rec in payload:
        out.append(MethodReport(
            method=rec["method"],
            per_graph={int(k): float(v) for k, v in rec["per_graph"].items()},
            cycle_mean=rec["cycle_mean"],
            cycle_std=rec["cycle_std"],
            clique_mean=rec["clique_mean"],
            clique_std=rec["clique_std"],
            avg=rec["avg"],
            n_errors=rec.get("n_errors", 0),
        ))
    return out


def check_thresholds(reports: list[MethodReport], thresholds: dict) -> list[str]:
    """Compare report metrics against {method: {metric: minimum}}; returns a
    list of human-readable failures (empty when all pass)."""
    by_method = {r.method: r for r in reports}
    failures = []
    for method, rules in (thresholds or {}).items():
        rep = by_method.get(method)
        if rep is None:
            failures.append(f"{method}: no report produced")
            continue
        for metric, floor in rules.items():
            value = getattr(rep, metric, None)
            if value is None:
                failures.append(f"{method}.{metric}: unknown metric")
            elif not value >= floor:
                failures.append(f"{method}.{metric}: {value:.4f} < required {floor}")
    return failures
