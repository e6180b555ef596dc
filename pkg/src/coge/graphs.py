"""Graph data model, synthetic cycle/clique benchmark generation, dataset I/O.

The benchmark (CYCLIQ) is a binary graph classification task: each graph is a
uniform random tree with one or two motifs appended, either cycles (label 0)
or cliques (label 1). The intra-motif edges are the ground-truth explanation
edges; the single edge bridging a motif to the tree is not part of the motif
and is therefore excluded from the ground truth.
"""
from __future__ import annotations

import heapq
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

Edge = tuple[int, int]

LABEL_CYCLE = 0
LABEL_CLIQUE = 1


class DatasetFormatError(ValueError):
    """Raised when a dataset file violates the JSON-lines schema."""


class DisconnectedGraphWarning(UserWarning):
    """Emitted by the loader when a stored graph is not connected."""


def _norm_edge(u: int, v: int) -> Edge:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected labeled graph with node features and ground-truth edges."""

    id: int
    n: int
    edges: tuple[Edge, ...]
    features: np.ndarray  # (n, d) float64
    label: int
    ground_truth_edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        edges = tuple(_norm_edge(int(u), int(v)) for u, v in self.edges)
        gt = tuple(_norm_edge(int(u), int(v)) for u, v in self.ground_truth_edges)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "ground_truth_edges", gt)
        for u, v in edges:
            if u == v:
                raise ValueError(f"graph {self.id}: self-loop at node {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"graph {self.id}: edge ({u},{v}) outside [0,{self.n})")
        if len(set(edges)) != len(edges):
            raise ValueError(f"graph {self.id}: duplicate edges")
        if not set(gt) <= set(edges):
            raise ValueError(f"graph {self.id}: ground-truth edges not a subset of edges")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.n:
            raise ValueError(f"graph {self.id}: feature matrix must be ({self.n}, d)")
        feats = np.ascontiguousarray(feats)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.id == other.id
            and self.n == other.n
            and self.edges == other.edges
            and self.label == other.label
            and self.ground_truth_edges == other.ground_truth_edges
            and np.array_equal(self.features, other.features)
        )

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        for u, v in self.edges:
            A[u, v] = 1.0
            A[v, u] = 1.0
        return A


def is_connected(g: Graph) -> bool:
    if g.n <= 1:
        return True
    adj: list[list[int]] = [[] for _ in range(g.n)]
    for u, v in g.edges:
        adj[u].append(v)
        adj[v].append(u)
    seen = [False] * g.n
    stack = [0]
    seen[0] = True
    count = 1
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                count += 1
                stack.append(v)
    return count == g.n


@dataclass
class Dataset:
    """A list of graphs with an exact train/test partition.

    ``seed`` is generation provenance only; it is not persisted by
    :func:`save_dataset` and is excluded from equality.
    """

    graphs: list[Graph]
    split: list[str]  # "train" | "test", aligned with graphs
    feature_dim: int | None
    seed: int | None = None

    def __post_init__(self):
        if len(self.graphs) != len(self.split):
            raise ValueError("split tags must align with graphs")
        for tag in self.split:
            if tag not in ("train", "test"):
                raise ValueError(f"unknown split tag {tag!r}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.graphs == other.graphs
            and self.split == other.split
            and self.feature_dim == other.feature_dim
        )

    def __len__(self) -> int:
        return len(self.graphs)

    def subset(self, split: str) -> list[Graph]:
        return [g for g, tag in zip(self.graphs, self.split) if tag == split]

    def train_graphs(self) -> list[Graph]:
        return self.subset("train")

    def test_graphs(self) -> list[Graph]:
        return self.subset("test")

    def by_id(self, graph_id: int) -> Graph:
        for g in self.graphs:
            if g.id == graph_id:
                return g
        raise KeyError(f"no graph with id {graph_id}")


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs of the synthetic benchmark generator."""

    tree_size_min: int = 8
    tree_size_max: int = 15
    motifs_min: int = 1
    motifs_max: int = 2
    cycle_len_min: int = 4
    cycle_len_max: int = 8
    clique_size_min: int = 4
    clique_size_max: int = 6
    feature_dim: int = 10
    train_ratio: float = 0.8

    def validate(self) -> None:
        if self.cycle_len_min < 4:
            raise ValueError(
                "cycle_len_min must be >= 4: a 3-cycle is also a 3-clique, which "
                "would make the two classes ambiguous"
            )
        if self.clique_size_min < 4:
            raise ValueError(
                "clique_size_min must be >= 4: a 3-clique is also a 3-cycle, which "
                "would make the two classes ambiguous"
            )
        if self.cycle_len_max < self.cycle_len_min:
            raise ValueError("cycle length range is empty")
        if self.clique_size_max < self.clique_size_min:
            raise ValueError("clique size range is empty")
        if self.tree_size_min < 2 or self.tree_size_max < self.tree_size_min:
            raise ValueError("tree size range invalid")
        if self.motifs_min < 1 or self.motifs_max < self.motifs_min:
            raise ValueError("motif count range invalid")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if not (0.0 < self.train_ratio < 1.0):
            raise ValueError("train_ratio must be in (0, 1)")


def _prufer_tree(rng: np.random.Generator, t: int) -> list[Edge]:
    """Uniform random labeled tree on t nodes via Prufer-sequence decoding."""
    if t == 1:
        return []
    if t == 2:
        return [(0, 1)]
    seq = rng.integers(0, t, size=t - 2)
    degree = np.ones(t, dtype=np.int64)
    for v in seq:
        degree[v] += 1
    leaves = [i for i in range(t) if degree[i] == 1]
    heapq.heapify(leaves)
    edges: list[Edge] = []
    for v in seq:
        leaf = heapq.heappop(leaves)
        edges.append(_norm_edge(leaf, int(v)))
        degree[v] -= 1
        if degree[v] == 1:
            heapq.heappush(leaves, int(v))
    u = heapq.heappop(leaves)
    v = heapq.heappop(leaves)
    edges.append(_norm_edge(u, v))
    return edges


def _generate_one(rng: np.random.Generator, gid: int, label: int, cfg: GeneratorConfig) -> Graph:
    t = int(rng.integers(cfg.tree_size_min, cfg.tree_size_max + 1))
    edges = _prufer_tree(rng, t)
    gt: list[Edge] = []
    n = t
    n_motifs = int(rng.integers(cfg.motifs_min, cfg.motifs_max + 1))
    for _ in range(n_motifs):
        if label == LABEL_CYCLE:
            size = int(rng.integers(cfg.cycle_len_min, cfg.cycle_len_max + 1))
            motif = [(n + i, n + (i + 1) % size) for i in range(size)]
        else:
            size = int(rng.integers(cfg.clique_size_min, cfg.clique_size_max + 1))
            motif = [(n + i, n + j) for i in range(size) for j in range(i + 1, size)]
        motif = [_norm_edge(u, v) for u, v in motif]
        edges.extend(motif)
        gt.extend(motif)
        anchor_motif = n + int(rng.integers(0, size))
        anchor_tree = int(rng.integers(0, t))
        edges.append(_norm_edge(anchor_motif, anchor_tree))  # bridge, not ground truth
        n += size
    feats = np.ones((n, cfg.feature_dim))
    return Graph(id=gid, n=n, edges=tuple(edges), features=feats, label=label,
                 ground_truth_edges=tuple(gt))


def generate_cycliq(n_graphs: int, seed: int, config: GeneratorConfig | None = None) -> Dataset:
    """Generate a balanced cycle/clique benchmark, deterministic in ``seed``.

    The first half of the ids carries cycle motifs (label 0), the second half
    clique motifs (label 1). The train/test split is stratified per class so
    both classes appear in both splits.
    """
    cfg = config or GeneratorConfig()
    cfg.validate()
    if n_graphs < 2 or n_graphs % 2 != 0:
        raise ValueError("n_graphs must be even and >= 2 for class balance")
    rng = np.random.default_rng(seed)
    half = n_graphs // 2
    graphs = [
        _generate_one(rng, gid, LABEL_CYCLE if gid < half else LABEL_CLIQUE, cfg)
        for gid in range(n_graphs)
    ]
    for g in graphs:
        assert is_connected(g), f"generator produced disconnected graph {g.id}"
    split = ["test"] * n_graphs
    for cls_ids in (range(half), range(half, n_graphs)):
        ids = np.array(list(cls_ids))
        perm = rng.permutation(len(ids))
        n_train = int(round(cfg.train_ratio * len(ids)))
        for i in perm[:n_train]:
            split[ids[i]] = "train"
    return Dataset(graphs=graphs, split=split, feature_dim=cfg.feature_dim, seed=seed)


def motif_edge_count(g: Graph) -> int:
    """Number of ground-truth motif edges; parameterizes the top-x metric."""
    return len(g.ground_truth_edges)


def _graph_record(g: Graph, split: str) -> dict:
    return {
        "id": g.id,
        "n": g.n,
        "edges": [[u, v] for u, v in g.edges],
        "features": g.features.tolist(),
        "label": g.label,
        "gt_edges": [[u, v] for u, v in g.ground_truth_edges],
        "split": split,
    }


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write one JSON object per line; stable key order, u < v per edge."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for g, split in zip(ds.graphs, ds.split):
            fh.write(json.dumps(_graph_record(g, split)) + "\n")
    tmp.replace(path)


def load_dataset(path: str | Path) -> Dataset:
    """Load a JSON-lines dataset, validating each graph.

    Malformed lines and schema violations raise :class:`DatasetFormatError`
    naming the offending line or graph. Disconnected graphs load but emit a
    :class:`DisconnectedGraphWarning`.
    """
    path = Path(path)
    graphs: list[Graph] = []
    split: list[str] = []
    feature_dim: int | None = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                g = Graph(
                    id=int(rec["id"]),
                    n=int(rec["n"]),
                    edges=tuple((int(u), int(v)) for u, v in rec["edges"]),
                    features=np.asarray(rec["features"], dtype=np.float64),
                    label=int(rec["label"]),
                    ground_truth_edges=tuple((int(u), int(v)) for u, v in rec["gt_edges"]),
                )
            except KeyError as exc:
                raise DatasetFormatError(f"line {lineno}: missing field {exc}") from exc
            except ValueError as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
            tag = rec.get("split")
            if tag not in ("train", "test"):
                raise DatasetFormatError(f"line {lineno}: graph {g.id}: bad split tag {tag!r}")
            if feature_dim is None:
                feature_dim = g.feature_dim
            elif g.feature_dim != feature_dim:
                raise DatasetFormatError(
                    f"line {lineno}: graph {g.id}: feature dim {g.feature_dim} != {feature_dim}"
                )
            if not is_connected(g):
                warnings.warn(f"graph {g.id} is disconnected", DisconnectedGraphWarning)
            graphs.append(g)
            split.append(tag)
    return Dataset(graphs=graphs, split=split, feature_dim=feature_dim)
