import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coge import graphs
from coge.graphs import (
    DatasetFormatError,
    DisconnectedGraphWarning,
    GeneratorConfig,
    Graph,
    generate_cycliq,
    is_connected,
    load_dataset,
    motif_edge_count,
    save_dataset,
)


def to_nx(g: Graph) -> nx.Graph:
    G = nx.Graph()
    G.add_nodes_from(range(g.n))
    G.add_edges_from(g.edges)
    return G


# ---------------------------------------------------------------------------
# generation

def test_full_size_generation_counts():
    ds = generate_cycliq(2000, seed=7)
    labels = [g.label for g in ds.graphs]
    assert labels.count(0) == 1000 and labels.count(1) == 1000
    assert ds.split.count("train") == 1600 and ds.split.count("test") == 400


def test_generation_determinism(tmp_path):
    a = generate_cycliq(10, seed=7)
    b = generate_cycliq(10, seed=7)
    pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_dataset(a, pa)
    save_dataset(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_different_seeds_differ():
    a = generate_cycliq(10, seed=7)
    b = generate_cycliq(10, seed=8)
    assert a != b


def test_clique_ground_truth_edges_live_in_big_cliques():
    ds = generate_cycliq(30, seed=5)
    for g in ds.graphs:
        if g.label != graphs.LABEL_CLIQUE:
            continue
        cliques = [set(c) for c in nx.find_cliques(to_nx(g)) if len(c) >= 4]
        for u, v in g.ground_truth_edges:
            assert any(u in c and v in c for c in cliques)


def test_invalid_motif_ranges_rejected():
    with pytest.raises(ValueError, match="ambiguous"):
        generate_cycliq(4, seed=0, config=GeneratorConfig(cycle_len_min=3))
    with pytest.raises(ValueError, match="ambiguous"):
        generate_cycliq(4, seed=0, config=GeneratorConfig(clique_size_min=3))


def test_odd_or_tiny_n_rejected():
    with pytest.raises(ValueError):
        generate_cycliq(7, seed=0)
    with pytest.raises(ValueError):
        generate_cycliq(0, seed=0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_generated_invariants(seed):
    ds = generate_cycliq(6, seed=seed)
    for g in ds.graphs:
        G = to_nx(g)
        assert nx.is_connected(G)
        assert is_connected(g)
        assert set(g.ground_truth_edges) <= set(g.edges)
        assert np.array_equal(g.features, np.ones((g.n, 10)))
        triangles = sum(nx.triangles(G).values())
        if g.label == graphs.LABEL_CYCLE:
            # no K3 anywhere in a cycle-class graph
            assert triangles == 0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_ground_truth_matches_independent_motif_reconstruction(seed):
    """Rebuild the motif edges from graph structure alone and compare."""
    ds = generate_cycliq(4, seed=seed)
    for g in ds.graphs:
        G = to_nx(g)
        if g.label == graphs.LABEL_CLIQUE:
            rebuilt = set()
            for c in nx.find_cliques(G):
                if len(c) >= 4:
                    c = sorted(c)
                    rebuilt.update((u, v) for i, u in enumerate(c) for v in c[i + 1:])
        else:
            rebuilt = set()
            for cyc in nx.cycle_basis(G):
                assert len(cyc) >= 4
                for i in range(len(cyc)):
                    u, v = cyc[i], cyc[(i + 1) % len(cyc)]
                    rebuilt.add((min(u, v), max(u, v)))
        assert rebuilt == set(g.ground_truth_edges)


# ---------------------------------------------------------------------------
# motif_edge_count

def test_motif_edge_count_cycle():
    cfg = GeneratorConfig(cycle_len_min=4, cycle_len_max=4, motifs_min=1, motifs_max=1)
    ds = generate_cycliq(2, seed=3, config=cfg)
    cycle_graph = [g for g in ds.graphs if g.label == graphs.LABEL_CYCLE][0]
    assert motif_edge_count(cycle_graph) == 4


def test_motif_edge_count_clique():
    cfg = GeneratorConfig(clique_size_min=5, clique_size_max=5, motifs_min=1, motifs_max=1)
    ds = generate_cycliq(2, seed=3, config=cfg)
    clique_graph = [g for g in ds.graphs if g.label == graphs.LABEL_CLIQUE][0]
    assert motif_edge_count(clique_graph) == 10  # C(5, 2)


def test_no_mixed_motifs_per_graph():
    ds = generate_cycliq(20, seed=9)
    for g in ds.graphs:
        G = to_nx(g)
        has_clique = any(len(c) >= 4 for c in nx.find_cliques(G))
        assert has_clique == (g.label == graphs.LABEL_CLIQUE)


# ---------------------------------------------------------------------------
# Graph validation

def test_graph_rejects_self_loop():
    with pytest.raises(ValueError, match="self-loop"):
        Graph(0, 2, ((0, 0),), np.ones((2, 3)), 0)


def test_graph_rejects_out_of_range_edge():
    with pytest.raises(ValueError, match="outside"):
        Graph(0, 2, ((0, 5),), np.ones((2, 3)), 0)


def test_graph_rejects_duplicate_edges():
    with pytest.raises(ValueError, match="duplicate"):
        Graph(0, 3, ((0, 1), (1, 0)), np.ones((3, 3)), 0)


def test_graph_rejects_gt_not_subset():
    with pytest.raises(ValueError, match="subset"):
        Graph(0, 3, ((0, 1),), np.ones((3, 3)), 0, ground_truth_edges=((1, 2),))


# ---------------------------------------------------------------------------
# dataset I/O

def test_round_trip_identity(tmp_path):
    ds = generate_cycliq(20, seed=13)
    path = tmp_path / "ds.jsonl"
    save_dataset(ds, path)
    assert load_dataset(path) == ds


def test_edge_index_out_of_range_names_graph(tmp_path):
    path = tmp_path / "bad.jsonl"
    rec = {"id": 42, "n": 2, "edges": [[0, 7]], "features": [[1.0], [1.0]],
           "label": 0, "gt_edges": [], "split": "train"}
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(DatasetFormatError, match="42"):
        load_dataset(path)


def test_malformed_line_reports_line_number(tmp_path):
    ds = generate_cycliq(2, seed=1)
    path = tmp_path / "ds.jsonl"
    save_dataset(ds, path)
    with path.open("a") as fh:
        fh.write("{not json\n")
    with pytest.raises(DatasetFormatError, match="line 3"):
        load_dataset(path)


def test_empty_file_is_empty_dataset(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    ds = load_dataset(path)
    assert len(ds) == 0 and ds.feature_dim is None


def test_feature_dim_mismatch_rejected(tmp_path):
    recs = [
        {"id": 0, "n": 1, "edges": [], "features": [[1.0, 1.0]], "label": 0,
         "gt_edges": [], "split": "train"},
        {"id": 1, "n": 1, "edges": [], "features": [[1.0]], "label": 1,
         "gt_edges": [], "split": "train"},
    ]
    path = tmp_path / "mix.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in recs) + "\n")
    with pytest.raises(DatasetFormatError, match="feature dim"):
        load_dataset(path)


def test_disconnected_graph_warns(tmp_path):
    rec = {"id": 3, "n": 4, "edges": [[0, 1], [2, 3]], "features": [[1.0]] * 4,
           "label": 0, "gt_edges": [], "split": "test"}
    path = tmp_path / "disc.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    with pytest.warns(DisconnectedGraphWarning, match="graph 3"):
        ds = load_dataset(path)
    assert len(ds) == 1


def test_split_tags_must_be_valid(tmp_path):
    rec = {"id": 0, "n": 1, "edges": [], "features": [[1.0]], "label": 0,
           "gt_edges": [], "split": "validation"}
    path = tmp_path / "bad_split.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(DatasetFormatError, match="split"):
        load_dataset(path)
