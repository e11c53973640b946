import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiplex_gat import datasets
from multiplex_gat.graph import (UNLABELED, DataFormatError, LayerGraph, MultiLayerGraph, build_supra_graph,
                                 graph_stats, ingest_categorical_table, load_dataset, load_layer_edgelist,
                                 random_features, read_categorical_table, split_transductive, write_dataset)


def counted_pairs_oracle(column, missing=("?", "")):
    """Ordered pairs including self within each value group: sum of squared group sizes."""
    return sum(c * c for v, c in Counter(column).items() if v not in missing)


def test_from_pairs_symmetrizes_and_deduplicates():
    layer = LayerGraph.from_pairs([(0, 1), (1, 0), (1, 2), (2, 2)], 4, directed=False)
    assert layer.edges.tolist() == [[0, 1], [1, 0], [1, 2], [2, 1]]
    assert layer.is_symmetric()
    assert layer.self_pairs == 1
    assert layer.counted_edges == 5
    assert layer.present.tolist() == [True, True, True, False]


def test_directed_pairs_kept_as_given():
    layer = LayerGraph.from_pairs([(0, 1), (2, 1)], 3, directed=True)
    assert layer.edges.tolist() == [[0, 1], [2, 1]]
    assert not layer.is_symmetric()


def test_layer_rejects_out_of_range_and_duplicates():
    with pytest.raises(ValueError):
        LayerGraph(0, 2, np.array([[0, 2]]), np.ones(2, bool))
    with pytest.raises(ValueError):
        LayerGraph(0, 3, np.array([[0, 1], [0, 1]]), np.ones(3, bool))


def test_multilayer_validates_labels_and_layers():
    layer = LayerGraph.from_pairs([(0, 1)], 2)
    with pytest.raises(ValueError):
        MultiLayerGraph(2, (layer,), np.array([0, 2]), 2)
    with pytest.raises(ValueError):
        MultiLayerGraph(3, (layer,), np.array([0, 1, 0]), 2)
    with pytest.raises(ValueError):
        MultiLayerGraph(2, (), np.array([0, 1]), 2)
    g = MultiLayerGraph(2, (layer,), np.array([UNLABELED, 1]), 2)
    assert g.labeled_ids.tolist() == [1]


def test_categorical_two_groups_of_two_gives_eight():
    g = ingest_categorical_table([["a"], ["a"], ["b"], ["b"]], [0, 0, 1, 1], 2)
    assert g.layers[0].counted_edges == 8
    assert g.layers[0].n_edges == 4


def test_missing_policies():
    table = [["a"], ["a"], ["?"], ["?"], ["b"]]
    drop = ingest_categorical_table(table, missing_policy="drop-edges")
    own = ingest_categorical_table(table, missing_policy="own-category")
    assert drop.layers[0].counted_edges == 4 + 1
    assert drop.layers[0].present.tolist() == [True, True, False, False, True]
    assert own.layers[0].counted_edges == 4 + 4 + 1
    with pytest.raises(ValueError):
        ingest_categorical_table(table, missing_policy="impute")


def test_balance_scale_counted_edges_exact():
    g = datasets.balance_scale()
    assert (g.n_nodes, g.n_layers, g.n_classes) == (625, 4, 3)
    assert graph_stats(g).total_counted == 312_500
    table, _, _, _ = read_categorical_table(datasets._bundled("balance_scale.csv"), "class")
    oracle = sum(counted_pairs_oracle([row[j] for row in table]) for j in range(4))
    assert oracle == 312_500


def test_congress_counts_match_group_size_oracle():
    g = datasets.congress_votes()
    table, _, _, _ = read_categorical_table(datasets._bundled("congress_votes.csv"), "party")
    for j, layer in enumerate(g.layers):
        assert layer.counted_edges == counted_pairs_oracle([row[j] for row in table])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.data())
def test_supra_counts(n, n_layers, data):
    layers = []
    for l in range(n_layers):
        pairs = data.draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=10))
        layers.append(LayerGraph.from_pairs(np.array(pairs, dtype=np.int64).reshape(-1, 2), n, layer_id=l))
    g = MultiLayerGraph(n, tuple(layers), np.zeros(n, np.int64), 1)
    sg = build_supra_graph(g)
    assert sg.n_supra == n * n_layers
    assert len(sg.pillar_edges) == n * n_layers * (n_layers - 1)
    assert len(sg.intra_edges) == sum(layer.n_edges for layer in layers)
    # Pillars join copies of the same node in different layers.
    assert np.array_equal(sg.node_of[sg.pillar_edges[:, 0]], sg.node_of[sg.pillar_edges[:, 1]])
    assert (sg.layer_of[sg.pillar_edges[:, 0]] != sg.layer_of[sg.pillar_edges[:, 1]]).all()
    # Intra edges stay inside one layer.
    assert np.array_equal(sg.layer_of[sg.intra_edges[:, 0]], sg.layer_of[sg.intra_edges[:, 1]])


def test_supra_index_layout(six2):
    sg = build_supra_graph(six2)
    assert int(sg.index_of(4, 1)) == 1 * 6 + 4
    assert sg.node_of[10] == 4 and sg.layer_of[10] == 1


def test_split_floor_rule():
    split = split_transductive(np.arange(29), 0.3, seed=5)
    assert len(split.train_idx) == 8
    assert len(split.test_idx) == 21


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 300), st.floats(0.01, 0.99), st.integers(0, 2**31 - 1))
def test_split_partition(n, frac, seed):
    ids = np.arange(0, 3 * n, 3)
    if math.floor(frac * n) == 0:
        with pytest.raises(ValueError):
            split_transductive(ids, frac, seed)
        return
    s = split_transductive(ids, frac, seed)
    assert len(s.train_idx) == math.floor(frac * n)
    assert np.intersect1d(s.train_idx, s.test_idx).size == 0
    assert np.array_equal(np.union1d(s.train_idx, s.test_idx), ids)
    again = split_transductive(ids, frac, seed)
    assert np.array_equal(s.train_idx, again.train_idx)


def test_split_rejects_bad_fraction():
    for frac in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            split_transductive(np.arange(10), frac, 0)


def test_random_features_reproducible():
    a = random_features(5, 3, np.random.SeedSequence([7, 1]))
    b = random_features(5, 3, np.random.SeedSequence([7, 1]))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, random_features(5, 3, np.random.SeedSequence([7, 2])))


def test_permute_relabels(six2):
    perm = np.array([3, 0, 5, 1, 2, 4])
    p = six2.permute(perm)
    assert p.labels[perm].tolist() == six2.labels.tolist()
    for a, b in zip(six2.layers, p.layers):
        expected = sorted(map(tuple, perm[a.edges].tolist()))
        assert sorted(map(tuple, b.edges.tolist())) == expected


def test_edgelist_loader_errors(tmp_path):
    f = tmp_path / "l.txt"
    f.write_text("# header\n0 1\n1 x\n")
    with pytest.raises(DataFormatError) as exc:
        load_layer_edgelist(f, 3)
    assert exc.value.line == 3
    f.write_text("0 7\n")
    with pytest.raises(DataFormatError):
        load_layer_edgelist(f, 3)
    f.write_text("0 1\n1 2 # comment\n")
    layer = load_layer_edgelist(f, 3)
    assert layer.n_edges == 4


def test_dataset_roundtrip(tmp_path, six2):
    write_dataset(six2, tmp_path / "ds")
    g = load_dataset(tmp_path / "ds")
    assert g.n_nodes == six2.n_nodes and g.n_classes == six2.n_classes
    assert np.array_equal(g.labels, six2.labels)
    for a, b in zip(six2.layers, g.layers):
        assert np.array_equal(a.edges, b.edges)
        assert a.counted_edges == b.counted_edges


def test_categorical_roundtrip_keeps_counted_edges(tmp_path):
    g = ingest_categorical_table([["a", "x"], ["a", "y"], ["b", "y"], ["?", "y"]], [0, 1, 1, UNLABELED], 2)
    write_dataset(g, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert [l.counted_edges for l in back.layers] == [l.counted_edges for l in g.layers]
    assert back.labels.tolist() == [0, 1, 1, UNLABELED]


def test_descriptor_errors(tmp_path):
    d = tmp_path / "bad"
    d.mkdir()
    (d / "dataset.cfg").write_text("n_nodes=3\nbogus=1\n")
    with pytest.raises(DataFormatError):
        load_dataset(d)
    (d / "dataset.cfg").write_text("n_nodes=3\nn_classes=2\nlabels=labels.txt\n")
    with pytest.raises(DataFormatError):
        load_dataset(d)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "absent")


def test_read_categorical_table_label_mapping(tmp_path):
    f = tmp_path / "t.csv"
    f.write_text("a,b,y\n1,2,dem\n1,3,rep\n2,2,dem\n")
    table, names, labels, classes = read_categorical_table(f, "y")
    assert names == ["a", "b"]
    assert classes == ["dem", "rep"]
    assert labels.tolist() == [0, 1, 0]
    with pytest.raises(DataFormatError):
        read_categorical_table(f, "z")


def test_graph_stats_format():
    g = datasets.balance_scale()
    text = graph_stats(g).format()
    assert "N=625 L=4 C=3" in text
    assert "edges=312500" in text
