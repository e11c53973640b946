import numpy as np
import pytest

from multiplex_gat import datasets
from multiplex_gat.graph import graph_stats, write_dataset


def test_reference_table():
    assert set(datasets.REFERENCE) == {"vickers", "congress", "leskovec", "reinnovation", "mammography", "ckm",
                                       "balance"}
    congress = datasets.REFERENCE["congress"]
    assert (congress.n_nodes, congress.n_layers, congress.total_edges, congress.n_classes) == (435, 16, 358_338, 2)
    assert {k for k, v in datasets.REFERENCE.items() if v.bundled} == {"congress", "balance"}


def test_congress_shape():
    g = datasets.load("congress")
    assert (g.n_nodes, g.n_layers, g.n_classes) == (435, 16, 2)
    assert g.class_names == ("democrat", "republican")
    assert np.bincount(g.labels).tolist() == [267, 168]
    assert all(layer.is_symmetric() for layer in g.layers)


def test_congress_missing_policy_changes_counts():
    drop = graph_stats(datasets.load("congress")).total_counted
    own = graph_stats(datasets.load("congress", missing_policy="own-category")).total_counted
    assert own > drop


def test_balance_scale_is_exact():
    g = datasets.load("Balance")
    assert graph_stats(g).total_counted == datasets.REFERENCE["balance"].total_edges


def test_mammography_complete_subset():
    g = datasets.load("mammography-complete")
    assert (g.n_nodes, g.n_layers, g.n_classes) == (830, 5, 2)
    assert (g.labels >= 0).all()


def test_unbundled_dataset_needs_a_data_root(monkeypatch):
    monkeypatch.delenv(datasets.DATA_ENV, raising=False)
    with pytest.raises(datasets.DatasetUnavailable, match=datasets.DATA_ENV):
        datasets.load("vickers")


def test_missing_dataset_under_root(tmp_path):
    with pytest.raises(datasets.DatasetUnavailable):
        datasets.load("ckm", root=tmp_path)


def test_data_root_descriptor(tmp_path, monkeypatch, six2):
    write_dataset(six2, tmp_path / "vickers")
    monkeypatch.setenv(datasets.DATA_ENV, str(tmp_path))
    g = datasets.load("vickers")
    assert g.n_nodes == 6 and np.array_equal(g.labels, six2.labels)


def test_descriptor_path_is_accepted(tmp_path, six2):
    cfg = write_dataset(six2, tmp_path / "mine")
    assert datasets.load(str(cfg.parent)).n_layers == 2


def test_mammography_raw_file(tmp_path):
    folder = tmp_path / "mammography"
    folder.mkdir()
    (folder / "mammographic_masses.data").write_text("5,67,3,5,3,1\n4,43,1,1,?,1\n5,58,4,5,3,0\n4,28,1,1,3,?\n")
    g = datasets.load("mammography", root=tmp_path)
    assert (g.n_nodes, g.n_layers, g.n_classes) == (4, 5, 2)
    assert g.labels.tolist() == [1, 1, 0, -1]
    # Density: three rows share "3", one is missing and drops out.
    assert g.layers[4].counted_edges == 9
    own = datasets.mammography_raw(folder / "mammographic_masses.data", "own-category")
    assert own.layers[4].counted_edges == 10
