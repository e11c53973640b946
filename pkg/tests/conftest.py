import numpy as np
import pytest

from multiplex_gat.gradcheck import path_graph, two_layer_fixture
from multiplex_gat.graph import LayerGraph, MultiLayerGraph

# Acceptance outcomes, printed as one line per criterion at the end of the session.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")


@pytest.fixture
def path3():
    return path_graph()


@pytest.fixture
def six2():
    return two_layer_fixture()


def planted_graph(n_per: int = 12, n_layers: int = 2, noise_edges: int = 3, seed: int = 0) -> MultiLayerGraph:
    """Two communities; every layer is dense inside each community with a few cross edges."""
    rng = np.random.default_rng(seed)
    n = 2 * n_per
    labels = np.repeat([0, 1], n_per)
    layers = []
    for l in range(n_layers):
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)
                 if labels[i] == labels[j] and rng.random() < 0.6]
        for _ in range(noise_edges):
            pairs.append((int(rng.integers(0, n_per)), int(rng.integers(n_per, n))))
        layers.append(LayerGraph.from_pairs(pairs, n, directed=False, layer_id=l))
    return MultiLayerGraph(n, tuple(layers), labels, 2, name="planted")


@pytest.fixture
def planted():
    return planted_graph()
