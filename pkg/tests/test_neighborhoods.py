import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiplex_gat import autodiff as ad
from multiplex_gat.attention import head_attention, reference_head_forward
from multiplex_gat.graph import build_supra_graph
from multiplex_gat.neighborhoods import Adjacency, neighborhood_attention


def clique(ids):
    return [(u, v) for u in ids for v in ids if u != v]


def mixed_edges(rng, n=90):
    """Three cliques (two large enough to become blocks), a small one, and random sparse edges."""
    edges = clique(range(0, 20)) + clique(range(20, 45)) + clique(range(45, 48))
    edges += [(int(a), int(b)) for a, b in rng.integers(48, n, (40, 2))]
    edges += [(30, n - 1), (n - 1, 30)]
    return n, edges


def run_both(adj, X, W, A, G, slope):
    """Value and gradients from the fused op and from the edge-by-edge reference."""
    out = []
    for fused in (True, False):
        Xt, Wt, At = (ad.Tensor(v, requires_grad=True) for v in (X, W, A))
        if fused:
            z = head_attention(ad.matmul(Xt, ad.transpose(Wt)), At, adj, slope)
        else:
            src, dst = adj.edge_list()
            z, _ = reference_head_forward(Xt, src, dst, Wt, At, slope, "none", adj.n_nodes)
        ad.backward(ad.sum_all(ad.mul(z, G)))
        out.append((z.value, Xt.grad, Wt.grad, At.grad))
    return out


@pytest.mark.parametrize("slope", [0.2, 0.0, 1.0, None])
@pytest.mark.parametrize("detect", [True, False])
def test_fused_matches_reference(slope, detect):
    rng = np.random.default_rng(3)
    n, edges = mixed_edges(rng)
    adj = Adjacency.from_edges(n, edges, detect_blocks=detect)
    assert bool(adj.blocks) == detect
    X, W, A = rng.normal(size=(n, 5)) * 3, rng.normal(size=(4, 5)), rng.normal(size=8)
    G = rng.normal(size=(n, 4))
    fused, ref = run_both(adj, X, W, A, G, slope)
    for a, b in zip(fused, ref):
        assert np.abs(a - b).max() <= 1e-10 * (1 + np.abs(b).max())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fused_matches_reference_random_graphs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    groups = rng.integers(0, 3, size=n)
    edges = [(i, j) for i in range(n) for j in range(n) if i != j and groups[i] == groups[j]]
    edges += [(int(a), int(b)) for a, b in rng.integers(0, n, (int(rng.integers(0, 10)), 2))]
    adj = Adjacency.from_edges(n, edges, min_block=3)
    X, W, A = rng.normal(size=(n, 3)), rng.normal(size=(2, 3)), rng.normal(size=4)
    fused, ref = run_both(adj, X, W, A, rng.normal(size=(n, 2)), 0.2)
    for a, b in zip(fused, ref):
        assert np.abs(a - b).max() <= 1e-10 * (1 + np.abs(b).max())


def test_block_detection_and_edge_list():
    n = 40
    edges = clique(range(0, 20)) + [(25, 26), (26, 25), (25, 30)]
    adj = Adjacency.from_edges(n, edges)
    assert [len(b) for b in adj.blocks] == [20]
    src, dst = adj.edge_list()
    expected = {(u, v) for u, v in edges} | {(i, i) for i in range(n)}
    assert set(zip(src.tolist(), dst.tolist())) == expected
    assert adj.n_edges == len(expected)
    assert np.array_equal(adj.in_degree(), np.bincount(dst, minlength=n))


def test_clique_with_extra_edge_is_not_a_block():
    edges = clique(range(20)) + [(5, 30), (30, 5)]
    adj = Adjacency.from_edges(31, edges)
    assert not adj.blocks
    assert adj.n_edges == len(edges) + 31


def test_self_edges_and_empty_neighborhood():
    adj = Adjacency.from_edges(3, [(0, 1)], self_edges=False, detect_blocks=False)
    xt = ad.Tensor(np.ones((3, 2)))
    s, t = ad.Tensor(np.zeros(3)), ad.Tensor(np.zeros(3))
    with pytest.raises(RuntimeError):
        neighborhood_attention(xt, s, t, adj)


def test_isolated_node_attends_to_itself():
    adj = Adjacency.from_edges(3, [(0, 1), (1, 0)])
    xt = ad.Tensor(np.arange(6.0).reshape(3, 2))
    out = neighborhood_attention(xt, ad.Tensor(np.zeros(3)), ad.Tensor(np.zeros(3)), adj)
    assert out.value[2].tolist() == [4.0, 5.0]
    assert np.allclose(out.value[0], [1.0, 2.0])


def test_disjoint_union_and_permute():
    rng = np.random.default_rng(0)
    n, edges = mixed_edges(rng, 60)
    a = Adjacency.from_edges(n, edges)
    b = Adjacency.from_edges(5, [(0, 1), (1, 0)])
    u = Adjacency.disjoint_union([a, b])
    assert u.n_nodes == n + 5
    assert u.n_edges == a.n_edges + b.n_edges
    perm = rng.permutation(n)
    p = a.permute(perm)
    s1, d1 = a.edge_list()
    s2, d2 = p.edge_list()
    assert set(zip(perm[s1].tolist(), perm[d1].tolist())) == set(zip(s2.tolist(), d2.tolist()))


def test_supra_adjacency_matches_plain_edges(six2):
    supra = build_supra_graph(six2)
    with_blocks = Adjacency.supra(supra, six2)
    plain = Adjacency.supra(supra)
    s1, d1 = with_blocks.edge_list()
    s2, d2 = plain.edge_list()
    assert np.array_equal(s1, s2) and np.array_equal(d1, d2)


def test_float32_inputs_return_float32():
    rng = np.random.default_rng(1)
    n, edges = mixed_edges(rng, 60)
    adj = Adjacency.from_edges(n, edges)
    xt = ad.Tensor(rng.normal(size=(n, 3)).astype(np.float32), requires_grad=True)
    s = ad.Tensor(rng.normal(size=n).astype(np.float32), requires_grad=True)
    t = ad.Tensor(rng.normal(size=n).astype(np.float32), requires_grad=True)
    out = neighborhood_attention(xt, s, t, adj)
    assert out.value.dtype == np.float32
    ad.backward(ad.sum_all(out))
    assert xt.grad.dtype == np.float32 and s.grad.dtype == np.float32


def test_out_of_range_edges_rejected():
    with pytest.raises(ValueError):
        Adjacency.from_edges(3, [(0, 3)])


def test_shape_checks():
    adj = Adjacency.from_edges(3, [(0, 1)])
    with pytest.raises(ad.ShapeError):
        neighborhood_attention(ad.Tensor(np.ones((4, 2))), ad.Tensor(np.zeros(4)), ad.Tensor(np.zeros(4)), adj)
