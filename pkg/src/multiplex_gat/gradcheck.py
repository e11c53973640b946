"""Finite-difference checks for every differentiable op and both model losses."""

from __future__ import annotations

from collections.abc import Callable, Iterator

import numpy as np

from . import autodiff as ad
from .attention import AttentionHead, head_attention
from .autodiff import Tensor
from .graph import LayerGraph, MultiLayerGraph
from .models import ModelConfig, build_model
from .neighborhoods import Adjacency, neighborhood_attention

TOLERANCE = 1e-4

Case = tuple[str, Callable[[], Tensor], list[Tensor]]


def path_graph() -> MultiLayerGraph:
    """3-node path 0-1-2, one layer, two classes."""
    layer = LayerGraph.from_pairs([(0, 1), (1, 2)], 3, directed=False, layer_id=0)
    return MultiLayerGraph(3, (layer,), np.array([0, 0, 1]), 2, name="path3")


def two_layer_fixture() -> MultiLayerGraph:
    """Six nodes, two layers, two planted classes of three."""
    l0 = LayerGraph.from_pairs([(0, 1), (1, 2), (3, 4), (4, 5)], 6, directed=False, layer_id=0)
    l1 = LayerGraph.from_pairs([(0, 2), (2, 1), (3, 5), (0, 3)], 6, directed=False, layer_id=1)
    return MultiLayerGraph(6, (l0, l1), np.array([0, 0, 0, 1, 1, 1]), 2, name="six2")


def _param(rng, *shape, away_from_zero: float = 0.0) -> Tensor:
    v = rng.standard_normal(shape)
    if away_from_zero:
        v = v + np.sign(v) * away_from_zero
    return Tensor(v, requires_grad=True)


def _probe(rng, shape) -> np.ndarray:
    # A fixed random projection turns any output into a scalar loss.
    return rng.standard_normal(shape)


def _loss(out: Tensor, w: np.ndarray) -> Tensor:
    return ad.sum_all(ad.mul(out, w))


def op_cases(seed: int = 0) -> Iterator[Case]:
    """One case per op, with seeded random shapes and values."""
    rng = np.random.default_rng(seed)
    n, m, k = (int(v) for v in rng.integers(2, 6, size=3))

    a, b = _param(rng, n, m), _param(rng, m, k)
    w = _probe(rng, (n, k))
    yield "matmul", lambda: _loss(ad.matmul(a, b), w), [a, b]

    a3, b3 = _param(rng, 2, n, m), _param(rng, m, k)
    w3 = _probe(rng, (2, n, k))
    yield "matmul_batched", lambda: _loss(ad.matmul(a3, b3), w3), [a3, b3]

    x, y = _param(rng, n, m), _param(rng, 1, m)
    wx = _probe(rng, (n, m))
    yield "add", lambda: _loss(ad.add(x, y), wx), [x, y]
    yield "mul", lambda: _loss(ad.mul(x, y), wx), [x, y]
    yield "scale", lambda: _loss(ad.scale(x, 1.7), wx), [x]
    yield "transpose", lambda: _loss(ad.transpose(x), wx.T), [x]
    yield "reshape", lambda: _loss(ad.reshape(x, (m, n)), wx.reshape(m, n)), [x]
    yield "sum_axis", lambda: _loss(ad.sum_axis(x, 0), wx[0]), [x]
    yield "sum_all", lambda: ad.scale(ad.sum_all(ad.mul(x, x)), 0.5), [x]
    yield "index", lambda: _loss(ad.index(x, (slice(None), slice(0, 1))), wx[:, :1]), [x]

    z = _param(rng, n, k)
    wc = _probe(rng, (n, m + k))
    yield "concat", lambda: _loss(ad.concat([x, z], axis=1), wc), [x, z]

    idx = rng.integers(0, n, size=n + 2)
    wg = _probe(rng, (len(idx), m))
    yield "gather_rows", lambda: _loss(ad.gather_rows(x, idx), wg), [x]

    first, second = rng.integers(0, n, size=4), rng.integers(0, n, size=4)
    wp = _probe(rng, (4, 2 * m))
    yield "concat_pairs", lambda: _loss(ad.concat_pairs(x, first, second), wp), [x]

    v = _param(rng, n, m, away_from_zero=0.05)
    yield "leaky_relu", lambda: _loss(ad.leaky_relu(v, 0.2), wx), [v]
    yield "elu", lambda: _loss(ad.elu(v), wx), [v]
    yield "softplus", lambda: _loss(ad.softplus(v), wx), [v]

    pos = Tensor(rng.uniform(0.5, 2.0, size=(n, m)), requires_grad=True)
    yield "normalize_sum", lambda: _loss(ad.normalize_sum(pos), wx), [pos]

    parts = [_param(rng, n, m) for _ in range(3)]
    beta = _param(rng, 3)
    yield "weighted_sum", lambda: _loss(ad.weighted_sum(parts, beta), wx), [*parts, beta]

    seg = np.concatenate([np.arange(n), rng.integers(0, n, size=n)])
    vals = _param(rng, len(seg), m)
    yield "segment_sum", lambda: _loss(ad.segment_sum(vals, seg, n), wx), [vals]

    logits = _param(rng, len(seg))
    we = _probe(rng, len(seg))
    yield "segment_softmax", lambda: _loss(ad.segment_softmax(logits, seg, n), we), [logits]

    scores = _param(rng, n, k)
    labels = rng.integers(0, k, size=n)
    yield "masked_cross_entropy", lambda: ad.masked_cross_entropy(scores, labels, np.arange(n)), [scores]

    # Fused neighborhood attention on both code paths: a small graph with a
    # dense block and a sparse remainder.
    yield from _attention_cases(rng)


def _attention_cases(rng) -> Iterator[Case]:
    clique = np.arange(5)
    src, dst = np.meshgrid(clique, clique)
    extra = np.array([[5, 0], [0, 5], [5, 6], [6, 5], [5, 5], [6, 6]])
    pairs = np.concatenate([np.stack([src.ravel(), dst.ravel()], 1), extra])
    for name, min_block in (("neighborhood_attention[block]", 3), ("neighborhood_attention[sparse]", 10**9)):
        adj = Adjacency.from_edges(7, pairs, min_block=min_block)
        xt = _param(rng, 7, 3)
        # Every neighborhood mixes logits on both sides of the leaky-ReLU kink;
        # otherwise the gradient in s is exactly zero and only round-off remains.
        s = Tensor(rng.uniform(-0.5, 0.5, 7), requires_grad=True)
        t = Tensor(np.array([-1, 1, -1, 1, -1, 1, -1]) * rng.uniform(1.0, 2.0, 7), requires_grad=True)
        w = _probe(rng, (7, 3))
        yield name, (lambda adj=adj, xt=xt, s=s, t=t, w=w: _loss(neighborhood_attention(xt, s, t, adj), w)), \
            [xt, s, t]

    g = path_graph()
    adj = Adjacency.from_layer(g.layers[0])
    head = AttentionHead(4, 3, rng)
    # Inputs chosen so that x W^T is orthogonal, which keeps the solve for A well conditioned.
    q = _orthogonal(rng, 3)
    x = q @ np.linalg.pinv(head.W.value.T)
    head.A.value[:] = _straddling_a(q, rng)
    yield "attention_head[path3]", lambda: ad.sum_all(head(ad.Tensor(x), adj)), head.parameters()

    xt = Tensor(_orthogonal(rng, 3), requires_grad=True)
    a = Tensor(_straddling_a(xt.value, rng), requires_grad=True)
    yield "head_attention[path3]", lambda: ad.sum_all(head_attention(xt, a, adj)), [xt, a]


def _orthogonal(rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _straddling_a(xt: np.ndarray, rng) -> np.ndarray:
    """Attention vector giving small ``s`` and sign-alternating ``t`` on a path."""
    n, d = xt.shape
    s = rng.uniform(-0.5, 0.5, n)
    t = np.resize([-1.0, 1.0], n) * rng.uniform(1.0, 2.0, n)
    a_dst = np.linalg.lstsq(xt, s, rcond=None)[0]
    a_src = np.linalg.lstsq(xt, t, rcond=None)[0]
    return np.concatenate([a_dst, a_src])


def model_cases(seed: int = 0) -> Iterator[Case]:
    """Full training loss of each variant on the 6-node/2-layer fixture."""
    g = two_layer_fixture()
    mask = np.array([0, 1, 3, 4])
    for variant in ("sg", "fusion"):
        for ff in ((False, True) if variant == "fusion" else (False,)):
            cfg = ModelConfig(variant=variant, T=2, H=2, K=3, D=5, d=4, use_ff_before_overall_fusion=ff)
            model = build_model(cfg, g.n_layers, g.n_classes, seed)
            ctx = model.context(g)
            x = model.make_features(g.n_nodes, seed + 1)
            name = f"model[{variant}{'+ff' if ff else ''}]"
            yield name, (lambda model=model, ctx=ctx, x=x: ad.masked_cross_entropy(model(ctx, x), g.labels, mask)), \
                model.parameters()


def run_gradcheck(seed: int = 0, eps: float = 1e-5, include_models: bool = True) -> dict[str, float]:
    """Max relative error per case."""
    cases = list(op_cases(seed))
    if include_models:
        cases += list(model_cases(seed))
    return {name: ad.finite_diff_check(f, params, eps) for name, f, params in cases}
