"""Graph attention heads, fusion heads and stacked attention layers."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .neighborhoods import Adjacency, neighborhood_attention


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def _activate(x: Tensor, activation: str) -> Tensor:
    if activation == "elu":
        return ad.elu(x)
    if activation in ("none", "identity", None):
        return x
    raise ValueError(f"unknown activation {activation!r}")


class AttentionHead:
    """One head: ``xt = X W^T``, leaky-ReLU logits over ``xt_i || xt_j``,
    neighborhood softmax, ``z_i = act(sum_j alpha_ij xt_j)``."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float64, name: str = "head"):
        self.W = Tensor(glorot(rng, (out_dim, in_dim), in_dim, out_dim, dtype), requires_grad=True, name=f"{name}.W")
        self.A = Tensor(glorot(rng, (2 * out_dim,), 2 * out_dim, 1, dtype), requires_grad=True, name=f"{name}.A")

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.W, self.A]

    def __call__(self, x: Tensor, adj: Adjacency, slope: float | None = 0.2, activation: str = "elu") -> Tensor:
        xt = ad.matmul(x, ad.transpose(self.W))
        return _activate(head_attention(xt, self.A, adj, slope), activation)


def head_attention(xt, a, adj: Adjacency, slope: float | None = 0.2) -> Tensor:
    """Neighborhood aggregate for logits ``<a, xt_i || xt_j>``."""
    xt, a = ad.as_tensor(xt), ad.as_tensor(a)
    d = xt.shape[1]
    if a.shape != (2 * d,):
        raise ad.ShapeError("head_attention", xt.shape, a.shape)
    s = ad.matmul(xt, ad.index(a, slice(0, d)))
    t = ad.matmul(xt, ad.index(a, slice(d, 2 * d)))
    return neighborhood_attention(xt, s, t, adj, slope)


class FusionHead:
    """Nonnegative weights for combining parallel representations.

    Effective weights are ``softplus(raw)``, optionally renormalized to sum to
    one along the last axis. ``shape`` may be an int or a tuple, for example
    ``(K, L)`` for ``K`` weightings over ``L`` inputs. :meth:`fix` pins the
    effective weights to constants.
    """

    def __init__(self, shape, normalize: bool = False, init: float | None = None,
                 jitter: float = 0.0, rng: np.random.Generator | None = None, name: str = "fusion",
                 dtype=np.float64):
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        if not shape or min(shape) < 1:
            raise ValueError("a fusion head needs at least one input")
        target = 1.0 / shape[-1] if init is None else init
        raw = np.full(shape, inverse_softplus(target))
        if jitter:
            raw = raw + rng.uniform(-jitter, jitter, size=shape)
        self.raw = Tensor(raw.astype(dtype), requires_grad=True, name=f"{name}.raw")
        self.normalize = normalize
        self.fixed: np.ndarray | None = None

    def parameters(self) -> list[Tensor]:
        return [] if self.fixed is not None else [self.raw]

    def fix(self, weights) -> None:
        w = np.broadcast_to(np.asarray(weights, dtype=self.raw.value.dtype), self.raw.shape).copy()
        if (w < 0).any():
            raise ValueError("fusion weights must be nonnegative")
        self.fixed = w

    def weights(self) -> Tensor:
        if self.fixed is not None:
            return Tensor(self.fixed)
        beta = ad.softplus(self.raw)
        return ad.normalize_sum(beta) if self.normalize else beta

    def __call__(self, tensors: Sequence[Tensor]) -> Tensor:
        return fusion_combine(tensors, self.weights())


def fusion_combine(head_outputs: Sequence[Tensor], weights) -> Tensor:
    """``sum_h weights[h] * head_outputs[h]``; weights must be nonnegative."""
    w = ad.as_tensor(weights)
    if (w.value < 0).any():
        raise ValueError("fusion weights must be nonnegative")
    return ad.weighted_sum(head_outputs, w)


class AttentionLayer:
    """``H`` heads combined by a fusion head (or concatenated, for comparison)."""

    def __init__(self, in_dim: int, out_dim: int, n_heads: int, rng: np.random.Generator,
                 aggregation: str = "fusion", normalize_fusion: bool = False, dtype=np.float64,
                 name: str = "layer"):
        if n_heads < 1:
            raise ValueError("an attention layer needs at least one head")
        if aggregation not in ("fusion", "concat"):
            raise ValueError(f"aggregation must be 'fusion' or 'concat', got {aggregation!r}")
        self.heads = [AttentionHead(in_dim, out_dim, rng, dtype, f"{name}.head{h}") for h in range(n_heads)]
        self.aggregation = aggregation
        self.fusion = FusionHead(n_heads, normalize_fusion, name=f"{name}.beta", dtype=dtype)

    @property
    def out_dim(self) -> int:
        d = self.heads[0].out_dim
        return d * len(self.heads) if self.aggregation == "concat" else d

    def parameters(self) -> list[Tensor]:
        params = [p for h in self.heads for p in h.parameters()]
        if self.aggregation == "fusion":
            params += self.fusion.parameters()
        return params

    def __call__(self, x: Tensor, adj: Adjacency, slope: float | None = 0.2, activation: str = "elu") -> Tensor:
        outs = [head(x, adj, slope, activation) for head in self.heads]
        if self.aggregation == "concat":
            return ad.concat(outs, axis=1)
        return self.fusion(outs)


class AttentionStack:
    """``T`` attention layers applied in sequence."""

    def __init__(self, in_dim: int, hidden: int, n_layers: int, n_heads: int, rng: np.random.Generator,
                 aggregation: str = "fusion", normalize_fusion: bool = False, dtype=np.float64,
                 name: str = "stack"):
        if n_layers < 1:
            raise ValueError("an attention stack needs at least one layer")
        self.layers = []
        dim = in_dim
        for i in range(n_layers):
            layer = AttentionLayer(dim, hidden, n_heads, rng, aggregation, normalize_fusion, dtype, f"{name}.{i}")
            self.layers.append(layer)
            dim = layer.out_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, x: Tensor, adj: Adjacency, slope: float | None = 0.2, activation: str = "elu") -> Tensor:
        for layer in self.layers:
            x = layer(x, adj, slope, activation)
        return x


def attention_head_forward(X, adj: Adjacency, head: AttentionHead, slope: float | None = 0.2,
                           activation: str = "elu") -> Tensor:
    return head(ad.as_tensor(X), adj, slope, activation)


def attention_layer_forward(X, adj: Adjacency, layer: AttentionLayer, slope: float | None = 0.2,
                            activation: str = "elu") -> Tensor:
    return layer(ad.as_tensor(X), adj, slope, activation)


class ParallelAttentionLayer:
    """``P`` independent attention layers of ``H`` heads each, evaluated in one pass.

    Layer ``p`` attends over graph ``p``; all ``P * H`` heads run through a single
    fused call on the disjoint union of the graphs (group ``p * H + h``). Input
    is either shared ``(M, in_dim)`` or per layer ``(P, M, in_dim)``; output is
    ``(P, M, out_dim)`` (``(P, M, H * out_dim)`` with concatenation).
    """

    def __init__(self, n_parallel: int, in_dim: int, out_dim: int, n_heads: int, rng: np.random.Generator,
                 aggregation: str = "fusion", normalize_fusion: bool = False, dtype=np.float64,
                 name: str = "layer"):
        if n_heads < 1 or n_parallel < 1:
            raise ValueError("a parallel attention layer needs at least one head and one graph")
        if aggregation not in ("fusion", "concat"):
            raise ValueError(f"aggregation must be 'fusion' or 'concat', got {aggregation!r}")
        P, H = n_parallel, n_heads
        W = np.empty((P, H, out_dim, in_dim), dtype=dtype)
        A = np.empty((P, H, 2 * out_dim), dtype=dtype)
        for p in range(P):
            for h in range(H):
                # Same draw order as separate AttentionHead objects.
                W[p, h] = glorot(rng, (out_dim, in_dim), in_dim, out_dim, dtype)
                A[p, h] = glorot(rng, (2 * out_dim,), 2 * out_dim, 1, dtype)
        self.W = Tensor(W, requires_grad=True, name=f"{name}.W")
        self.A = Tensor(A, requires_grad=True, name=f"{name}.A")
        self.fusion = FusionHead((P, H), normalize_fusion, name=f"{name}.beta", dtype=dtype)
        self.aggregation = aggregation

    @property
    def n_parallel(self) -> int:
        return self.W.shape[0]

    @property
    def n_heads(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        d = self.W.shape[2]
        return d * self.n_heads if self.aggregation == "concat" else d

    def parameters(self) -> list[Tensor]:
        params = [self.W, self.A]
        if self.aggregation == "fusion":
            params += self.fusion.parameters()
        return params

    def load_layer(self, p: int, layer: AttentionLayer) -> None:
        """Copy the parameters of a single-graph layer into slot ``p``."""
        for h, head in enumerate(layer.heads):
            self.W.value[p, h] = head.W.value
            self.A.value[p, h] = head.A.value
        if layer.fusion.fixed is not None:
            weights = np.array(self.fusion.weights().value)
            weights[p] = layer.fusion.fixed
            self.fusion.fix(weights)
        else:
            self.fusion.raw.value[p] = layer.fusion.raw.value

    def __call__(self, x, union: Adjacency, slope: float | None = 0.2, activation: str = "elu") -> Tensor:
        x = ad.as_tensor(x)
        P, H, d = self.n_parallel, self.n_heads, self.W.shape[2]
        if x.value.ndim == 3:
            x = ad.reshape(x, (x.shape[0], 1) + x.shape[1:])
        M = x.shape[-2]
        if union.n_nodes != P * H * M:
            raise ad.ShapeError("parallel_attention", x.shape, (P, H, M), (union.n_nodes,))
        xt = ad.matmul(x, ad.transpose(self.W))
        s = ad.matmul(xt, ad.reshape(ad.index(self.A, (slice(None), slice(None), slice(0, d))), (P, H, d, 1)))
        t = ad.matmul(xt, ad.reshape(ad.index(self.A, (slice(None), slice(None), slice(d, 2 * d))), (P, H, d, 1)))
        agg = neighborhood_attention(ad.reshape(xt, (P * H * M, d)), ad.reshape(s, (-1,)), ad.reshape(t, (-1,)),
                                     union, slope)
        z = _activate(ad.reshape(agg, (P, H, M, d)), activation)
        if self.aggregation == "concat":
            return ad.reshape(ad.transpose(z, (0, 2, 1, 3)), (P, M, H * d))
        beta = ad.reshape(self.fusion.weights(), (P, H, 1, 1))
        return ad.sum_axis(ad.mul(z, beta), 1)


class ParallelAttentionStack:
    """``T`` parallel attention layers in sequence."""

    def __init__(self, n_parallel: int, in_dim: int, hidden: int, n_layers: int, n_heads: int,
                 rng: np.random.Generator, aggregation: str = "fusion", normalize_fusion: bool = False,
                 dtype=np.float64, name: str = "stack"):
        if n_layers < 1:
            raise ValueError("an attention stack needs at least one layer")
        self.layers = []
        dim = in_dim
        for i in range(n_layers):
            layer = ParallelAttentionLayer(n_parallel, dim, hidden, n_heads, rng, aggregation, normalize_fusion,
                                           dtype, f"{name}.{i}")
            self.layers.append(layer)
            dim = layer.out_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def load_stack(self, p: int, stack: AttentionStack) -> None:
        for mine, theirs in zip(self.layers, stack.layers):
            mine.load_layer(p, theirs)

    def __call__(self, x, union: Adjacency, slope: float | None = 0.2, activation: str = "elu") -> Tensor:
        for layer in self.layers:
            x = layer(x, union, slope, activation)
        return x


def parallel_union(adjacencies: Sequence[Adjacency], n_heads: int) -> Adjacency:
    """Union adjacency for a :class:`ParallelAttentionLayer` over ``adjacencies``."""
    return Adjacency.disjoint_union([a for a in adjacencies for _ in range(n_heads)])


# -- reference path built from generic tape ops ------------------------------------------

def reference_head_forward(X, src, dst, W, A, slope: float | None = 0.2, activation: str = "elu",
                           n_nodes: int | None = None) -> tuple[Tensor, Tensor]:
    """Edge-by-edge attention head. Returns ``(z, alpha)``.

    ``src``/``dst`` must already contain the self-edges. This is the slow,
    obviously-correct composition of gather, concat, softmax and scatter ops.
    """
    X, W, A = ad.as_tensor(X), ad.as_tensor(W), ad.as_tensor(A)
    n = X.shape[0] if n_nodes is None else n_nodes
    xt = ad.matmul(X, ad.transpose(W))
    pairs = ad.concat_pairs(xt, dst, src)
    logits = ad.matmul(pairs, A)
    if slope is not None:
        logits = ad.leaky_relu(logits, slope)
    alpha = ad.segment_softmax(logits, dst, n)
    weighted = ad.mul(ad.gather_rows(xt, src), ad.reshape(alpha, (-1, 1)))
    return _activate(ad.segment_sum(weighted, dst, n), activation), alpha


def attention_coefficients(X, adj: Adjacency, head: AttentionHead, slope: float | None = 0.2):
    """Per-edge attention weights ``(src, dst, alpha)`` for inspection."""
    src, dst = adj.edge_list()
    _, alpha = reference_head_forward(X, src, dst, head.W.value, head.A.value, slope, "none", adj.n_nodes)
    return src, dst, alpha.value
