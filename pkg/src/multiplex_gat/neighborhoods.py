"""Attention neighborhoods and the fused neighborhood-attention op.

An :class:`Adjacency` splits a graph into disjoint *blocks* (complete groups in
which every member attends to every member, itself included) and a sparse
list of directed edges sorted by destination. Categorical layers are unions of
such blocks, which makes the dense attention tractable: inside a block the
logit ``leaky_relu(s_i + t_j)`` is monotone in ``t_j``, so all weighted sums
reduce to prefix and suffix sums over members sorted by ``t``. The sparse part
is evaluated edge by edge. Both parts share the per-destination max and
softmax denominator, so the result equals an ordinary segment softmax over the
expanded edge list.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse.csgraph import connected_components

from .autodiff import ShapeError, Tensor, as_tensor, make_result
from .graph import LayerGraph, MultiLayerGraph, SupraGraph

MIN_BLOCK = 16


@dataclass(frozen=True)
class Adjacency:
    n_nodes: int
    blocks: tuple[np.ndarray, ...]
    src: np.ndarray
    dst: np.ndarray
    indptr: np.ndarray

    @property
    def n_sparse(self) -> int:
        return len(self.src)

    @property
    def n_edges(self) -> int:
        """Attention edges including self-edges."""
        return self.n_sparse + sum(len(b) ** 2 for b in self.blocks)

    def edge_list(self) -> tuple[np.ndarray, np.ndarray]:
        """All attention edges as ``(src, dst)`` sorted by (dst, src)."""
        srcs, dsts = [self.src], [self.dst]
        for b in self.blocks:
            srcs.append(np.tile(b, len(b)))
            dsts.append(np.repeat(b, len(b)))
        src, dst = np.concatenate(srcs), np.concatenate(dsts)
        order = np.lexsort((src, dst))
        return src[order], dst[order]

    @cached_property
    def members(self) -> tuple[np.ndarray, np.ndarray]:
        """Block members concatenated, and block offsets into that array."""
        if not self.blocks:
            return np.zeros(0, np.int64), np.zeros(1, np.int64)
        ptr = np.concatenate([[0], np.cumsum([len(b) for b in self.blocks])]).astype(np.int64)
        return np.concatenate(self.blocks), ptr

    @classmethod
    def disjoint_union(cls, parts) -> "Adjacency":
        """Side-by-side copies: node ``i`` of ``parts[p]`` becomes ``offset_p + i``."""
        offsets = np.cumsum([0] + [a.n_nodes for a in parts])
        blocks = [b + off for a, off in zip(parts, offsets) for b in a.blocks]
        src = np.concatenate([a.src + off for a, off in zip(parts, offsets)])
        dst = np.concatenate([a.dst + off for a, off in zip(parts, offsets)])
        return _assemble(int(offsets[-1]), blocks, src, dst)

    def in_degree(self) -> np.ndarray:
        deg = np.bincount(self.dst, minlength=self.n_nodes)
        for b in self.blocks:
            deg[b] += len(b)
        return deg

    def permute(self, perm) -> "Adjacency":
        perm = np.asarray(perm, dtype=np.int64)
        return _assemble(self.n_nodes, [np.sort(perm[b]) for b in self.blocks], perm[self.src], perm[self.dst])

    @classmethod
    def from_edges(cls, n_nodes: int, edges, self_edges: bool = True, detect_blocks: bool = True,
                   min_block: int = MIN_BLOCK) -> "Adjacency":
        """Build from directed ``(src, dst)`` pairs; self-loops in ``edges`` are ignored."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
            raise ValueError(f"edge endpoint outside [0, {n_nodes})")
        edges = edges[edges[:, 0] != edges[:, 1]]
        code = np.unique(edges[:, 0] * n_nodes + edges[:, 1])
        src, dst = code // n_nodes, code % n_nodes
        blocks: list[np.ndarray] = []
        if detect_blocks and self_edges:
            blocks, keep = _find_blocks(n_nodes, src, dst, min_block)
            src, dst = src[keep], dst[keep]
        if self_edges:
            covered = np.zeros(n_nodes, dtype=bool)
            for b in blocks:
                covered[b] = True
            loops = np.flatnonzero(~covered)
            src, dst = np.concatenate([src, loops]), np.concatenate([dst, loops])
        return _assemble(n_nodes, blocks, src, dst)

    @classmethod
    def from_layer(cls, layer: LayerGraph, self_edges: bool = True, detect_blocks: bool = True) -> "Adjacency":
        return cls.from_edges(layer.n_nodes, layer.edges, self_edges, detect_blocks)

    @classmethod
    def supra(cls, supra: SupraGraph, g: MultiLayerGraph | None = None, detect_blocks: bool = True) -> "Adjacency":
        """Supra-graph neighborhoods: per-layer blocks plus pillar edges."""
        n, n_sup = supra.n_nodes, supra.n_supra
        if g is None or not detect_blocks:
            return cls.from_edges(n_sup, supra.edges, detect_blocks=False)
        blocks, srcs, dsts = [], [supra.pillar_edges[:, 0]], [supra.pillar_edges[:, 1]]
        for l, layer in enumerate(g.layers):
            s, d = layer.edges[:, 0], layer.edges[:, 1]
            lb, keep = _find_blocks(n, s, d, MIN_BLOCK)
            blocks.extend(b + l * n for b in lb)
            srcs.append(s[keep] + l * n)
            dsts.append(d[keep] + l * n)
        covered = np.zeros(n_sup, dtype=bool)
        for b in blocks:
            covered[b] = True
        loops = np.flatnonzero(~covered)
        return _assemble(n_sup, blocks, np.concatenate(srcs + [loops]), np.concatenate(dsts + [loops]))


def _find_blocks(n_nodes: int, src: np.ndarray, dst: np.ndarray, min_block: int):
    """Weak components that are complete directed graphs. Returns blocks and the
    mask of edges that stay in the sparse part."""
    keep = np.ones(len(src), dtype=bool)
    if len(src) == 0:
        return [], keep
    adj = sp.csr_matrix((np.ones(len(src)), (src, dst)), shape=(n_nodes, n_nodes))
    n_comp, comp = connected_components(adj, directed=True, connection="weak")
    sizes = np.bincount(comp, minlength=n_comp)
    edge_count = np.bincount(comp[src], minlength=n_comp)
    full = (sizes >= min_block) & (edge_count == sizes * (sizes - 1))
    if not full.any():
        return [], keep
    blocks = [np.flatnonzero(comp == c) for c in np.flatnonzero(full)]
    keep = ~full[comp[src]]
    return blocks, keep


def _assemble(n_nodes, blocks, src, dst) -> Adjacency:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    order = np.lexsort((src, dst))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(dst, minlength=n_nodes), out=indptr[1:])
    blocks = tuple(np.asarray(b, dtype=np.int64) for b in sorted(blocks, key=lambda b: int(b[0])))
    for a in (src, dst, indptr, *blocks):
        a.setflags(write=False)
    return Adjacency(n_nodes, blocks, src, dst, indptr)


@njit(cache=True)
def _block_max(s, t, members, ptr, slope, m, tau):
    for b in range(len(ptr) - 1):
        top = -np.inf
        for q in range(ptr[b], ptr[b + 1]):
            top = max(top, t[members[q]])
        tau[b] = top
        for q in range(ptr[b], ptr[b + 1]):
            i = members[q]
            z = s[i] + top
            m[i] = z if z > 0 else slope * z


@njit(cache=True)
def _block_forward(X, s, t, m, members, ptr, tau, slope, den, num, SK, PK):
    d = X.shape[1]
    for b in range(len(ptr) - 1):
        lo, hi = ptr[b], ptr[b + 1]
        size = hi - lo
        idx = members[lo:hi]
        tb = np.empty(size)
        for q in range(size):
            tb[q] = t[idx[q]]
        order = np.argsort(tb)
        ts = tb[order]
        suf = np.zeros((size + 1, d + 1))
        pre = np.zeros((size + 1, d + 1))
        for q in range(size - 1, -1, -1):
            j = idx[order[q]]
            w = np.exp(t[j] - tau[b])
            suf[q, 0] = suf[q + 1, 0] + w
            for c in range(d):
                suf[q, c + 1] = suf[q + 1, c + 1] + w * X[j, c]
        for q in range(size):
            j = idx[order[q]]
            w = np.exp(slope * (t[j] - tau[b]))
            pre[q + 1, 0] = pre[q, 0] + w
            for c in range(d):
                pre[q + 1, c + 1] = pre[q, c + 1] + w * X[j, c]
        for q in range(size):
            i = idx[q]
            k = np.searchsorted(ts, -s[i], side="right")
            fp = np.exp(s[i] + tau[b] - m[i])
            fn = np.exp(slope * (s[i] + tau[b]) - m[i])
            SK[lo + q] = suf[k]
            PK[lo + q] = pre[k]
            den[i] += fp * suf[k, 0] + fn * pre[k, 0]
            for c in range(d):
                num[i, c] += fp * suf[k, c + 1] + fn * pre[k, c + 1]


@njit(cache=True)
def _block_backward(X, G, s, t, m, c, den, members, ptr, tau, slope, SK, PK, dX, ds, dt):
    d = X.shape[1]
    for b in range(len(ptr) - 1):
        lo, hi = ptr[b], ptr[b + 1]
        size = hi - lo
        idx = members[lo:hi]
        sb = np.empty(size)
        wpos = np.empty(size)
        wneg = np.empty(size)
        for q in range(size):
            i = idx[q]
            sb[q] = s[i]
            fp = np.exp(s[i] + tau[b] - m[i])
            fn = np.exp(slope * (s[i] + tau[b]) - m[i])
            gs = 0.0
            gp = 0.0
            for k in range(d):
                gs += G[i, k] * SK[lo + q, k + 1]
                gp += G[i, k] * PK[lo + q, k + 1]
            ds[i] += (fp * (gs - c[i] * SK[lo + q, 0]) + slope * fn * (gp - c[i] * PK[lo + q, 0])) / den[i]
            wpos[q] = fp / den[i]
            wneg[q] = fn / den[i]
        # Sources: sums over destinations whose logit with the source is positive / not.
        order = np.argsort(sb)
        ss = sb[order]
        P = np.zeros((size + 1, d + 1))
        Q = np.zeros((size + 1, d + 1))
        for q in range(size - 1, -1, -1):
            i = idx[order[q]]
            w = wpos[order[q]]
            P[q, 0] = P[q + 1, 0] + w * c[i]
            for k in range(d):
                P[q, k + 1] = P[q + 1, k + 1] + w * G[i, k]
        for q in range(size):
            i = idx[order[q]]
            w = wneg[order[q]]
            Q[q + 1, 0] = Q[q, 0] + w * c[i]
            for k in range(d):
                Q[q + 1, k + 1] = Q[q, k + 1] + w * G[i, k]
        for q in range(size):
            j = idx[q]
            r = np.searchsorted(ss, -t[j], side="right")
            ep = np.exp(t[j] - tau[b])
            en = np.exp(slope * (t[j] - tau[b]))
            xp = 0.0
            xq = 0.0
            for k in range(d):
                dX[j, k] += ep * P[r, k + 1] + en * Q[r, k + 1]
                xp += X[j, k] * P[r, k + 1]
                xq += X[j, k] * Q[r, k + 1]
            dt[j] += ep * (xp - P[r, 0]) + slope * en * (xq - Q[r, 0])


@njit(cache=True)
def _sparse_max(s, t, src, indptr, slope, m):
    for i in range(len(indptr) - 1):
        for e in range(indptr[i], indptr[i + 1]):
            z = s[i] + t[src[e]]
            z = z if z > 0 else slope * z
            if z > m[i]:
                m[i] = z


@njit(cache=True)
def _sparse_forward(X, s, t, m, src, indptr, slope, den, num, ex):
    d = X.shape[1]
    for i in range(len(indptr) - 1):
        for e in range(indptr[i], indptr[i + 1]):
            j = src[e]
            z = s[i] + t[j]
            w = np.exp((z if z > 0 else slope * z) - m[i])
            ex[e] = w
            den[i] += w
            for k in range(d):
                num[i, k] += w * X[j, k]


@njit(cache=True)
def _sparse_backward(X, G, s, t, c, den, ex, src, indptr, slope, dX, ds, dt):
    d = X.shape[1]
    for i in range(len(indptr) - 1):
        for e in range(indptr[i], indptr[i + 1]):
            j = src[e]
            a = ex[e] / den[i]
            dot = 0.0
            for k in range(d):
                dot += G[i, k] * X[j, k]
                dX[j, k] += a * G[i, k]
            de = a * (dot - c[i])
            if s[i] + t[j] <= 0:
                de *= slope
            ds[i] += de
            dt[j] += de


def neighborhood_attention(xt, s, t, adj: Adjacency, slope: float | None = 0.2) -> Tensor:
    """``out_i = sum_j alpha_ij xt_j`` over the attention neighborhood of ``i``.

    ``alpha_ij`` is the softmax over ``j`` of ``act(s_i + t_j)``, ``act`` a leaky
    ReLU with the given slope (identity when ``slope`` is None). ``s`` and ``t``
    are the destination and source halves of the attention logit. Returns the
    aggregate before any output nonlinearity.
    """
    xt, s, t = as_tensor(xt), as_tensor(s), as_tensor(t)
    X, sv, tv = xt.value, s.value, t.value
    if X.ndim != 2 or X.shape[0] != adj.n_nodes or sv.shape != (adj.n_nodes,) or tv.shape != sv.shape:
        raise ShapeError("neighborhood_attention", xt.shape, s.shape, t.shape, (adj.n_nodes,))
    slope = 1.0 if slope is None else float(slope)
    if not 0.0 <= slope <= 1.0:
        raise ValueError(f"leaky slope must lie in [0, 1], got {slope}")
    n, d = X.shape
    src = adj.src
    members, ptr = adj.members
    work = np.float64
    Xw = np.ascontiguousarray(X, dtype=work)
    sw, tw = sv.astype(work, copy=False), tv.astype(work, copy=False)

    # Per-destination max logit over block and sparse neighbors.
    m = np.full(n, -np.inf)
    tau = np.empty(len(ptr) - 1)
    _block_max(sw, tw, members, ptr, slope, m, tau)
    _sparse_max(sw, tw, src, adj.indptr, slope, m)
    if np.isneginf(m).any():
        raise RuntimeError("neighborhood_attention: node with an empty neighborhood (self-edges disabled?)")

    den = np.zeros(n)
    num = np.zeros((n, d))
    ex = np.empty(len(src))
    _sparse_forward(Xw, sw, tw, m, src, adj.indptr, slope, den, num, ex)
    SK = np.empty((len(members), d + 1))
    PK = np.empty((len(members), d + 1))
    _block_forward(Xw, sw, tw, m, members, ptr, tau, slope, den, num, SK, PK)
    out = num / den[:, None]

    def bw(G):
        G = np.ascontiguousarray(G, dtype=work)
        c = np.einsum("ij,ij->i", G, out)
        ds = np.zeros(n)
        dt = np.zeros(n)
        dX = np.zeros((n, d))
        _sparse_backward(Xw, G, sw, tw, c, den, ex, src, adj.indptr, slope, dX, ds, dt)
        _block_backward(Xw, G, sw, tw, m, c, den, members, ptr, tau, slope, SK, PK, dX, ds, dt)
        xt.accumulate(dX.astype(X.dtype, copy=False))
        s.accumulate(ds.astype(X.dtype, copy=False))
        t.accumulate(dt.astype(X.dtype, copy=False))

    return make_result(out.astype(X.dtype, copy=False), (xt, s, t), bw, "neighborhood_attention")
