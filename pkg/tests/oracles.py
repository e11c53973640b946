"""Independent plain-Python reference computations used by several test modules."""

import math

import numpy as np


def loop_head(x, neighbors, W, A, slope=0.2, elu=True):
    """Plain-Python attention head: per node, softmax over its neighbors (self included)."""
    xt = [[sum(W[r][c] * row[c] for c in range(len(row))) for r in range(len(W))] for row in x]
    d = len(W)
    out = []
    for i in range(len(x)):
        logits = []
        for j in neighbors[i]:
            e = sum(A[k] * xt[i][k] for k in range(d)) + sum(A[d + k] * xt[j][k] for k in range(d))
            logits.append(e if (slope is None or e > 0) else slope * e)
        top = max(logits)
        w = [math.exp(v - top) for v in logits]
        total = sum(w)
        agg = [sum(w[q] / total * xt[j][k] for q, j in enumerate(neighbors[i])) for k in range(d)]
        out.append([v if (not elu or v > 0) else math.expm1(v) for v in agg])
    return np.array(out)


def softplus(v):
    return np.log1p(np.exp(v))


def neighbor_lists(n, edges):
    """In-neighbors (sources) of each node, self included."""
    out = [{i} for i in range(n)]
    for u, v in edges:
        out[v].add(u)
    return [sorted(s) for s in out]


def stack_forward(x, neighbors, layers, slope=0.2):
    """Attention layers given as ``[(W[h], A[h], beta[h]) ...]``; heads combined by beta."""
    for heads in layers:
        x = sum(beta * loop_head(x.tolist(), neighbors, W.tolist(), A.tolist(), slope) for W, A, beta in heads)
    return x
