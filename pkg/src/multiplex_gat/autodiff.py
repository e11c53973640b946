"""A small dense reverse-mode autodiff engine on top of numpy.

Every op returns a :class:`Tensor` that remembers its parents and a backward
rule. :func:`backward` walks the graph in reverse topological order, visiting
each node exactly once. Leaf gradients accumulate across calls until
:meth:`Tensor.zero_grad` is called; interior gradients are reset per call.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a value or gradient."""


def _check_finite(op: str, value: np.ndarray) -> None:
    # A sum is NaN/Inf whenever an entry is; overflow alone is re-checked entrywise.
    with np.errstate(over="ignore", invalid="ignore"):
        total = value.sum()
    if not np.isfinite(total) and not np.isfinite(value).all():
        bad = int((~np.isfinite(value)).sum())
        raise NonFiniteError(f"{op}: {bad} non-finite entries in output of shape {value.shape}")


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "_backward", "op", "name", "_owned")

    def __init__(self, value, requires_grad: bool = False, name: str = "", dtype=None):
        if dtype is None:
            dtype = value.dtype if isinstance(value, np.ndarray) and value.dtype.kind == "f" else DEFAULT_DTYPE
        self.value = np.asarray(value, dtype=dtype)
        self.grad: np.ndarray | None = None
        self._owned = False
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}{', grad' if self.requires_grad else ''})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if g.shape != self.value.shape:
            raise ShapeError(f"grad[{self.op}]", g.shape, self.value.shape)
        # The first gradient is kept by reference; a second one triggers a private copy.
        if self.grad is None:
            self.grad = np.asarray(g, dtype=self.value.dtype)
            self._owned = False
        elif self._owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._owned = True

    def backward(self) -> int:
        return backward(self)

    # operator sugar used by tests and small helpers
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(value: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap an op output. ``backward_fn(g)`` must call ``accumulate`` on parents."""
    _check_finite(op, value)
    out = Tensor(value, dtype=value.dtype)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> int:
    """Backpropagate from a scalar ``loss``. Returns the number of nodes visited."""
    if loss.value.size != 1:
        raise ShapeError("backward (loss must be scalar)", loss.shape)
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    for node in order:
        if not node.is_leaf:
            node.grad = None
    loss.accumulate(np.ones_like(loss.value))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            _check_finite(f"backward[{node.op}]", node.grad)
            node._backward(node.grad)
    return len(order)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- dense ops ------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading (batch) axes."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 1 or av.shape[-1] != bv.shape[-2 if bv.ndim > 1 else 0]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = av @ bv
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def bw(g):
        if bv.ndim == 1:
            if a.requires_grad:
                a.accumulate(_unbroadcast(g[..., None] * bv, a.shape))
            if b.requires_grad:
                b.accumulate(np.einsum("...ij,...i->j", av, g))
        else:
            if a.requires_grad:
                a.accumulate(_unbroadcast(g @ np.swapaxes(bv, -1, -2), a.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(np.swapaxes(av, -1, -2) @ g, b.shape))

    return make_result(out, (a, b), bw, "matmul")


def transpose(a, axes=None) -> Tensor:
    """Swap the last two axes, or permute by ``axes``."""
    a = as_tensor(a)
    if axes is None:
        if a.value.ndim < 2:
            raise ShapeError("transpose", a.shape)
        axes = tuple(range(a.value.ndim - 2)) + (a.value.ndim - 1, a.value.ndim - 2)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.value.ndim)):
        raise ShapeError("transpose", a.shape, axes)
    inverse = tuple(np.argsort(axes))
    return make_result(np.ascontiguousarray(np.transpose(a.value, axes)), (a,),
                       lambda g: a.accumulate(np.transpose(g, inverse)), "transpose")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.value + b.value
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def bw(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return make_result(out, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.value * b.value
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None
    av, bv = a.value, b.value

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * bv, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * av, b.shape))

    return make_result(out, (a, b), bw, "mul")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            t.accumulate(piece)

    return make_result(out, tensors, bw, "concat")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return make_result(a.value * c, (a,), lambda g: a.accumulate(g * c), "scale")


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.asarray(a.value.sum()), (a,),
                       lambda g: a.accumulate(np.broadcast_to(g, a.shape)), "sum")


def sum_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)
    if not -a.value.ndim <= axis < a.value.ndim:
        raise ShapeError("sum_axis", a.shape, (axis,))
    return make_result(a.value.sum(axis=axis), (a,),
                       lambda g: a.accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape)), "sum_axis")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return make_result(out.copy(), (a,), lambda g: a.accumulate(g.reshape(a.shape)), "reshape")


def index(a, key) -> Tensor:
    """Basic or integer-array indexing ``a[key]``."""
    a = as_tensor(a)
    out = np.array(a.value[key], copy=True)

    def bw(g):
        full = np.zeros_like(a.value)
        np.add.at(full, key, g)
        a.accumulate(full)

    return make_result(out, (a,), bw, "index")


def gather_rows(a, idx) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError("gather_rows (index out of bounds)", a.shape, idx.shape)
    n = a.shape[0]

    def bw(g):
        if a.value.ndim == 1:
            a.accumulate(np.bincount(idx, weights=g, minlength=n).astype(a.value.dtype))
        else:
            a.accumulate(_scatter_rows(g, idx, n))

    return make_result(a.value[idx], (a,), bw, "gather_rows")


def _scatter_rows(values: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    """Row-wise ``out[idx[e]] += values[e]`` with a fixed summation order."""
    if values.ndim == 1:
        return np.bincount(idx, weights=values, minlength=n).astype(values.dtype)
    m = sp.csr_matrix((np.ones(len(idx), dtype=values.dtype), (idx, np.arange(len(idx)))), shape=(n, len(idx)))
    return np.asarray(m @ values)


def concat_pairs(x, first, second) -> Tensor:
    """Per-pair feature concatenation ``[x[first[e]] || x[second[e]]]``."""
    x = as_tensor(x)
    first = np.asarray(first, dtype=np.int64)
    second = np.asarray(second, dtype=np.int64)
    if x.value.ndim != 2 or first.shape != second.shape:
        raise ShapeError("concat_pairs", x.shape, first.shape, second.shape)
    n, d = x.shape

    def bw(g):
        x.accumulate(_scatter_rows(g[:, :d], first, n) + _scatter_rows(g[:, d:], second, n))

    return make_result(np.concatenate([x.value[first], x.value[second]], axis=1), (x,), bw, "concat_pairs")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    pos = a.value > 0
    return make_result(np.where(pos, a.value, slope * a.value), (a,),
                       lambda g: a.accumulate(np.where(pos, g, slope * g)), "leaky_relu")


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    pos = a.value > 0
    neg = alpha * np.expm1(np.minimum(a.value, 0.0))
    out = np.where(pos, a.value, neg)
    return make_result(out, (a,), lambda g: a.accumulate(np.where(pos, g, g * (neg + alpha))), "elu")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    v = a.value
    out = np.logaddexp(0.0, v)
    sig = np.exp(-np.logaddexp(0.0, -v))
    return make_result(out, (a,), lambda g: a.accumulate(g * sig), "softplus")


def normalize_sum(a) -> Tensor:
    """Rescale a positive array so that it sums to one along the last axis."""
    a = as_tensor(a)
    total = a.value.sum(axis=-1, keepdims=True)
    out = a.value / total

    def bw(g):
        a.accumulate((g - (g * out).sum(axis=-1, keepdims=True)) / total)

    return make_result(out, (a,), bw, "normalize_sum")


def weighted_sum(tensors: Sequence[Tensor], weights) -> Tensor:
    """``sum_h weights[h] * tensors[h]``, accumulated in list order."""
    tensors = [as_tensor(t) for t in tensors]
    weights = as_tensor(weights)
    if not tensors or weights.value.shape != (len(tensors),):
        raise ShapeError("weighted_sum", weights.shape, *(t.shape for t in tensors))
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError("weighted_sum", *(t.shape for t in tensors))
    w = weights.value
    out = np.zeros(shape, dtype=tensors[0].value.dtype)
    for h, t in enumerate(tensors):
        out += w[h] * t.value

    def bw(g):
        for h, t in enumerate(tensors):
            t.accumulate(w[h] * g)
        weights.accumulate(np.array([np.vdot(g, t.value) for t in tensors], dtype=w.dtype))

    return make_result(out, (*tensors, weights), bw, "weighted_sum")


# -- segment ops ------------------------------------------------------------------

def segment_sum(values, segment_of, n_segments: int) -> Tensor:
    """Sum rows of ``values`` that share a segment id."""
    values = as_tensor(values)
    seg = np.asarray(segment_of, dtype=np.int64)
    if seg.shape != values.shape[:1]:
        raise ShapeError("segment_sum", values.shape, seg.shape)
    if seg.size and (seg.min() < 0 or seg.max() >= n_segments):
        raise ShapeError("segment_sum (segment id out of range)", seg.shape, (n_segments,))
    return make_result(_scatter_rows(values.value, seg, n_segments), (values,),
                       lambda g: values.accumulate(g[seg]), "segment_sum")


def segment_softmax(logits, segment_of, n_segments: int | None = None) -> Tensor:
    """Softmax over the entries of each segment, stabilized by the segment max."""
    logits = as_tensor(logits)
    seg = np.asarray(segment_of, dtype=np.int64)
    if logits.value.ndim != 1 or seg.shape != logits.shape:
        raise ShapeError("segment_softmax", logits.shape, seg.shape)
    if n_segments is None:
        n_segments = int(seg.max()) + 1 if seg.size else 0
    counts = np.bincount(seg, minlength=n_segments)
    if (counts == 0).any():
        empty = int(np.flatnonzero(counts == 0)[0])
        raise RuntimeError(f"segment_softmax: segment {empty} has no entries (missing self-edge?)")
    seg_max = np.full(n_segments, -np.inf, dtype=logits.value.dtype)
    np.maximum.at(seg_max, seg, logits.value)
    ex = np.exp(logits.value - seg_max[seg])
    den = np.bincount(seg, weights=ex, minlength=n_segments)
    out = ex / den[seg]

    def bw(g):
        dot = np.bincount(seg, weights=g * out, minlength=n_segments)
        logits.accumulate(out * (g - dot[seg]))

    return make_result(out, (logits,), bw, "segment_softmax")


def masked_cross_entropy(logits, labels, mask) -> Tensor:
    """Mean negative log-likelihood of ``labels`` over the node subset ``mask``."""
    logits = as_tensor(logits)
    idx = np.asarray(mask)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    idx = idx.astype(np.int64)
    if idx.size == 0:
        raise ValueError("masked_cross_entropy: empty mask")
    y = np.asarray(labels, dtype=np.int64)[idx]
    if logits.value.ndim != 2:
        raise ShapeError("masked_cross_entropy", logits.shape)
    if (y < 0).any() or (y >= logits.shape[1]).any():
        raise ValueError("masked_cross_entropy: labels undefined or out of range on mask")
    z = logits.value[idx]
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = np.mean(logsum - z[np.arange(len(idx)), y])

    def bw(g):
        p = np.exp(z - logsum[:, None])
        p[np.arange(len(idx)), y] -= 1.0
        full = np.zeros_like(logits.value)
        full[idx] = p * (g / len(idx))
        logits.accumulate(full)

    return make_result(np.asarray(loss, dtype=logits.value.dtype), (logits,), bw, "masked_cross_entropy")


# -- verification -------------------------------------------------------------------

def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                      max_coords: int | None = None, seed: int = 0) -> float:
    """Largest relative error between autodiff and central-difference gradients.

    The error per coordinate is ``|ga - gf| / max(1e-8, |ga| + |gf|)``. With
    ``max_coords`` only a seeded random subset of coordinates per parameter is
    probed.
    """
    for p in params:
        p.zero_grad()
    backward(f())
    auto = [p.grad.copy() if p.grad is not None else np.zeros_like(p.value) for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ga in zip(params, auto):
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp = float(f().value)
            flat[c] = orig - eps
            fm = float(f().value)
            flat[c] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"finite_diff_check: non-finite evaluation at coordinate {c} of {p.name or p}")
            gf = (fp - fm) / (2 * eps)
            g = float(ga.reshape(-1)[c])
            worst = max(worst, abs(g - gf) / max(1e-8, abs(g) + abs(gf)))
    for p in params:
        p.zero_grad()
    return worst


# -- optimizer ----------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if len(state.m) != len(params) or len(grads) != len(params):
        raise ValueError("adam_step: parameter, gradient and state lengths differ")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError("adam_step", p.shape, g.shape)
        if not np.isfinite(g).all():
            raise NonFiniteError(f"adam_step: non-finite gradient for parameter {i} ({p.name or p.shape}) "
                                 f"at step {state.t + 1}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if state.weight_decay:
            g = g + state.weight_decay * p.value
        m, v = state.m[i], state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, weight_decay: float = 0.0):
        self.params = list(params)
        self.state = AdamState(lr=lr, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)
