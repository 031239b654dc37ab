"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything here is sized for sentence-scale models: tensors are plain
row-major numpy arrays, there are no views or strides, and the only
broadcasting is scalar * tensor. The graph is rebuilt for every loss;
creation order doubles as a topological order, so backward() just sweeps
reachable tensors in reverse creation order.
"""

from __future__ import annotations

import itertools

import numpy as np

_NODE_IDS = itertools.count()


class Tensor:
    """A float64 array plus its position in the computation graph.

    Tensors with requires_grad=False are constants: they keep no parent
    links, are skipped by backward() and are safe to share between threads.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_parents", "_backprop")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.node_id = next(_NODE_IDS)
        self._parents = ()
        self._backprop = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return self.data.item()

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def backward(self):
        return backward(self)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        if isinstance(other, Tensor) and other.data.shape == ():
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def init_uniform(shape, lo: float, hi: float, rng) -> Tensor:
    """Fresh parameter tensor with entries drawn i.i.d. from U[lo, hi).

    `rng` is either an integer seed or a numpy Generator owned by the
    caller; the same seed always yields a bitwise-identical tensor.
    """
    dims = tuple(int(s) for s in shape)
    if len(dims) == 0 or any(s <= 0 for s in dims):
        raise ValueError(f"invalid shape {dims}: dimensions must be positive")
    if not lo < hi:
        raise ValueError(f"degenerate interval [{lo}, {hi}]: need lo < hi")
    gen = np.random.default_rng(rng) if isinstance(rng, int) else rng
    return Tensor(gen.uniform(lo, hi, size=dims), requires_grad=True)


def _node(data, parents, backprop) -> Tensor:
    """Wrap an op result; constants in, constant out (graph pruning)."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backprop = backprop
    return out


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(t: Tensor, c) -> Tensor:
    """t * c where c is a python number or a 0-d Tensor."""
    if isinstance(c, Tensor):
        if c.data.shape != ():
            raise ValueError(f"scale factor must be scalar, got shape {c.data.shape}")
        td, cd = t.data, float(c.data)
        return _node(
            td * cd, (t, c), lambda g: (g * cd, np.asarray((g * td).sum()))
        )
    cf = float(c)
    return _node(t.data * cf, (t,), lambda g: (g * cf,))


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.data)
    return _node(y, (t,), lambda g: (g * (1.0 - y * y),))


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    with np.errstate(over="ignore", invalid="ignore"):
        y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))
    return _node(y, (t,), lambda g: (g * y * (1.0 - y),))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul shape mismatch: {ad.shape} x {bd.shape}")
        return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    if ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul shape mismatch: {ad.shape} x {bd.shape}")
        return _node(ad @ bd, (a, b), lambda g: (np.outer(g, bd), ad.T @ g))
    if ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise ValueError(f"matmul shape mismatch: {ad.shape} x {bd.shape}")
        return _node(ad @ bd, (a, b), lambda g: (bd @ g, np.outer(ad, g)))
    raise ValueError(f"matmul supports 2dx2d, 2dx1d, 1dx2d; got {ad.ndim}d x {bd.ndim}d")


def bilinear(h: Tensor, maps: Tensor, u: Tensor) -> Tensor:
    """Channel-wise bilinear form: out[k] = h . maps[k] . u.

    `maps` is a (channels, len(h), len(u)) stack of bilinear maps.
    """
    hd, md, ud = h.data, maps.data, u.data
    if hd.ndim != 1 or ud.ndim != 1 or md.ndim != 3:
        raise ValueError("bilinear expects vector, 3-d map stack, vector")
    if md.shape[1] != hd.shape[0] or md.shape[2] != ud.shape[0]:
        raise ValueError(f"bilinear shape mismatch: {hd.shape}, {md.shape}, {ud.shape}")

    def backprop(g):
        dh = np.einsum("k,kij,j->i", g, md, ud)
        dm = np.einsum("k,i,j->kij", g, hd, ud)
        du = np.einsum("k,kij,i->j", g, md, hd)
        return dh, dm, du

    return _node(np.einsum("i,kij,j->k", hd, md, ud), (h, maps, u), backprop)


# ---------------------------------------------------------------------------
# reductions, reshaping, normalization


def tensor_sum(t: Tensor) -> Tensor:
    shape = t.data.shape
    return _node(np.asarray(t.data.sum()), (t,), lambda g: (np.full(shape, float(g)),))


def reduce_max(t: Tensor) -> Tensor:
    """Max over all entries; the gradient routes to the first maximum."""
    idx = np.unravel_index(int(np.argmax(t.data)), t.data.shape)
    shape = t.data.shape

    def backprop(g):
        out = np.zeros(shape)
        out[idx] = float(g)
        return (out,)

    return _node(np.asarray(t.data.max()), (t,), backprop)


def slice1d(t: Tensor, start: int, stop: int) -> Tensor:
    if t.data.ndim != 1:
        raise ValueError("slice1d expects a vector")
    n = t.data.shape[0]
    if not (0 <= start < stop <= n):
        raise ValueError(f"slice [{start}, {stop}) out of range for length {n}")

    def backprop(g):
        out = np.zeros(n)
        out[start:stop] = g
        return (out,)

    return _node(t.data[start:stop].copy(), (t,), backprop)


def index1d(t: Tensor, i: int) -> Tensor:
    if t.data.ndim != 1:
        raise ValueError("index1d expects a vector")
    n = t.data.shape[0]
    if not 0 <= i < n:
        raise ValueError(f"index {i} out of range for length {n}")

    def backprop(g):
        out = np.zeros(n)
        out[i] = float(g)
        return (out,)

    return _node(np.asarray(t.data[i]), (t,), backprop)


def concat1d(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ValueError("concat1d expects vectors")
    p = a.data.shape[0]
    return _node(
        np.concatenate([a.data, b.data]), (a, b), lambda g: (g[:p], g[p:])
    )


def stack1d(scalars) -> Tensor:
    """Stack 0-d tensors into a vector."""
    ts = list(scalars)
    if not ts:
        raise ValueError("stack1d needs at least one scalar")
    for t in ts:
        if t.data.shape != ():
            raise ValueError(f"stack1d expects scalars, got shape {t.data.shape}")
    data = np.array([float(t.data) for t in ts])
    return _node(data, ts, lambda g: tuple(np.asarray(g[i]) for i in range(len(ts))))


def softmax(t: Tensor, axis: int) -> Tensor:
    x = t.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e / e.sum(axis=axis, keepdims=True)
    return _node(s, (t,), lambda g: ((g - (g * s).sum(axis=axis, keepdims=True)) * s,))


def log_softmax(t: Tensor, axis: int) -> Tensor:
    x = t.data
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    ls = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    return _node(ls, (t,), lambda g: (g - np.exp(ls) * g.sum(axis=axis, keepdims=True),))


# ---------------------------------------------------------------------------
# reverse sweep


def backward(loss: Tensor) -> dict:
    """Accumulate gradients of a scalar loss into every reachable tensor.

    Returns {tensor: gradient array} and stores the same array on each
    tensor's .grad (overwriting any previous value, so there is no
    zero-grad step between training iterations).
    """
    if loss.data.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")

    seen = {loss}
    stack = [loss]
    while stack:
        t = stack.pop()
        for p in t._parents:
            if p.requires_grad and p not in seen:
                seen.add(p)
                stack.append(p)

    grads = {loss: np.ones(())}
    for t in sorted(seen, key=lambda n: n.node_id, reverse=True):
        g = grads.get(t)
        if g is None or t._backprop is None:
            continue
        for parent, pg in zip(t._parents, t._backprop(g)):
            if not parent.requires_grad:
                continue
            if parent in grads:
                grads[parent] = grads[parent] + pg
            else:
                grads[parent] = pg

    for t, g in grads.items():
        t.grad = g
    return grads


def grad_check(f, params, eps=1e-5, rng=None, max_coords_per_param=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` rebuilds the scalar loss from the current parameter data on every
    call. Error per coordinate is |analytic - numeric| scaled by
    max(|analytic|, |numeric|, 1e-8); coordinates are checked exhaustively
    unless max_coords_per_param caps them, in which case `rng` picks the
    sample.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    grads = backward(f())
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    worst = 0.0
    for p in params:
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        a_flat = np.asarray(analytic).reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = gen.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        for c in coords:
            saved = flat[c]
            flat[c] = saved + eps
            hi = float(f().data)
            flat[c] = saved - eps
            lo = float(f().data)
            flat[c] = saved
            numeric = (hi - lo) / (2.0 * eps)
            a = float(a_flat[c])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst
