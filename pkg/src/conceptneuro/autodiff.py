"""Float64 reverse-mode automatic differentiation on numpy arrays.

Every op appends a node to the :class:`Tape` its inputs live on; nodes are
therefore already in topological order and :meth:`Tape.backward` simply walks
them in reverse, accumulating gradients additively across fan-out.

    tape = Tape()
    x = tape.param("x", np.array([3.0]))
    loss = sum_(x * x)
    grads = tape.backward(loss)      # {"x": array([6.])}
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NonDeterminismError, NumericFault


class Tensor:
    __slots__ = ("data", "tape", "parents", "backward_fn", "op", "name")

    def __init__(self, data, tape=None, parents=(), backward_fn=None, op="leaf", name=None):
        self.data = data
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


class Tape:
    """Records ops on parameters registered with :meth:`param`."""

    def __init__(self, record_kinks: bool = False):
        self.nodes: list[Tensor] = []
        self.params: dict[str, Tensor] = {}
        self.record_kinks = record_kinks
        self.kinks: list[bytes] = []

    def param(self, name: str, array) -> Tensor:
        t = Tensor(np.asarray(array, dtype=np.float64), self, op="param", name=name)
        self.params[name] = t
        return t

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` for every registered parameter (zeros if unused)."""
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or parent.tape is not self:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        out = {}
        for name, p in self.params.items():
            g = grads.get(id(p))
            out[name] = np.zeros_like(p.data) if g is None else np.broadcast_to(g, p.data.shape).copy()
        return out

    def note_kink(self, pattern: np.ndarray) -> None:
        if self.record_kinks:
            self.kinks.append(np.packbits(pattern).tobytes())


def _all_finite(data) -> bool:
    # a sum is non-finite whenever any term is; only overflow needs the full scan
    if math.isfinite(float(np.sum(data))):
        return True
    return bool(np.all(np.isfinite(data)))


def _node(data, parents, backward_fn, op):
    if not _all_finite(data):
        raise NumericFault(f"non-finite output in op '{op}'")
    tape = None
    for p in parents:
        if p.tape is not None:
            tape = p.tape
            break
    if tape is None:
        return Tensor(data, op=op)
    t = Tensor(data, tape, parents, backward_fn, op)
    tape.nodes.append(t)
    return t


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def neg(a) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _node(ad * bd, (a, b), back, "mul")


def relu(a) -> Tensor:
    pos = a.data > 0
    if a.tape is not None:
        a.tape.note_kink(pos)
    return _node(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def abs_(a) -> Tensor:
    sign = np.sign(a.data)
    if a.tape is not None:
        a.tape.note_kink(sign > 0)
    return _node(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def sigmoid(a) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(a) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a, clamp: float | None = None) -> Tensor:
    x = a.data
    if clamp is not None:
        live = x >= clamp
        if a.tape is not None:
            a.tape.note_kink(live)
        xc = np.where(live, x, clamp)
        return _node(np.log(xc), (a,), lambda g: (np.where(live, g / xc, 0.0),), "log")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)
    return _node(out, (a,), lambda g: (g / x,), "log")


def square(a) -> Tensor:
    x = a.data
    return _node(x * x, (a,), lambda g: (2.0 * g * x,), "square")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def spmm(matrix, x) -> Tensor:
    """Constant sparse (scipy) or dense matrix times a tensor."""
    if matrix.shape[1] != x.shape[0]:
        raise DimensionError(f"spmm: shapes {matrix.shape} and {x.shape} are incompatible")
    mt = matrix.T
    return _node(np.asarray(matrix @ x.data), (x,), lambda g: (np.asarray(mt @ g),), "spmm")


def transpose(a) -> Tensor:
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape) -> Tensor:
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(out, tuple(tensors), lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def slice_rows(a, start: int, stop: int) -> Tensor:
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _node(a.data[start:stop], (a,), back, "slice_rows")


def take_rows(a, idx) -> Tensor:
    """Rows ``a[idx]``; gradients scatter-add back."""
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]

    def back(g):
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), back, "take_rows")


def pick(a, rows, cols) -> Tensor:
    """Elements ``a[rows[k], cols[k]]`` as a vector."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return _node(a.data[rows, cols], (a,), back, "pick")


# ---------------------------------------------------------------- reductions


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def max_(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Maximum along an axis; the gradient goes to the first maximal entry."""
    x = a.data
    arg = np.expand_dims(np.argmax(x, axis=axis), axis)
    if a.tape is not None:
        a.tape.note_kink(arg.ravel().astype(np.uint8))
    out = np.take_along_axis(x, arg, axis=axis)

    def back(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        res = np.zeros_like(x)
        np.put_along_axis(res, arg, gg, axis=axis)
        return (res,)

    return _node(out if keepdims else np.squeeze(out, axis), (a,), back, "max")


def softmax(a) -> Tensor:
    """Softmax along the last axis."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (a,), back, "softmax")


# ---------------------------------------------------------------- segments


class Segments:
    """Contiguous, non-empty row groups of a node matrix (one group per graph)."""

    def __init__(self, counts):
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.size == 0 or np.any(self.counts <= 0):
            raise DimensionError("segments must be non-empty")
        self.starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]])
        self.ids = np.repeat(np.arange(self.counts.size), self.counts)
        self.n_rows = int(self.counts.sum())

    def __len__(self):
        return self.counts.size


def segment_sum(a, seg: Segments) -> Tensor:
    if a.shape[0] != seg.n_rows:
        raise DimensionError(f"segment_sum: {a.shape[0]} rows but segments cover {seg.n_rows}")
    ids = seg.ids
    return _node(np.add.reduceat(a.data, seg.starts, axis=0), (a,), lambda g: (g[ids],),
                 "segment_sum")


def segment_mean(a, seg: Segments) -> Tensor:
    inv = (1.0 / seg.counts).reshape((-1,) + (1,) * (a.ndim - 1))
    return mul(segment_sum(a, seg), inv)


def segment_softmax(a, seg: Segments) -> Tensor:
    """Softmax of a score vector within each segment."""
    x = a.data
    shift = np.maximum.reduceat(x, seg.starts)[seg.ids]
    e = np.exp(x - shift)
    p = e / np.add.reduceat(e, seg.starts)[seg.ids]

    def back(g):
        dot = np.add.reduceat(g * p, seg.starts)[seg.ids]
        return (p * (g - dot),)

    return _node(p, (a,), back, "segment_softmax")


# ---------------------------------------------------------------- layers


def batch_norm(x, gamma, beta, running_mean, running_var, train: bool, eps: float = 1e-5):
    """Per-feature normalisation over rows.

    Returns ``(y, batch_stats)``; ``batch_stats`` is ``(mean, unbiased_var)`` in
    train mode and ``None`` in eval mode. Running statistics are never touched
    here: callers decide when to fold ``batch_stats`` in.
    """
    xd = x.data
    if train:
        n = xd.shape[0]
        mu = xd.mean(axis=0)
        xhat = xd - mu
        var = np.einsum("ij,ij->j", xhat, xhat) / n
        inv = 1.0 / np.sqrt(var + eps)
        xhat *= inv
        gd = gamma.data

        def back(g):
            gsum = g.sum(axis=0)
            gxsum = np.einsum("ij,ij->j", g, xhat)
            dx = xhat * (gxsum / n)
            dx += gsum / n
            np.subtract(g, dx, out=dx)
            dx *= gd * inv
            return dx, gxsum, gsum

        unbiased = var * n / (n - 1) if n > 1 else var.copy()
        y = xhat * gd
        y += beta.data
        return _node(y, (x, gamma, beta), back, "batch_norm"), (mu, unbiased)
    inv = 1.0 / np.sqrt(running_var + eps)
    xhat = (xd - running_mean) * inv
    gd = gamma.data

    def back_eval(g):
        return g * gd * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _node(xhat * gd + beta.data, (x, gamma, beta), back_eval, "batch_norm"), None


def dropout(x, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: zero with probability ``p`` and rescale by ``1/(1-p)``."""
    if not train or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    mask = rng.random(x.shape, dtype=np.float32) >= p
    mask = mask * (1.0 / (1.0 - p))
    return _node(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------- optimisation


class Adam:
    """Adam with decoupled weight decay (``decoupled=False`` adds ``wd * p`` to the gradient)."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-4,
                 decoupled=True):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise DimensionError(f"adam: gradient for {name} has shape {g.shape}, expected {p.shape}")
            if not self.decoupled and self.weight_decay:
                g = g + self.weight_decay * p
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.decoupled and self.weight_decay:
                p -= self.lr * self.weight_decay * p

    def state_dict(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}


# ---------------------------------------------------------------- gradient checking


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: tuple[str, tuple] | None
    n_checked: int
    n_skipped: int

    def __float__(self):
        return self.max_rel_error


def _forward(fn, params, record_kinks):
    tape = Tape(record_kinks=record_kinks)
    ts = {k: tape.param(k, v) for k, v in params.items()}
    loss = fn(tape, ts)
    return float(loss.data.reshape(-1)[0]), tape.kinks


def grad_check(fn, params: dict[str, np.ndarray], h: float = 1e-5, floor: float = 1e-6,
               skip_kinks: bool = True, names=None) -> GradCheckResult:
    """Worst relative error between tape gradients and central differences.

    ``fn(tape, tensors)`` must build a scalar loss from the registered tensors.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``. Coordinates whose
    +h/-h evaluations land on different sides of a ReLU/abs/max/clamp kink
    are skipped when ``skip_kinks`` (reported in ``n_skipped``).
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    ts = {k: tape.param(k, v) for k, v in params.items()}
    analytic = tape.backward(fn(tape, ts))
    f0, _ = _forward(fn, params, False)
    f1, _ = _forward(fn, params, False)
    if f0 != f1:
        raise NonDeterminismError(f"two forward passes differ ({f0!r} vs {f1!r}); disable dropout")
    worst, worst_at, checked, skipped = 0.0, None, 0, 0
    for name in names or params:
        arr = params[name]
        flat = arr.reshape(-1)
        ga = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp, kp = _forward(fn, params, skip_kinks)
            flat[k] = orig - h
            fm, km = _forward(fn, params, skip_kinks)
            flat[k] = orig
            if skip_kinks and kp != km:
                skipped += 1
                continue
            num = (fp - fm) / (2.0 * h)
            err = abs(ga[k] - num) / max(abs(ga[k]), abs(num), floor)
            checked += 1
            if err > worst:
                worst, worst_at = err, (name, np.unravel_index(k, arr.shape))
    return GradCheckResult(worst, worst_at, checked, skipped)
