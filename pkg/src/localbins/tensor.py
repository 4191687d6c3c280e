"""Dense tensors with reverse-mode differentiation.

Every differentiable op builds its output through :func:`_record`, which
stamps the node with a monotonically increasing sequence number. Backward
collects the nodes reachable from the loss into a :class:`Tape` ordered by
that number and walks it in strict reverse execution order.

Broadcasting is limited to scalar-with-tensor; any other shape mismatch is
an error. Ops that need a broadcast (bias add, per-pixel normalisation) are
fused into dedicated primitives.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_seq = itertools.count()


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _check_finite(arr: np.ndarray, what: str) -> None:
    # a finite sum proves every entry finite; only overflow or nan needs the full scan
    if arr.dtype.kind == "f" and not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "_op")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        arr = np.array(data, dtype=dtype)
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple = ()
        self._backward = None
        self._seq = next(_seq)
        self._op = "leaf"

    # basic properties
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        """Untracked tensor sharing this tensor's storage."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        out._seq = next(_seq)
        out._op = "leaf"
        return out

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op}, requires_grad={self.requires_grad})"

    # operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return mul(reciprocal(self), other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _record(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of a differentiable op."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._seq = next(_seq)
    out._op = op
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


class Tape:
    """Ordered record of the ops that produced ``root``.

    ``records`` holds the non-leaf nodes in execution order; ``leaves`` the
    tracked inputs (parameters) whose ``grad`` is accumulated.
    """

    def __init__(self, root: Tensor):
        seen = set()
        nodes = []
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda t: t._seq)
        self.records = [n for n in nodes if n._backward is not None]
        self.leaves = [n for n in nodes if n._backward is None]

    def __len__(self) -> int:
        return len(self.records)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every tracked leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not on the tape (no input requires grad)")
    tape = Tape(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.records):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for leaf in tape.leaves:
        g = grads.get(id(leaf))
        if g is None:
            continue
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
        leaf.grad += g.astype(leaf.data.dtype, copy=False)


# ---------------------------------------------------------------------------
# elementwise


def _binary_prep(a, b) -> tuple[Tensor, Tensor]:
    dt = a.dtype if isinstance(a, Tensor) else b.dtype if isinstance(b, Tensor) else DEFAULT_DTYPE
    ta, tb = as_tensor(a, dt), as_tensor(b, dt)
    if ta.shape != tb.shape and ta.ndim and tb.ndim:
        raise ShapeError(f"shape mismatch {ta.shape} vs {tb.shape}")
    return ta, tb


def _unbroadcast(g: np.ndarray, like: Tensor) -> np.ndarray:
    if like.shape == g.shape:
        return g
    return np.asarray(g.sum()).reshape(like.shape)


def add(a, b) -> Tensor:
    ta, tb = _binary_prep(a, b)
    out = ta.data + tb.data

    def bw(g):
        return _unbroadcast(g, ta), _unbroadcast(g, tb)

    return _record(out, (ta, tb), bw, "add")


def sub(a, b) -> Tensor:
    ta, tb = _binary_prep(a, b)
    out = ta.data - tb.data

    def bw(g):
        return _unbroadcast(g, ta), _unbroadcast(-g, tb)

    return _record(out, (ta, tb), bw, "sub")


def mul(a, b) -> Tensor:
    ta, tb = _binary_prep(a, b)
    out = ta.data * tb.data

    def bw(g):
        return _unbroadcast(g * tb.data, ta), _unbroadcast(g * ta.data, tb)

    return _record(out, (ta, tb), bw, "mul")


def div(a, b) -> Tensor:
    ta, tb = _binary_prep(a, b)
    out = ta.data / tb.data

    def bw(g):
        ga = g / tb.data
        return _unbroadcast(ga, ta), _unbroadcast(-ga * out, tb)

    return _record(out, (ta, tb), bw, "div")


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,), "neg")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _record(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def power(a: Tensor, p: float) -> Tensor:
    out = a.data**p
    return _record(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise ValueError("log of non-positive value")
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    """Square root; the derivative at exactly zero is taken as zero."""
    out = np.sqrt(a.data)

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return _record(out, (a,), bw, "sqrt")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(np.maximum(a.data, 0, dtype=a.dtype), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split branches keep exp from overflowing
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex)).astype(a.dtype)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    out = np.clip(a.data, lo, hi)
    return _record(out, (a,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _record(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _record(out, (a,), lambda g: (g.transpose(inv),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, tensors, bw, "concat")


def getitem(a: Tensor, idx) -> Tensor:
    if isinstance(idx, np.ndarray) and idx.dtype == bool:
        idx = np.nonzero(idx)
    elif isinstance(idx, tuple):
        idx = tuple(np.nonzero(i)[0] if isinstance(i, np.ndarray) and i.dtype == bool else i for i in idx)
    out = a.data[idx]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=a.dtype)
    out = np.array(out, copy=True)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _record(out, (a,), bw, "getitem")


def cumsum(a: Tensor, axis: int) -> Tensor:
    out = np.cumsum(a.data, axis=axis)

    def bw(g):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return (rev,)

    return _record(out, (a,), bw, "cumsum")


def normalize(a: Tensor, axis: int = 1) -> Tensor:
    """``a / a.sum(axis, keepdims=True)``; entries must be positive."""
    s = a.data.sum(axis=axis, keepdims=True)
    out = a.data / s

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) / s,)

    return _record(out, (a,), bw, "normalize")


def softmax(a: Tensor, axis: int = 1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _record(out, (a,), bw, "softmax")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Row-wise affine map ``x @ weight.T + bias`` for ``x`` of shape [B, C_in]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} vs weight {weight.shape}")
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _record(out, parents, bw, "linear")


def stack_pairs(first: Tensor, second: Tensor) -> Tensor:
    """Interleave two [N, m, ...] tensors along axis 1 into [N, 2m, ...]."""
    if first.shape != second.shape:
        raise ShapeError(f"stack_pairs {first.shape} vs {second.shape}")
    n, m = first.shape[:2]
    rest = first.shape[2:]
    out = np.stack([first.data, second.data], axis=2).reshape((n, 2 * m) + rest)

    def bw(g):
        g = g.reshape((n, m, 2) + rest)
        return g[:, :, 0].copy(), g[:, :, 1].copy()

    return _record(out, (first, second), bw, "stack_pairs")


# ---------------------------------------------------------------------------
# gradient verification


@dataclass(frozen=True)
class FDRecord:
    param: int  # index into the params sequence
    coord: int  # flat coordinate
    analytic: float
    numeric: float
    error: float


def finite_diff_records(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    samples_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[FDRecord]:
    """Tape gradient vs central difference for every probed coordinate.

    ``f`` recomputes the scalar loss from the (mutable) ``params``. With
    ``samples_per_param`` set, only that many randomly chosen coordinates of
    each parameter are probed. The relative error uses the denominator
    ``max(|a|, |b|, 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    for p in params:
        p.zero_grad()
    backward(f())
    analytic = [p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)

    records = []
    for k, (p, grad) in enumerate(zip(params, analytic)):
        flat = p.data.reshape(-1)
        if samples_per_param is None or samples_per_param >= flat.size:
            coords = range(flat.size)
        else:
            coords = rng.choice(flat.size, size=samples_per_param, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError("non-finite loss during finite differences")
            numeric = (fp - fm) / (2 * eps)
            a = float(grad.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            records.append(FDRecord(k, int(i), a, numeric, err))
    return records


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    samples_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between tape gradients and central differences (see :func:`finite_diff_records`)."""
    records = finite_diff_records(f, params, eps, samples_per_param, rng)
    return max((r.error for r in records), default=0.0)
