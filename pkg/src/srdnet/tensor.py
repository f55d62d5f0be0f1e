"""Dense float64 tensors with define-by-run reverse-mode autodiff.

Every op builds an output ``Tensor`` that remembers its parents and a
closure mapping the output gradient to one gradient per parent.  The graph
is rebuilt on every forward pass; :func:`backward` walks it in reverse
topological order and then drops the interior references so the graph can
be garbage collected.  Leaf gradients accumulate into ``Tensor.grad`` across
calls (the trainer relies on this for batch accumulation) and must be reset
with :func:`zero_grad`.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError, UsageError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording them."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)


def _raise_item(t: Tensor) -> float:
    raise UsageError(f"item() needs a single-element tensor, got shape {t.shape}")


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def as_tensor(x) -> Tensor:
    return _lift(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.name = None
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = grad_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# creation


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; identical across platforms for a given seed."""
    return np.random.Generator(np.random.PCG64(seed))


def _check_shape(shape: Iterable[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    return shape


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(_check_shape(shape)), requires_grad)


def constant(c: float, shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(_check_shape(shape), float(c)), requires_grad)


def uniform(rng: np.random.Generator, shape, lo: float = 0.0, hi: float = 1.0,
            requires_grad: bool = False) -> Tensor:
    shape = _check_shape(shape)
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad)


def kaiming(rng: np.random.Generator, shape, fan_in: int, requires_grad: bool = True,
            negative_slope: float = math.sqrt(5.0)) -> Tensor:
    """Kaiming-uniform fill: U(-b, b), b = sqrt(6 / ((1 + a^2) * fan_in)).

    The default slope a = sqrt(5) gives b = 1 / sqrt(fan_in), the usual
    default for convolution layers; a = 0 gives the ReLU-gain variant.
    """
    bound = math.sqrt(6.0 / ((1.0 + negative_slope ** 2) * fan_in))
    return uniform(rng, shape, -bound, bound, requires_grad)


def tensor_create(shape, fill: str = "zeros", *, c: float = 0.0, rng=None,
                  lo: float = 0.0, hi: float = 1.0, fan_in: int | None = None,
                  requires_grad: bool = False) -> Tensor:
    if fill == "zeros":
        return zeros(shape, requires_grad)
    if fill == "constant":
        return constant(c, shape, requires_grad)
    if fill == "uniform":
        return uniform(rng, shape, lo, hi, requires_grad)
    if fill == "kaiming":
        return kaiming(rng, shape, fan_in, requires_grad)
    raise ValueError(f"unknown fill rule {fill!r}")


# ---------------------------------------------------------------------------
# elementwise


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    # only size-1 axes broadcast; ranks must agree (0-d scalars excepted)
    if a == b:
        return a
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    if len(a) != len(b):
        raise ShapeError(f"cannot broadcast {a} with {b}")
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(f"cannot broadcast {a} with {b}")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def scalar_mul(a: Tensor, s: float) -> Tensor:
    return _make(a.data * s, (a,), lambda g: (g * s,), "scalar_mul")


def elementwise(op: str, a: Tensor, b: Tensor | float | None = None) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "scalar_mul":
        return scalar_mul(a, float(b))
    raise ValueError(f"unknown elementwise op {op!r}")


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


# ---------------------------------------------------------------------------
# reductions


def sum(a: Tensor, axis: int | tuple | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), grad_fn, "sum")


def mean(a: Tensor, axis: int | tuple | None = None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scalar_mul(sum(a, axis, keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra and data movement


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast numpy-style."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = _sum_to(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _sum_to(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), grad_fn, "matmul")


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}")
    old = a.shape
    return _make(a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inv),), "transpose")


def _axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty list")
    ax = _axis(axis, tensors[0].ndim)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat shapes disagree off axis {ax}: {ref} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def grad_fn(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            out.append(g[tuple(idx)].copy())
        return tuple(out)

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, grad_fn, "concat")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = _axis(axis, a.ndim)
    if not 0 <= start < stop <= a.shape[ax]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis of size {a.shape[ax]}")
    idx = [slice(None)] * a.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _make(a.data[idx].copy(), (a,), grad_fn, "slice")


# ---------------------------------------------------------------------------
# backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, retain_graph: bool = False) -> dict[Tensor, np.ndarray]:
    """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``.

    Returns the gradients produced by this call keyed by leaf tensor.  The
    interior of the graph is released unless ``retain_graph`` is set.
    """
    if loss.ndim != 0:
        raise UsageError(f"backward needs a 0-d loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            leaves[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        if not retain_graph:
            node._parents = ()
            node._backward = None
            node.requires_grad = False
    for leaf, g in leaves.items():
        g = np.asarray(g, dtype=np.float64).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    return leaves


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
