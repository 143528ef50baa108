"""
Reverse-mode automatic differentiation over dense numpy arrays.

Every primitive builds an output :class:`Tensor` that remembers its parents and
a closure computing the parents' gradient contributions. :func:`backward` walks
the graph in reverse topological order.

Storage is float32 by default. Reductions (sum, mean, matmul, softmax
normalisers) accumulate in float64 and cast back. A tensor created with
``dtype=np.float64`` propagates float64 through every op, which is what the
finite-difference checks use.
"""
from __future__ import annotations

from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import ContractViolation, NumericOverflowError, StaleGraphError

DEFAULT_DTYPE = np.float32
_ACC = np.float64


class Tensor:
    """A dense array that can take part in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "op", "label", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=DEFAULT_DTYPE if dtype is None else dtype)
        if not np.isfinite(arr).all():
            raise NumericOverflowError("tensor created from non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self.label: Optional[str] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        """Same values, no graph history, no gradient tracking. Shares memory."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out.op = "leaf"
        out.label = None
        out._parents = ()
        out._backward = None
        out._consumed = False
        return out

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self, params=None) -> None:
        backward(self, params)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _result_dtype(*tensors: Tensor):
    return np.result_type(*(t.data.dtype for t in tensors))


def _narrow(arr: np.ndarray, dtype) -> np.ndarray:
    # overflow here becomes inf, which _make reports as NumericOverflowError
    with np.errstate(over="ignore"):
        return arr.astype(dtype, copy=False)


def _make(data: np.ndarray, parents: tuple, op: str, grad_fn) -> Tensor:
    if not np.isfinite(data).all():
        shapes = ", ".join(str(p.shape) for p in parents)
        raise NumericOverflowError(f"{op} produced non-finite values (input shapes {shapes})")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.label = None
    out._consumed = False
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = grad_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0, dtype=_ACC)
    for dim, extent in enumerate(shape):
        if extent == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True, dtype=_ACC)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise binary ops (numpy broadcasting rules) ----------------------

def add(a, b) -> Tensor:
    """a + b with numpy broadcasting (covers bias addition)."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    dtype = _result_dtype(a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make((a.data + b.data).astype(dtype, copy=False), (a, b), "add", grad_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    dtype = _result_dtype(a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make((a.data - b.data).astype(dtype, copy=False), (a, b), "sub", grad_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    dtype = _result_dtype(a, b)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make((a.data * b.data).astype(dtype, copy=False), (a, b), "mul", grad_fn)


def scale(x, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    x = as_tensor(x)
    c = float(c)

    def grad_fn(g):
        return (g * c,)

    return _make((x.data * c).astype(x.dtype, copy=False), (x,), "scale", grad_fn)


def matmul(a, b) -> Tensor:
    """2-D matrix product [m, k] @ [k, n] -> [m, n], accumulated in float64."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: shapes {a.shape} and {b.shape} are not [m,k] x [k,n]")
    dtype = _result_dtype(a, b)
    a64, b64 = a.data.astype(_ACC), b.data.astype(_ACC)

    def grad_fn(g):
        g64 = g.astype(_ACC)
        return (g64 @ b64.T).astype(a.dtype), (a64.T @ g64).astype(b.dtype)

    return _make(_narrow(a64 @ b64, dtype), (a, b), "matmul", grad_fn)


# -- elementwise unary ops ----------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def grad_fn(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), "relu", grad_fn)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def grad_fn(g):
        return (g * (1 - y * y),)

    return _make(y, (x,), "tanh", grad_fn)


def log(x) -> Tensor:
    """Natural log. Non-positive input is a numeric error, not a silent -inf."""
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x.data)

    def grad_fn(g):
        return (g / x.data,)

    return _make(y, (x,), "log", grad_fn)


# -- reductions ---------------------------------------------------------------

def _check_axis(op: str, x: Tensor, axis) -> None:
    if axis is None:
        return
    axes = axis if isinstance(axis, tuple) else (axis,)
    for ax in axes:
        if not -x.ndim <= ax < x.ndim:
            raise ContractViolation(f"{op}: axis {ax} out of range for shape {x.shape}")


def _expand_like(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    _check_axis("sum", x, axis)
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims, dtype=_ACC), dtype=x.dtype)

    def grad_fn(g):
        return (np.array(_expand_like(g, x.shape, axis, keepdims), dtype=x.dtype),)

    return _make(out, (x,), "sum", grad_fn)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    _check_axis("mean", x, axis)
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims, dtype=_ACC), dtype=x.dtype)
    count = x.data.size // max(out.size, 1) if x.data.size else 1

    def grad_fn(g):
        return (np.array(_expand_like(g, x.shape, axis, keepdims), dtype=x.dtype) / count,)

    return _make(out, (x,), "mean", grad_fn)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    _check_axis("softmax", x, axis)
    shifted = x.data.astype(_ACC) - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s64 = e / e.sum(axis=axis, keepdims=True)
    s = s64.astype(x.dtype)

    def grad_fn(g):
        g64 = g.astype(_ACC)
        return ((s64 * (g64 - (g64 * s64).sum(axis=axis, keepdims=True))).astype(x.dtype),)

    return _make(s, (x,), "softmax", grad_fn)


def log_softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted log-softmax; stays finite for confident (large-margin) logits."""
    x = as_tensor(x)
    _check_axis("log_softmax", x, axis)
    shifted = x.data.astype(_ACC) - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out64 = shifted - lse
    probs = np.exp(out64)

    def grad_fn(g):
        g64 = g.astype(_ACC)
        return ((g64 - probs * g64.sum(axis=axis, keepdims=True)).astype(x.dtype),)

    return _make(out64.astype(x.dtype), (x,), "log_softmax", grad_fn)


def l1_distance(a, b, axis: int = -1) -> Tensor:
    """Per-row sum of |a - b| along ``axis``. Shapes must match exactly."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("l1_distance", a, b)
    diff = a.data.astype(_ACC) - b.data
    dtype = _result_dtype(a, b)

    def grad_fn(g):
        sgn = np.sign(diff) * np.expand_dims(g, axis)
        return sgn.astype(a.dtype), (-sgn).astype(b.dtype)

    return _make(_narrow(np.abs(diff).sum(axis=axis), dtype), (a, b), "l1_distance", grad_fn)


def sq_l2_distance(a, b, axis: int = -1) -> Tensor:
    """Per-row sum of (a - b)^2 along ``axis``. Shapes must match exactly."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sq_l2_distance", a, b)
    diff = a.data.astype(_ACC) - b.data
    dtype = _result_dtype(a, b)

    def grad_fn(g):
        d = 2.0 * diff * np.expand_dims(g, axis)
        return d.astype(a.dtype), (-d).astype(b.dtype)

    return _make(_narrow((diff * diff).sum(axis=axis), dtype), (a, b), "sq_l2_distance", grad_fn)


# -- structural ops needed by the cosine classifier -------------------------

def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / max(||x||, eps) along ``axis``."""
    x = as_tensor(x)
    _check_axis("l2_normalize", x, axis)
    x64 = x.data.astype(_ACC)
    norm = np.sqrt((x64 * x64).sum(axis=axis, keepdims=True))
    clipped = norm <= eps
    denom = np.where(clipped, eps, norm)
    y64 = x64 / denom

    def grad_fn(g):
        g64 = g.astype(_ACC)
        proj = np.where(clipped, 0.0, (g64 * y64).sum(axis=axis, keepdims=True))
        return ((g64 - y64 * proj) / denom).astype(x.dtype),

    return _make(y64.astype(x.dtype), (x,), "l2_normalize", grad_fn)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractViolation("concat: no tensors given")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ContractViolation(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(ts), "concat", grad_fn)


def transpose(x) -> Tensor:
    """Swap the two axes of a 2-D tensor."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ContractViolation(f"transpose: expected a 2-D tensor, got shape {x.shape}")

    def grad_fn(g):
        return (g.T,)

    return _make(np.ascontiguousarray(x.data.T), (x,), "transpose", grad_fn)


def take(x, index) -> Tensor:
    """Basic (slice/int) indexing; the gradient scatters back into a zero array."""
    x = as_tensor(x)
    try:
        out = np.array(x.data[index])
    except IndexError as exc:
        raise ContractViolation(f"take: {exc} for shape {x.shape}") from None

    def grad_fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (x,), "take", grad_fn)


# -- graph traversal ----------------------------------------------------------

def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
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


def walk_graph(root: Tensor) -> Iterator[Tensor]:
    """Yield every tracked node reachable from ``root`` (root included)."""
    yield from _topo_order(root)


def graph_ops(root: Tensor) -> set:
    """The set of op names and labels that appear in ``root``'s graph."""
    names = set()
    for node in walk_graph(root):
        names.add(node.op)
        if node.label:
            names.add(node.label)
    return names


def backward(loss: Tensor, params: Optional["ParameterSet"] = None) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Gradients accumulate into existing ``.grad`` arrays. When ``params`` is given,
    parameters the loss does not reach get a zero gradient so optimizers see a
    uniform state. The graph is freed afterwards; a second call raises
    :class:`StaleGraphError`.
    """
    if loss.data.size != 1:
        raise ContractViolation(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss._consumed:
        raise StaleGraphError("backward: graph already consumed; re-run the forward pass")
    if not loss.requires_grad:
        raise ContractViolation("backward: loss does not depend on any tensor requiring grad")

    order = _topo_order(loss)
    for node in order:
        if node._consumed:
            raise StaleGraphError("backward: graph shares nodes with an already consumed graph")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                g = np.asarray(g, dtype=node.dtype).reshape(node.shape)
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            node._consumed = True
            node._backward = None
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        node._backward = None
        node._consumed = True
        node._parents = ()

    if params is not None:
        for p in params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


class ParameterSet:
    """Ordered, name-unique collection of trainable tensors.

    Iteration order is insertion order, so two sets built by the same sequence
    of ``add`` calls iterate identically.
    """

    def __init__(self, items: Optional[Iterable] = None):
        self._params: dict = {}
        if items is not None:
            pairs = items.items() if hasattr(items, "items") else items
            for name, t in pairs:
                self.add(name, t)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ContractViolation(f"duplicate parameter id {name!r}")
        if not tensor.requires_grad:
            raise ContractViolation(f"parameter {name!r} must have requires_grad=True")
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list:
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def subset(self, names: Iterable[str]) -> "ParameterSet":
        return ParameterSet((n, self._params[n]) for n in names)

    def __or__(self, other: "ParameterSet") -> "ParameterSet":
        return ParameterSet(list(self.items()) + list(other.items()))

    def __repr__(self) -> str:
        body = ", ".join(f"{n}: {tuple(t.shape)}" for n, t in self._params.items())
        return f"ParameterSet({body})"


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)
