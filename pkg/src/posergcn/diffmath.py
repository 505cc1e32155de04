"""Dense 2-D matrix math with a reverse-mode tape.

Every value is a 2-D float64 array wrapped in a :class:`Tensor`.  Operations
on tensors that (transitively) depend on a :class:`Param` record a node with a
backward rule; :func:`backward` replays those rules in reverse topological
order and accumulates gradients into the reachable params.

Intermediate gradients are kept in a per-call dictionary, so calling
:func:`backward` twice on the same root adds the parameter gradient twice.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class EvaluationError(RuntimeError):
    """Raised when a loss evaluates to a non-finite value during a check."""


_state = threading.local()

# Names of backward rules that are deliberately corrupted (test hook only).
_faults: set[str] = set()


def _recording() -> bool:
    return getattr(_state, "record", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording tape nodes (forward-only)."""
    prev = _recording()
    _state.record = False
    try:
        yield
    finally:
        _state.record = prev


@contextlib.contextmanager
def inject_fault(name: str):
    """Corrupt the backward rule of elementwise op `name` while active."""
    _faults.add(name)
    try:
        yield
    finally:
        _faults.discard(name)


def _as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


class Tensor:
    """A 2-D float64 matrix, optionally a node on the gradient tape.

    `parents` and `backward_fn` are empty for constants.  `backward_fn`
    maps the upstream gradient to one gradient per parent (or None).
    """

    __slots__ = ("value", "parents", "backward_fn", "op", "requires_grad")
    __array_priority__ = 1000

    def __init__(self, value, parents: tuple = (), backward_fn=None, op: str = "const"):
        if isinstance(value, np.ndarray) and value.ndim == 2 and value.dtype == np.float64:
            self.value = value
        else:
            self.value = _as_matrix(value)
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = bool(parents)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ValueError(f"item() needs a 1x1 tensor, got {self.value.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        return f"{type(self).__name__}(op={self.op!r}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return hadamard(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return hadamard(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)


class Param(Tensor):
    """A learnable leaf with a gradient accumulator of the same shape."""

    __slots__ = ("grad", "name")

    def __init__(self, value, name: str = ""):
        super().__init__(_as_matrix(value), op="param")
        self.requires_grad = True
        self.grad = np.zeros_like(self.value)
        self.name = name

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    @property
    def size(self) -> int:
        return self.value.size


def tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(value: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    if _recording() and any(p.requires_grad for p in parents):
        return Tensor(value, parents, backward_fn, op)
    return Tensor(value, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, opname: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{opname}: cannot broadcast shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    av, bv = a.value, b.value

    def back(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return _node(av @ bv, (a, b), back, "matmul")


def add(a, b) -> Tensor:
    """Sum with row/column broadcasting of 1-sized axes (e.g. a 1xn bias)."""
    a, b = tensor(a), tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _node(a.value + b.value, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _node(a.value - b.value, (a, b), back, "sub")


def hadamard(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    av, bv = a.value, b.value

    def back(g):
        return g * bv, g * av

    return _node(av * bv, (a, b), back, "hadamard")


def scale(a, c: float) -> Tensor:
    a = tensor(a)

    def back(g):
        return (g * c,)

    return _node(a.value * c, (a,), back, "scale")


def transpose(a) -> Tensor:
    a = tensor(a)
    return _node(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def _tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    if "tanh" in _faults:
        return _node(y, (a,), lambda g: (g * (1.0 - y),), "tanh")
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(a: Tensor) -> Tensor:
    x = a.value
    # split by sign so exp never overflows
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    if "sigmoid" in _faults:
        return _node(y, (a,), lambda g: (g * y,), "sigmoid")
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    if "relu" in _faults:
        return _node(a.value * mask, (a,), lambda g: (g,), "relu")
    return _node(a.value * mask, (a,), lambda g: (g * mask,), "relu")


_ELEMENTWISE = {"tanh": _tanh, "sigmoid": _sigmoid, "relu": _relu}


def elementwise(op: str, a) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(tensor(a))


def tanh(a) -> Tensor:
    return _tanh(tensor(a))


def sigmoid(a) -> Tensor:
    return _sigmoid(tensor(a))


def relu(a) -> Tensor:
    return _relu(tensor(a))


def square(a) -> Tensor:
    a = tensor(a)
    av = a.value
    return _node(av * av, (a,), lambda g: (2.0 * av * g,), "square")


def sqrt(a) -> Tensor:
    """Square root; the backward rule uses subgradient 0 at exactly 0."""
    a = tensor(a)
    y = np.sqrt(a.value)

    def back(g):
        out = np.zeros_like(y)
        nz = y > 0
        out[nz] = g[nz] / (2.0 * y[nz])
        return (out,)

    return _node(y, (a,), back, "sqrt")


# ---------------------------------------------------------------------------
# reductions and reshaping


def sum_all(a) -> Tensor:
    a = tensor(a)
    shape = a.shape
    return _node(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum")


def mean_all(a) -> Tensor:
    a = tensor(a)
    shape = a.shape
    k = 1.0 / a.value.size
    return _node(np.array([[a.value.mean()]]), (a,), lambda g: (np.full(shape, g[0, 0] * k),), "mean")


def sum_rows(a) -> Tensor:
    """Column-wise sum over rows: r x c -> 1 x c."""
    a = tensor(a)
    r = a.rows
    return _node(a.value.sum(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g, r, axis=0),), "sum_rows")


def mean_rows(a) -> Tensor:
    """Average over rows: r x c -> 1 x c."""
    a = tensor(a)
    r = a.rows
    return _node(a.value.mean(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g / r, r, axis=0),), "mean_rows")


def sum_cols(a) -> Tensor:
    """Row-wise sum over columns: r x c -> r x 1."""
    a = tensor(a)
    c = a.cols
    return _node(a.value.sum(axis=1, keepdims=True), (a,), lambda g: (np.repeat(g, c, axis=1),), "sum_cols")


def mean_of(tensors: Sequence) -> Tensor:
    """Elementwise mean of equally shaped tensors."""
    if not tensors:
        raise ValueError("mean_of needs at least one tensor")
    ts = [tensor(t) for t in tensors]
    shape = ts[0].shape
    for t in ts[1:]:
        if t.shape != shape:
            raise DimensionError(f"mean_of: shapes {shape} and {t.shape} differ")
    k = len(ts)
    total = ts[0].value.copy()
    for t in ts[1:]:
        total += t.value
    return _node(total / k, tuple(ts), lambda g: tuple(g / k for _ in ts), "mean_of")


def concat_cols(tensors: Sequence) -> Tensor:
    ts = [tensor(t) for t in tensors]
    rows = {t.rows for t in ts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[t.shape for t in ts]}")
    bounds = np.cumsum([0] + [t.cols for t in ts])

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _node(np.concatenate([t.value for t in ts], axis=1), tuple(ts), back, "concat_cols")


def concat_rows(tensors: Sequence) -> Tensor:
    ts = [tensor(t) for t in tensors]
    cols = {t.cols for t in ts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows: column counts differ {[t.shape for t in ts]}")
    bounds = np.cumsum([0] + [t.rows for t in ts])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _node(np.concatenate([t.value for t in ts], axis=0), tuple(ts), back, "concat_rows")


def take_rows(a, idx) -> Tensor:
    a = tensor(a)
    idx = np.atleast_1d(np.asarray(idx, dtype=np.intp))
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.value[idx], (a,), back, "take_rows")


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = tensor(a)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _node(a.value[:, start:stop].copy(), (a,), back, "slice_cols")


# ---------------------------------------------------------------------------
# softmax family


def softmax_vector(scores) -> np.ndarray:
    """Numerically stable softmax of a 1-D sequence of reals."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("softmax_vector needs a nonempty input")
    e = np.exp(s - s.max())
    return e / e.sum()


def softmax(a) -> Tensor:
    """Softmax over all entries of a row or column vector, same shape out."""
    a = tensor(a)
    if 1 not in a.shape:
        raise DimensionError(f"softmax expects a vector, got shape {a.shape}")
    y = softmax_vector(a.value).reshape(a.shape)

    def back(g):
        return (y * (g - (g * y).sum()),)

    return _node(y, (a,), back, "softmax")


def cross_entropy(logits, labels) -> Tensor:
    """Mean over rows of -log softmax(logits_i)[labels_i]."""
    z = tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    n, c = z.shape
    if labels.shape != (n,):
        raise DimensionError(f"cross_entropy: {n} rows but {labels.shape} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"cross_entropy: labels must lie in [0, {c})")
    zv = z.value
    m = zv.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(zv - m).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = float(np.mean(lse[:, 0] - zv[rows, labels]))

    def back(g):
        p = np.exp(zv - lse)
        p[rows, labels] -= 1.0
        return (p * (g[0, 0] / n),)

    return _node(np.array([[loss]]), (z,), back, "cross_entropy")


def row_distance(a, b) -> Tensor:
    """Euclidean distance between matching rows of `a` and `b` (r x 1)."""
    return sqrt(sum_cols(square(sub(a, b))))


# ---------------------------------------------------------------------------
# reverse pass


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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(param) into every param reachable from `root`."""
    if root.shape != (1, 1):
        raise ValueError(f"backward needs a scalar (1x1) root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones((1, 1))}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Param):
            node.grad += g
            continue
        pgrads = node.backward_fn(g)
        for parent, pg in zip(node.parents, pgrads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


def finite_diff_check(loss_fn: Callable[[], Tensor], params: Sequence[Param], step: float = 1e-6) -> float:
    """Worst relative error between tape gradients and central differences.

    The relative error of each entry is |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1e-8).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = list(params)
    zero_grads(params)
    loss = loss_fn()
    if not math.isfinite(loss.item()):
        raise EvaluationError("loss is not finite at the base point")
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    zero_grads(params)

    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.value.reshape(-1)
            gflat = ga.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + step
                fp = loss_fn().item()
                flat[k] = orig - step
                fm = loss_fn().item()
                flat[k] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise EvaluationError(f"non-finite loss when perturbing {p.name or 'param'}[{k}]")
                num = (fp - fm) / (2.0 * step)
                ana = gflat[k]
                denom = max(abs(ana), abs(num), 1e-8)
                worst = max(worst, abs(ana - num) / denom)
    return worst
