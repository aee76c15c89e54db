"""Dense 2-D float64 matrices with reverse-mode differentiation.

Every value is a 2-D float64 array wrapped in a :class:`Tensor`; scalars are
1x1. Ops build a DAG of tensors (the tape); ``backward`` walks it once in
reverse topological order and accumulates gradients into ``.grad``. Non-finite
results raise immediately instead of propagating.

Broadcasting is restricted to row (1xC) and column (Rx1) vectors against
RxC operands; anything richer is a shape error.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block. Forward values are unchanged."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """One node of the tape: a 2-D float64 value plus backward bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, _op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values entering op '{_op}'")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = _backward
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # Light operator sugar; everything routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap an op result; drops tape linkage when recording is off."""
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, _op=op)
    return Tensor(data, _op=op)


def backward(loss: Tensor):
    """Reverse-mode pass from a 1x1 loss; accumulates into ``.grad``.

    Visits each reachable node exactly once in reverse topological order, so
    a node feeding several consumers receives the sum of its contributions.
    """
    if loss.data.shape != (1, 1):
        raise DimensionError(f"backward needs a 1x1 loss, got {loss.data.shape}")
    topo: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones((1, 1))
    for node in reversed(topo):
        if node._backward is None:
            continue
        if node.grad is None:
            continue
        node._backward(node.grad)


def _accumulate(t: Tensor, g: np.ndarray):
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _broadcast_check(a: Tensor, b: Tensor, op: str):
    """Allow equal shapes, or a row/column vector against the other operand."""
    if a.shape == b.shape:
        return
    ra, ca = a.shape
    rb, cb = b.shape
    row_ok = (ra == 1 and ca == cb) or (rb == 1 and cb == ca)
    col_ok = (ca == 1 and ra == rb) or (cb == 1 and rb == ra)
    if not (row_ok or col_ok):
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b, "add")
    out_data = a.data + b.data

    def back(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(g, b.shape))

    return _make(out_data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b, "sub")
    out_data = a.data - b.data

    def back(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(-g, b.shape))

    return _make(out_data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b, "mul")
    out_data = a.data * b.data
    ad, bd = a.data, b.data

    def back(g):
        _accumulate(a, _reduce_to(g * bd, a.shape))
        _accumulate(b, _reduce_to(g * ad, b.shape))

    return _make(out_data, (a, b), back, "mul")


def neg(a) -> Tensor:
    return scale(a, -1.0)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def back(g):
        _accumulate(a, g * c)

    return _make(a.data * c, (a,), back, "scale")


def shift(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def back(g):
        _accumulate(a, g)

    return _make(a.data + c, (a,), back, "shift")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        _accumulate(a, g @ bd.T)
        _accumulate(b, ad.T @ g)

    return _make(ad @ bd, (a, b), back, "matmul")


def transpose(a) -> Tensor:
    a = _as_tensor(a)

    def back(g):
        _accumulate(a, g.T)

    return _make(a.data.T, (a,), back, "transpose")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def back(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), back, "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    with np.errstate(divide="raise", invalid="raise"):
        try:
            out_data = np.log(ad)
        except FloatingPointError as e:
            raise NumericError("log of non-positive value") from e

    def back(g):
        _accumulate(a, g / ad)

    return _make(out_data, (a,), back, "log")


def powc(a, p: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    a = _as_tensor(a)
    p = float(p)
    ad = a.data
    out_data = ad ** p

    def back(g):
        _accumulate(a, g * p * ad ** (p - 1.0))

    return _make(out_data, (a,), back, "powc")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    slope = float(slope)
    factor = np.where(a.data > 0, 1.0, slope)

    def back(g):
        _accumulate(a, g * factor)

    return _make(a.data * factor, (a,), back, "leaky_relu")


def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


def concat_cols(parts: Iterable[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat_cols of empty list")
    rows = parts[0].rows
    if any(p.rows != rows for p in parts):
        raise DimensionError("concat_cols: row counts differ")
    widths = [p.cols for p in parts]
    offsets = np.cumsum([0] + widths)

    def back(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[:, lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), back, "concat_cols")


def concat_rows(parts: Iterable[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat_rows of empty list")
    cols = parts[0].cols
    if any(p.cols != cols for p in parts):
        raise DimensionError("concat_rows: column counts differ")
    heights = [p.rows for p in parts]
    offsets = np.cumsum([0] + heights)

    def back(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[lo:hi, :])

    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), back, "concat_rows")


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def max_over_rows(a) -> Tensor:
    """Per-column maximum -> 1xC. Gradient goes to the argmax entry only;
    ties resolve to the lowest row index."""
    a = _as_tensor(a)
    ad = a.data
    idx = np.argmax(ad, axis=0)  # first occurrence = lowest row index
    cols = np.arange(ad.shape[1])

    def back(g):
        ga = np.zeros_like(ad)
        ga[idx, cols] = g[0]
        _accumulate(a, ga)

    return _make(ad[idx, cols][None, :], (a,), back, "max_over_rows")


def mean_over_rows(a) -> Tensor:
    """Per-column mean -> 1xC."""
    a = _as_tensor(a)
    n = a.rows

    def back(g):
        _accumulate(a, np.repeat(g / n, n, axis=0))

    return _make(a.data.mean(axis=0, keepdims=True), (a,), back, "mean_over_rows")


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def back(g):
        _accumulate(a, np.full(shape, g[0, 0]))

    return _make(a.data.sum().reshape(1, 1), (a,), back, "sum_all")


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    shape = a.shape

    def back(g):
        _accumulate(a, np.full(shape, g[0, 0] / n))

    return _make(a.data.mean().reshape(1, 1), (a,), back, "mean_all")


# ---------------------------------------------------------------------------
# Row-wise normalizations
# ---------------------------------------------------------------------------

def softmax_rows(a) -> Tensor:
    """Row softmax, stabilized by row-max subtraction."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        inner = (g * s).sum(axis=1, keepdims=True)
        _accumulate(a, s * (g - inner))

    return _make(s, (a,), back, "softmax_rows")


def masked_softmax_rows(a, support: np.ndarray) -> Tensor:
    """Row softmax restricted to a boolean support mask; masked entries are 0.

    Every row must have at least one supported entry.
    """
    a = _as_tensor(a)
    support = np.asarray(support, dtype=bool)
    if support.shape != a.shape:
        raise DimensionError(f"mask shape {support.shape} != operand {a.shape}")
    if not support.any(axis=1).all():
        raise NumericError("masked_softmax_rows: a row has empty support")
    z = np.where(support, a.data, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(support, np.exp(z), 0.0)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        inner = (g * s).sum(axis=1, keepdims=True)
        _accumulate(a, s * (g - inner))

    return _make(s, (a,), back, "masked_softmax_rows")


def row_l2_normalize(a) -> Tensor:
    """Scale each row to unit Euclidean norm. Zero rows are an error."""
    a = _as_tensor(a)
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise NumericError("row_l2_normalize: zero-norm row")
    u = a.data / norms

    def back(g):
        inner = (g * u).sum(axis=1, keepdims=True)
        _accumulate(a, (g - inner * u) / norms)

    return _make(u, (a,), back, "row_l2_normalize")


FEATURE_NORM_EPS = 1e-8


def feature_norm(a, gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-column standardization over the rows of one view set, then a
    learnable affine. A single-row input skips standardization (its column
    statistics are degenerate) and gets the affine only.

    Composed from primitive ops, so the gradient needs no dedicated rule.
    """
    a = _as_tensor(a)
    if gamma.shape != (1, a.cols) or beta.shape != (1, a.cols):
        raise DimensionError("feature_norm: affine params must be 1xC")
    if a.rows == 1:
        return add(mul(a, gamma), beta)
    mu = mean_over_rows(a)
    centered = sub(a, mu)
    var = mean_over_rows(mul(centered, centered))
    inv_std = powc(shift(var, FEATURE_NORM_EPS), -0.5)
    standardized = mul(centered, inv_std)
    return add(mul(standardized, gamma), beta)
