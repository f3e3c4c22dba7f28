"""Reverse-mode automatic differentiation over dense numpy-backed tensors.

The op set is deliberately small: exactly the primitives the alignment
losses and the toy encoders are built from. Values are stored in float32
by default; reductions accumulate in float64 and gradient checking runs
entirely in float64.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ContractViolation",
    "Tensor",
    "tensor",
    "add",
    "sub",
    "mul",
    "scalar_mul",
    "matmul",
    "transpose",
    "relu",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "logsumexp",
    "tensor_sum",
    "tensor_mean",
    "tensor_max",
    "linear",
    "l1_norm",
    "cosine_similarity",
    "normalize_rows",
    "scale_rows",
    "broadcast_rows",
    "slice_rows",
    "slice_cols",
    "concat_rows",
    "concat_cols",
    "stack_rows",
    "reshape",
    "div_scalar",
    "grad_check",
    "no_grad",
    "topo_order",
]

_FLOAT_DTYPES = (np.float32, np.float64)
_node_counter = itertools.count()
_grad_enabled = True


class ContractViolation(ValueError):
    """An operation was called outside its contract (shapes, domains, reuse)."""


@contextmanager
def no_grad():
    """Evaluate ops without recording the graph (e.g. metric passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data: np.ndarray, op: str) -> None:
    # sum() propagates any inf/nan (inf + -inf -> nan), one cheap reduction
    if not math.isfinite(float(data.sum())):
        raise ContractViolation(f"{op}: non-finite values in tensor data")


class Tensor:
    """Dense row-major array participating in an autodiff graph.

    Leaves are created directly; non-leaf tensors are produced by ops and
    carry a closure that routes the output gradient to their parents.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "op",
                 "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        _check_finite(arr, "leaf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_counter)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"], op: str,
                 backward: Callable[[np.ndarray], None] | None) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        out.grad = None
        out.node_id = next(_node_counter)
        out.op = op
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        out._consumed = False
        return out

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g.astype(self.data.dtype, copy=False)

    # -- public surface ----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Constant view of this tensor, cut out of the graph."""
        return Tensor(self.data.copy(), requires_grad=False)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf.

        The graph rooted here is consumable once; a second call raises.
        """
        if self.data.ndim != 0 and self.data.size != 1:
            raise ContractViolation(
                f"backward: loss must be scalar, got shape {self.shape}")
        if self._consumed:
            raise ContractViolation("backward: graph already consumed")
        self._consumed = True
        if not self.requires_grad:
            return
        order = topo_order(self)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor_like(other, self))

    def __sub__(self, other):
        return sub(self, _as_tensor_like(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(other, self)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, data={self.data!r})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def topo_order(root: Tensor) -> list[Tensor]:
    """Topologically ordered op records reachable from ``root`` (leaves first)."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in visited:
            continue
        visited.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.node_id not in visited:
                stack.append((p, False))
    return order


def _result_dtype(*tensors: Tensor):
    return np.result_type(*(t.data.dtype for t in tensors))


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise and scalar ops ---------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return Tensor._from_op(out_data, (a, b), "add", backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return Tensor._from_op(out_data, (a, b), "sub", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return Tensor._from_op(out_data, (a, b), "mul", backward)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    if not math.isfinite(c):
        raise ContractViolation("scalar_mul: non-finite scalar")
    out_data = a.data * a.data.dtype.type(c)

    def backward(g):
        a._accumulate(g * c)

    return Tensor._from_op(out_data, (a,), "scalar_mul", backward)


def div_scalar(a: Tensor, s: Tensor) -> Tensor:
    """Divide tensor ``a`` by a scalar graph node ``s``."""
    if s.data.size != 1:
        raise ContractViolation(f"div_scalar: divisor must be scalar, got {s.shape}")
    sval = float(s.data)
    if sval == 0.0:
        raise ContractViolation("div_scalar: division by zero")
    out_data = a.data / np.dtype(_result_dtype(a, s)).type(sval)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / sval)
        if s.requires_grad:
            s._accumulate(np.asarray(
                -np.sum(g.astype(np.float64) * a.data) / (sval * sval),
                dtype=s.data.dtype).reshape(s.data.shape))

    return Tensor._from_op(out_data, (a, s), "div_scalar", backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out_data = np.where(mask, a.data, a.data.dtype.type(0))

    def backward(g):
        a._accumulate(g * mask)

    return Tensor._from_op(out_data, (a,), "relu", backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return Tensor._from_op(out_data, (a,), "exp", backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ContractViolation("log: domain requires strictly positive values")
    out_data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return Tensor._from_op(out_data, (a,), "log", backward)


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: shapes {a.shape} @ {b.shape} do not conform")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._from_op(out_data, (a, b), "matmul", backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ContractViolation(f"transpose: expected matrix, got {a.shape}")
    out_data = np.ascontiguousarray(a.data.T)

    def backward(g):
        a._accumulate(g.T)

    return Tensor._from_op(out_data, (a,), "transpose", backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map x @ w + b with the bias broadcast over rows."""
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1 \
            or x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"linear: shapes {x.shape} @ {w.shape} + {b.shape} do not conform")
    out_data = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0, dtype=np.float64).astype(b.data.dtype))

    return Tensor._from_op(out_data, (x, w, b), "linear", backward)


# -- softmax family -----------------------------------------------------------

def _softmax64(x: np.ndarray, axis: int) -> np.ndarray:
    x64 = x.astype(np.float64)
    shifted = x64 - x64.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int) -> Tensor:
    if a.shape[axis] < 1:
        raise ContractViolation("softmax: axis length must be >= 1")
    y64 = _softmax64(a.data, axis)
    out_data = y64.astype(a.data.dtype)

    def backward(g):
        g64 = g.astype(np.float64)
        inner = (g64 * y64).sum(axis=axis, keepdims=True)
        a._accumulate(((g64 - inner) * y64).astype(a.data.dtype))

    return Tensor._from_op(out_data, (a,), "softmax", backward)


def log_softmax(a: Tensor, axis: int) -> Tensor:
    if a.shape[axis] < 1:
        raise ContractViolation("log_softmax: axis length must be >= 1")
    x64 = a.data.astype(np.float64)
    m = x64.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x64 - m).sum(axis=axis, keepdims=True))
    y64 = x64 - lse
    out_data = y64.astype(a.data.dtype)

    def backward(g):
        g64 = g.astype(np.float64)
        s = g64.sum(axis=axis, keepdims=True)
        a._accumulate((g64 - np.exp(y64) * s).astype(a.data.dtype))

    return Tensor._from_op(out_data, (a,), "log_softmax", backward)


def logsumexp(a: Tensor, axis: int) -> Tensor:
    x64 = a.data.astype(np.float64)
    m = x64.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x64 - m).sum(axis=axis, keepdims=True))
    out_data = np.squeeze(lse, axis=axis).astype(a.data.dtype)
    soft = np.exp(x64 - lse)

    def backward(g):
        a._accumulate((np.expand_dims(g.astype(np.float64), axis) * soft)
                      .astype(a.data.dtype))

    return Tensor._from_op(out_data, (a,), "logsumexp", backward)


# -- reductions ---------------------------------------------------------------

def tensor_sum(a: Tensor, axis: int | None = None) -> Tensor:
    # accumulate in float64, store at input precision
    out_data = a.data.sum(axis=axis, dtype=np.float64).astype(a.data.dtype)

    def backward(g):
        if axis is None:
            a._accumulate(np.full_like(a.data, g))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return Tensor._from_op(out_data, (a,), "sum", backward)


def tensor_mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    out_data = (a.data.sum(axis=axis, dtype=np.float64) / count).astype(a.data.dtype)

    def backward(g):
        if axis is None:
            a._accumulate(np.full_like(a.data, g / count))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g / count, axis), a.shape).copy())

    return Tensor._from_op(out_data, (a,), "mean", backward)


def tensor_max(a: Tensor, axis: int) -> Tensor:
    """Max along ``axis``; gradient routes to the lowest-index argmax only."""
    out_data = a.data.max(axis=axis)
    idx = a.data.argmax(axis=axis)  # first occurrence = lowest index

    def backward(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis=axis)
        a._accumulate(grad)

    return Tensor._from_op(out_data, (a,), "max", backward)


def l1_norm(a: Tensor) -> Tensor:
    """Sum of absolute values; subgradient at 0 is 0."""
    out_data = np.asarray(np.abs(a.data).sum(dtype=np.float64), dtype=a.data.dtype)
    sign = np.sign(a.data)

    def backward(g):
        a._accumulate(g * sign)

    return Tensor._from_op(out_data, (a,), "l1_norm", backward)


# -- similarity ---------------------------------------------------------------

def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ContractViolation(
            f"cosine_similarity: expected equal-length vectors, got {a.shape}, {b.shape}")
    a64 = a.data.astype(np.float64)
    b64 = b.data.astype(np.float64)
    na = np.linalg.norm(a64)
    nb = np.linalg.norm(b64)
    if na == 0.0 or nb == 0.0:
        raise ContractViolation("cosine_similarity: zero-norm operand")
    c = float(a64 @ b64 / (na * nb))
    out_data = np.asarray(c, dtype=_result_dtype(a, b))

    def backward(g):
        g64 = float(g)
        if a.requires_grad:
            a._accumulate((g64 * (b64 / (na * nb) - c * a64 / (na * na)))
                          .astype(a.data.dtype))
        if b.requires_grad:
            b._accumulate((g64 * (a64 / (na * nb) - c * b64 / (nb * nb)))
                          .astype(b.data.dtype))

    return Tensor._from_op(out_data, (a, b), "cosine_similarity", backward)


def normalize_rows(a: Tensor) -> Tensor:
    """Scale each row to unit L2 norm. Rows must be nonzero."""
    if a.ndim != 2:
        raise ContractViolation(f"normalize_rows: expected matrix, got {a.shape}")
    x64 = a.data.astype(np.float64)
    r = np.linalg.norm(x64, axis=1, keepdims=True)
    if np.any(r == 0.0):
        raise ContractViolation("normalize_rows: zero-norm row")
    y64 = x64 / r
    out_data = y64.astype(a.data.dtype)

    def backward(g):
        g64 = g.astype(np.float64)
        inner = (g64 * x64).sum(axis=1, keepdims=True)
        a._accumulate(((g64 - y64 * inner / r) / r).astype(a.data.dtype))

    return Tensor._from_op(out_data, (a,), "normalize_rows", backward)


# -- row/column structure -------------------------------------------------------

def scale_rows(a: Tensor, v: Tensor) -> Tensor:
    """Multiply row i of matrix ``a`` by ``v[i]``."""
    if a.ndim != 2 or v.ndim != 1 or a.shape[0] != v.shape[0]:
        raise ContractViolation(
            f"scale_rows: shapes {a.shape} and {v.shape} do not conform")
    out_data = a.data * v.data[:, None]

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * v.data[:, None])
        if v.requires_grad:
            v._accumulate((g * a.data).sum(axis=1, dtype=np.float64)
                          .astype(v.data.dtype))

    return Tensor._from_op(out_data, (a, v), "scale_rows", backward)


def broadcast_rows(v: Tensor, n: int) -> Tensor:
    """Tile vector ``v`` into an n-row matrix (explicit bias broadcast)."""
    if v.ndim != 1:
        raise ContractViolation(f"broadcast_rows: expected vector, got {v.shape}")
    out_data = np.tile(v.data, (n, 1))

    def backward(g):
        v._accumulate(g.sum(axis=0, dtype=np.float64).astype(v.data.dtype))

    return Tensor._from_op(out_data, (v,), "broadcast_rows", backward)


def slice_rows(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.ndim != 2 or not (0 <= lo < hi <= a.shape[0]):
        raise ContractViolation(f"slice_rows: bad range [{lo}, {hi}) for shape {a.shape}")
    out_data = a.data[lo:hi].copy()

    def backward(g):
        grad = np.zeros_like(a.data)
        grad[lo:hi] = g
        a._accumulate(grad)

    return Tensor._from_op(out_data, (a,), "slice_rows", backward)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.ndim != 2 or not (0 <= lo < hi <= a.shape[1]):
        raise ContractViolation(f"slice_cols: bad range [{lo}, {hi}) for shape {a.shape}")
    out_data = a.data[:, lo:hi].copy()

    def backward(g):
        grad = np.zeros_like(a.data)
        grad[:, lo:hi] = g
        a._accumulate(grad)

    return Tensor._from_op(out_data, (a,), "slice_cols", backward)


def _concat(tensors: Sequence[Tensor], axis: int, op: str) -> Tensor:
    if not tensors:
        raise ContractViolation(f"{op}: empty input list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offset, offset + size)
                t._accumulate(g[tuple(sl)])
            offset += size

    return Tensor._from_op(out_data, tuple(tensors), op, backward)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    return _concat(tensors, 0, "concat_rows")


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    return _concat(tensors, 1, "concat_cols")


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors into a matrix, one per row."""
    if not vectors:
        raise ContractViolation("stack_rows: empty input list")
    for v in vectors:
        if v.ndim != 1 or v.shape != vectors[0].shape:
            raise ContractViolation("stack_rows: operands must be equal-length vectors")
    out_data = np.stack([v.data for v in vectors], axis=0)

    def backward(g):
        for i, v in enumerate(vectors):
            if v.requires_grad:
                v._accumulate(g[i])

    return Tensor._from_op(out_data, tuple(vectors), "stack_rows", backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ContractViolation(f"reshape: cannot view {a.shape} as {shape}")
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return Tensor._from_op(out_data, (a,), "reshape", backward)


# -- gradient checking ---------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs entirely in float64. The caller is responsible for choosing points
    where ``f`` is smooth (away from max ties and L1 kinks). A non-finite
    estimate is reported as ``inf``.
    """
    x0 = x.data.astype(np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True, dtype=np.float64)
    out = f(leaf)
    out.backward()
    if leaf.grad is None:
        analytic = np.zeros_like(x0)
    else:
        analytic = leaf.grad.astype(np.float64)

    worst = 0.0
    flat = x0.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + eps
        f_plus = float(f(Tensor(bumped.reshape(x0.shape), dtype=np.float64)).data)
        bumped[i] = flat[i] - eps
        f_minus = float(f(Tensor(bumped.reshape(x0.shape), dtype=np.float64)).data)
        fd = (f_plus - f_minus) / (2.0 * eps)
        err = abs(analytic.reshape(-1)[i] - fd) / (abs(fd) + 1e-8)
        if not math.isfinite(err):
            return math.inf
        worst = max(worst, err)
    return worst
