"""Dense tensors with tape-based reverse-mode differentiation.

Only the handful of ops the embedding and transformer code needs are
provided.  Every op builds its output eagerly with numpy and, when gradient
recording is on, attaches a closure mapping the output gradient to the
gradients of its inputs.  ``Tensor.backward`` walks those closures in reverse
topological order.

Precision is a process-wide setting: float32 by default, float64 for
gradient checks (see :func:`precision`).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class NumericError(FloatingPointError):
    """Raised when an op produces NaN or Inf while debug checks are on."""


@dataclass
class _State:
    dtype: type = np.float32
    grad_enabled: bool = True
    debug: bool = True


_state = _State()


def get_dtype():
    return _state.dtype


def set_precision(bits: int) -> None:
    if bits == 32:
        _state.dtype = np.float32
    elif bits == 64:
        _state.dtype = np.float64
    else:
        raise ValueError(f"unsupported precision: {bits} bits")


@contextlib.contextmanager
def precision(bits: int):
    old = _state.dtype
    set_precision(bits)
    try:
        yield
    finally:
        _state.dtype = old


def set_debug(flag: bool) -> None:
    """Toggle the NaN/Inf check that runs after every op."""
    _state.debug = bool(flag)


@contextlib.contextmanager
def debug_checks(flag: bool):
    old = _state.debug
    _state.debug = bool(flag)
    try:
        yield
    finally:
        _state.debug = old


@contextlib.contextmanager
def no_grad():
    old = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


def grad_enabled() -> bool:
    return _state.grad_enabled


class Tensor:
    """An n-d array plus the closure that back-propagates through it."""

    __slots__ = ("data", "_parents", "_backward", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype != _state.dtype:
            arr = arr.astype(_state.dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def backward(self) -> None:
        """Accumulate d(self)/d(param) into ``.grad`` of every reachable Parameter."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if isinstance(node, Parameter):
                node.grad += g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


class Parameter(Tensor):
    """A named leaf tensor that owns a gradient buffer."""

    __slots__ = ("grad", "name", "version")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.name = name
        # bumped by optimizers; used to detect stale precomputed tables
        self.version = 0

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def assign(self, value) -> None:
        value = np.asarray(value, dtype=self.data.dtype)
        if value.shape != self.data.shape:
            raise ValueError(f"shape mismatch for {self.name}: {value.shape} vs {self.data.shape}")
        self.data = value
        self.version += 1

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


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


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(arr: np.ndarray, op: str) -> None:
    # a single reduction catches NaN and Inf (an overflowing sum is re-checked)
    if _state.debug and not np.isfinite(np.sum(arr)) and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")


def _make(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check(data, op)
    needs = _state.grad_enabled and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes broadcast as in ``np.matmul``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # fold leading axes into rows: one GEMM instead of a stack of small ones
        return reshape(matmul(reshape(a, (-1, a.shape[-1])), b), a.shape[:-1] + (b.shape[-1],))
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _make(out, (a, b), backward, "matmul")


def add(a, b) -> Tensor:
    """Element-wise sum with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), backward, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    x = _as_tensor(x)
    out = x.data * c

    def backward(g):
        return (g * c,)

    return _make(out, (x,), backward, "scale")


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), backward, "sum")


def tmean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), backward, "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _make(out, (x,), backward, "transpose")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs))
        )

    return _make(out, xs, backward, "concat")


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-d table; ``ids`` may have any integer shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"row index out of range for table with {table.shape[0]} rows")
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(out, (table,), backward, "take_rows")


# ---------------------------------------------------------------------------
# non-linearities


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _make(out, (x,), backward, "tanh")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g):
        return (g * (x.data > 0),)

    return _make(out, (x,), backward, "relu")


def _softmax_np(a: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; the max is subtracted before exponentiation."""
    out = _softmax_np(x.data, axis)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def softmax_cols(x: Tensor) -> Tensor:
    """Column-wise softmax of a 2-d tensor (each column sums to one)."""
    return softmax(x, axis=0)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine ``gamma``/``beta``."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = rstd / n * (n * gh - gh.sum(-1, keepdims=True) - xhat * (gh * xhat).sum(-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return _make(out, (x, gamma, beta), backward, "layer_norm")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None = None, mask=None) -> Tensor:
    """Inverted dropout.  Pass either a seeded ``rng`` or a precomputed keep-``mask``."""
    if p <= 0.0 and mask is None:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    if mask is None:
        if rng is None:
            raise ValueError("dropout needs an rng or a mask")
        mask = rng.random(x.shape, dtype=np.float32) >= p
    keep = mask.astype(x.data.dtype) / (1.0 - p)
    return mul(x, Tensor(keep))


# ---------------------------------------------------------------------------
# sparse bag-of-features


class SparseMatrix:
    """Row-major sparse matrix of positive weights with sorted, unique (row, col) entries.

    Stored in CSR form; entries can still be iterated as triples.
    """

    def __init__(self, rows: int, cols: int, indptr, indices, weights):
        self.rows = int(rows)
        self.cols = int(cols)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self._validate()
        self._csr = {}

    @classmethod
    def from_entries(cls, rows: int, cols: int, entries: Iterable[tuple]) -> "SparseMatrix":
        entries = sorted((int(r), int(c), float(w)) for r, c, w in entries)
        indptr = np.zeros(rows + 1, dtype=np.int64)
        for r, _, _ in entries:
            if not 0 <= r < rows:
                raise IndexError(f"row {r} out of range")
            indptr[r + 1] += 1
        return cls(rows, cols, np.cumsum(indptr), [c for _, c, _ in entries], [w for _, _, w in entries])

    @classmethod
    def from_rows(cls, row_lists: Sequence[Sequence[tuple]], cols: int) -> "SparseMatrix":
        """Build from one list of ``(col, weight)`` pairs per row."""
        indptr = np.zeros(len(row_lists) + 1, dtype=np.int64)
        indices, weights = [], []
        for r, row in enumerate(row_lists):
            indptr[r + 1] = indptr[r] + len(row)
            for c, w in row:
                indices.append(c)
                weights.append(w)
        return cls(len(row_lists), cols, indptr, indices, weights)

    def _validate(self):
        if len(self.indptr) != self.rows + 1 or self.indptr[0] != 0:
            raise ValueError("malformed indptr")
        if np.any(np.diff(self.indptr) < 0) or self.indptr[-1] != len(self.indices):
            raise ValueError("malformed indptr")
        if len(self.indices) != len(self.weights):
            raise ValueError("indices and weights differ in length")
        if len(self.indices):
            if self.indices.min() < 0 or self.indices.max() >= self.cols:
                raise IndexError("column index out of range")
            if np.any(self.weights <= 0):
                raise ValueError("sparse weights must be positive")
        if len(self.indices) > 1:
            steps = np.diff(self.indices)
            within = np.ones(len(steps), dtype=bool)
            ends = self.indptr[1:-1] - 1
            within[ends[(ends >= 0) & (ends < len(steps))]] = False
            if np.any(steps[within] <= 0):
                raise ValueError("columns within a row must be strictly increasing")

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def row(self, r: int) -> list:
        lo, hi = self.indptr[r], self.indptr[r + 1]
        return [(int(c), float(w)) for c, w in zip(self.indices[lo:hi], self.weights[lo:hi])]

    def entries(self):
        for r in range(self.rows):
            for c, w in self.row(r):
                yield r, c, w

    def select_rows(self, rows) -> "SparseMatrix":
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        starts = self.indptr[rows]
        lengths = self.indptr[rows + 1] - starts
        indptr = np.concatenate([[0], np.cumsum(lengths)])
        pos = np.repeat(starts - indptr[:-1], lengths) + np.arange(indptr[-1])
        return SparseMatrix(len(rows), self.cols, indptr, self.indices[pos], self.weights[pos])

    def densify(self, dtype=None) -> np.ndarray:
        out = np.zeros((self.rows, self.cols), dtype=dtype or _state.dtype)
        for r in range(self.rows):
            lo, hi = self.indptr[r], self.indptr[r + 1]
            out[r, self.indices[lo:hi]] = self.weights[lo:hi]
        return out

    def csr(self, dtype=None) -> sp.csr_matrix:
        dtype = np.dtype(dtype or _state.dtype)
        if dtype not in self._csr:
            self._csr[dtype] = sp.csr_matrix(
                (self.weights.astype(dtype), self.indices, self.indptr), shape=(self.rows, self.cols)
            )
        return self._csr[dtype]

    def __eq__(self, other):
        return (
            isinstance(other, SparseMatrix)
            and (self.rows, self.cols) == (other.rows, other.cols)
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.weights, other.weights)
        )


def bag_sum(bon: SparseMatrix, table: Tensor) -> Tensor:
    """Weighted gather-and-sum of table rows: ``out[b] = sum_j w(b, j) * table[j]``."""
    if bon.cols != table.shape[0]:
        raise IndexError(f"sparse matrix has {bon.cols} columns but table has {table.shape[0]} rows")
    m = bon.csr(table.data.dtype)
    out = np.asarray(m @ table.data)

    def backward(g):
        return (np.asarray(m.T @ g),)

    return _make(out, (table,), backward, "bag_sum")


# ---------------------------------------------------------------------------
# loss


def log_softmax_np(a: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = a - a.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def smoothed_cross_entropy(logits: Tensor, targets, eps: float = 0.0, mask=None) -> Tensor:
    """Label-smoothed cross entropy averaged over unmasked positions.

    The smoothed target puts ``1 - eps`` on the gold class and spreads ``eps``
    uniformly over all classes.
    """
    targets = np.asarray(targets, dtype=np.int64)
    V = logits.shape[-1]
    flat = logits.data.reshape(-1, V)
    t = targets.reshape(-1)
    m = np.ones(t.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    n = max(int(m.sum()), 1)
    lp = log_softmax_np(flat, -1)
    rows = np.arange(len(t))
    nll = -lp[rows, t]
    smooth = -lp.mean(axis=-1)
    per = (1.0 - eps) * nll + eps * smooth
    out = np.asarray((per * m).sum() / n, dtype=logits.data.dtype)

    def backward(g):
        q = np.full_like(flat, eps / V)
        q[rows, t] += 1.0 - eps
        gl = (np.exp(lp) - q) * (m[:, None] * (g / n))
        return (gl.reshape(logits.shape),)

    return _make(out, (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict = field(default_factory=dict)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare tape gradients of the scalar ``f()`` with central differences.

    ``f`` must be deterministic (re-seed any dropout inside it).  With
    ``max_entries`` only that many randomly chosen entries per parameter are
    probed.
    """
    for p in params:
        p.zero_grad()
    f().backward()
    analytic = {id(p): p.grad.copy() for p in params}
    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(0.0)
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            num = np.empty(len(idx))
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                fp = f().item()
                flat[i] = orig - eps
                fm = f().item()
                flat[i] = orig
                num[k] = (fp - fm) / (2 * eps)
            err = relative_error(analytic[id(p)].reshape(-1)[idx], num)
            worst = float(err.max()) if err.size else 0.0
            report.per_param[p.name or str(id(p))] = worst
            report.max_rel_error = max(report.max_rel_error, worst)
    for p in params:
        p.zero_grad()
    return report
