"""Small float64 reverse-mode autodiff engine.

Every backward rule is written in terms of the same differentiable ops, so a
gradient computed with ``create_graph=True`` is itself an ordinary tape node
and can be differentiated again. That is what lets the meta-gradient flow
through a one-step lookahead ``w - alpha * grad(L(w; theta))`` back to theta.

Sparse matrices are constants: they never receive gradients.
"""
from __future__ import annotations

import contextlib
import struct
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import special

from .errors import ContractError, NestingError, NumericError, ShapeError

BCE_EPS = 1e-7

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = enabled
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 array plus the tape node that produced it."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op", "grad_origin")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite value in tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        # "retained" / "detached" for tensors returned by grad(); None otherwise
        self.grad_origin: str | None = None

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
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out.op = "leaf"
        out.grad_origin = None
        return out

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite output from {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    # taint survives constant arithmetic so nested_grad can spot a detached inner gradient
    out.grad_origin = "detached" if any(p.grad_origin == "detached" for p in parents) else None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


class SparseBool:
    """Constant CSR matrix used as the left operand of propagation ops.

    The pattern is boolean; an optional constant value per stored entry
    supports normalised propagation (e.g. symmetric GCN weights).
    """

    def __init__(self, matrix, values: np.ndarray | None = None):
        m = sp.csr_matrix(matrix, dtype=np.float64)
        m.sum_duplicates()
        m.sort_indices()
        m.eliminate_zeros()
        if values is None:
            m.data = np.ones_like(m.data)
        else:
            values = np.asarray(values, dtype=np.float64)
            if values.shape != m.data.shape:
                raise ShapeError("values must align with the stored entries")
            m.data = values.copy()
        self.matrix = m
        self._transpose: SparseBool | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @property
    def indptr(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.matrix.indices

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry, in storage order."""
        return np.repeat(np.arange(self.shape[0]), np.diff(self.matrix.indptr))

    def with_values(self, values: np.ndarray) -> SparseBool:
        return SparseBool(self.matrix, values)

    def transpose(self) -> SparseBool:
        if self._transpose is None:
            t = SparseBool.__new__(SparseBool)
            m = self.matrix.T.tocsr()
            m.sort_indices()
            t.matrix = m
            t._transpose = self
            self._transpose = t
        return self._transpose


# ---------------------------------------------------------------- broadcasting


def _sum_to(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra < 0:
        raise ShapeError(f"cannot reduce {g.shape} to {shape}")
    if extra:
        g = sum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    if axes:
        g = sum(g, axis=axes, keepdims=True)
    if g.shape != shape:
        g = reshape(g, shape)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _sum_to(g, a.shape), _sum_to(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _sum_to(g, a.shape), _sum_to(neg(g), b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        ga = _sum_to(mul(g, b), a.shape) if a.requires_grad else None
        gb = _sum_to(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (scale(g, c),), "scale")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")

    def backward(g):
        ga = _sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _sum_to(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data
    return _make(data, (a, b), backward, "div")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    out = None

    def backward(g):
        return (mul(g, out),)

    out = _make(data, (a,), backward, "exp")
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return _make(data, (a,), lambda g: (div(g, a),), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = np.asarray(special.expit(a.data), dtype=np.float64)
    out = None

    def backward(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _make(data, (a,), backward, "sigmoid")
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return _make(a.data * mask, (a,), lambda g: (mul(g, Tensor(mask)),), "relu")


def leaky_relu(a, negative_slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    slope = np.where(a.data > 0, 1.0, negative_slope)
    return _make(a.data * slope, (a,), lambda g: (mul(g, Tensor(slope)),), "leaky_relu")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    mask = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (mul(g, Tensor(mask)),), "clamp")


# ---------------------------------------------------------------- shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {shape}") from exc
    return _make(data, (a,), lambda g: (reshape(g, old),), "reshape")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return _make(a.data.T.copy(), (a,), lambda g: (transpose(g),), "transpose")


def expand(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"cannot expand {a.shape} to {shape}") from exc
    return _make(data, (a,), lambda g: (_sum_to(g, a.shape),), "expand")


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    data = np.sum(a.data, axis=axis, keepdims=keepdims)
    in_shape = a.shape

    def backward(g):
        if keepdims:
            kept = g
        elif axis is None:
            kept = reshape(g, (1,) * len(in_shape))
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(ax % len(in_shape) for ax in axes)
            kshape = tuple(1 if i in axes else n for i, n in enumerate(in_shape))
            kept = reshape(g, kshape)
        return (expand(kept, in_shape),)

    return _make(np.asarray(data, dtype=np.float64), (a,), backward, "sum")


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    return scale(sum(a, axis=axis), 1.0 / n)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("slice_cols expects a matrix")
    n_rows, n_cols = a.shape

    def backward(g):
        parts = []
        if start > 0:
            parts.append(zeros((n_rows, start)))
        parts.append(g)
        if stop < n_cols:
            parts.append(zeros((n_rows, n_cols - stop)))
        return (concat(parts, axis=1) if len(parts) > 1 else g,)

    return _make(a.data[:, start:stop].copy(), (a,), backward, "slice_cols")


def _slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if axis == 1:
        return slice_cols(a, start, stop)
    idx = np.arange(start, stop)
    return row_gather(a, idx)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of nothing")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])
    ax = axis % data.ndim

    def backward(g):
        return tuple(
            _slice_axis(g, ax, int(bounds[i]), int(bounds[i + 1])) if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return _make(data, tensors, backward, "concat")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def sparse_dense_matmul(A: SparseBool, x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or A.shape[1] != x.shape[0]:
        raise ShapeError(f"sparse_dense_matmul: {A.shape} @ {x.shape}")
    data = np.asarray(A.matrix @ x.data)
    return _make(data, (x,), lambda g: (sparse_dense_matmul(A.transpose(), g),), "spmm")


def row_gather(a, indices) -> Tensor:
    """``a[indices]`` along the first axis."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError("row_gather index out of range")
    n = a.shape[0]
    return _make(a.data[idx], (a,), lambda g: (segment_sum(g, idx, n),), "row_gather")


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """Scatter-add rows of ``a`` into ``num_segments`` buckets (adjoint of row_gather)."""
    a = as_tensor(a)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != a.shape[0]:
        raise ShapeError("segment_sum: one segment id per row required")
    out = np.zeros((num_segments,) + a.shape[1:])
    np.add.at(out, seg, a.data)
    return _make(out, (a,), lambda g: (row_gather(g, seg),), "segment_sum")


# ---------------------------------------------------------------- composites


def softmax(logits) -> Tensor:
    """Row-wise softmax of a matrix."""
    logits = as_tensor(logits)
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    e = exp(sub(logits, shift))
    return div(e, sum(e, axis=1, keepdims=True))


def neighbor_softmax(scores, pattern: SparseBool) -> Tensor:
    """Softmax of per-edge scores over each row's stored entries."""
    scores = as_tensor(scores)
    if scores.shape != (pattern.nnz,):
        raise ShapeError("neighbor_softmax expects one score per stored entry")
    rows = pattern.row_ids()
    n = pattern.shape[0]
    row_max = np.full(n, -np.inf)
    np.maximum.at(row_max, rows, scores.data)
    e = exp(sub(scores, Tensor(row_max[rows])))
    denom = segment_sum(e, rows, n)
    return div(e, row_gather(denom, rows))


def binary_cross_entropy(p, y) -> Tensor:
    """Per-sample BCE on probabilities, clamped into [eps, 1-eps]."""
    p, y = as_tensor(p), as_tensor(y)
    if p.shape != y.shape:
        raise ShapeError(f"binary_cross_entropy: {p.shape} vs {y.shape}")
    pc = clamp(p, BCE_EPS, 1.0 - BCE_EPS)
    return neg(add(mul(y, log(pc)), mul(sub(1.0, y), log(sub(1.0, pc)))))


def softmax_cross_entropy(logits, classes) -> Tensor:
    """Per-row cross-entropy of a logit matrix against integer classes."""
    logits = as_tensor(logits)
    classes = np.asarray(classes, dtype=np.int64)
    if logits.ndim != 2 or classes.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy: logits (N, C) and N classes required")
    if classes.size and (classes.min() < 0 or classes.max() >= logits.shape[1]):
        raise ShapeError("class index out of range")
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    shifted = sub(logits, shift)
    lse = log(sum(exp(shifted), axis=1))
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(classes)), classes] = 1.0
    picked = sum(mul(shifted, Tensor(onehot)), axis=1)
    return sub(lse, picked)


def nll_from_probs(probs, classes) -> Tensor:
    """Per-row ``-log p[class]`` for a matrix of probability vectors."""
    probs = as_tensor(probs)
    classes = np.asarray(classes, dtype=np.int64)
    onehot = np.zeros(probs.shape)
    onehot[np.arange(len(classes)), classes] = 1.0
    picked = sum(mul(probs, Tensor(onehot)), axis=1)
    return neg(log(clamp(picked, BCE_EPS, 1.0)))


# ---------------------------------------------------------------- gradients


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


def grad(output: Tensor, params: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Reverse-mode gradients of a scalar ``output`` w.r.t. ``params``.

    Parameters not reachable from ``output`` get an exact zero tensor.
    With ``create_graph`` the returned tensors stay on the tape so they can
    be differentiated again.
    """
    if output.size != 1 or output.ndim != 0:
        raise ContractError(f"grad needs a 0-d output, got shape {output.shape}")
    grads: dict[int, Tensor] = {}
    if output.requires_grad:
        order = _topo_order(output)
        grads[id(output)] = Tensor(1.0)
        with _grad_mode(create_graph):
            for node in reversed(order):
                g = grads.get(id(node))
                if g is None or node._backward is None:
                    continue
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else add(prev, pg)
    result = []
    for p in params:
        g = grads.get(id(p))
        if g is None:
            g = zeros(p.shape)
        elif not create_graph:
            g = g.detach()
        g.grad_origin = "retained" if create_graph else "detached"
        result.append(g)
    return result


def _check_nesting(root: Tensor) -> None:
    seen: set[int] = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.grad_origin == "detached":
            raise NestingError(
                "outer loss depends on a gradient computed without create_graph; "
                "recompute the inner gradient with create_graph=True"
            )
        stack.extend(node._parents)


def nested_grad(outer: Tensor, theta_params: Sequence[Tensor]) -> list[Tensor]:
    """Gradient of an outer loss that was built through a retained inner gradient.

    Raises NestingError when the outer graph contains an inner gradient that
    was computed without ``create_graph`` (the Theta path would silently vanish).
    """
    _check_nesting(outer)
    return grad(outer, theta_params)


# ---------------------------------------------------------------- checkpoints

_MAGIC = b"SLRC"
_VERSION = 1


def save_checkpoint(path, tensors: dict[str, Tensor | np.ndarray]) -> None:
    """Write named tensors in the flat little-endian checkpoint format."""
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(tensors))]
    for name, t in tensors.items():
        arr = np.array(t.data if isinstance(t, Tensor) else t, dtype="<f8", order="C")  # keeps 0-d shape
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != _VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(dims)
        pos += 8 * n
        out[name] = arr.astype(np.float64)
    return out


def parameters(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """Wrap arrays as fresh leaf tensors that require grad."""
    return {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}


def central_difference(fn: Callable[[], float], arr: np.ndarray, eps: float = 1e-5,
                       coords: Iterable[tuple] | None = None) -> np.ndarray:
    """Central finite differences of ``fn`` w.r.t. entries of ``arr`` (mutated in place, restored)."""
    out = np.zeros_like(arr)
    it = coords if coords is not None else np.ndindex(arr.shape)
    for idx in it:
        orig = arr[idx]
        arr[idx] = orig + eps
        f_plus = fn()
        arr[idx] = orig - eps
        f_minus = fn()
        arr[idx] = orig
        out[idx] = (f_plus - f_minus) / (2 * eps)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative discrepancy ``|a-b| / max(|a|, |b|)``; 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
