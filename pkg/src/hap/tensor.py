"""Dense-matrix reverse-mode differentiation.

Every value in the model is a :class:`DiffMatrix`, a 2-D float64 array.
Operations on matrices that require gradients are appended to a
:class:`Tape`; :func:`backward` sweeps the tape once in reverse order.

A tape belongs to one thread. Open one per training example::

    with Tape():
        loss = model_loss(...)
    grads = backward(loss)
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

LEAKY_SLOPE = 0.01


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class DomainError(ValueError):
    """An input lies outside a primitive's domain (e.g. log of a non-positive value)."""


class TapeError(RuntimeError):
    pass


_state = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_state, "tape", None)


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable recording on the current thread."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class _Record:
    __slots__ = ("op", "out", "inputs", "backward")

    def __init__(self, op, out, inputs, backward):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive applications.

    Used as a context manager it becomes the thread's active tape, so ops
    whose inputs are all leaves (parameters, constants) are recorded here.
    """

    def __init__(self, implicit: bool = False):
        self.records: list[_Record] = []
        self._prev = None
        self.implicit = implicit

    def __len__(self):
        return len(self.records)

    def __enter__(self):
        self._prev = _active_tape()
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev
        self._prev = None
        return False

    def _append(self, op, out, inputs, backward):
        out.tape = self
        out.index = len(self.records)
        self.records.append(_Record(op, out, inputs, backward))

    def _absorb(self, other: "Tape") -> None:
        # records of an independent tape can go after ours without breaking order
        for rec in other.records:
            self._append(rec.op, rec.out, rec.inputs, rec.backward)
        other.records = []


class DiffMatrix:
    """A dense float64 matrix that may take part in a recorded computation."""

    __slots__ = ("value", "requires_grad", "tape", "index", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"DiffMatrix needs a 2-D value, got {arr.ndim} dimensions")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"DiffMatrix needs at least one row and column, got {arr.shape}")
        self.value = arr
        self.requires_grad = bool(requires_grad)
        self.tape = None
        self.index = -1
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "DiffMatrix":
        out = cls.__new__(cls)
        out.value = arr
        out.requires_grad = False
        out.tape = None
        out.index = -1
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def is_leaf(self) -> bool:
        return self.tape is None

    @property
    def T(self) -> "DiffMatrix":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.value[0, 0])

    def detach(self) -> "DiffMatrix":
        return DiffMatrix._wrap(self.value)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffMatrix({self.value!r}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(other, self)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def as_matrix(x) -> DiffMatrix:
    """Wrap arrays and scalars as constant matrices; pass matrices through."""
    if isinstance(x, DiffMatrix):
        return x
    return DiffMatrix(x)


def const(x) -> DiffMatrix:
    return DiffMatrix(x)


def param(x, name: str | None = None) -> DiffMatrix:
    return DiffMatrix(x, requires_grad=True, name=name)


def _record(op: str, value: np.ndarray, inputs: tuple, backward: Callable) -> DiffMatrix:
    out = DiffMatrix._wrap(value)
    if not _grad_enabled() or not any(i.requires_grad for i in inputs):
        return out
    tapes = list({id(i.tape): i.tape for i in inputs if i.tape is not None}.values())
    if len(tapes) > 1:
        explicit = [t for t in tapes if not t.implicit]
        if len(explicit) > 1:
            raise TapeError(f"{op}: inputs were recorded on different tapes; wrap the computation in one Tape()")
        # tapes started outside any Tape() context are merged on first contact
        tape = explicit[0] if explicit else max(tapes, key=len)
        for other in tapes:
            if other is not tape:
                tape._absorb(other)
    elif tapes:
        tape = tapes[0]
    else:
        tape = _active_tape()
        if tape is None:
            tape = Tape(implicit=True)
    out.requires_grad = True
    tape._append(op, out, inputs, backward)
    return out


def _same_shape(op: str, a: DiffMatrix, b: DiffMatrix):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> DiffMatrix:
    a, b = as_matrix(a), as_matrix(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _record("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a) -> DiffMatrix:
    a = as_matrix(a)
    return _record("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def add(a, b) -> DiffMatrix:
    a, b = as_matrix(a), as_matrix(b)
    _same_shape("add", a, b)
    return _record("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> DiffMatrix:
    a, b = as_matrix(a), as_matrix(b)
    _same_shape("sub", a, b)
    return _record("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> DiffMatrix:
    """Elementwise product."""
    a, b = as_matrix(a), as_matrix(b)
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _record("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c: float) -> DiffMatrix:
    a = as_matrix(a)
    c = float(c)
    return _record("scale", a.value * c, (a,), lambda g: (g * c,))


def row_softmax(a, mask=None) -> DiffMatrix:
    """Softmax along each row, optionally restricted to ``mask`` entries.

    Masked-out entries are exactly zero. Each row needs at least one
    unmasked entry.
    """
    a = as_matrix(a)
    x = a.value
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"row_softmax: mask shape {mask.shape} != {x.shape}")
        if not mask.any(axis=1).all():
            raise DomainError("row_softmax: a row has no unmasked entries")
        x = np.where(mask, x, -np.inf)
    z = np.exp(x - x.max(axis=1, keepdims=True))
    y = z / z.sum(axis=1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _record("row_softmax", y, (a,), back)


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> DiffMatrix:
    a = as_matrix(a)
    x = a.value
    d = np.where(x >= 0, 1.0, slope)
    return _record("leaky_relu", x * d, (a,), lambda g: (g * d,))


def relu(a) -> DiffMatrix:
    a = as_matrix(a)
    pos = a.value > 0
    return _record("relu", np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,))


def sigmoid(a) -> DiffMatrix:
    a = as_matrix(a)
    x = a.value
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a) -> DiffMatrix:
    a = as_matrix(a)
    y = np.exp(a.value)
    return _record("exp", y, (a,), lambda g: (g * y,))


def log(a) -> DiffMatrix:
    a = as_matrix(a)
    x = a.value
    if not (x > 0).all():
        raise DomainError(f"log: input has non-positive entries (min {x.min():.3g}); clamp first")
    return _record("log", np.log(x), (a,), lambda g: (g / x,))


def sqrt(a) -> DiffMatrix:
    """Elementwise square root; the derivative at 0 is taken as 0."""
    a = as_matrix(a)
    x = a.value
    if (x < 0).any():
        raise DomainError(f"sqrt: input has negative entries (min {x.min():.3g})")
    y = np.sqrt(x)
    safe = np.where(y > 0, y, 1.0)
    return _record("sqrt", y, (a,), lambda g: (np.where(y > 0, g / (2.0 * safe), 0.0),))


def clamp(a, lo: float = -np.inf, hi: float = np.inf) -> DiffMatrix:
    """Clip into [lo, hi]; gradient flows only through unclipped entries."""
    a = as_matrix(a)
    x = a.value
    y = np.clip(x, lo, hi)
    inside = (x >= lo) & (x <= hi)
    return _record("clamp", y, (a,), lambda g: (g * inside,))


def hconcat(parts: Sequence) -> DiffMatrix:
    """Join matrices side by side (row vectors become one longer row vector)."""
    parts = tuple(as_matrix(p) for p in parts)
    if not parts:
        raise ShapeError("hconcat: nothing to concatenate")
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"hconcat: row counts differ {sorted(rows)}")
    edges = np.cumsum([0] + [p.cols for p in parts])

    def back(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return _record("hconcat", np.hstack([p.value for p in parts]), parts, back)


def vstack(parts: Sequence) -> DiffMatrix:
    """Stack matrices (typically row vectors) on top of each other."""
    parts = tuple(as_matrix(p) for p in parts)
    if not parts:
        raise ShapeError("vstack: nothing to stack")
    cols = {p.cols for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"vstack: column counts differ {sorted(cols)}")
    edges = np.cumsum([0] + [p.rows for p in parts])

    def back(g):
        return tuple(g[edges[i]:edges[i + 1]] for i in range(len(parts)))

    return _record("vstack", np.vstack([p.value for p in parts]), parts, back)


def row_sum(a) -> DiffMatrix:
    """n x m -> n x 1."""
    a = as_matrix(a)
    m = a.cols
    return _record("row_sum", a.value.sum(axis=1, keepdims=True), (a,),
                   lambda g: (np.repeat(g, m, axis=1),))


def row_mean(a) -> DiffMatrix:
    """n x m -> n x 1."""
    a = as_matrix(a)
    m = a.cols
    return _record("row_mean", a.value.mean(axis=1, keepdims=True), (a,),
                   lambda g: (np.repeat(g / m, m, axis=1),))


def col_sum(a) -> DiffMatrix:
    """n x m -> 1 x m."""
    a = as_matrix(a)
    n = a.rows
    return _record("col_sum", a.value.sum(axis=0, keepdims=True), (a,),
                   lambda g: (np.repeat(g, n, axis=0),))


def col_mean(a) -> DiffMatrix:
    """n x m -> 1 x m (mean over rows)."""
    a = as_matrix(a)
    n = a.rows
    return _record("col_mean", a.value.mean(axis=0, keepdims=True), (a,),
                   lambda g: (np.repeat(g / n, n, axis=0),))


def sum_all(a) -> DiffMatrix:
    a = as_matrix(a)
    shape = a.shape
    return _record("sum_all", a.value.sum().reshape(1, 1), (a,),
                   lambda g: (np.full(shape, g[0, 0]),))


def broadcast_rows(a, n: int) -> DiffMatrix:
    """Repeat a 1 x m row vector n times -> n x m."""
    a = as_matrix(a)
    if a.rows != 1:
        raise ShapeError(f"broadcast_rows: expected a row vector, got {a.shape}")
    return _record("broadcast_rows", np.repeat(a.value, n, axis=0), (a,),
                   lambda g: (g.sum(axis=0, keepdims=True),))


def add_row(a, v) -> DiffMatrix:
    """Add row vector ``v`` to every row of ``a``."""
    a = as_matrix(a)
    return add(a, broadcast_rows(v, a.rows))


# ---------------------------------------------------------------------------
# reverse sweep


def backward(loss: DiffMatrix) -> dict:
    """Gradients of a 1x1 ``loss`` with respect to every reachable leaf.

    Returns a dict ``{leaf: DiffMatrix}``. Leaves that do not influence the
    loss are absent.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward: loss must be 1x1, got {loss.shape}")
    if not loss.requires_grad:
        return {}
    if loss.tape is None:
        # the loss itself is a leaf parameter
        return {loss: DiffMatrix(np.ones((1, 1)))}
    tape = loss.tape
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    leaves: dict[int, DiffMatrix] = {}
    for rec in reversed(tape.records[: loss.index + 1]):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if inp.tape is None:
                leaves[key] = inp
    return {leaf: DiffMatrix._wrap(np.array(grads[key], dtype=np.float64)) for key, leaf in leaves.items()}


def grad_check(f: Callable[[], DiffMatrix], params, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the scalar loss from the current values of ``params``
    (one matrix or a sequence); the values are perturbed in place and
    restored afterwards.
    """
    if isinstance(params, DiffMatrix):
        params = [params]
    params = list(params)
    with Tape():
        loss = f()
    grads = backward(loss)
    worst = 0.0
    for p in params:
        analytic = grads[p].value if p in grads else np.zeros(p.shape)
        for idx in np.ndindex(p.shape):
            orig = p.value[idx]
            p.value[idx] = orig + h
            with no_grad():
                up = f().item()
            p.value[idx] = orig - h
            with no_grad():
                down = f().item()
            p.value[idx] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(analytic[idx] - numeric) / max(1.0, abs(analytic[idx]))
            worst = max(worst, err)
    return worst


def ones(rows: int, cols: int) -> DiffMatrix:
    return DiffMatrix._wrap(np.ones((rows, cols)))


def identity(n: int) -> DiffMatrix:
    return DiffMatrix._wrap(np.eye(n))

