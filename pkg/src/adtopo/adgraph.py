"""Tape-based reverse-mode automatic differentiation over dense arrays.

Values are scalars, vectors or matrices. Every primitive application is
recorded as one node on a :class:`Tape` (assembly and solves are single
nodes, not scalar graphs), and :meth:`Tape.backward` sweeps the tape in
reverse applying each primitive's vector-Jacobian product.

Calling a primitive on plain numpy inputs evaluates it without recording,
so the same model code runs both traced and untraced::

    >>> f = lambda x: sum(x * x)
    >>> value_and_grad(f, np.array([1.0, 2.0]))
    (5.0, array([2., 4.]))
"""
from __future__ import annotations

import numbers
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import scipy.linalg
import scipy.sparse

from . import kernels


class ADError(Exception):
    """Base class for errors raised while tracing or differentiating."""


class ShapeError(ADError, ValueError):
    pass


class UnknownPrimitiveError(ADError, KeyError):
    pass


class NonFiniteError(ADError, FloatingPointError):
    pass


class SingularSystemError(ADError, np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------------------
# low-rank cotangents


class LowRank:
    """Matrix held as ``left @ right.T``.

    Cotangents of matrix inputs to solves and matrix-vector products are sums
    of outer products. Keeping them factored means the backward pass through
    assembly only evaluates the entries it gathers.
    """

    __slots__ = ("left", "right")

    def __init__(self, left, right):
        self.left = np.atleast_2d(np.asarray(left, dtype=float).T).T
        self.right = np.atleast_2d(np.asarray(right, dtype=float).T).T

    @property
    def shape(self):
        return (self.left.shape[0], self.right.shape[0])

    def dense(self):
        return self.left @ self.right.T

    def take(self, rows, cols):
        return kernels.gather_lowrank(self.left, self.right, rows, cols)

    def __add__(self, other):
        if isinstance(other, LowRank):
            return LowRank(np.hstack([self.left, other.left]),
                           np.hstack([self.right, other.right]))
        return self.dense() + other

    __radd__ = __add__

    def __neg__(self):
        return LowRank(-self.left, self.right)

    def __mul__(self, c):
        if np.ndim(c) == 0:
            return LowRank(self.left * c, self.right)
        return self.dense() * c

    __rmul__ = __mul__


def _dense(g):
    return g.dense() if isinstance(g, LowRank) else g


def _accumulate(a, b):
    if a is None:
        return b
    if isinstance(a, LowRank):
        return a + b
    if isinstance(b, LowRank):
        return b + a
    return a + b


def _unbroadcast(g, shape):
    g = _dense(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive registry


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable[..., Any]
    vjp: Callable[..., tuple]
    check: Callable[..., None] | None = None


PRIMITIVES: dict[str, Primitive] = {}


def _register(name, forward, vjp, check=None):
    PRIMITIVES[name] = Primitive(name, forward, vjp, check)


def _broadcast_check(name):
    def check(sa, sb, **_):
        try:
            np.broadcast_shapes(sa, sb)
        except ValueError:
            raise ShapeError(f"{name}: cannot combine shapes {sa} and {sb}") from None
    return check


_register("add", lambda a, b: a + b,
          lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
          _broadcast_check("add"))
_register("sub", lambda a, b: a - b,
          lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
          _broadcast_check("sub"))
_register("mul", lambda a, b: a * b,
          lambda g, out, a, b: (_unbroadcast(_dense(g) * b, a.shape),
                                _unbroadcast(_dense(g) * a, b.shape)),
          _broadcast_check("mul"))
_register("divide", lambda a, b: a / b,
          lambda g, out, a, b: (_unbroadcast(_dense(g) / b, a.shape),
                                _unbroadcast(-_dense(g) * out / b, b.shape)),
          _broadcast_check("divide"))
_register("neg", lambda a: -a, lambda g, out, a: (-g,))
_register("power", lambda a, p: a ** p,
          lambda g, out, a, p: (_dense(g) * p * a ** (p - 1),))
_register("tanh", np.tanh, lambda g, out, a: (_dense(g) * (1.0 - out * out),))


def _sum_vjp(g, out, a, axis=None):
    g = _dense(g)
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


_register("sum", lambda a, axis=None: np.sum(a, axis=axis), _sum_vjp)
_register("mean", lambda a, axis=None: np.mean(a, axis=axis),
          lambda g, out, a, axis=None: (
              _sum_vjp(g, out, a, axis)[0] / (a.size if axis is None else a.shape[axis]),))


def _check_dot(sa, sb):
    if len(sa) != 1 or sa != sb:
        raise ShapeError(f"dot: expected two vectors of equal length, got {sa} and {sb}")


_register("dot", lambda a, b: np.dot(a, b),
          lambda g, out, a, b: (g * b, g * a), _check_dot)


def _check_outer(sa, sb):
    if len(sa) != 1 or len(sb) != 1:
        raise ShapeError(f"outer: expected two vectors, got {sa} and {sb}")


_register("outer", np.outer,
          lambda g, out, a, b: ((_dense(g) @ b), (_dense(g).T @ a)), _check_outer)


def _check_matmul(sa, sb):
    if len(sa) not in (1, 2) or len(sb) not in (1, 2) or sa[-1] != sb[0]:
        raise ShapeError(f"matmul: incompatible shapes {sa} @ {sb}")


def _matmul_vjp(g, out, a, b):
    g = _dense(g)
    if a.ndim == 2 and b.ndim == 1:
        return LowRank(g, b), a.T @ g
    if a.ndim == 1 and b.ndim == 2:
        return b @ g, np.outer(a, g)
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    return g @ b.T, a.T @ g


_register("matmul", lambda a, b: a @ b, _matmul_vjp, _check_matmul)


def _check_matvec(sa, sx):
    if len(sa) != 2 or len(sx) != 1 or sa[1] != sx[0]:
        raise ShapeError(f"matvec: expected matrix(m,n) and vector(n), got {sa} and {sx}")


_register("matvec", lambda a, x: a @ x,
          lambda g, out, a, x: (LowRank(_dense(g), x), a.T @ _dense(g)), _check_matvec)


def _check_sparse_matvec(sx, matrix):
    if len(sx) != 1 or matrix.shape[1] != sx[0]:
        raise ShapeError(f"matvec: operator {matrix.shape} cannot act on vector {sx}")


_register("sparse_matvec", lambda x, matrix: matrix @ x,
          lambda g, out, x, matrix: (matrix.T @ _dense(g),), _check_sparse_matvec)


def _check_scatter(sbase, svals, idx):
    if len(sbase) == 1:
        if np.shape(idx) != svals:
            raise ShapeError(f"scatter_add: index shape {np.shape(idx)} != values shape {svals}")
    elif len(sbase) == 2:
        if len(idx) != 2 or np.shape(idx[0]) != svals or np.shape(idx[1]) != svals:
            raise ShapeError("scatter_add: matrix base needs (rows, cols) shaped like values")
    else:
        raise ShapeError("scatter_add: base must be a vector or a matrix")


def _scatter_forward(base, vals, idx):
    out = np.array(base, dtype=float, copy=True)
    if out.ndim == 1:
        kernels.scatter_add_vector(out, idx, vals)
    else:
        kernels.scatter_add_matrix(out, idx[0], idx[1], vals)
    return out


def _gather_from(g, idx):
    if isinstance(g, LowRank):
        return g.take(idx[0], idx[1])
    if g.ndim == 1:
        return kernels.gather_vector(g, idx)
    return kernels.gather_matrix(g, idx[0], idx[1])


_register("scatter_add", _scatter_forward,
          lambda g, out, base, vals, idx: (g, _gather_from(g, idx)), _check_scatter)


def _check_gather(sx, idx):
    if len(sx) == 1:
        if isinstance(idx, tuple):
            raise ShapeError("gather: vector source takes a single index array")
    elif len(sx) == 2:
        if len(idx) != 2 or np.shape(idx[0]) != np.shape(idx[1]):
            raise ShapeError("gather: matrix source takes (rows, cols) of equal shape")
    else:
        raise ShapeError("gather: source must be a vector or a matrix")


def _gather_vjp(g, out, x, idx):
    base = np.zeros(x.shape)
    return (_scatter_forward(base, _dense(g), idx),)


_register("gather", lambda x, idx: _gather_from(x, idx), _gather_vjp, _check_gather)


def _pnorm_forward(x, p):
    ax = np.abs(x)
    top = ax.max()
    if top == 0.0:
        return np.float64(0.0)
    return top * np.sum((ax / top) ** p) ** (1.0 / p)


def _pnorm_vjp(g, out, x, p):
    if out == 0.0:
        return (np.zeros_like(x),)
    return (g * np.sign(x) * (np.abs(x) / out) ** (p - 1.0),)


def _check_pnorm(sx, p):
    if len(sx) != 1:
        raise ShapeError(f"pnorm: expected a vector, got shape {sx}")
    if p < 1:
        raise ValueError(f"pnorm: exponent must be >= 1, got {p}")


_register("pnorm", _pnorm_forward, _pnorm_vjp, _check_pnorm)


def _check_solve(sa, sb, **_):
    if len(sa) != 2 or sa[0] != sa[1]:
        raise ShapeError(f"linear_solve: system matrix must be square, got {sa}")
    if len(sb) not in (1, 2) or sb[0] != sa[0]:
        raise ShapeError(f"linear_solve: right-hand side {sb} does not match {sa}")


_COUNTERS: list[dict] = []


@contextmanager
def count_solves():
    """Count factorizations and triangular solves made inside the block."""
    counts = {"factorizations": 0, "solves": 0}
    _COUNTERS.append(counts)
    try:
        yield counts
    finally:
        _COUNTERS.remove(counts)


def _bump(key):
    for c in _COUNTERS:
        c[key] += 1


def factorize(a, stats=None):
    """Cholesky factor of an SPD matrix with a pivot-size singularity test."""
    n = a.shape[0]
    try:
        c, lower = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise SingularSystemError(
            "linear_solve: system matrix is singular or not positive definite") from None
    pivots = np.diag(c) ** 2
    tol = n * np.finfo(float).eps * np.max(np.abs(np.diag(a)))
    if pivots.min() <= tol:
        raise SingularSystemError(
            f"linear_solve: system matrix is numerically singular "
            f"(pivot {pivots.min():.3e} <= {tol:.3e})")
    if stats is not None:
        stats["factorizations"] += 1
    _bump("factorizations")
    return c, lower


def cho_solve(factor, b, stats=None):
    if stats is not None:
        stats["solves"] += 1
    _bump("solves")
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def _solve_forward(a, b, factor=None, stats=None, symmetric=False):
    return cho_solve(factor if factor is not None else factorize(a, stats), b, stats)


def _solve_vjp(g, out, a, b, factor=None, stats=None, symmetric=False):
    lam = cho_solve(factor, _dense(g), stats)
    u = out
    if symmetric:
        grad_a = LowRank(np.column_stack([-0.5 * lam, -0.5 * u]), np.column_stack([u, lam]))
    else:
        grad_a = LowRank(-lam, u)
    return grad_a, lam


_register("linear_solve", _solve_forward, _solve_vjp, _check_solve)


# ---------------------------------------------------------------------------
# tape


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    output: int
    params: dict = field(default_factory=dict)


class DiffValue:
    """Handle to a recorded value; supports arithmetic operators."""

    __array_ufunc__ = None

    def __init__(self, tape, id, primal, requires_grad):
        self.tape = tape
        self.id = id
        self.primal = primal
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.primal.shape

    @property
    def ndim(self):
        return self.primal.ndim

    @property
    def size(self):
        return self.primal.size

    def __len__(self):
        return self.primal.shape[0]

    def __repr__(self):
        return f"DiffValue(id={self.id}, shape={self.shape})"

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return divide(self, o)
    def __rtruediv__(self, o): return divide(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)

    def __getitem__(self, idx):
        # numpy semantics here (negative counts from the end); the gather
        # primitive itself treats negative indices as "no target"
        if isinstance(idx, tuple):
            return gather(self, tuple(np.asarray(i) % n for i, n in zip(idx, self.shape)))
        picked = np.arange(self.shape[0])[idx]
        out = gather(self, np.atleast_1d(picked))
        return out if np.ndim(picked) else sum(out)


class Tape:
    """Ordered record of primitive applications (single writer)."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.values: list[DiffValue] = []
        self.stats = {"factorizations": 0, "solves": 0}
        self._factors: dict[int, tuple] = {}

    def __len__(self):
        return len(self.nodes)

    def release(self):
        """Drop recorded values and factorizations (breaks the tape/value cycle)."""
        self.nodes.clear()
        self.values.clear()
        self._factors.clear()

    def _push(self, kind, inputs, primal, requires_grad, params=None):
        primal = np.asarray(primal, dtype=float)
        if primal.ndim > 2:
            raise ShapeError(f"{kind}: values must be scalar, vector or matrix")
        nid = len(self.values)
        if not np.all(np.isfinite(primal)):
            raise NonFiniteError(f"node {nid} ({kind}) produced non-finite values")
        value = DiffValue(self, nid, primal, requires_grad)
        self.values.append(value)
        self.nodes.append(Node(kind, tuple(inputs), nid, params or {}))
        return value

    def variable(self, x) -> DiffValue:
        return self._push("variable", (), np.array(x, dtype=float), True)

    def constant(self, x) -> DiffValue:
        return self._push("constant", (), np.array(x, dtype=float), False)

    def _lift(self, x):
        if isinstance(x, DiffValue):
            if x.tape is not self:
                raise ADError("cannot mix values from different tapes")
            return x
        return self.constant(x)

    def record(self, kind: str, inputs, **params) -> DiffValue:
        """Apply primitive ``kind`` to ``inputs`` and append it to the tape."""
        prim = PRIMITIVES.get(kind)
        if prim is None:
            raise UnknownPrimitiveError(f"unknown primitive kind {kind!r}")
        values = [self._lift(x) for x in inputs]
        primals = [v.primal for v in values]
        if prim.check is not None:
            prim.check(*[p.shape for p in primals], **params)
        if kind == "linear_solve":
            a = values[0]
            if a.id not in self._factors:
                self._factors[a.id] = factorize(a.primal, self.stats)
            params = dict(params, factor=self._factors[a.id], stats=self.stats)
        out = prim.forward(*primals, **params)
        return self._push(kind, [v.id for v in values], out,
                          any(v.requires_grad for v in values), params)

    def backward(self, output: DiffValue, seed=None) -> dict[int, Any]:
        """Reverse sweep from ``output``; returns cotangents keyed by node id."""
        if output.tape is not self:
            raise ADError("output does not belong to this tape")
        if seed is None:
            if output.shape != ():
                raise ShapeError("backward: a seed is required for non-scalar outputs")
            seed = np.float64(1.0)
        cot: dict[int, Any] = {output.id: np.asarray(seed, dtype=float)}
        for node in reversed(self.nodes[: output.id + 1]):
            g = cot.get(node.output)
            if g is None or not node.inputs:
                continue
            ins = [self.values[i] for i in node.inputs]
            if not any(v.requires_grad for v in ins):
                continue
            prim = PRIMITIVES[node.kind]
            grads = prim.vjp(g, self.values[node.output].primal,
                             *[v.primal for v in ins], **node.params)
            for v, gi in zip(ins, grads):
                if v.requires_grad and gi is not None:
                    cot[v.id] = _accumulate(cot.get(v.id), gi)
        return cot

    def _peel_scalings(self, output: DiffValue):
        """Strip trailing ``constant * value`` nodes off a scalar output."""
        factors = []
        while output.shape == ():
            node = self.nodes[output.id]
            if node.kind != "mul":
                break
            a, b = (self.values[i] for i in node.inputs)
            if not a.requires_grad and a.shape == () and b.requires_grad:
                factors.append(a.primal)
                output = b
            elif not b.requires_grad and b.shape == () and a.requires_grad:
                factors.append(b.primal)
                output = a
            else:
                break
        return output, factors

    def gradient(self, output: DiffValue, wrt: DiffValue):
        # apply outer scalings last so grad(c * f) == c * grad(f) bit for bit
        inner, factors = self._peel_scalings(output)
        g = self.backward(inner).get(wrt.id)
        if g is None:
            return np.zeros(wrt.shape)
        g = np.asarray(_dense(g), dtype=float).reshape(wrt.shape)
        for c in reversed(factors):
            g = c * g
        return g

    def replay(self) -> list[np.ndarray]:
        """Re-run every forward rule from the recorded leaves."""
        primals: list[np.ndarray] = []
        factors: dict[int, tuple] = {}
        for node in self.nodes:
            if not node.inputs:
                primals.append(self.values[node.output].primal.copy())
                continue
            args = [primals[i] for i in node.inputs]
            params = dict(node.params)
            if node.kind == "linear_solve":
                aid = node.inputs[0]
                if aid not in factors:
                    factors[aid] = factorize(args[0])
                params.update(factor=factors[aid], stats=None)
            primals.append(np.asarray(PRIMITIVES[node.kind].forward(*args, **params),
                                      dtype=float))
        return primals


# ---------------------------------------------------------------------------
# functional front end


def _tape_of(args):
    tape = None
    for a in args:
        if isinstance(a, DiffValue):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ADError("cannot mix values from different tapes")
    return tape


def record_primitive(kind, inputs, tape=None, **params):
    """Apply a primitive, recording it when any input is traced."""
    tape = tape or _tape_of(inputs)
    if tape is None:
        prim = PRIMITIVES.get(kind)
        if prim is None:
            raise UnknownPrimitiveError(f"unknown primitive kind {kind!r}")
        arrays = [np.asarray(x, dtype=float) for x in inputs]
        if prim.check is not None:
            prim.check(*[a.shape for a in arrays], **params)
        return prim.forward(*arrays, **params)
    return tape.record(kind, inputs, **params)


def add(a, b): return record_primitive("add", [a, b])
def sub(a, b): return record_primitive("sub", [a, b])
def mul(a, b): return record_primitive("mul", [a, b])
def divide(a, b): return record_primitive("divide", [a, b])
def neg(a): return record_primitive("neg", [a])
def tanh(a): return record_primitive("tanh", [a])
def dot(a, b): return record_primitive("dot", [a, b])
def outer(a, b): return record_primitive("outer", [a, b])
def matmul(a, b): return record_primitive("matmul", [a, b])


def power(a, p):
    return record_primitive("power", [a], p=float(p))


def sum(a, axis=None):  # noqa: A001 - mirrors numpy
    return record_primitive("sum", [a], axis=axis)


def mean(a, axis=None):
    return record_primitive("mean", [a], axis=axis)


def matvec(a, x):
    """``a @ x``; ``a`` may be a constant scipy sparse operator."""
    if scipy.sparse.issparse(a):
        return record_primitive("sparse_matvec", [x], matrix=a.tocsr())
    return record_primitive("matvec", [a, x])


def _as_index(idx):
    if isinstance(idx, tuple):
        return tuple(np.asarray(i, dtype=np.int64) for i in idx)
    return np.asarray(idx, dtype=np.int64)


def scatter_add(base, idx, vals):
    """Accumulate ``vals`` into a copy of ``base``; negative indices are dropped.

    ``idx`` is an index array shaped like ``vals`` for vector bases, or a
    ``(rows, cols)`` pair for matrix bases. Duplicates accumulate.
    """
    return record_primitive("scatter_add", [base, vals], idx=_as_index(idx))


def gather(x, idx):
    """Select entries of ``x``; negative indices read as zero."""
    return record_primitive("gather", [x], idx=_as_index(idx))


def pnorm(x, p):
    return record_primitive("pnorm", [x], p=float(p))


def linear_solve(a, b, symmetric=False):
    """Solve ``a u = b`` for SPD ``a``; factorizations are shared per matrix node."""
    return record_primitive("linear_solve", [a, b], symmetric=symmetric)


def primal(x):
    """Numeric value of a traced or plain input."""
    return x.primal if isinstance(x, DiffValue) else np.asarray(x, dtype=float)


def value_and_grad(f, x, *args, **kwargs):
    """Evaluate scalar ``f(x, *args)`` and its gradient by one reverse sweep."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("value_and_grad: input contains non-finite values")
    tape = Tape()
    try:
        xv = tape.variable(x)
        out = f(xv, *args, **kwargs)
        if not isinstance(out, DiffValue):
            out = np.asarray(out, dtype=float)
            if out.shape != ():
                raise ShapeError(f"value_and_grad: function must return a scalar, got {out.shape}")
            return float(out), np.zeros_like(x)
        if out.shape != ():
            raise ShapeError(f"value_and_grad: function must return a scalar, got {out.shape}")
        return float(out.primal), tape.gradient(out, xv)
    finally:
        tape.release()
