"""Tape-based reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every primitive application in execution order.
Tensors are immutable views of the values produced; gradients are computed
by walking the tape backwards and applying each primitive's vector-Jacobian
product.

Only scalar-times-tensor broadcasting is supported. Every other shape
coercion (reshape, gather, bias rows) must be spelled out explicitly.

Example::

    tape = Tape()
    x = tape.param(np.array(3.0), name="x")
    y = square(x)
    grads = tape.backward(y)
    grads[x]  # -> 6.0
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Raised when operand shapes are invalid for a primitive."""


class Tensor:
    """A value, optionally attached to a tape.

    The links back to the tape and to the producing node are weak, so a
    tape and everything it recorded is freed as soon as the caller drops
    the tape (no reference cycles to wait on).
    """

    __slots__ = ("data", "_tape", "requires_grad", "is_param", "name", "_node")
    __array_priority__ = 1000

    def __init__(self, data, tape=None, requires_grad=False, is_param=False, name=None, node=None):
        self.data = data
        self.tape = tape
        self.requires_grad = requires_grad
        self.is_param = is_param
        self.name = name
        self.node = node

    @property
    def tape(self):
        return self._tape() if self._tape is not None else None

    @tape.setter
    def tape(self, t):
        self._tape = weakref.ref(t) if t is not None else None

    @property
    def node(self):
        return self._node() if self._node is not None else None

    @node.setter
    def node(self, n):
        self._node = weakref.ref(n) if n is not None else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

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
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        raise TypeError("use gather() for indexing tape tensors")


@dataclass
class Primitive:
    name: str
    forward: Callable
    # vjp(g, out, operands, **attrs) -> list of gradients (None where not needed)
    vjp: Callable


@dataclass
class Node:
    primitive: Primitive
    operands: list
    output: Tensor
    attrs: dict = field(default_factory=dict)


PRIMITIVES: dict[str, Primitive] = {}


def register(name: str, forward: Callable, vjp: Callable) -> Primitive:
    """Add a primitive to the global registry (also used by the renderer)."""
    prim = Primitive(name, forward, vjp)
    PRIMITIVES[name] = prim
    return prim


class Tape:
    """Ordered record of primitive applications.

    Single writer. Nodes are appended in execution order, so operands
    always precede their consumers.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: list[Tensor] = []

    def param(self, value, name=None) -> Tensor:
        t = Tensor(_as_array(value), self, requires_grad=True, is_param=True, name=name)
        self.params.append(t)
        return t

    def const(self, value, name=None) -> Tensor:
        return Tensor(_as_array(value), self, name=name)

    def record(self, primitive, operands, **attrs) -> Tensor:
        prim = PRIMITIVES[primitive] if isinstance(primitive, str) else primitive
        ops = [self._wrap(o) for o in operands]
        out = prim.forward(*[o.data for o in ops], **attrs)
        out = np.asarray(out, dtype=np.float64)
        needs = any(o.requires_grad for o in ops)
        t = Tensor(out, self, requires_grad=needs)
        node = Node(prim, ops, t, attrs)
        t.node = node
        self.nodes.append(node)
        return t

    def _wrap(self, x) -> Tensor:
        if isinstance(x, Tensor):
            if x.tape is not None and x.tape is not self:
                raise ValueError("operand belongs to a different tape")
            return x
        return Tensor(_as_array(x), self)

    def backward(self, output: Tensor, wrt=None) -> dict:
        """Return ``{param: d(output)/d(param)}`` for every parameter leaf.

        ``wrt`` restricts the result to the given tensors. The tape itself
        is left untouched.
        """
        if output.data.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
        targets = self.params if wrt is None else list(wrt)
        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None or not node.output.requires_grad:
                continue
            parts = node.primitive.vjp(g, node.output.data, [o.data for o in node.operands],
                                       needs=[o.requires_grad for o in node.operands], **node.attrs)
            for op, part in zip(node.operands, parts):
                if part is None or not op.requires_grad:
                    continue
                key = id(op)
                if key in grads:
                    grads[key] = grads[key] + part
                else:
                    grads[key] = part
        return {t: grads.get(id(t), np.zeros_like(t.data)) for t in targets}

    def replay(self, values: dict | None = None) -> list[np.ndarray]:
        """Re-run every node's forward rule, optionally with new leaf values.

        Returns the recomputed outputs in tape order. Recorded tensors are
        not modified.
        """
        current: dict[int, np.ndarray] = {}
        if values:
            current.update({id(k): _as_array(v) for k, v in values.items()})
        outs = []
        for node in self.nodes:
            args = [current.get(id(o), o.data) for o in node.operands]
            out = np.asarray(node.primitive.forward(*args, **node.attrs), dtype=np.float64)
            current[id(node.output)] = out
            outs.append(out)
        return outs


def _as_array(x) -> np.ndarray:
    return np.array(x, dtype=np.float64) if not isinstance(x, np.ndarray) else x.astype(np.float64, copy=False)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            return x.tape
        if isinstance(x, (list, tuple)):
            for y in x:
                if isinstance(y, Tensor) and y.tape is not None:
                    return y.tape
    return None


def _same_shape(name, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


# --- primitive rules -------------------------------------------------------

def _add_fwd(a, b):
    _same_shape("add", a, b)
    return a + b


def _sub_fwd(a, b):
    _same_shape("sub", a, b)
    return a - b


def _mul_fwd(a, b):
    if a.ndim and b.ndim:
        _same_shape("mul", a, b)
    return a * b


def _mul_vjp(g, out, ops, needs):
    a, b = ops
    ga = gb = None
    if needs[0]:
        ga = g * b if a.ndim or not b.ndim else np.sum(g * b)
    if needs[1]:
        gb = g * a if b.ndim or not a.ndim else np.sum(g * a)
    return [ga, gb]


def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return a @ b


def _matmul_vjp(g, out, ops, needs):
    a, b = ops
    return [g @ b.T if needs[0] else None, a.T @ g if needs[1] else None]


def _spmm_apply(S, x):
    if x.ndim == 2:
        return np.asarray(S @ x)
    bsz, n, f = x.shape
    y = S @ x.transpose(1, 0, 2).reshape(n, bsz * f)
    return np.asarray(y).reshape(S.shape[0], bsz, f).transpose(1, 0, 2)


def _spmm_fwd(x, *, S):
    n = x.shape[0] if x.ndim == 2 else x.shape[1] if x.ndim == 3 else -1
    if n != S.shape[1]:
        raise ShapeError(f"spmm: operator {S.shape} cannot act on {x.shape}")
    return _spmm_apply(S, x)


def _spmm_vjp(g, out, ops, needs, *, S):
    return [_spmm_apply(S.T, g)]


def _sum_fwd(a, *, axis=None):
    return np.sum(a, axis=axis)


def _sum_vjp(g, out, ops, needs, *, axis=None):
    (a,) = ops
    if axis is not None:
        g = np.expand_dims(g, axis)
    return [np.broadcast_to(g, a.shape).copy()]


def _relu_vjp(g, out, ops, needs):
    # subgradient at 0 is 0
    return [g * (ops[0] > 0)]


def _sqrt_vjp(g, out, ops, needs):
    return [g * 0.5 / out]


def _smooth_l1_fwd(a):
    ab = np.abs(a)
    return np.where(ab < 1.0, 0.5 * a * a, ab - 0.5)


def _smooth_l1_vjp(g, out, ops, needs):
    a = ops[0]
    return [g * np.where(np.abs(a) < 1.0, a, np.sign(a))]


def _gather_fwd(a, *, idx):
    # idx == -1 yields zero rows
    if a.ndim == 0:
        raise ShapeError("gather: cannot index a scalar")
    if idx.size and (idx.max() >= a.shape[0] or idx.min() < -1):
        raise ShapeError(f"gather: index out of range for leading dim {a.shape[0]}")
    valid = idx >= 0
    out = a[np.where(valid, idx, 0)]
    if not valid.all():
        out = out * valid.reshape(valid.shape + (1,) * (a.ndim - 1))
    return out


def _scatter_rows(g, idx, n, trailing):
    valid = idx >= 0
    flat_idx = idx[valid]
    gv = g[valid]
    if not trailing:
        return np.bincount(flat_idx, weights=gv, minlength=n).astype(np.float64)
    out = np.zeros((n,) + trailing)
    np.add.at(out, flat_idx, gv)
    return out


def _gather_vjp(g, out, ops, needs, *, idx):
    a = ops[0]
    return [_scatter_rows(g, idx, a.shape[0], a.shape[1:])]


def _scatter_add_fwd(a, *, idx, n):
    if a.shape[: idx.ndim] != idx.shape:
        raise ShapeError(f"scatter_add: index shape {idx.shape} does not lead values {a.shape}")
    return _scatter_rows(a, idx, n, a.shape[idx.ndim:])


def _scatter_add_vjp(g, out, ops, needs, *, idx, n):
    return [_gather_fwd(g, idx=idx)]


def _reshape_fwd(a, *, shape):
    try:
        return a.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None


def _concat_fwd(*arrs, axis):
    rest = {a.shape[:axis] + a.shape[axis + 1:] for a in arrs} if axis >= 0 else None
    if rest is not None and len(rest) > 1:
        raise ShapeError(f"concat: incompatible shapes {[a.shape for a in arrs]}")
    return np.concatenate(arrs, axis=axis)


def _concat_vjp(g, out, ops, needs, *, axis):
    bounds = np.cumsum([a.shape[axis] for a in ops])[:-1]
    return np.split(g, bounds, axis=axis)


register("add", _add_fwd, lambda g, out, ops, needs: [g, g])
register("sub", _sub_fwd, lambda g, out, ops, needs: [g, -g])
register("mul", _mul_fwd, _mul_vjp)
register("scale", lambda a, *, c: a * c, lambda g, out, ops, needs, *, c: [g * c])
register("square", lambda a: a * a, lambda g, out, ops, needs: [2.0 * g * ops[0]])
register("sqrt", np.sqrt, _sqrt_vjp)
register("relu", lambda a: np.maximum(a, 0.0), _relu_vjp)
register("sum", _sum_fwd, _sum_vjp)
register("matmul", _matmul_fwd, _matmul_vjp)
register("spmm", _spmm_fwd, _spmm_vjp)
register("gather", _gather_fwd, _gather_vjp)
register("scatter_add", _scatter_add_fwd, _scatter_add_vjp)
register("smooth_l1", _smooth_l1_fwd, _smooth_l1_vjp)
register("reshape", _reshape_fwd, lambda g, out, ops, needs, *, shape: [g.reshape(ops[0].shape)])
register("transpose", lambda a, *, axes: a.transpose(axes),
         lambda g, out, ops, needs, *, axes: [g.transpose(np.argsort(axes))])
register("concat", _concat_fwd, _concat_vjp)


# --- functional front end --------------------------------------------------

def record(primitive: str, operands, **attrs) -> Tensor:
    """Apply a primitive; untaped operands give an untaped (constant) result."""
    tape = _tape_of(*operands)
    if tape is not None:
        return tape.record(primitive, operands, **attrs)
    prim = PRIMITIVES[primitive]
    arrs = [o.data if isinstance(o, Tensor) else _as_array(o) for o in operands]
    return Tensor(np.asarray(prim.forward(*arrs, **attrs), dtype=np.float64))


def add(a, b):
    return record("add", [a, b])


def sub(a, b):
    return record("sub", [a, b])


def mul(a, b):
    """Elementwise product of equal shapes, or scalar times tensor."""
    return record("mul", [a, b])


def scale(a, c: float):
    return record("scale", [a], c=float(c))


def square(a):
    return record("square", [a])


def sqrt(a):
    return record("sqrt", [a])


def relu(a):
    return record("relu", [a])


def sum(a, axis=None):  # noqa: A001 - mirrors numpy
    return record("sum", [a], axis=axis)


def matmul(a, b):
    return record("matmul", [a, b])


def spmm(S, x):
    """Apply a constant sparse operator to the vertex axis of ``x``.

    ``x`` is ``(N, F)`` or batched ``(B, N, F)``.
    """
    return record("spmm", [x], S=sp.csr_matrix(S))


def gather(a, idx):
    """Rows of ``a`` selected by integer ``idx``; ``-1`` selects a zero row."""
    return record("gather", [a], idx=np.asarray(idx, dtype=np.int64))


def scatter_add(a, idx, n: int):
    return record("scatter_add", [a], idx=np.asarray(idx, dtype=np.int64), n=int(n))


def smooth_l1(a):
    return record("smooth_l1", [a])


def reshape(a, shape):
    return record("reshape", [a], shape=tuple(shape))


def transpose(a, axes):
    return record("transpose", [a], axes=tuple(axes))


def concat(arrs, axis: int):
    nd = np.ndim(arrs[0].data if isinstance(arrs[0], Tensor) else arrs[0])
    return record("concat", list(arrs), axis=axis % nd)


def mean(a):
    data = a.data if isinstance(a, Tensor) else np.asarray(a)
    return scale(sum(a), 1.0 / data.size)


# --- finite-difference checking --------------------------------------------

@dataclass
class GradcheckReport:
    max_rel_err: list[float]
    tol: float

    @property
    def failed(self) -> list[int]:
        return [i for i, e in enumerate(self.max_rel_err) if e > self.tol]

    @property
    def ok(self) -> bool:
        return not self.failed


def rel_error(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def gradcheck(fn, point, h: float = 1e-6, tol: float = 1e-4, max_entries: int | None = None,
              rng=None) -> GradcheckReport:
    """Compare tape gradients of ``fn`` against central differences.

    ``fn`` maps a list of parameter tensors (all on one tape) to a scalar
    tensor. ``point`` is the list of arrays to evaluate at. With
    ``max_entries`` only a random subset of coordinates per parameter is
    probed.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    point = [np.array(p, dtype=np.float64) for p in point]

    def value(arrs):
        tape = Tape()
        out = fn([tape.param(a) for a in arrs])
        v = float(np.asarray(out.data if isinstance(out, Tensor) else out).reshape(()))
        if not np.isfinite(v):
            raise FloatingPointError("non-finite forward value in gradcheck")
        return v

    tape = Tape()
    params = [tape.param(p) for p in point]
    out = fn(params)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite forward value in gradcheck")
    grads = tape.backward(out)

    rng = rng or np.random.default_rng(0)
    errs = []
    for k, p in enumerate(point):
        analytic = grads[params[k]].reshape(-1)
        coords = np.arange(p.size)
        if max_entries is not None and p.size > max_entries:
            coords = np.sort(rng.choice(p.size, max_entries, replace=False))
        worst = 0.0
        for c in coords:
            plus = [q.copy() for q in point]
            minus = [q.copy() for q in point]
            plus[k].reshape(-1)[c] += h
            minus[k].reshape(-1)[c] -= h
            numeric = (value(plus) - value(minus)) / (2 * h)
            worst = max(worst, float(rel_error(analytic[c], numeric)))
        errs.append(worst)
    return GradcheckReport(errs, tol)
