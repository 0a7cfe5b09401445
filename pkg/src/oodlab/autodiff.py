"""Reverse-mode automatic differentiation over small dense float64 tensors.

Values live in numpy arrays. Every differentiable primitive records its
parents and a vector-Jacobian product in a ComputationRecord attached to the
result tensor. Tensors carry monotonically increasing creation ids, so
walking recorded nodes in reverse creation order is a valid topological
order for backpropagation (parents are always created before children).

Broadcasting is deliberately narrow: elementwise primitives accept equal
shapes, a scalar (shape ()) against anything, or one operand matching the
other with the leading batch axis removed. Anything else raises
ShapeMismatchError naming the primitive and both shapes.

A computation graph belongs to one thread; tensors without grad tracking may
be shared read-only across threads. There is no internal locking.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ComputationRecord",
    "ShapeMismatchError",
    "DomainError",
    "apply_primitive",
    "backward",
    "grad_check",
    "check_gradients",
    "GradCheckReport",
    "add",
    "sub",
    "mul",
    "div",
    "scalar_mul",
    "matmul",
    "transpose",
    "relu",
    "tanh",
    "exp",
    "log",
    "log_sum_exp",
    "reduce_mean",
    "reduce_sum",
    "reduce_max",
    "l2_norm_of_difference",
    "gather_rows",
    "reshape",
]

_node_ids = itertools.count()


class ShapeMismatchError(ValueError):
    """Raised when operand shapes do not conform to a primitive."""

    def __init__(self, primitive: str, *shapes):
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{primitive}: incompatible shapes {rendered}")


class DomainError(ValueError):
    """Raised when a primitive is applied outside its documented domain."""


@dataclass
class ComputationRecord:
    """Graph bookkeeping for one primitive application.

    ``vjp`` maps the gradient flowing into this node to one gradient per
    parent (``None`` for parents that do not require grad).
    """

    node_id: int
    kind: str
    parents: tuple["Tensor", ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """A dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "record", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        # np.ascontiguousarray would promote 0-d scalars to shape (1,)
        arr = np.asarray(data, dtype=np.float64, order="C")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.record: ComputationRecord | None = None
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, kind: str, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out.record = ComputationRecord(out.node_id, kind, parents, vjp)
    return out


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    if len(sb) == len(sa) - 1 and sb == sa[1:]:
        return
    if len(sa) == len(sb) - 1 and sa == sb[1:]:
        return
    raise ShapeMismatchError(kind, sa, sb)


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Undo the leading-batch/scalar broadcast for a parent of ``shape``."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    return grad.sum(axis=0)


# --- elementwise arithmetic -------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    return _make(
        a.data + b.data,
        "add",
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    return _make(
        a.data - b.data,
        "sub",
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("elementwise-mul", a, b)
    return _make(
        a.data * b.data,
        "elementwise-mul",
        (a, b),
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("div", a, b)
    return _make(
        a.data / b.data,
        "div",
        (a, b),
        lambda g: (
            _reduce_to(g / b.data, a.shape),
            _reduce_to(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, "scalar-mul", (a,), lambda g: (g * c,))


# --- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    return _make(
        a.data @ b.data,
        "matmul",
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatchError("transpose", a.shape)
    return _make(np.ascontiguousarray(a.data.T), "transpose", (a,), lambda g: (g.T,))


# --- nonlinearities ---------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0  # subgradient at 0 is 0
    return _make(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, "exp", (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        worst = float(a.data.min())
        raise DomainError(f"log: non-positive input (min value {worst})")
    return _make(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


# --- reductions -------------------------------------------------------------

def log_sum_exp(a: Tensor, axis: int | None = None) -> Tensor:
    """Stable log-sum-exp via max-shift, reducing ``axis`` (or everything)."""
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(total), axis=axis) if axis is not None else (m + np.log(total)).reshape(())
    soft = shifted / total

    def vjp(g):
        g_exp = np.expand_dims(g, axis) if axis is not None else g
        return (g_exp * soft,)

    return _make(out, "log_sum_exp", (a,), vjp)


def reduce_sum(a: Tensor) -> Tensor:
    return _make(
        np.asarray(a.data.sum()),
        "reduce_sum",
        (a,),
        lambda g: (np.broadcast_to(g, a.shape).copy(),),
    )


def reduce_mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(
        np.asarray(a.data.mean()),
        "reduce_mean",
        (a,),
        lambda g: (np.broadcast_to(g / n, a.shape).copy(),),
    )


def reduce_max(a: Tensor, axis: int | None = None) -> Tensor:
    """Max along ``axis``; the subgradient routes to the first argmax."""
    if axis is None:
        idx = int(np.argmax(a.data))
        out = np.asarray(a.data.reshape(-1)[idx])

        def vjp(g):
            buf = np.zeros_like(a.data)
            buf.reshape(-1)[idx] = float(g)
            return (buf,)

        return _make(out, "max", (a,), vjp)

    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.squeeze(np.take_along_axis(a.data, idx, axis=axis), axis=axis)

    def vjp_axis(g):
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, idx, np.expand_dims(g, axis), axis=axis)
        return (buf,)

    return _make(out, "max", (a,), vjp_axis)


def l2_norm_of_difference(a: Tensor, b: Tensor) -> Tensor:
    """Euclidean norm of a-b reduced over the last axis (rowwise for matrices).

    The subgradient at coinciding points (norm 0) is defined as 0.
    """
    if a.shape != b.shape:
        raise ShapeMismatchError("l2_norm_of_difference", a.shape, b.shape)
    diff = a.data - b.data
    norm = np.sqrt((diff * diff).sum(axis=-1))

    def vjp(g):
        denom = norm[..., None] if norm.ndim else norm
        unit = np.divide(diff, denom, out=np.zeros_like(diff), where=denom > 0)
        scaled = unit * (g[..., None] if norm.ndim else g)
        return (scaled, -scaled)

    return _make(norm, "l2_norm_of_difference", (a, b), vjp)


# --- structural ops ---------------------------------------------------------

def gather_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeMismatchError("gather-rows", a.shape, idx.shape)

    def vjp(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        return (buf,)

    return _make(a.data[idx], "gather-rows", (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeMismatchError("reshape", a.shape, shape)
    return _make(
        a.data.reshape(shape),
        "reshape",
        (a,),
        lambda g: (g.reshape(a.shape),),
    )


_PRIMITIVES: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "elementwise-mul": mul,
    "scalar-mul": scalar_mul,
    "matmul": matmul,
    "relu": relu,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "log_sum_exp": log_sum_exp,
    "reduce_mean": reduce_mean,
    "reduce_sum": reduce_sum,
    "l2_norm_of_difference": l2_norm_of_difference,
    "max": reduce_max,
    "div": div,
    "transpose": transpose,
    "gather-rows": gather_rows,
    "reshape": reshape,
}


def apply_primitive(kind: str, operands: Sequence, **params) -> Tensor:
    """Dispatch a primitive by kind name (the string table in _PRIMITIVES)."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive kind '{kind}'") from None
    return fn(*operands, **params)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) onto every requires_grad tensor's .grad.

    Repeated calls without zero_grad accumulate additively. Nodes are visited
    in reverse creation order, a valid topological order by construction.
    """
    if root.data.size != 1:
        raise ValueError(f"backward root must be a scalar, got shape {root.shape}")

    nodes: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.node_id in nodes:
            continue
        nodes[t.node_id] = t
        if t.record is not None:
            stack.extend(t.record.parents)

    grads: dict[int, np.ndarray] = {root.node_id: np.ones_like(root.data)}
    for nid in sorted(nodes, reverse=True):
        g = grads.pop(nid, None)
        if g is None:
            continue
        t = nodes[nid]
        if t.requires_grad and t.grad is not None:
            t.grad += g
        if t.record is None:
            continue
        for parent, pg in zip(t.record.parents, t.record.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(parent.node_id)
            grads[parent.node_id] = pg.copy() if acc is None else acc + pg


# --- gradient verification ---------------------------------------------------

@dataclass
class GradCheckReport:
    passed: bool
    max_abs_diff: float
    max_rel_diff: float
    worst_index: tuple[int, ...]
    n_coords: int

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"grad_check {status}: max_rel={self.max_rel_diff:.3e} "
            f"max_abs={self.max_abs_diff:.3e} at index {self.worst_index} "
            f"({self.n_coords} coordinates)"
        )


_ABS_FALLBACK = 1e-8


def _compare_grads(analytic: np.ndarray, numeric: np.ndarray, rel_tol: float) -> GradCheckReport:
    abs_diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = (abs_diff <= rel_tol * scale) | (abs_diff <= _ABS_FALLBACK)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0, abs_diff / scale, 0.0)
    worst = np.unravel_index(int(np.argmax(abs_diff)), analytic.shape) if analytic.ndim else ()
    return GradCheckReport(
        passed=bool(ok.all()),
        max_abs_diff=float(abs_diff.max(initial=0.0)),
        max_rel_diff=float(rel.max(initial=0.0)),
        worst_index=tuple(int(i) for i in worst),
        n_coords=int(analytic.size),
    )


def grad_check(f, point: Tensor, h: float = 1e-5, rel_tol: float = 1e-4) -> GradCheckReport:
    """Compare the analytic gradient of scalar-valued ``f`` at ``point``
    against central finite differences with step ``h``.

    A coordinate passes when |analytic - numeric| is within rel_tol of the
    larger magnitude, with an absolute fallback of 1e-8 near zero.
    """
    if h <= 0:
        raise ValueError("finite-difference step h must be positive")
    x = Tensor(point.data.copy(), requires_grad=True)
    out = f(x)
    if out.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    backward(out)
    analytic = x.grad.copy()

    numeric = np.zeros_like(analytic)
    base = x.data.copy()
    flat = base.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += h
        hi = f(Tensor(bumped.reshape(base.shape))).item()
        bumped[i] -= 2.0 * h
        lo = f(Tensor(bumped.reshape(base.shape))).item()
        numeric.reshape(-1)[i] = (hi - lo) / (2.0 * h)

    return _compare_grads(analytic, numeric, rel_tol)


def check_gradients(loss_fn, params: Sequence[Tensor], h: float = 1e-5, rel_tol: float = 1e-4) -> GradCheckReport:
    """grad_check over a set of parameter tensors feeding ``loss_fn()``.

    loss_fn rebuilds the scalar loss from the live parameter tensors; the
    finite-difference side perturbs parameter entries in place.
    """
    for p in params:
        p.zero_grad()
    root = loss_fn()
    if root.data.size != 1:
        raise ValueError("check_gradients requires a scalar-valued loss")
    backward(root)

    worst = GradCheckReport(True, 0.0, 0.0, (), 0)
    total = 0
    for p in params:
        analytic = p.grad.copy()
        numeric = np.zeros_like(analytic)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = loss_fn().item()
            flat[i] = orig - h
            lo = loss_fn().item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (hi - lo) / (2.0 * h)
        rep = _compare_grads(analytic, numeric, rel_tol)
        total += rep.n_coords
        if rep.max_rel_diff >= worst.max_rel_diff:
            worst = GradCheckReport(
                worst.passed and rep.passed,
                max(worst.max_abs_diff, rep.max_abs_diff),
                rep.max_rel_diff,
                rep.worst_index,
                total,
            )
        else:
            worst = GradCheckReport(
                worst.passed and rep.passed,
                max(worst.max_abs_diff, rep.max_abs_diff),
                worst.max_rel_diff,
                worst.worst_index,
                total,
            )
    return worst
