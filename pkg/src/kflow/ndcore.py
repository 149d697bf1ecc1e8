"""Dense float64 arrays with reverse-mode gradients and forward-mode JVPs.

Every quantity in this package (states, network weights, the operator
matrix) lives in a :class:`Tensor`. Tensors form a dynamically built
computation graph; calling :func:`grad` (or ``Tensor.backward``) walks the
graph in reverse to accumulate parameter gradients. Directional
derivatives of vector functions are computed forward-mode with
:class:`DualTensor`, whose tangent half is itself built from Tensor
primitives, so a JVP embedded in a loss stays differentiable with respect
to the parameters.

Scope is deliberately small: rank 0..2 arrays, no broadcasting beyond a
row-vector bias against a matrix, CPU only.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as _expit


class ContractViolation(ValueError):
    """An operation was invoked outside its documented contract."""


class UnsupportedOpError(TypeError):
    """The differentiable graph hit an operation with no gradient rule."""


class NumericalError(ArithmeticError):
    """NaN/Inf, divergence, or a failed numerical routine."""


def _as_array(data) -> np.ndarray:
    # copy so a Tensor owns its buffer; callers mutating their array later
    # (or Tensor users writing .data) cannot alias each other
    arr = np.array(data, dtype=np.float64)
    if arr.ndim > 2:
        raise UnsupportedOpError(f"rank-{arr.ndim} arrays are not supported")
    return arr


class Tensor:
    """Node in the computation graph: float64 data plus an optional VJP closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @classmethod
    def _node(cls, data: np.ndarray, parents: tuple["Tensor", ...], vjp) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- graph traversal ---------------------------------------------------

    def _toposort(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad for every reachable leaf."""
        if self.data.size != 1:
            raise ContractViolation("backward() requires a scalar loss")
        if not self.requires_grad:
            return
        self.grad = np.ones_like(self.data)
        for node in reversed(self._toposort()):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        raise UnsupportedOpError("division only by python scalars")

    def __pow__(self, exponent):
        if exponent == 2:
            return square(self)
        raise UnsupportedOpError("only **2 is supported")


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def assert_finite(t: Tensor, what: str = "tensor") -> Tensor:
    """Checked pass-through: raises NumericalError on NaN/Inf entries."""
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"{what} contains NaN/Inf")
    return t


# -- primitives --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    da, db = a.data, b.data
    if da.shape == db.shape:
        def vjp(g):
            return g, g
    elif da.ndim == 2 and db.ndim == 1 and da.shape[1] == db.shape[0]:
        # matrix + bias row
        def vjp(g):
            return g, g.sum(axis=0)
    elif db.size == 1:
        def vjp(g):
            return g, np.asarray(g.sum()).reshape(db.shape)
    elif da.size == 1:
        def vjp(g):
            return np.asarray(g.sum()).reshape(da.shape), g
    else:
        raise ContractViolation(f"add: incompatible shapes {da.shape} and {db.shape}")
    return Tensor._node(da + db, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    da, db = a.data, b.data
    if da.shape == db.shape:
        def vjp(g):
            return g, -g
    elif db.size == 1:
        def vjp(g):
            return g, np.asarray(-g.sum()).reshape(db.shape)
    elif da.size == 1:
        def vjp(g):
            return np.asarray(g.sum()).reshape(da.shape), -g
    else:
        raise ContractViolation(f"sub: incompatible shapes {da.shape} and {db.shape}")
    return Tensor._node(da - db, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    da, db = a.data, b.data
    if da.shape == db.shape:
        def vjp(g):
            ga = g * db if a.requires_grad else None
            gb = g * da if b.requires_grad else None
            return ga, gb
    elif db.size == 1:
        def vjp(g):
            ga = g * db if a.requires_grad else None
            gb = np.asarray((g * da).sum()).reshape(db.shape) if b.requires_grad else None
            return ga, gb
    elif da.size == 1:
        def vjp(g):
            ga = np.asarray((g * db).sum()).reshape(da.shape) if a.requires_grad else None
            gb = g * da if b.requires_grad else None
            return ga, gb
    else:
        raise ContractViolation(f"mul: incompatible shapes {da.shape} and {db.shape}")
    return Tensor._node(da * db, (a, b), vjp)


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    da, db = a.data, b.data
    if da.ndim != 2 or db.ndim != 2:
        raise ContractViolation("matmul expects rank-2 operands")
    if da.shape[1] != db.shape[0]:
        raise ContractViolation(f"matmul: inner dims {da.shape} @ {db.shape}")

    def vjp(g):
        ga = g @ db.T if a.requires_grad else None
        gb = da.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._node(da @ db, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ContractViolation("transpose expects rank-2")

    def vjp(g):
        return (g.T,)

    return Tensor._node(a.data.T.copy(), (a,), vjp)


def square(a: Tensor) -> Tensor:
    a = _coerce(a)
    da = a.data

    def vjp(g):
        return (2.0 * da * g,)

    return Tensor._node(da * da, (a,), vjp)


def tsum(a: Tensor) -> Tensor:
    a = _coerce(a)
    shape = a.data.shape

    def vjp(g):
        return (np.full(shape, float(g)),)

    return Tensor._node(np.asarray(a.data.sum()), (a,), vjp)


def mean(a: Tensor) -> Tensor:
    a = _coerce(a)
    shape, size = a.data.shape, a.data.size

    def vjp(g):
        return (np.full(shape, float(g) / size),)

    return Tensor._node(np.asarray(a.data.mean()), (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    a = _coerce(a)
    s = _expit(a.data)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return Tensor._node(s, (a,), vjp)


def _silu_tensor(a: Tensor) -> Tensor:
    s = _expit(a.data)
    da = a.data

    def vjp(g):
        return (g * s * (1.0 + da * (1.0 - s)),)

    return Tensor._node(da * s, (a,), vjp)


def concat(parts: list, axis: int = 1) -> Tensor:
    """Concatenate rank-2 blocks along columns (axis=1 only)."""
    if axis != 1:
        raise UnsupportedOpError("concat supports axis=1 only")
    parts = [_coerce(p) for p in parts]
    widths = []
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise ContractViolation("concat: blocks must be rank-2 with equal row count")
        widths.append(p.data.shape[1])
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(
            g[:, offsets[i]:offsets[i + 1]] if p.requires_grad else None
            for i, p in enumerate(parts)
        )

    return Tensor._node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), vjp)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ContractViolation("slice_cols expects rank-2")
    shape = a.data.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, lo:hi] = g
        return (full,)

    return Tensor._node(a.data[:, lo:hi].copy(), (a,), vjp)


# -- forward mode -------------------------------------------------------------


class DualTensor:
    """Primal/tangent pair for forward-mode differentiation.

    Both halves are Tensors, so a dual computation embedded in a training
    loss remains reverse-differentiable with respect to any parameters it
    touches.
    """

    __slots__ = ("primal", "tangent")

    def __init__(self, primal, tangent):
        self.primal = _coerce(primal)
        self.tangent = _coerce(tangent)
        if self.primal.data.shape != self.tangent.data.shape:
            raise ContractViolation(
                f"dual shapes differ: {self.primal.data.shape} vs {self.tangent.data.shape}"
            )

    def __matmul__(self, other):
        if isinstance(other, DualTensor):
            return DualTensor(
                self.primal @ other.primal,
                self.tangent @ other.primal + self.primal @ other.tangent,
            )
        other = _coerce(other)
        return DualTensor(self.primal @ other, self.tangent @ other)

    def __add__(self, other):
        if isinstance(other, DualTensor):
            return DualTensor(self.primal + other.primal, self.tangent + other.tangent)
        # constant shift: bias rows broadcast over the batch, tangent untouched
        return DualTensor(self.primal + _coerce(other), self.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, DualTensor):
            return DualTensor(self.primal - other.primal, self.tangent - other.tangent)
        return DualTensor(self.primal - _coerce(other), self.tangent)

    def __mul__(self, other):
        if isinstance(other, DualTensor):
            return DualTensor(
                self.primal * other.primal,
                self.tangent * other.primal + self.primal * other.tangent,
            )
        other = _coerce(other)
        return DualTensor(self.primal * other, self.tangent * other)

    __rmul__ = __mul__

    def __neg__(self):
        return DualTensor(-self.primal, -self.tangent)


def silu(x):
    """x * sigmoid(x), for Tensor or DualTensor input."""
    if isinstance(x, DualTensor):
        s = sigmoid(x.primal)
        rate = s * (1.0 + x.primal * (1.0 - s))
        return DualTensor(x.primal * s, rate * x.tangent)
    return _silu_tensor(x)


def dual_concat(parts: list, axis: int = 1) -> DualTensor:
    """concat over a mix of DualTensor and constant Tensor blocks (zero tangent)."""
    primals, tangents = [], []
    for p in parts:
        if isinstance(p, DualTensor):
            primals.append(p.primal)
            tangents.append(p.tangent)
        else:
            p = _coerce(p)
            primals.append(p)
            tangents.append(Tensor(np.zeros_like(p.data)))
    return DualTensor(concat(primals, axis), concat(tangents, axis))


def jvp(f, x, v) -> Tensor:
    """Directional derivative J_f(x) . v by forward-mode propagation.

    ``f`` must be built from the primitives in this module and accept a
    DualTensor wherever it accepts a Tensor.
    """
    x, v = _coerce(x), _coerce(v)
    if x.data.shape != v.data.shape:
        raise ContractViolation(f"jvp: x{x.data.shape} vs v{v.data.shape}")
    out = f(DualTensor(x, v))
    if isinstance(out, DualTensor):
        return out.tangent
    # f ignored its input: constant function, zero tangent
    return Tensor(np.zeros_like(_coerce(out).data))


# -- functional gradient -------------------------------------------------------


def grad(loss_fn, params: list[Tensor]) -> list[Tensor]:
    """Gradients of a scalar loss with respect to each parameter tensor.

    ``loss_fn`` receives the parameter list and must return a scalar
    Tensor composed of supported primitives.
    """
    saved = [(p.requires_grad, p.grad) for p in params]
    try:
        for p in params:
            p.requires_grad = True
            p.grad = None
        loss = loss_fn(params)
        if not isinstance(loss, Tensor):
            raise UnsupportedOpError("loss_fn must return a Tensor")
        if loss.data.size != 1:
            raise ContractViolation("loss_fn must return a scalar")
        loss.backward()
        return [
            Tensor(p.grad if p.grad is not None else np.zeros_like(p.data))
            for p in params
        ]
    finally:
        for p, (flag, g) in zip(params, saved):
            p.requires_grad = flag
            p.grad = g
