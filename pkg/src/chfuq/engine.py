"""Define-by-run reverse-mode differentiation over dense 2-D float64 arrays.

Every value is a :class:`Tensor` holding a ``(rows, cols)`` array. Operations
record their parents and a backward rule; :func:`backward` walks the recorded
graph in reverse topological order. The graph is rebuilt on every forward
pass, which keeps stochastic (sampled-weight) networks trivial to support.

Broadcasting is limited to a ``(1, c)`` row vector against an ``(r, c)``
array; Python scalars are accepted as constants by the arithmetic ops.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "ShapeError",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "log",
    "exp",
    "square",
    "sqrt",
    "mean",
    "sum",
    "relu",
    "sigmoid",
    "softplus",
    "clamp_min",
    "backward",
    "finite_difference_check",
]

# softplus switches to the identity above this value of beta*z
SOFTPLUS_THRESHOLD = 30.0


class ShapeError(ValueError):
    """Operand shapes do not conform to a primitive's broadcasting rule."""

    def __init__(self, primitive: str, left: tuple, right: tuple):
        super().__init__(f"{primitive}: incompatible shapes {left} and {right}")
        self.primitive = primitive
        self.shapes = (left, right)


def _as_2d(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"only rank <= 2 arrays are supported, got rank {arr.ndim}")
    return arr


class Tensor:
    """A node of the computation graph.

    Leaves are created directly; ``requires_grad=True`` marks them trainable.
    After :func:`backward`, trainable leaves carry their gradient in ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = _as_2d(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, op: str, parents: Sequence[Tensor], rule) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = rule
    else:
        out._parents = ()
        out._backward = None
    return out


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if a[0] == 1 and a[1] == b[1]:
        return b
    if b[0] == 1 and b[1] == a[1]:
        return a
    raise ShapeError(op, a, b)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return grad.sum(axis=0, keepdims=True)


def _binary_operands(x, y):
    # python scalars become constants of the other operand's shape
    if not isinstance(x, Tensor) and np.ndim(x) == 0 and isinstance(y, Tensor):
        x = Tensor(np.full(y.shape, float(x)))
    if not isinstance(y, Tensor) and np.ndim(y) == 0 and isinstance(x, Tensor):
        y = Tensor(np.full(x.shape, float(y)))
    return as_tensor(x), as_tensor(y)


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    A, B = a.data, b.data

    def rule(g):
        return g @ B.T, A.T @ g

    return _node(A @ B, "matmul", (a, b), rule)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_shape("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def rule(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _node(a.data + b.data, "add", (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_shape("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def rule(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _node(a.data - b.data, "sub", (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_shape("mul", a.shape, b.shape)
    A, B = a.data, b.data

    def rule(g):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    return _node(A * B, "mul", (a, b), rule)


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_shape("div", a.shape, b.shape)
    A, B = a.data, b.data
    out = A / B

    def rule(g):
        return _unbroadcast(g / B, A.shape), _unbroadcast(-g * out / B, B.shape)

    return _node(out, "div", (a, b), rule)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, "neg", (a,), lambda g: (-g,))


def log(a) -> Tensor:
    a = as_tensor(a)
    A = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(A)
    return _node(out, "log", (a,), lambda g: (g / A,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, "exp", (a,), lambda g: (g * out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    A = a.data
    return _node(A * A, "square", (a,), lambda g: (2.0 * A * g,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def rule(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (0.5 * g / out,)

    return _node(out, "sqrt", (a,), rule)


def mean(a, axis: int | None = None) -> Tensor:
    """Mean over all entries (``axis=None``, 1x1 result) or over rows (``axis=0``)."""
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        n = a.data.size
        return _node(
            np.array([[a.data.mean()]]), "mean", (a,), lambda g: (np.full(shape, g[0, 0] / n),)
        )
    if axis == 0:
        n = shape[0]
        return _node(
            a.data.mean(axis=0, keepdims=True),
            "mean",
            (a,),
            lambda g: (np.broadcast_to(g / n, shape).copy(),),
        )
    raise ValueError("mean supports axis=None or axis=0")


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return _node(
            np.array([[a.data.sum()]]), "sum", (a,), lambda g: (np.full(shape, g[0, 0]),)
        )
    if axis == 0:
        return _node(
            a.data.sum(axis=0, keepdims=True),
            "sum",
            (a,),
            lambda g: (np.broadcast_to(g, shape).copy(),),
        )
    raise ValueError("sum supports axis=None or axis=0")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _node(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def softplus_values(z: np.ndarray, beta: float = 1.0) -> np.ndarray:
    """Overflow-safe ``log(1 + exp(beta*z)) / beta`` on plain arrays."""
    bz = beta * np.asarray(z, dtype=np.float64)
    return np.where(bz > SOFTPLUS_THRESHOLD, z, np.logaddexp(0.0, bz) / beta)


def softplus(a, beta: float = 1.0) -> Tensor:
    if beta <= 0:
        raise ValueError(f"softplus smoothness must be positive, got {beta}")
    a = as_tensor(a)
    out = softplus_values(a.data, beta)
    slope = _sigmoid(beta * a.data)
    return _node(out, "softplus", (a,), lambda g: (g * slope,))


def clamp_min(a, lo: float) -> Tensor:
    a = as_tensor(a)
    mask = a.data > lo
    return _node(np.where(mask, a.data, lo), "clamp_min", (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reverse pass


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(output: Tensor) -> dict[Tensor, np.ndarray]:
    """Back-propagate from a 1x1 ``output``.

    Returns a map from every trainable leaf reachable from ``output`` to its
    gradient; the same array is stored on ``leaf.grad``.
    """
    if output.shape != (1, 1):
        raise ValueError(f"backward needs a scalar (1x1) output, got {output.shape}")
    grads: dict[int, np.ndarray] = {id(output): np.ones((1, 1))}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topological_order(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g
                leaves[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves


def finite_difference_check(
    function: Callable[[list[Tensor]], Tensor],
    point: np.ndarray | Sequence[np.ndarray],
    step: float = 1e-5,
) -> float:
    """Compare analytic gradients with central differences.

    ``function`` maps a list of tensors (one per array in ``point``) to a 1x1
    tensor. Returns ``max |analytic - numeric| / max(1, |analytic|)`` over all
    coordinates.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    arrays = [_as_2d(point)] if isinstance(point, np.ndarray) else [_as_2d(p) for p in point]
    arrays = [a.copy() for a in arrays]

    def evaluate(values: list[np.ndarray], track: bool):
        leaves = [Tensor(v.copy(), requires_grad=track) for v in values]
        out = function(leaves)
        value = out.item()
        if not np.isfinite(value):
            raise FloatingPointError("function value is not finite")
        return out, leaves

    out, leaves = evaluate(arrays, True)
    grads = backward(out)
    worst = 0.0
    for k, base in enumerate(arrays):
        analytic = grads.get(leaves[k], np.zeros_like(base))
        for idx in np.ndindex(base.shape):
            # perturb in place; evaluate() hands copies to the function
            original = base[idx]
            base[idx] = original + step
            f_plus = evaluate(arrays, False)[0].item()
            base[idx] = original - step
            f_minus = evaluate(arrays, False)[0].item()
            base[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(analytic[idx] - numeric) / max(1.0, abs(analytic[idx]))
            worst = max(worst, err)
    return worst
