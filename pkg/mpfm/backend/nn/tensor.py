# tensor.py
#
# Copyright 2026 The mpfm contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, in version 3 of the License.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.
#

from collections.abc import Callable, Sequence

import numpy as np
from scipy import special

from mpfm.backend.models.enum import Precision
from mpfm.backend.models.errors import (
    ContractViolationError,
    NumericFaultError,
    RejectedInputError,
)

_DTYPE: type = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


def set_precision(precision: str):
    """Select the dtype of every tensor created from now on."""
    global _DTYPE
    if precision == Precision.FLOAT64:
        _DTYPE = np.float64
    elif precision == Precision.FLOAT32:
        _DTYPE = np.float32
    else:
        raise RejectedInputError(f"Unknown precision '{precision}'")


def get_dtype() -> type:
    return _DTYPE


class Tensor:
    """
    Dense array node of a computation graph. Leaves created with
    requires_grad=True are parameters; every other tensor records the
    parents and the local gradient rule of the op that produced it.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")
    # numpy defers to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} {self.op} shape={self.shape}>"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ContractViolationError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # region arithmetic
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(other, neg(self))

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

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    # endregion

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def backward(self):
        """Populate .grad on every parameter leaf reachable from this scalar."""
        graph = ComputationGraph(self)
        for leaf, grad in graph.leaf_gradients().items():
            leaf.grad = grad if leaf.grad is None else leaf.grad + grad


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: tuple, backward: BackwardFn, op: str) -> Tensor:
    data = np.asarray(data, dtype=_DTYPE)
    if not np.all(np.isfinite(data)):
        raise NumericFaultError(f"Non-finite value produced by '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = parents if out.requires_grad else ()
    out._backward = backward if out.requires_grad else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _expand(grad: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape)


# region elementwise
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise NumericFaultError("Division by zero")
    return _result(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
        "div",
    )


def power(a: Tensor, exponent: float) -> Tensor:
    return _result(
        a.data**exponent,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),),
        "pow",
    )


def square(a: Tensor) -> Tensor:
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _result(out, (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)) in the overflow-free form."""
    return _result(
        np.logaddexp(0.0, a.data), (a,), lambda g: (g * special.expit(a.data),), "softplus"
    )


def tabs(a: Tensor) -> Tensor:
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def maximum(a: Tensor, floor: float) -> Tensor:
    """Clip from below by a constant; the gradient is zero where the floor is active."""
    mask = a.data > floor
    return _result(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "maximum")


# endregion


# region reductions and shape
def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return _result(
        a.data.sum(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_expand(g, a.shape, axis, keepdims),),
        "sum",
    )


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return _result(
        a.data.mean(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_expand(g, a.shape, axis, keepdims) / count,),
        "mean",
    )


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    kept = special.logsumexp(a.data, axis=axis, keepdims=True)
    out = kept if keepdims else np.squeeze(kept, axis=axis)
    return _result(
        out,
        (a,),
        lambda g: (_expand(g, kept.shape, axis, keepdims) * np.exp(a.data - kept),),
        "logsumexp",
    )


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    return a - logsumexp(a, axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    return exp(log_softmax(a, axis=axis))


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), backward, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _result(
        np.concatenate([p.data for p in parts], axis=axis),
        parts,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
        "concat",
    )


def take(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows (axis 0) of a; repeated indices accumulate gradient."""
    indices = np.asarray(indices, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        return (full,)

    return _result(a.data[indices], (a,), backward, "take")


def take_along_axis(a: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along an axis; indices must be distinct within each slice."""
    indices = np.asarray(indices, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, indices, g, axis=axis)
        return (full,)

    return _result(
        np.take_along_axis(a.data, indices, axis=axis), (a,), backward, "take_along_axis"
    )


# endregion


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise RejectedInputError(f"Cannot multiply shapes {a.shape} and {b.shape}")
    return _result(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


class ComputationGraph:
    """
    The subgraph of differentiable nodes feeding an output, in topological
    order (every node after all of its inputs).
    """

    def __init__(self, output: Tensor):
        self.output = output
        self.order: list[Tensor] = self._toposort(output)

    @staticmethod
    def _toposort(output: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    @property
    def nodes(self) -> list[Tensor]:
        return self.order

    def gradients(self) -> dict[int, np.ndarray]:
        if self.output.size != 1:
            raise ContractViolationError(
                f"backward needs a scalar output, got shape {self.output.shape}"
            )
        grads: dict[int, np.ndarray] = {id(self.output): np.ones_like(self.output.data)}
        for node in reversed(self.order):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
        return grads

    def leaf_gradients(self) -> dict[Tensor, np.ndarray]:
        grads = self.gradients()
        return {
            node: np.asarray(grads[id(node)], dtype=_DTYPE)
            for node in self.order
            if node.op == "leaf" and id(node) in grads
        }


def backward(output: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar output w.r.t. params, zeros for unreachable ones."""
    grads = ComputationGraph(output).gradients()
    return [
        np.array(grads[id(p)], dtype=_DTYPE) if id(p) in grads else np.zeros_like(p.data)
        for p in params
    ]
