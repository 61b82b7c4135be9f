"""
Dense tensors with reverse-mode differentiation.

A Tensor wraps a numpy array (float32 unless created from another floating
dtype) and, when any of its inputs requires a gradient, remembers those
inputs together with a vector-Jacobian product closure. ``Graph.record``
orders the recorded nodes topologically and ``backward`` walks them in
reverse, returning a fresh ``Gradients`` mapping on every call so the same
graph can be differentiated repeatedly with identical results.
"""

import threading
from contextlib import contextmanager
from numbers import Number
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ratervar.exception.exception import ShapeError

VJP = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
ArrayLike = Union["Tensor", np.ndarray, Number, Sequence]


_GRAD_MODE = threading.local()


def _recording() -> bool:
    return not getattr(_GRAD_MODE, "disabled", False)


class Tensor:

    def __init__(
        self,
        data: ArrayLike,
        parents: Tuple["Tensor", ...] = (),
        vjp: Optional[VJP] = None,
        name: str = "",
        requires_grad: bool = False,
        dtype=None,
    ):
        array = np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float32)
        self.data = array
        self.name = name

        recording = vjp is not None and _recording()
        tracked = recording and any(p.requires_grad for p in parents)
        self.requires_grad = bool(requires_grad) or tracked
        self.parents: Tuple[Tensor, ...] = tuple(parents) if tracked else ()
        self._vjp: Optional[VJP] = vjp if tracked else None

    @classmethod
    def parameter(cls, data: ArrayLike, name: str = "", dtype=None) -> "Tensor":
        """Leaf tensor that gradients are collected for."""
        return cls(np.array(data, dtype=dtype), name=name, requires_grad=True)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        grad = ", requires_grad" if self.requires_grad else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.dtype}{grad}>"

    # arithmetic -----------------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor(a.data + b.data, (a, b), vjp, "add")

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other, self.dtype) + self

    def __neg__(self) -> "Tensor":
        return Tensor(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def vjp(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor(a.data * b.data, (a, b), vjp, "mul")

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other, self.dtype) * self

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def vjp(g):
            ga = g / b.data
            gb = -g * a.data / (b.data * b.data)
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor(a.data / b.data, (a, b), vjp, "div")

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other, self.dtype) / self

    def __pow__(self, power: float) -> "Tensor":
        if not isinstance(power, Number):
            raise TypeError("only scalar exponents are supported")
        x = self

        def vjp(g):
            return (g * power * x.data ** (power - 1),)

        return Tensor(x.data**power, (x,), vjp, f"pow{power}")

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self, other
        if a.ndim != 2 or b.ndim not in (1, 2):
            raise ShapeError(f"matmul supports (m,k)@(k,) and (m,k)@(k,n), got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dimensions differ: {a.shape[1]} != {b.shape[0]}")

        def vjp(g):
            if b.ndim == 1:
                return np.outer(g, b.data), a.data.T @ g
            return g @ b.data.T, a.data.T @ g

        return Tensor(a.data @ b.data, (a, b), vjp, "matmul")

    # reductions and reshaping ------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        x = self
        out = np.sum(x.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.dtype)

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).astype(x.dtype),)

        return Tensor(out, (x,), vjp, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        x = self
        return Tensor(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")

    def __getitem__(self, index) -> "Tensor":
        x = self

        def vjp(g):
            full = np.zeros(x.shape, dtype=g.dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor(x.data[index], (x,), vjp, "getitem")


def as_tensor(value: ArrayLike, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast cotangent back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


@contextmanager
def no_grad():
    """
    Evaluate without recording parents or closures; used at inference time.
    The switch is per thread.
    """
    previous = getattr(_GRAD_MODE, "disabled", False)
    _GRAD_MODE.disabled = True
    try:
        yield
    finally:
        _GRAD_MODE.disabled = previous


class Graph:
    """
    Recorded computation ending in ``output``. ``nodes`` is topologically
    ordered: every node appears after all of its inputs.
    """

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @property
    def output(self) -> Tensor:
        return self.nodes[-1]

    @classmethod
    def record(cls, output: Tensor) -> "Graph":
        order: List[Tensor] = list()
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node.parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def leaves(self) -> List[Tensor]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.nodes)


class Gradients:
    """
    Cotangents accumulated by one backward pass. Tensors the loss does not
    depend on map to zeros.
    """

    def __init__(self, grads: Dict[int, np.ndarray], nodes: Dict[int, Tensor]):
        self._grads = grads
        self._nodes = nodes

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        grad = self._grads.get(id(tensor))
        if grad is None or self._nodes.get(id(tensor)) is not tensor:
            return np.zeros(tensor.shape, dtype=tensor.dtype)
        return grad

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._grads and self._nodes.get(id(tensor)) is tensor

    def for_parameters(self, params: Dict[str, Tensor]) -> Dict[str, np.ndarray]:
        return {name: self[t] for name, t in params.items()}


def backward(loss: Tensor, graph: Optional[Graph] = None) -> Gradients:
    """
    Reverse-mode accumulation from a scalar loss.

    Parameters
    ----------
        loss : Tensor
            Scalar (size 1) output node.
        graph : Graph, optional
            Pre-recorded graph for ``loss``; recorded on the fly otherwise.

    Returns
    -------
        gradients : Gradients
            d(loss)/d(node) for every node that requires a gradient.

    Raises
    ------
        ShapeError
            If the loss is not a scalar.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar seed, got shape {loss.shape}")
    if graph is None:
        graph = Graph.record(loss)
    elif graph.output is not loss:
        raise ShapeError("graph was not recorded for this loss node")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    nodes: Dict[int, Tensor] = {id(n): n for n in graph.nodes}
    for node in reversed(graph.nodes):
        cotangent = grads.get(id(node))
        if cotangent is None or node._vjp is None:
            continue
        parentGrads = node._vjp(cotangent)
        for parent, pg in zip(node.parents, parentGrads):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            if pg.shape != parent.shape:
                pg = np.broadcast_to(pg, parent.shape)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg)
    return Gradients(grads, nodes)
