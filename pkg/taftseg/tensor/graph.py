"""
Dense float64 tensors with a tape-based reverse-mode differentiation graph.

A ``Graph`` records every operation executed while it is active (``with graph:``).
Operations run outside an active graph are not recorded and produce constants,
which is how evaluation runs. The tape lives for one forward/backward cycle and is
cleared after the optimizer step.
"""

import contextvars
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from taftseg.errors import ContractError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_active_graph: contextvars.ContextVar[Optional["Graph"]] = contextvars.ContextVar(
    "taftseg_active_graph", default=None
)


class Tensor:
    """
    Dense N-dimensional float64 array.

    Leaf tensors created with ``requires_grad=True`` are parameters and accumulate
    gradient in ``grad``. Tensors produced by recorded operations carry a
    ``node_id`` (their position on the tape); their gradients live only inside a
    backward pass. Constants never accumulate gradient.
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if requires_grad else None
        self.node_id: Optional[int] = None
        self._graph: Optional["Graph"] = None

    @classmethod
    def wrap(cls, array: np.ndarray) -> "Tensor":
        """Constant over ``array`` without copying it."""
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(array, dtype=np.float64)
        tensor.requires_grad = False
        tensor.name = None
        tensor.grad = None
        tensor.node_id = None
        tensor._graph = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self.node_id is None

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Copy of the underlying data."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Constant copy; gradient does not flow through it."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar; definitions live in functional
    def __add__(self, other: "TensorLike") -> "Tensor":
        from taftseg.tensor import functional as F

        return F.add(self, as_tensor(other))

    def __radd__(self, other: "TensorLike") -> "Tensor":
        from taftseg.tensor import functional as F

        return F.add(as_tensor(other), self)

    def __sub__(self, other: "TensorLike") -> "Tensor":
        from taftseg.tensor import functional as F

        return F.subtract(self, as_tensor(other))

    def __rsub__(self, other: "TensorLike") -> "Tensor":
        from taftseg.tensor import functional as F

        return F.subtract(as_tensor(other), self)

    def __mul__(self, other: "TensorLike") -> "Tensor":
        from taftseg.tensor import functional as F

        if isinstance(other, (int, float)):
            return F.scale(self, float(other))
        return F.multiply(self, as_tensor(other))

    def __rmul__(self, other: "TensorLike") -> "Tensor":
        return self.__mul__(other)

    def __truediv__(self, other: "TensorLike") -> "Tensor":
        from taftseg.tensor import functional as F

        if isinstance(other, (int, float)):
            return F.scale(self, 1.0 / float(other))
        return F.divide(self, as_tensor(other))

    def __neg__(self) -> "Tensor":
        from taftseg.tensor import functional as F

        return F.negate(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from taftseg.tensor import functional as F

        return F.matmul(self, other)


TensorLike = Union[Tensor, float, int, np.ndarray]


def as_tensor(value: TensorLike) -> Tensor:
    """Wrap plain numbers and arrays as constants."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    """Trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)


@dataclass
class Node:
    """One recorded operation on the tape."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    output_id: int
    backward_fn: BackwardFn


class Graph:
    """
    Ordered tape of recorded operations.

    Inputs of every node are either leaves or outputs of earlier nodes, so walking
    the tape in reverse visits each node once, after all its consumers.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Graph":
        if self._token is not None:
            raise ContractError("graph is already active")
        self._token = _active_graph.set(self)
        return self

    def __exit__(self, *exc_info) -> None:
        if self._token is not None:
            _active_graph.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    @staticmethod
    def current() -> Optional["Graph"]:
        return _active_graph.get()

    def record(
        self, op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn: BackwardFn
    ) -> Tensor:
        """Append an operation and mark ``output`` as its node."""
        node_id = len(self.nodes)
        self.nodes.append(Node(op, tuple(inputs), output, node_id, backward_fn))
        output.node_id = node_id
        output.requires_grad = True
        output._graph = self
        return output

    def backward(self, loss: Tensor) -> None:
        """
        Accumulate d(loss)/d(leaf) into every reachable leaf that requires grad.

        Raises:
            ContractError: If ``loss`` is not a scalar or was recorded on another graph
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node_id is None:
            # loss is a leaf or a constant: nothing upstream
            if loss.requires_grad and loss.grad is not None:
                loss.grad += np.ones_like(loss.data)
            return
        if loss._graph is not self:
            raise ContractError("loss was recorded on a different graph")

        pending: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for node in reversed(self.nodes[: loss.node_id + 1]):
            upstream = pending.pop(node.output_id, None)
            if upstream is None:
                continue
            input_grads = node.backward_fn(upstream)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.node_id is not None and tensor._graph is self:
                    if tensor.node_id in pending:
                        pending[tensor.node_id] = pending[tensor.node_id] + grad
                    else:
                        pending[tensor.node_id] = grad
                elif tensor.grad is not None:
                    tensor.grad += grad

    def clear(self) -> None:
        """Free the tape; recorded outputs become plain constants."""
        for node in self.nodes:
            node.output._graph = None
            node.output.node_id = None
            node.output.requires_grad = False
        self.nodes.clear()


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar ``loss``."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = loss._graph
    if graph is None:
        if loss.grad is not None:
            loss.grad += np.ones_like(loss.data)
        return
    graph.backward(loss)


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn: BackwardFn) -> Tensor:
    """
    Wrap ``out_data`` as the output of ``op``.

    The node is recorded only when a graph is active and some input requires
    grad; otherwise the result is a constant.
    """
    out = Tensor.wrap(out_data)
    graph = Graph.current()
    if graph is not None and any(t.requires_grad for t in inputs):
        graph.record(op, inputs, out, backward_fn)
    return out
