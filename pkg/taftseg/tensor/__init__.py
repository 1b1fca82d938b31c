from .graph import Graph, Node, Tensor, as_tensor, backward, parameter
from . import functional

__all__ = ["Graph", "Node", "Tensor", "as_tensor", "backward", "parameter", "functional"]
