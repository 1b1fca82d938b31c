"""
Central finite-difference gradient checking.
"""

from typing import Callable, Dict, Sequence

import numpy as np

from taftseg.tensor.graph import Graph, Tensor


def numerical_gradient(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-6) -> np.ndarray:
    """
    Central differences of the scalar ``fn()`` with respect to ``x``.

    ``x.data`` is perturbed in place and restored; ``fn`` must run without an
    active graph.
    """
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = fn().item()
        flat[i] = original - eps
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """‖a − n‖ / (‖a‖ + ‖n‖), zero when both vanish."""
    denom = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric)) / denom


def analytic_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> Dict[int, np.ndarray]:
    """Gradients of ``fn()`` from one recorded backward pass, keyed by input position."""
    for t in inputs:
        t.zero_grad()
    graph = Graph()
    with graph:
        loss = fn()
    graph.backward(loss)
    grads = {i: t.grad.copy() for i, t in enumerate(inputs)}
    graph.clear()
    return grads


def check_gradients(
    fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6
) -> float:
    """Largest relative error between analytic and numerical gradients over ``inputs``."""
    analytic = analytic_gradients(fn, inputs)
    worst = 0.0
    for i, tensor in enumerate(inputs):
        numeric = numerical_gradient(fn, tensor, eps)
        worst = max(worst, relative_error(analytic[i], numeric))
    return worst
