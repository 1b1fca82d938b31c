"""
Differentiable operations over ``Tensor``.

Each op computes its forward result with numpy and registers a backward rule
returning one gradient per input (``None`` where an input is not differentiable).
Binary elementwise ops accept equal shapes, a scalar operand, or a length-C
vector broadcast along the channel axis (axis 1); nothing more general.
"""

import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from taftseg.errors import ContractError, DimensionError, SingularSystemError
from taftseg.tensor.graph import Tensor, record

Reducer = Callable[[np.ndarray], np.ndarray]


def _identity(grad: np.ndarray) -> np.ndarray:
    return grad


def _align(small: Tensor, big: Tensor, op: str) -> Tuple[np.ndarray, Reducer]:
    """Broadcast ``small`` against ``big``; return its view and a grad reducer."""
    if small.shape == big.shape:
        return small.data, _identity
    if small.size == 1 and small.ndim <= 1:
        target = small.shape

        def reduce_scalar(grad: np.ndarray) -> np.ndarray:
            return np.asarray(grad.sum()).reshape(target)

        return small.data.reshape(()), reduce_scalar
    if small.ndim == 1 and big.ndim >= 2 and small.shape[0] == big.shape[1]:
        view_shape = [1] * big.ndim
        view_shape[1] = small.shape[0]
        axes = tuple(i for i in range(big.ndim) if i != 1)

        def reduce_channel(grad: np.ndarray) -> np.ndarray:
            return grad.sum(axis=axes)

        return small.data.reshape(view_shape), reduce_channel
    raise DimensionError(
        f"{op}: incompatible shapes {small.shape} and {big.shape}",
        left_shape=small.shape,
        right_shape=big.shape,
    )


def _binary_operands(a: Tensor, b: Tensor, op: str) -> Tuple[np.ndarray, np.ndarray, Reducer, Reducer]:
    if a.shape == b.shape:
        return a.data, b.data, _identity, _identity
    if a.size >= b.size:
        b_data, reduce_b = _align(b, a, op)
        return a.data, b_data, _identity, reduce_b
    a_data, reduce_a = _align(a, b, op)
    return a_data, b.data, reduce_a, _identity


def add(a: Tensor, b: Tensor) -> Tensor:
    x, y, ra, rb = _binary_operands(a, b, "add")
    out = x + y
    return record("add", (a, b), out, lambda g: (ra(g), rb(g)))


def subtract(a: Tensor, b: Tensor) -> Tensor:
    x, y, ra, rb = _binary_operands(a, b, "subtract")
    out = x - y
    return record("subtract", (a, b), out, lambda g: (ra(g), rb(-g)))


def multiply(a: Tensor, b: Tensor) -> Tensor:
    x, y, ra, rb = _binary_operands(a, b, "multiply")
    out = x * y
    return record("multiply", (a, b), out, lambda g: (ra(g * y), rb(g * x)))


def divide(a: Tensor, b: Tensor) -> Tensor:
    x, y, ra, rb = _binary_operands(a, b, "divide")
    out = x / y
    return record("divide", (a, b), out, lambda g: (ra(g / y), rb(-g * x / (y * y))))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record("relu", (a,), a.data * mask, lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return record("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return record("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


def negate(a: Tensor) -> Tensor:
    return record("negate", (a,), -a.data, lambda g: (-g,))


def scale(a: Tensor, factor: float) -> Tensor:
    return record("scale", (a,), a.data * factor, lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of (m×k)·(k×n), or of two operands with identical leading
    batch extents (…×m×k)·(…×k×n).
    """
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: cannot multiply {a.shape} by {b.shape}",
            left_shape=a.shape,
            right_shape=b.shape,
        )
    x, y = a.data, b.data
    out = np.matmul(x, y)

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return np.matmul(g, np.swapaxes(y, -1, -2)), np.matmul(np.swapaxes(x, -1, -2), g)

    return record("matmul", (a, b), out, backward)


def _conv_extent(size: int, kernel: int, stride: int, dilation: int, padding: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    dilation: int = 1,
    padding: int = 0,
) -> Tensor:
    """2D cross-correlation over a (B,C,H,W) input with an (O,C,kh,kw) kernel."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4D input and kernel, got {x.shape} and {w.shape}")
    batch, channels, height, width = x.shape
    out_channels, in_channels, kh, kw = w.shape
    if in_channels != channels:
        raise DimensionError(
            f"conv2d: kernel expects {in_channels} channels, input has {channels}",
            left_shape=x.shape,
            right_shape=w.shape,
        )
    if kh < 1 or kw < 1 or stride < 1 or dilation < 1 or padding < 0:
        raise ContractError(f"conv2d: invalid geometry kernel={kh}x{kw} stride={stride} dilation={dilation}")
    if bias is not None and bias.shape != (out_channels,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {out_channels} outputs")
    ho = _conv_extent(height, kh, stride, dilation, padding)
    wo = _conv_extent(width, kw, stride, dilation, padding)
    if ho < 1 or wo < 1:
        raise DimensionError(
            f"conv2d: output extent {ho}x{wo} < 1 for input {height}x{width}",
            input_shape=x.shape,
        )

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    row_span = stride * (ho - 1) + 1
    col_span = stride * (wo - 1) + 1
    cols = np.empty((batch, channels, kh, kw, ho, wo))
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            cols[:, :, i, j] = padded[:, :, r0 : r0 + row_span : stride, c0 : c0 + col_span : stride]

    out = np.tensordot(cols, w.data, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)
    weights = w.data

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
        grad_w = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
        grad_cols = np.tensordot(g, weights, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
        grad_padded = np.zeros_like(padded)
        for i in range(kh):
            r0 = i * dilation
            for j in range(kw):
                c0 = j * dilation
                grad_padded[:, :, r0 : r0 + row_span : stride, c0 : c0 + col_span : stride] += grad_cols[:, :, i, j]
        grad_x = grad_padded[:, :, padding : padding + height, padding : padding + width]
        grad_b = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return np.ascontiguousarray(grad_x), grad_w, grad_b

    inputs = (x, w, bias) if bias is not None else (x, w)
    return record("conv2d", inputs, out, backward)


def avgpool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k×k average pooling of a (B,C,H,W) tensor."""
    if x.ndim != 4:
        raise DimensionError(f"avgpool2d expects a 4D tensor, got {x.shape}")
    batch, channels, height, width = x.shape
    if k < 1 or height % k or width % k:
        raise DimensionError(f"avgpool2d: extent {height}x{width} is not divisible by {k}", input_shape=x.shape)
    out = x.data.reshape(batch, channels, height // k, k, width // k, k).mean(axis=(3, 5))

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return record("avgpool2d", (x,), out, backward)


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", (x,), out, backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", (x,), out, backward)


def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out × n_in) matrix of align-corners-false linear interpolation."""
    matrix = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * ratio - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        matrix[o, i0] += 1.0 - lam
        matrix[o, i1] += lam
    return matrix


def bilinear_resize(x: Tensor, height: int, width: int) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"bilinear_resize expects a 4D tensor, got {x.shape}")
    if height < 1 or width < 1:
        raise ContractError(f"bilinear_resize: target size {height}x{width} must be positive")
    if (height, width) == x.shape[2:]:
        return record("bilinear_resize", (x,), x.data.copy(), lambda g: (g,))
    rows = interpolation_matrix(x.shape[2], height)
    cols = interpolation_matrix(x.shape[3], width)
    out = np.matmul(np.matmul(rows, x.data), cols.T)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (np.matmul(np.matmul(rows.T, g), cols),)

    return record("bilinear_resize", (x,), out, backward)


def sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    if axis is None:
        out = np.asarray(x.data.sum())

        def backward_all(g: np.ndarray) -> Tuple[np.ndarray]:
            return (np.full(x.shape, float(g)),)

        return record("sum", (x,), out, backward_all)

    axis = _check_axis(x, axis)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record("sum", (x,), out, backward)


def mean(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else x.shape[_check_axis(x, axis)]
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def l2_norm(x: Tensor) -> Tensor:
    """Euclidean norm of all elements; the zero vector gets norm 0 and zero gradient."""
    norm = float(np.sqrt((x.data * x.data).sum()))

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        if norm == 0.0:
            return (np.zeros_like(x.data),)
        return (float(g) * x.data / norm,)

    return record("l2_norm", (x,), np.asarray(norm), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc
    return record("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return record("transpose", (x,), out, lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (the channel axis by default)."""
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    first = tensors[0]
    axis = _check_axis(first, axis)
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            t.shape[i] != first.shape[i] for i in range(first.ndim) if i != axis
        ):
            raise DimensionError(
                f"concat: shape {t.shape} does not match {first.shape} off axis {axis}",
                left_shape=first.shape,
                right_shape=t.shape,
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", tuple(tensors), out, backward)


def inverse_2x2(m: Tensor) -> Tensor:
    """Closed-form inverse of a 2×2 matrix; backward is −M⁻ᵀ·G·M⁻ᵀ."""
    if m.shape != (2, 2):
        raise DimensionError(f"inverse_2x2 expects shape (2, 2), got {m.shape}")
    (a, b), (c, d) = m.data
    det = a * d - b * c
    if det == 0.0:
        raise SingularSystemError("inverse_2x2: determinant is zero", determinant=0.0)
    inv = np.array([[d, -b], [-c, a]]) / det

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (-inv.T @ g @ inv.T,)

    return record("inverse_2x2", (m,), inv, backward)


def cross_entropy(logits: Tensor, target: np.ndarray, axis: int = 1) -> Tensor:
    """
    Mean over all non-class positions of −Σ_k target_k · log_softmax(logits)_k.

    ``target`` is a constant one-hot (or soft) array of the same shape as ``logits``.
    """
    if target.shape != logits.shape:
        raise DimensionError(
            f"cross_entropy: target {target.shape} does not match logits {logits.shape}",
            left_shape=logits.shape,
            right_shape=target.shape,
        )
    picked = sum(multiply(log_softmax(logits, axis=axis), Tensor.wrap(target)), axis=axis)
    return negate(mean(picked))


def one_hot(labels: np.ndarray, classes: int, axis: int = 1) -> np.ndarray:
    """(B,H,W) integer labels -> float one-hot with the class axis inserted at ``axis``."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ContractError(f"labels outside [0, {classes}) for one-hot encoding")
    encoded = np.eye(classes)[labels]
    return np.moveaxis(encoded, -1, axis)


def detach(x: Tensor) -> Tensor:
    """Stop-gradient barrier."""
    return x.detach()


def column_stack(vectors: List[Tensor]) -> Tensor:
    """Stack length-d vectors as the columns of a d×len(vectors) matrix."""
    return concat([reshape(v, (v.size, 1)) for v in vectors], axis=1)
