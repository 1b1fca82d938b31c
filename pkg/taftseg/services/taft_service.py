"""
Task-adaptive feature transformation.

Support features and soft labels give foreground/background prototypes; the
prototypes and the meta-learned reference vectors give a per-episode linear map
``P = R (CᵀC + ridge·I)⁻¹ Cᵀ`` that is applied pixel-wise to query features.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from taftseg.errors import (
    ContractError,
    DegenerateInputError,
    DegenerateLabelError,
    DimensionError,
    SingularSystemError,
)
from taftseg.models.layers import Module
from taftseg.tensor import Tensor, parameter
from taftseg.tensor import functional as F

logger = logging.getLogger(__name__)

FOREGROUND = 0
BACKGROUND = 1
PLANES = ("fg", "bg")
SINGULAR_DETERMINANT = 1e-12


@dataclass
class DownsizedLabel:
    """Average-pooled binary mask at feature resolution."""
    fg: np.ndarray
    bg: np.ndarray

    @property
    def shape(self):
        return self.fg.shape

    def plane(self, index: int) -> np.ndarray:
        return self.fg if index == FOREGROUND else self.bg


@dataclass
class PrototypeSet:
    """
    Foreground/background prototypes of one episode.

    ``per_shot`` is d×2N with columns [fg_1..fg_N, bg_1..bg_N]; ``fg``/``bg`` are
    the shot means.
    """
    fg: Tensor
    bg: Tensor
    per_shot: Tensor
    shots: int

    def shot(self, n: int, plane: int) -> np.ndarray:
        return self.per_shot.data[:, plane * self.shots + n].copy()


@dataclass
class TransformMatrix:
    """Per-episode d×d map with the diagnostics of its solve."""
    matrix: Tensor
    condition: float
    ridge: float
    determinant: float

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, d: int) -> "TransformMatrix":
        return cls(matrix=Tensor.wrap(np.eye(d)), condition=1.0, ridge=0.0, determinant=1.0)


class ReferenceBank(Module):
    """Meta-learned task-agnostic anchors r_fg, r_bg."""

    def __init__(self, rng: np.random.Generator, d: int):
        std = 1.0 / np.sqrt(d)
        self.fg = parameter(rng.normal(0.0, std, size=d))
        self.bg = parameter(rng.normal(0.0, std, size=d))

    @property
    def d(self) -> int:
        return self.fg.shape[0]

    def as_matrix(self) -> Tensor:
        """d×2 matrix [r_fg, r_bg]; differentiable."""
        return F.column_stack([self.fg, self.bg])

    def snapshot(self) -> np.ndarray:
        return np.stack([self.fg.data, self.bg.data], axis=1).copy()


def downsize_label(mask: np.ndarray, factor: int) -> DownsizedLabel:
    """
    Average-pool a binary (H,W) mask into foreground/background soft labels.

    Raises:
        ContractError: If the mask is not binary
        DimensionError: If H or W is not divisible by ``factor``
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise DimensionError(f"mask must be 2D, got shape {mask.shape}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ContractError("mask must be binary (values in {0, 1})")
    fg = F.avgpool2d(Tensor.wrap(mask[None, None]), factor).data[0, 0]
    bg = F.avgpool2d(Tensor.wrap(1.0 - mask[None, None]), factor).data[0, 0]
    return DownsizedLabel(fg=fg, bg=bg)


def downsize_labels(masks: np.ndarray, factor: int) -> List[DownsizedLabel]:
    return [downsize_label(m, factor) for m in np.asarray(masks)]


def _stack_features(high_feats: Union[Tensor, Sequence[Tensor]]) -> Tensor:
    if isinstance(high_feats, Tensor):
        return high_feats
    if not high_feats:
        raise ContractError("compute_prototypes needs at least one shot")
    return F.concat([F.reshape(h, (1,) + h.shape) for h in high_feats], axis=0)


def compute_prototypes(
    high_feats: Union[Tensor, Sequence[Tensor]], labels: Sequence[DownsizedLabel]
) -> PrototypeSet:
    """
    Soft-label weighted means of feature pixels, per shot and averaged over shots.

    Gradients flow into the features. ``high_feats`` is an (N,d,Hs,Ws) tensor or a
    list of N (d,Hs,Ws) tensors.

    Raises:
        DegenerateLabelError: If a label plane sums to zero
    """
    feats = _stack_features(high_feats)
    if feats.ndim != 4:
        raise DimensionError(f"features must be (N,d,Hs,Ws), got {feats.shape}")
    shots, d, hs, ws = feats.shape
    if len(labels) != shots:
        raise ContractError(f"{shots} feature maps but {len(labels)} labels")
    pixels = hs * ws

    weights = np.zeros((shots * pixels, 2 * shots))
    for n, label in enumerate(labels):
        if label.shape != (hs, ws):
            raise DimensionError(f"label {label.shape} does not match feature {(hs, ws)} for shot {n}")
        for plane in (FOREGROUND, BACKGROUND):
            values = label.plane(plane).reshape(-1)
            total = values.sum()
            if total <= 0.0:
                raise DegenerateLabelError(
                    f"shot {n} {PLANES[plane]} label plane sums to zero",
                    shot=n,
                    plane=PLANES[plane],
                )
            weights[n * pixels : (n + 1) * pixels, plane * shots + n] = values / total

    averaging = np.zeros((2 * shots, 2))
    averaging[:shots, FOREGROUND] = 1.0 / shots
    averaging[shots:, BACKGROUND] = 1.0 / shots

    flat = F.reshape(F.transpose(feats, (1, 0, 2, 3)), (d, shots * pixels))
    per_shot = F.matmul(flat, Tensor.wrap(weights))
    means = F.matmul(per_shot, Tensor.wrap(averaging))
    fg = F.reshape(F.matmul(means, Tensor.wrap(np.array([[1.0], [0.0]]))), (d,))
    bg = F.reshape(F.matmul(means, Tensor.wrap(np.array([[0.0], [1.0]]))), (d,))
    return PrototypeSet(fg=fg, bg=bg, per_shot=per_shot, shots=shots)


def _unit_column(vector: Tensor, what: str) -> Tensor:
    norm = F.l2_norm(vector)
    if norm.item() <= 0.0:
        raise DegenerateInputError(f"{what} has zero norm", vector=what)
    return F.divide(vector, norm)


def build_transform(protos: PrototypeSet, refs: ReferenceBank, ridge: float = 1e-8) -> TransformMatrix:
    """
    Least-squares map sending normalized prototypes to normalized references.

    References enter as constants (stop-gradient); prototypes stay on the graph so
    gradient reaches the encoder through C and the closed-form 2×2 inverse.

    Raises:
        DegenerateInputError: If a prototype or reference has zero norm
        SingularSystemError: If det(CᵀC + ridge·I) < 1e-12
    """
    if ridge < 0:
        raise ContractError(f"ridge must be non-negative, got {ridge}")
    if protos.fg.shape != (refs.d,):
        raise DimensionError(f"prototype width {protos.fg.shape} does not match reference width {refs.d}")
    c = F.column_stack([_unit_column(protos.fg, "c_fg"), _unit_column(protos.bg, "c_bg")])
    r = F.column_stack(
        [_unit_column(F.detach(refs.fg), "r_fg"), _unit_column(F.detach(refs.bg), "r_bg")]
    )
    gram = F.matmul(F.transpose(c, (1, 0)), c)
    if ridge > 0:
        gram = F.add(gram, Tensor.wrap(ridge * np.eye(2)))
    determinant = float(np.linalg.det(gram.data))
    if abs(determinant) < SINGULAR_DETERMINANT:
        raise SingularSystemError(
            f"CᵀC + ridge·I is singular (det={determinant:.3e}, ridge={ridge})",
            determinant=determinant,
            ridge=ridge,
        )
    condition = float(np.linalg.cond(gram.data))
    if condition > 1e6:
        logger.debug(f"ill-conditioned prototype system: cond={condition:.3e}, ridge={ridge}")
    matrix = F.matmul(F.matmul(r, F.inverse_2x2(gram)), F.transpose(c, (1, 0)))
    return TransformMatrix(matrix=matrix, condition=condition, ridge=ridge, determinant=determinant)


def apply_transform(transform: TransformMatrix, high: Tensor) -> Tensor:
    """Multiply every pixel vector by P, as a 1×1 convolution with weight P."""
    if high.ndim != 4 or high.shape[1] != transform.d:
        raise DimensionError(
            f"feature {high.shape} does not match a {transform.d}x{transform.d} transform",
            left_shape=high.shape,
        )
    kernel = F.reshape(transform.matrix, (transform.d, transform.d, 1, 1))
    return F.conv2d(high, kernel)


def soft_targets(labels: Sequence[DownsizedLabel]) -> np.ndarray:
    """(B·Hs·Ws, 2) targets in row-major pixel order, columns [fg, bg]."""
    return np.concatenate(
        [np.stack([lab.fg.reshape(-1), lab.bg.reshape(-1)], axis=1) for lab in labels], axis=0
    )


def regression_probabilities(h_a: Tensor, refs: ReferenceBank) -> Tensor:
    """Per-pixel softmax over [r_fg·h, r_bg·h]; shape (B·Hs·Ws, 2)."""
    batch, d, hs, ws = h_a.shape
    if d != refs.d:
        raise DimensionError(f"feature width {d} does not match reference width {refs.d}")
    flat = F.reshape(F.transpose(h_a, (0, 2, 3, 1)), (batch * hs * ws, d))
    return F.softmax(F.matmul(flat, refs.as_matrix()), axis=1)


def regression_loss(h_a: Tensor, refs: ReferenceBank, labels: Sequence[DownsizedLabel]) -> Tensor:
    """
    Mean squared error between reference-softmax scores and soft labels, averaged
    over {fg, bg} × pixels × batch.
    """
    if h_a.ndim != 4:
        raise DimensionError(f"task-agnostic feature must be 4D, got {h_a.shape}")
    if len(labels) != h_a.shape[0]:
        raise ContractError(f"batch of {h_a.shape[0]} features but {len(labels)} labels")
    for label in labels:
        if label.shape != h_a.shape[2:]:
            raise DimensionError(f"label {label.shape} does not match feature {h_a.shape[2:]}")
    probs = regression_probabilities(h_a, refs)
    diff = F.subtract(probs, Tensor.wrap(soft_targets(labels)))
    return F.mean(F.multiply(diff, diff))
