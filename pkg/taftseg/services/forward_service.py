"""
The TAFT-SE forward pass over one episode, shared by training and inference.

Supports give prototypes and the transform P; queries are encoded, attended,
transformed and decoded together with their low-level feature. The auxiliary
decoder reads the attended but untransformed high-level feature.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from taftseg.models.networks import HIGH_LEVEL_FACTOR, LOW_LEVEL_FACTOR, TaftSegModel
from taftseg.services.taft_service import (
    PrototypeSet,
    TransformMatrix,
    apply_transform,
    build_transform,
    compute_prototypes,
    downsize_labels,
)
from taftseg.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class TransformSettings:
    """How P is built for an episode."""
    ridge: float = 1e-8
    identity: bool = False


@dataclass
class EpisodeForward:
    """Intermediate tensors of one forward pass."""
    prototypes: PrototypeSet
    transform: TransformMatrix
    query_low: Tensor
    query_high: Tensor
    task_agnostic: Tensor
    decoder_low: Tensor
    logits: Tensor
    low_prototypes: Optional[PrototypeSet] = None
    low_transform: Optional[TransformMatrix] = None


def _transform(
    protos: PrototypeSet, refs, settings: TransformSettings
) -> TransformMatrix:
    if settings.identity:
        return TransformMatrix.identity(refs.d)
    return build_transform(protos, refs, ridge=settings.ridge)


def forward_episode(
    model: TaftSegModel,
    support_images: np.ndarray,
    support_masks: np.ndarray,
    query_images: np.ndarray,
    settings: TransformSettings,
) -> EpisodeForward:
    """
    Run supports and queries through the network.

    Inside an active ``Graph`` every step is recorded; outside one the pass is
    pure inference.
    """
    support_low, support_high = model.features(Tensor.wrap(support_images))
    support_labels = downsize_labels(support_masks, HIGH_LEVEL_FACTOR)
    prototypes = compute_prototypes(support_high, support_labels)
    transform = _transform(prototypes, model.references, settings)

    query_low, query_high = model.features(Tensor.wrap(query_images))
    task_agnostic = apply_transform(transform, query_high)

    decoder_low = query_low
    low_prototypes = low_transform = None
    if model.low_references is not None:
        low_labels = downsize_labels(support_masks, LOW_LEVEL_FACTOR)
        low_prototypes = compute_prototypes(support_low, low_labels)
        low_transform = _transform(low_prototypes, model.low_references, settings)
        decoder_low = apply_transform(low_transform, query_low)

    logits = model.decode(task_agnostic, decoder_low)
    return EpisodeForward(
        prototypes=prototypes,
        transform=transform,
        query_low=query_low,
        query_high=query_high,
        task_agnostic=task_agnostic,
        decoder_low=decoder_low,
        logits=logits,
        low_prototypes=low_prototypes,
        low_transform=low_transform,
    )
