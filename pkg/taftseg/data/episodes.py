"""
Episode sampling: one target class, N support pairs and M query pairs.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence

import numpy as np

from taftseg.data.scenes import SceneSource
from taftseg.errors import ConfigurationError, ContractError

logger = logging.getLogger(__name__)


class Phase(str, Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass
class Episode:
    """
    One 1-way N-shot task.

    Masks are float arrays with values exactly in {0, 1}. ``aux_labels`` are class
    maps in which every class outside the split's training pool is background.
    """
    target_class: int
    phase: Phase
    split: int
    seed: int
    support_images: np.ndarray
    support_masks: np.ndarray
    query_images: np.ndarray
    query_masks: np.ndarray
    aux_labels: np.ndarray

    @property
    def shots(self) -> int:
        return int(self.support_images.shape[0])

    @property
    def queries(self) -> int:
        return int(self.query_images.shape[0])

    @property
    def image_size(self) -> int:
        return int(self.query_images.shape[-1])


def class_pool(source: SceneSource, phase: Phase, split: int) -> List[int]:
    if Phase(phase) == Phase.TRAIN:
        return source.train_classes(split)
    return source.test_classes(split)


def aux_label(class_map: np.ndarray, train_classes: Sequence[int]) -> np.ndarray:
    """Class map with every class outside ``train_classes`` set to background."""
    keep = np.isin(class_map, np.asarray(list(train_classes), dtype=np.int64))
    return np.where(keep, class_map, 0).astype(np.int64)


def aux_class_indices(labels: np.ndarray, train_classes: Sequence[int]) -> np.ndarray:
    """
    Renumber training classes 1..K in ascending id order; 0 stays background.

    Raises:
        ContractError: If a label is neither 0 nor a training class
    """
    ordered = sorted(train_classes)
    lookup = np.zeros(max(ordered + [int(labels.max(initial=0))]) + 1, dtype=np.int64)
    lookup[ordered] = np.arange(1, len(ordered) + 1)
    stray = labels[(labels != 0) & (lookup[labels] == 0)]
    if stray.size:
        raise ContractError(f"aux labels contain non-training class ids {sorted(set(stray.tolist()))}")
    return lookup[labels]


def sample_episode(
    source: SceneSource,
    phase: Phase,
    split: int,
    shots: int,
    queries: int,
    seed: int,
) -> Episode:
    """
    Draw a target class uniformly from the phase's pool and fill the episode with
    scenes that contain it.

    Raises:
        ConfigurationError: If the class pool is empty or shot/query counts are < 1
        GenerationError: If the source cannot produce a scene with the target
    """
    if shots < 1 or queries < 1:
        raise ConfigurationError(f"episodes need shots >= 1 and queries >= 1, got {shots}/{queries}", key="shots")
    pool = class_pool(source, phase, split)
    if not pool:
        raise ConfigurationError(f"split {split} has no {Phase(phase).value} classes", key="split")

    rng = np.random.default_rng(seed)
    target = int(pool[int(rng.integers(0, len(pool)))])
    train_classes = source.train_classes(split)
    scenes = [source.draw_scene(rng, target) for _ in range(shots + queries)]
    images = np.stack([s.image for s in scenes])
    masks = np.stack([(s.class_map == target).astype(np.float64) for s in scenes])
    aux = np.stack([aux_label(s.class_map, train_classes) for s in scenes[shots:]])
    logger.debug(f"episode seed={seed} phase={Phase(phase).value} split={split} target={target}")
    return Episode(
        target_class=target,
        phase=Phase(phase),
        split=split,
        seed=seed,
        support_images=images[:shots],
        support_masks=masks[:shots],
        query_images=images[shots:],
        query_masks=masks[shots:],
        aux_labels=aux,
    )


def episode_seed(base_seed: int, index: int) -> int:
    """Seed of episode ``index`` in a run seeded with ``base_seed``."""
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])
