"""
Scene and class-catalog types shared by the synthetic world and folder datasets.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from taftseg.errors import ConfigurationError


@dataclass
class ClassInfo:
    """One entry of the class catalog."""
    id: int
    name: str
    split: int


@dataclass
class Scene:
    """RGB image in [0,1] (3,H,W) with its integer class map (H,W); 0 is background."""
    image: np.ndarray
    class_map: np.ndarray

    @property
    def size(self) -> int:
        return int(self.class_map.shape[0])

    def classes_present(self) -> List[int]:
        return [int(c) for c in np.unique(self.class_map) if c != 0]


class SceneSource(ABC):
    """Class catalog with split pools and a way to draw scenes containing a class."""

    catalog: List[ClassInfo]
    image_size: int

    @property
    def num_splits(self) -> int:
        return max(info.split for info in self.catalog) + 1

    def class_ids(self) -> List[int]:
        return sorted(info.id for info in self.catalog)

    def class_names(self) -> Dict[int, str]:
        return {info.id: info.name for info in self.catalog}

    def test_classes(self, split: int) -> List[int]:
        self._check_split(split)
        return sorted(info.id for info in self.catalog if info.split == split)

    def train_classes(self, split: int) -> List[int]:
        self._check_split(split)
        return sorted(info.id for info in self.catalog if info.split != split)

    def _check_split(self, split: int) -> None:
        if not 0 <= split < self.num_splits:
            raise ConfigurationError(
                f"split {split} out of range for {self.num_splits} splits", key="split"
            )

    @abstractmethod
    def draw_scene(self, rng: np.random.Generator, required_class: int) -> Scene:
        """A scene whose class map contains ``required_class``."""

    @abstractmethod
    def signature(self) -> str:
        """Stable hash identifying catalog, splits and generation settings."""
