"""
Synthetic multi-shape scenes for desk-scale few-shot segmentation.

Twelve classes combine four shape kinds with three fill textures. Class ids run
kind-major from 1 (circle-solid) to 12 (ring-dotted); class ``c`` belongs to
split ``(c - 1) % 4`` so every split mixes kinds and textures.

Generation is a pure function of (world seed, scene seed) using numpy's PCG64
generator, which gives the same stream on every platform.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from taftseg.data.scenes import ClassInfo, Scene, SceneSource
from taftseg.errors import GenerationError
from taftseg.schemas.config import WorldConfig
from taftseg.utils.hashing import short_hash

logger = logging.getLogger(__name__)

SHAPE_KINDS = ("circle", "square", "triangle", "ring")
TEXTURES = ("solid", "striped", "dotted")
RING_INNER_RATIO = 0.55
TEXTURE_PERIOD = 6.0
PLACEMENT_RETRIES = 50
REJECTION_ATTEMPTS = 500


def shape_catalog(num_splits: int = 4) -> List[ClassInfo]:
    catalog = []
    for k, kind in enumerate(SHAPE_KINDS):
        for t, texture in enumerate(TEXTURES):
            class_id = k * len(TEXTURES) + t + 1
            catalog.append(ClassInfo(id=class_id, name=f"{kind}-{texture}", split=(class_id - 1) % num_splits))
    return catalog


def kind_and_texture(class_id: int) -> Tuple[str, str]:
    index = class_id - 1
    return SHAPE_KINDS[index // len(TEXTURES)], TEXTURES[index % len(TEXTURES)]


def _rotated(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, angle: float) -> Tuple[np.ndarray, np.ndarray]:
    dy, dx = yy - cy, xx - cx
    cos, sin = math.cos(angle), math.sin(angle)
    return dx * cos + dy * sin, -dx * sin + dy * cos


def _extent(kind: str, area: float) -> float:
    """Radius of the smallest centred disc containing a shape of the given area."""
    if kind == "circle":
        return math.sqrt(area / math.pi)
    if kind == "square":
        return math.sqrt(area) / 2.0 * math.sqrt(2.0)
    if kind == "triangle":
        return math.sqrt(4.0 * area / (3.0 * math.sqrt(3.0)))
    return math.sqrt(area / (math.pi * (1.0 - RING_INNER_RATIO**2)))


def rasterize(kind: str, size: int, cy: float, cx: float, area: float, angle: float) -> np.ndarray:
    """Boolean (size,size) mask of one shape with the requested area in pixels."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    u, v = _rotated(yy, xx, cy, cx, angle)
    if kind == "circle":
        radius = math.sqrt(area / math.pi)
        return u * u + v * v <= radius * radius
    if kind == "square":
        half = math.sqrt(area) / 2.0
        return (np.abs(u) <= half) & (np.abs(v) <= half)
    if kind == "triangle":
        radius = _extent("triangle", area)
        corners = [
            (radius * math.cos(a), radius * math.sin(a))
            for a in (math.pi / 2, math.pi / 2 + 2 * math.pi / 3, math.pi / 2 + 4 * math.pi / 3)
        ]
        inside = np.ones_like(u, dtype=bool)
        for (x0, y0), (x1, y1) in zip(corners, corners[1:] + corners[:1]):
            inside &= (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0) >= 0
        return inside
    if kind == "ring":
        outer = _extent("ring", area)
        inner = outer * RING_INNER_RATIO
        dist2 = u * u + v * v
        return (dist2 <= outer * outer) & (dist2 >= inner * inner)
    raise GenerationError(f"unknown shape kind {kind}", kind=kind)


def texture_pattern(texture: str, size: int, angle: float, phase: float) -> np.ndarray:
    """Boolean (size,size) map of the secondary colour of a fill texture."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    if texture == "solid":
        return np.zeros((size, size), dtype=bool)
    if texture == "striped":
        coord = xx * math.cos(angle) + yy * math.sin(angle) + phase
        return np.mod(coord, TEXTURE_PERIOD) < TEXTURE_PERIOD / 2
    if texture == "dotted":
        half = TEXTURE_PERIOD / 2
        dy = np.mod(yy + phase, TEXTURE_PERIOD) - half
        dx = np.mod(xx + phase, TEXTURE_PERIOD) - half
        return dx * dx + dy * dy <= 1.6**2
    raise GenerationError(f"unknown texture {texture}", texture=texture)


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(0.0, 0.35, size=3)
    tilt = rng.uniform(-0.15, 0.15, size=(3, 2))
    ramp = np.linspace(-0.5, 0.5, size)
    yy, xx = np.meshgrid(ramp, ramp, indexing="ij")
    return base[:, None, None] + tilt[:, 0, None, None] * yy + tilt[:, 1, None, None] * xx


@dataclass
class ShapeWorld(SceneSource):
    """Synthetic scene source with a fixed catalog and split assignment."""
    config: WorldConfig = field(default_factory=WorldConfig)
    seed: int = 0
    catalog: List[ClassInfo] = field(default_factory=list)

    def __post_init__(self):
        if not self.catalog:
            self.catalog = shape_catalog(self.config.num_splits)

    @property
    def image_size(self) -> int:  # type: ignore[override]
        return self.config.image_size

    def signature(self) -> str:
        return short_hash(
            {
                "kind": "shape-world",
                "seed": self.seed,
                "config": self.config.model_dump(mode="json"),
                "catalog": [(c.id, c.name, c.split) for c in self.catalog],
            }
        )

    def generate_scene(self, seed: int) -> Scene:
        """
        Composite 1–N shapes over a textured background.

        Each shape keeps between ``min_area_fraction`` and ``max_area_fraction`` of
        the image visible after occlusion.

        Raises:
            GenerationError: If no valid placement is found after bounded retries
        """
        cfg = self.config
        size = cfg.image_size
        total = size * size
        rng = np.random.default_rng([self.seed, seed])
        background = _background(rng, size)
        count = int(rng.integers(cfg.shapes_min, cfg.shapes_max + 1))
        low = cfg.min_area_fraction * 1.25
        high = max(low, cfg.max_area_fraction * 0.75)

        for attempt in range(PLACEMENT_RETRIES):
            image = background.copy()
            class_map = np.zeros((size, size), dtype=np.int64)
            instances = np.zeros((size, size), dtype=np.int64)
            for index in range(count):
                class_id = int(rng.integers(1, len(self.catalog) + 1))
                kind, texture = kind_and_texture(class_id)
                area = rng.uniform(low, high) * total
                reach = min(_extent(kind, area), size / 2.0)
                cy = rng.uniform(reach, size - reach)
                cx = rng.uniform(reach, size - reach)
                mask = rasterize(kind, size, cy, cx, area, rng.uniform(0.0, 2 * math.pi))
                colour = rng.uniform(0.35, 1.0, size=3)
                pattern = texture_pattern(texture, size, rng.uniform(0.0, math.pi), rng.uniform(0.0, TEXTURE_PERIOD))
                fill = np.where(pattern[None], colour[:, None, None] * 0.35, colour[:, None, None])
                image = np.where(mask[None], fill, image)
                class_map[mask] = class_id
                instances[mask] = index + 1
            visible = np.bincount(instances.reshape(-1), minlength=count + 1)[1:] / total
            if np.all(visible >= cfg.min_area_fraction) and np.all(visible <= cfg.max_area_fraction):
                break
            logger.debug(f"scene {seed}: placement attempt {attempt + 1} rejected (visible={visible.round(3)})")
        else:
            raise GenerationError(
                f"could not place {count} shapes after {PLACEMENT_RETRIES} attempts",
                scene_seed=seed,
            )

        if cfg.noise_std > 0:
            image = image + rng.normal(0.0, cfg.noise_std, size=image.shape)
        return Scene(image=np.clip(image, 0.0, 1.0), class_map=class_map)

    def draw_scene(self, rng: np.random.Generator, required_class: int) -> Scene:
        """Regenerate scenes with fresh seeds until ``required_class`` is present."""
        for _ in range(REJECTION_ATTEMPTS):
            scene = self.generate_scene(int(rng.integers(0, 2**31 - 1)))
            if np.any(scene.class_map == required_class):
                return scene
        raise GenerationError(
            f"class {required_class} did not appear in {REJECTION_ATTEMPTS} generated scenes",
            target_class=required_class,
        )


def build_world(config: WorldConfig, seed: int = 0) -> SceneSource:
    """Scene source described by ``config``: the synthetic world or a folder dataset."""
    from taftseg.data.folder_dataset import load_folder_dataset
    from taftseg.schemas.config import DatasetSource

    if config.source == DatasetSource.FOLDER:
        folder = config.folder
        assert folder is not None
        return load_folder_dataset(folder.images_dir, folder.masks_dir, folder.class_index, config.image_size)
    return ShapeWorld(config=config, seed=seed)
