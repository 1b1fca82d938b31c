"""
Folder-based scene source and PNG export of synthetic scenes.

Layout::

    images/<name>.png   RGB image
    masks/<name>.png    single-channel 8-bit class-index image (0 = background)
    classes.json        {"<id>": {"name": ..., "split": ...}}
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from taftseg.data.scenes import ClassInfo, Scene, SceneSource
from taftseg.errors import GenerationError, IngestionError
from taftseg.utils.hashing import arrays_hash, short_hash

logger = logging.getLogger(__name__)

CLASS_INDEX_NAME = "classes.json"
MASK_MODES = ("L", "P")

PathLike = Union[str, Path]


def read_class_index(path: PathLike) -> List[ClassInfo]:
    """
    Parse ``{id: {name, split}}``.

    Raises:
        IngestionError: If the file is missing, unreadable or malformed
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot read class index: {exc}", file=str(path)) from exc
    if not isinstance(raw, dict) or not raw:
        raise IngestionError("class index must be a non-empty JSON object", file=str(path))
    catalog = []
    for key, entry in raw.items():
        try:
            class_id = int(key)
            catalog.append(ClassInfo(id=class_id, name=str(entry["name"]), split=int(entry["split"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"bad class index entry {key!r}: {exc}", file=str(path)) from exc
        if class_id <= 0 or class_id > 255:
            raise IngestionError(f"class id {class_id} must be in 1..255", file=str(path))
    return sorted(catalog, key=lambda c: c.id)


def _load_image(path: Path, size: int) -> np.ndarray:
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize((size, size), Image.BILINEAR)
    except (OSError, UnidentifiedImageError) as exc:
        raise IngestionError(f"unreadable image: {exc}", file=str(path)) from exc
    return np.asarray(rgb, dtype=np.float64).transpose(2, 0, 1) / 255.0


def _load_mask(path: Path, size: int) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode not in MASK_MODES:
                raise IngestionError(
                    f"mask must be a single-channel 8-bit image, got mode {img.mode}", file=str(path)
                )
            mask = img.resize((size, size), Image.NEAREST)
            return np.asarray(mask, dtype=np.int64)
    except (OSError, UnidentifiedImageError) as exc:
        raise IngestionError(f"unreadable mask: {exc}", file=str(path)) from exc


@dataclass
class FolderDataset(SceneSource):
    """Scenes loaded from disk, resized to ``image_size``."""
    catalog: List[ClassInfo]
    scenes: List[Scene]
    names: List[str]
    image_size: int  # type: ignore[misc]
    by_class: Dict[int, List[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.by_class:
            for index, scene in enumerate(self.scenes):
                for class_id in scene.classes_present():
                    self.by_class.setdefault(class_id, []).append(index)

    def signature(self) -> str:
        content = {name: s.class_map for name, s in zip(self.names, self.scenes)}
        return short_hash(
            {
                "kind": "folder",
                "image_size": self.image_size,
                "catalog": [(c.id, c.name, c.split) for c in self.catalog],
                "content": arrays_hash(content),
            }
        )

    def draw_scene(self, rng: np.random.Generator, required_class: int) -> Scene:
        pool = self.by_class.get(required_class)
        if not pool:
            raise GenerationError(f"no image contains class {required_class}", target_class=required_class)
        return self.scenes[pool[int(rng.integers(0, len(pool)))]]


def load_folder_dataset(
    images_dir: PathLike, masks_dir: PathLike, class_index_file: PathLike, image_size: int = 64
) -> FolderDataset:
    """
    Load image/mask pairs aligned by file name.

    Images are resized bilinearly and masks with nearest neighbour, so mask ids
    stay within the original id set.

    Raises:
        IngestionError: On a missing pair, unknown class id or unreadable file
    """
    images_dir, masks_dir = Path(images_dir), Path(masks_dir)
    catalog = read_class_index(class_index_file)
    known = {c.id for c in catalog}

    image_files = {p.name: p for p in sorted(images_dir.glob("*.png"))}
    mask_files = {p.name: p for p in sorted(masks_dir.glob("*.png"))}
    for name in sorted(set(image_files) ^ set(mask_files)):
        orphan = image_files.get(name) or mask_files[name]
        raise IngestionError(f"{name} has no matching pair", file=str(orphan))
    if not image_files:
        raise IngestionError("no PNG images found", file=str(images_dir))

    scenes, names = [], []
    for name in sorted(image_files):
        image = _load_image(image_files[name], image_size)
        class_map = _load_mask(mask_files[name], image_size)
        unknown = sorted(set(np.unique(class_map).tolist()) - known - {0})
        if unknown:
            raise IngestionError(f"mask contains unknown class ids {unknown}", file=str(mask_files[name]))
        scenes.append(Scene(image=image, class_map=class_map))
        names.append(name)

    logger.info(f"Loaded {len(scenes)} scenes with {len(catalog)} classes from {images_dir}")
    return FolderDataset(catalog=catalog, scenes=scenes, names=names, image_size=image_size)


def write_class_index(path: PathLike, catalog: List[ClassInfo]) -> None:
    payload = {str(c.id): {"name": c.name, "split": c.split} for c in catalog}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def export_scenes(world, count: int, seed: int, out_dir: PathLike) -> List[Path]:
    """
    Write ``count`` synthetic scenes in the folder layout and return the image paths.

    Scene ``i`` uses seed ``seed + i``.
    """
    out_dir = Path(out_dir)
    images, masks = out_dir / "images", out_dir / "masks"
    images.mkdir(parents=True, exist_ok=True)
    masks.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(count):
        scene = world.generate_scene(seed + i)
        name = f"{i:04d}.png"
        rgb = np.round(scene.image.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        Image.fromarray(rgb, mode="RGB").save(images / name)
        Image.fromarray(scene.class_map.astype(np.uint8), mode="L").save(masks / name)
        written.append(images / name)
    write_class_index(out_dir / CLASS_INDEX_NAME, world.catalog)
    logger.info(f"Exported {count} scenes to {out_dir}")
    return written
