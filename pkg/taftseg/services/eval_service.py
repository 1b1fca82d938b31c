"""
Evaluation: pooled IoU metrics, multi-scale prediction and the episode loop.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from taftseg.data.episodes import Episode, Phase, episode_seed, sample_episode
from taftseg.data.scenes import SceneSource
from taftseg.errors import ConfigurationError, ContractError, DimensionError, TaftSegError
from taftseg.models.checkpoint import parameter_arrays
from taftseg.models.networks import TaftSegModel
from taftseg.schemas.reports import ClassIoU, MetricsReport
from taftseg.services.forward_service import TransformSettings, forward_episode
from taftseg.services.taft_service import BACKGROUND, FOREGROUND
from taftseg.tensor import functional as F
from taftseg.utils.hashing import arrays_hash
from taftseg.utils.image_ops import bilinear_images, nearest_resize, scaled_extent

logger = logging.getLogger(__name__)

Predictor = Callable[[TaftSegModel, Episode], np.ndarray]


@dataclass
class IouAccumulator:
    """
    Running integer counts.

    ``classes`` holds per-class foreground (intersection, union); ``fg``/``bg``
    pool foreground and background counts over every image for FBIoU.
    """
    classes: Dict[int, List[int]] = field(default_factory=dict)
    fg: List[int] = field(default_factory=lambda: [0, 0])
    bg: List[int] = field(default_factory=lambda: [0, 0])
    images: int = 0

    def merge(self, other: "IouAccumulator") -> "IouAccumulator":
        for class_id, (inter, union) in other.classes.items():
            counts = self.classes.setdefault(class_id, [0, 0])
            counts[0] += inter
            counts[1] += union
        for mine, theirs in ((self.fg, other.fg), (self.bg, other.bg)):
            mine[0] += theirs[0]
            mine[1] += theirs[1]
        self.images += other.images
        return self

    def class_iou(self, class_id: int) -> float:
        inter, union = self.classes.get(class_id, (0, 0))
        return inter / union if union else 0.0

    def miou(self) -> float:
        """Mean over classes seen so far of the pooled foreground IoU."""
        if not self.classes:
            return 0.0
        return float(np.mean([self.class_iou(c) for c in sorted(self.classes)]))

    def fbiou(self) -> float:
        return (_ratio(self.fg) + _ratio(self.bg)) / 2.0

    def fg_iou(self) -> float:
        return _ratio(self.fg)

    def bg_iou(self) -> float:
        return _ratio(self.bg)


def _ratio(counts: Sequence[int]) -> float:
    return counts[0] / counts[1] if counts[1] else 0.0


def _counts(pred: np.ndarray, gt: np.ndarray) -> Tuple[int, int]:
    return int(np.count_nonzero(pred & gt)), int(np.count_nonzero(pred | gt))


def _binary(mask: np.ndarray) -> np.ndarray:
    return np.asarray(mask) > 0.5


def iou_accumulate(
    pred: np.ndarray, gt: np.ndarray, class_id: int, accumulator: Optional[IouAccumulator] = None
) -> IouAccumulator:
    """
    Add one binary prediction/ground-truth pair to the counts of ``class_id``.

    Raises:
        DimensionError: If the masks differ in shape
    """
    if np.shape(pred) != np.shape(gt):
        raise DimensionError(
            f"prediction {np.shape(pred)} and ground truth {np.shape(gt)} differ",
            left_shape=np.shape(pred),
            right_shape=np.shape(gt),
        )
    accumulator = accumulator if accumulator is not None else IouAccumulator()
    p, g = _binary(pred), _binary(gt)
    inter, union = _counts(p, g)
    counts = accumulator.classes.setdefault(int(class_id), [0, 0])
    counts[0] += inter
    counts[1] += union
    for pooled, (pi, gi) in ((accumulator.fg, (p, g)), (accumulator.bg, (~p, ~g))):
        i, u = _counts(pi, gi)
        pooled[0] += i
        pooled[1] += u
    accumulator.images += 1
    return accumulator


def fbiou(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> float:
    """
    (IoU_fg + IoU_bg) / 2 with counts pooled over all images.

    Raises:
        ContractError: If the lists are empty or of different length
    """
    if not preds or len(preds) != len(gts):
        raise ContractError(f"fbiou needs aligned non-empty lists, got {len(preds)} and {len(gts)}")
    accumulator = IouAccumulator()
    for pred, gt in zip(preds, gts):
        iou_accumulate(pred, gt, 0, accumulator)
    return accumulator.fbiou()


def scale_probabilities(
    model: TaftSegModel, episode: Episode, scale: float, settings: TransformSettings
) -> np.ndarray:
    """(M,2,H,W) class probabilities from one input scale, resized to the original size."""
    size = episode.image_size
    extent = scaled_extent(size, scale)
    supports = bilinear_images(episode.support_images, extent, extent)
    queries = bilinear_images(episode.query_images, extent, extent)
    masks = episode.support_masks if extent == size else nearest_resize(episode.support_masks, extent, extent)
    forward = forward_episode(model, supports, masks, queries, settings)
    probs = F.softmax(forward.logits, axis=1).data
    if extent != size:
        probs = bilinear_images(probs, size, size)
    return probs


def episode_probabilities(
    model: TaftSegModel,
    episode: Episode,
    scales: Sequence[float] = (1.0,),
    settings: Optional[TransformSettings] = None,
) -> np.ndarray:
    """Probability maps averaged over ``scales``."""
    if not scales:
        raise ContractError("predict_episode needs at least one scale")
    settings = settings or TransformSettings()
    total = None
    for scale in scales:
        probs = scale_probabilities(model, episode, scale, settings)
        total = probs if total is None else total + probs
    return total / len(scales)


def predict_episode(
    model: TaftSegModel,
    episode: Episode,
    scales: Sequence[float] = (1.0,),
    settings: Optional[TransformSettings] = None,
) -> np.ndarray:
    """
    Binary (M,H,W) query masks.

    Each scale rescales supports and queries (extent rounded up to a multiple of
    16), reruns the full forward pass and resizes the probabilities back; the
    maps are averaged in probability space and a pixel is foreground where
    p_fg > p_bg.
    """
    probs = episode_probabilities(model, episode, scales, settings)
    return probs[:, FOREGROUND] > probs[:, BACKGROUND]


def oracle_predictor(model: TaftSegModel, episode: Episode) -> np.ndarray:
    """Ground-truth passthrough used to test the harness."""
    return _binary(episode.query_masks)


def check_world_consistency(metadata: Mapping[str, object], world: SceneSource, split: int) -> None:
    """
    Raises:
        ConfigurationError: If the checkpoint was trained on another world or split
    """
    if not metadata:
        return
    if metadata.get("world_hash") not in (None, world.signature()):
        raise ConfigurationError(
            "checkpoint was trained on a different world",
            key="world",
            checkpoint_world=metadata.get("world_hash"),
            world=world.signature(),
        )
    if metadata.get("split") not in (None, split):
        raise ConfigurationError(
            f"checkpoint was trained on split {metadata.get('split')}, evaluating split {split}",
            key="train.split",
        )
    trained = metadata.get("train_classes")
    if trained is not None and sorted(trained) != world.train_classes(split):
        raise ConfigurationError("checkpoint training classes do not match the split", key="train.split")


def evaluate_chunk(
    model: TaftSegModel,
    world: SceneSource,
    split: int,
    shots: int,
    queries: int,
    seed: int,
    indices: Sequence[int],
    predictor: Predictor,
) -> IouAccumulator:
    accumulator = IouAccumulator()
    for index in indices:
        ep_seed = episode_seed(seed, index)
        try:
            episode = sample_episode(world, Phase.TEST, split, shots, queries, ep_seed)
            preds = predictor(model, episode)
        except TaftSegError as exc:
            raise exc.with_context(episode_seed=ep_seed)
        for pred, gt in zip(preds, episode.query_masks):
            iou_accumulate(pred, gt, episode.target_class, accumulator)
    return accumulator


def _chunks(count: int, parts: int) -> List[List[int]]:
    bounds = np.linspace(0, count, parts + 1).astype(int)
    return [list(range(bounds[i], bounds[i + 1])) for i in range(parts) if bounds[i] < bounds[i + 1]]


def default_predictor(scales: Sequence[float], settings: TransformSettings) -> Predictor:
    return partial(predict_episode, scales=tuple(scales), settings=settings)


def evaluate(
    model: TaftSegModel,
    world: SceneSource,
    split: int,
    shots: int,
    episodes: int,
    scales: Sequence[float] = (1.0,),
    seed: int = 1234,
    queries: int = 1,
    workers: int = 1,
    predictor: Optional[Predictor] = None,
    settings: Optional[TransformSettings] = None,
    metadata: Optional[Mapping[str, object]] = None,
    config_hash: str = "",
) -> MetricsReport:
    """
    Evaluate ``episodes`` test episodes of ``split``.

    Episode ``i`` uses ``episode_seed(seed, i)``. With ``workers > 1`` episodes
    run in a process pool over contiguous chunks; integer counts merge exactly,
    so the report does not depend on the worker count.

    Raises:
        ConfigurationError: If ``metadata`` names another world, split or class set
    """
    check_world_consistency(metadata or {}, world, split)
    settings = settings or TransformSettings()
    predictor = predictor or default_predictor(scales, settings)
    before = arrays_hash(parameter_arrays(model))

    workers = max(1, min(workers, episodes))
    if workers == 1:
        accumulator = evaluate_chunk(model, world, split, shots, queries, seed, range(episodes), predictor)
    else:
        accumulator = IouAccumulator()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(evaluate_chunk, model, world, split, shots, queries, seed, chunk, predictor)
                for chunk in _chunks(episodes, workers)
            ]
            for future in futures:
                accumulator.merge(future.result())

    after = arrays_hash(parameter_arrays(model))
    if before != after:
        raise ContractError("evaluation changed model parameters")

    names = world.class_names()
    per_class = [
        ClassIoU(class_id=c, name=names.get(c, str(c)), intersection=counts[0], union=counts[1])
        for c, counts in sorted(accumulator.classes.items())
    ]
    report = MetricsReport(
        split=split,
        shots=shots,
        episodes=episodes,
        scales=list(scales),
        seed=seed,
        per_class=per_class,
        miou=accumulator.miou(),
        fbiou=accumulator.fbiou(),
        fg_iou=accumulator.fg_iou(),
        bg_iou=accumulator.bg_iou(),
        config_hash=config_hash,
        parameter_hash=before,
    )
    logger.info(
        f"split {split} {shots}-shot over {episodes} episodes: "
        f"mIoU={100 * report.miou:.2f} FBIoU={100 * report.fbiou:.2f}"
    )
    return report


def with_deltas(reports: Sequence[MetricsReport]) -> List[MetricsReport]:
    """Copies ordered by shots with Δ to the previous entry and to the 1-shot entry."""
    ordered = sorted(reports, key=lambda r: r.shots)
    one_shot = next((r.miou for r in ordered if r.shots == 1), None)
    result = []
    previous = None
    for report in ordered:
        update = {
            "delta_from_previous": None if previous is None else report.miou - previous,
            "delta_from_one_shot": None if one_shot is None else report.miou - one_shot,
        }
        result.append(report.model_copy(update=update))
        previous = report.miou
    return result
