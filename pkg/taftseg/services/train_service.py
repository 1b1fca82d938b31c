"""
Episodic meta-training.

Each episode computes the regression loss L_R, the segmentation loss L_S and the
auxiliary loss L_aux, runs one backward pass of their sum and takes one SGD
step. Because references enter P as constants, each parameter group only sees
the gradient of its own losses: encoder and attention all three, decoder L_S,
references L_R, auxiliary decoder L_aux.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from taftseg import __version__
from taftseg.data.episodes import Episode, Phase, aux_class_indices, episode_seed, sample_episode
from taftseg.data.scenes import SceneSource
from taftseg.data.shape_world import build_world
from taftseg.errors import ContractError, TaftSegError, TrainingAbortedError
from taftseg.models.checkpoint import save_checkpoint
from taftseg.models.networks import (
    GROUP_AUX,
    GROUP_DECODER,
    GROUP_ENCODER,
    GROUP_REFERENCES,
    HIGH_LEVEL_FACTOR,
    LOW_LEVEL_FACTOR,
    ModelOptions,
    ParamGroups,
    TaftSegModel,
)
from taftseg.schemas.config import RunConfig, TrainConfig
from taftseg.schemas.reports import LOSS_CSV_HEADER, LossRow
from taftseg.services.forward_service import EpisodeForward, TransformSettings, forward_episode
from taftseg.services.taft_service import BACKGROUND, FOREGROUND, downsize_labels, regression_loss
from taftseg.tensor import Graph, Tensor
from taftseg.tensor import functional as F
from taftseg.utils.hashing import config_hash, git_blob_hash
from taftseg.utils.io import write_csv
from taftseg.utils.plots import plot_losses

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.json"
LOSS_LOG_NAME = "losses.csv"
LOSS_PLOT_NAME = "losses.svg"

LOSS_REGRESSION = "regression"
LOSS_SEGMENTATION = "segmentation"
LOSS_AUX = "auxiliary"

# Designated losses of each parameter group
GROUP_LOSSES = {
    GROUP_ENCODER: (LOSS_REGRESSION, LOSS_SEGMENTATION, LOSS_AUX),
    GROUP_DECODER: (LOSS_SEGMENTATION,),
    GROUP_REFERENCES: (LOSS_REGRESSION,),
    GROUP_AUX: (LOSS_AUX,),
}


@dataclass
class LossBundle:
    """
    The three episode losses as graph tensors plus their float values.

    ``regression`` includes the low-level regression term when the low-level
    transform is enabled.
    """
    regression: Tensor
    segmentation: Tensor
    auxiliary: Tensor
    forward: EpisodeForward

    @property
    def total(self) -> Tensor:
        return F.add(F.add(self.regression, self.segmentation), self.auxiliary)

    def by_name(self, name: str) -> Tensor:
        return {
            LOSS_REGRESSION: self.regression,
            LOSS_SEGMENTATION: self.segmentation,
            LOSS_AUX: self.auxiliary,
        }[name]

    def values(self) -> Dict[str, float]:
        return {
            "l_r": self.regression.item(),
            "l_s": self.segmentation.item(),
            "l_aux": self.auxiliary.item(),
        }


@dataclass
class EpisodeRecord:
    episode: int
    seed: int
    target_class: int
    l_r: float
    l_s: float
    l_aux: float
    lr: float


@dataclass
class TrainResult:
    model: TaftSegModel
    history: List[EpisodeRecord]
    loss_rows: List[LossRow]
    metadata: Dict[str, object]
    artifacts: Dict[str, str] = field(default_factory=dict)
    checkpoint_path: Optional[Path] = None


EpisodeObserver = Callable[[int, Episode, LossBundle, TaftSegModel], None]


def transform_settings(config: TrainConfig) -> TransformSettings:
    return TransformSettings(ridge=config.ridge, identity=config.identity_transform)


def segmentation_targets(masks: np.ndarray) -> np.ndarray:
    """One-hot (B,2,H,W) targets; channel 0 is foreground."""
    labels = np.where(np.asarray(masks) > 0.5, FOREGROUND, BACKGROUND)
    return F.one_hot(labels, 2, axis=1)


def episode_losses(
    model: TaftSegModel,
    episode: Episode,
    config: TrainConfig,
    train_classes: Sequence[int],
) -> LossBundle:
    """Forward pass of one training episode; call inside an active ``Graph``."""
    forward = forward_episode(
        model,
        episode.support_images,
        episode.support_masks,
        episode.query_images,
        transform_settings(config),
    )
    labels = downsize_labels(episode.query_masks, HIGH_LEVEL_FACTOR)
    l_r = regression_loss(forward.task_agnostic, model.references, labels)
    if model.low_references is not None:
        low_labels = downsize_labels(episode.query_masks, LOW_LEVEL_FACTOR)
        l_r = F.add(l_r, regression_loss(forward.decoder_low, model.low_references, low_labels))

    l_s = F.cross_entropy(forward.logits, segmentation_targets(episode.query_masks), axis=1)

    if config.aux_loss:
        aux_logits = model.decode_aux(forward.query_high, forward.query_low)
        targets = aux_class_indices(episode.aux_labels, train_classes)
        l_aux = F.cross_entropy(aux_logits, F.one_hot(targets, aux_logits.shape[1], axis=1), axis=1)
    else:
        l_aux = Tensor.wrap(np.array(0.0))
    return LossBundle(regression=l_r, segmentation=l_s, auxiliary=l_aux, forward=forward)


def episode_step(
    model: TaftSegModel,
    episode: Episode,
    config: TrainConfig,
    train_classes: Sequence[int],
) -> LossBundle:
    """
    Forward, then one backward of L_R + L_S + L_aux; gradients accumulate on the
    parameters and the tape is freed.

    Raises:
        ContractError: If the episode is not a training episode
        TaftSegError: Any sampling or transform failure, with ``episode_seed`` attached
    """
    if episode.phase != Phase.TRAIN:
        raise ContractError(f"episode_step needs a train episode, got {episode.phase.value}")
    graph = Graph()
    try:
        with graph:
            bundle = episode_losses(model, episode, config, train_classes)
            total = bundle.total
        graph.backward(total)
    except TaftSegError as exc:
        raise exc.with_context(episode_seed=episode.seed)
    finally:
        graph.clear()
    return bundle


def loss_gradients(
    model: TaftSegModel,
    episode: Episode,
    config: TrainConfig,
    train_classes: Sequence[int],
    losses: Sequence[str],
) -> Dict[str, np.ndarray]:
    """Parameter gradients of the sum of the named losses from a fresh forward pass."""
    model.zero_grad()
    graph = Graph()
    with graph:
        bundle = episode_losses(model, episode, config, train_classes)
        selected = bundle.by_name(losses[0])
        for name in losses[1:]:
            selected = F.add(selected, bundle.by_name(name))
    graph.backward(selected)
    graph.clear()
    grads = {name: t.grad.copy() for name, t in model.named_parameters()}
    model.zero_grad()
    return grads


def learning_rate(config: TrainConfig, multiplier: float, episode: int) -> float:
    """lr × group multiplier, divided by the decay factor from ``decay_point`` on."""
    rate = config.lr * multiplier
    if episode >= config.decay_point:
        rate /= config.lr_decay_factor
    return rate


def optimizer_step(
    groups: ParamGroups,
    config: TrainConfig,
    episode: int,
    velocity: Dict[int, np.ndarray],
) -> Dict[str, float]:
    """
    Momentum SGD with weight decay on every group, then clear gradients.

    v ← μ·v + g + wd·p;  p ← p − lr_group·v

    Raises:
        TrainingAbortedError: If any gradient is not finite
    """
    named = groups.all_named()
    for name, tensor in named:
        if tensor.grad is None or not np.all(np.isfinite(tensor.grad)):
            raise TrainingAbortedError(
                f"non-finite gradient in {name}", tensor=name, episode=episode
            )
    rates = {}
    for group, members in groups.groups.items():
        rate = learning_rate(config, groups.multiplier(group), episode)
        rates[group] = rate
        for _, tensor in members:
            key = id(tensor)
            v = velocity.get(key)
            if v is None:
                v = np.zeros_like(tensor.data)
            v = config.momentum * v + tensor.grad + config.weight_decay * tensor.data
            velocity[key] = v
            tensor.data -= rate * v
            tensor.zero_grad()
    return rates


class SGDOptimizer:
    """Holds the momentum buffers of one training run."""

    def __init__(self, groups: ParamGroups, config: TrainConfig):
        self.groups = groups
        self.config = config
        self.velocity: Dict[int, np.ndarray] = {}
        self.logger = logging.getLogger(__name__)

    def step(self, episode: int) -> Dict[str, float]:
        rates = optimizer_step(self.groups, self.config, episode, self.velocity)
        if episode == self.config.decay_point:
            self.logger.info(
                f"Learning rate decayed by {self.config.lr_decay_factor:g} at episode {episode}: "
                + ", ".join(f"{group}={rate:.3g}" for group, rate in sorted(rates.items()))
            )
        return rates


def build_model(config: RunConfig, world: SceneSource) -> TaftSegModel:
    train = config.train
    options = ModelOptions(
        attention=train.attention,
        low_level_transform=train.low_level_transform,
        aux_classes=len(world.train_classes(train.split)),
    )
    return TaftSegModel(config.model, options, seed=train.seed)


def checkpoint_metadata(config: RunConfig, world: SceneSource, episodes: int) -> Dict[str, object]:
    train = config.train
    return {
        "world_hash": world.signature(),
        "split": train.split,
        "train_classes": world.train_classes(train.split),
        "train_hash": config_hash(train),
        "seed": train.seed,
        "episodes": episodes,
        "identity_transform": train.identity_transform,
        "ridge": train.ridge,
        "package_version": __version__,
    }


def _window_row(records: Sequence[EpisodeRecord]) -> LossRow:
    return LossRow(
        episode=records[-1].episode,
        l_r=float(np.mean([r.l_r for r in records])),
        l_s=float(np.mean([r.l_s for r in records])),
        l_aux=float(np.mean([r.l_aux for r in records])),
        lr=records[-1].lr,
    )


def train_run(
    config: RunConfig,
    out_dir: Optional[Path] = None,
    on_episode: Optional[EpisodeObserver] = None,
    world: Optional[SceneSource] = None,
) -> TrainResult:
    """
    Meta-train a model from scratch.

    Episode ``t`` uses seed ``episode_seed(train.seed, t)``, so identical configs
    give identical checkpoints. When ``out_dir`` is set the checkpoint, the loss
    log and its plot are written there.
    """
    train = config.train
    world = world or build_world(config.world)
    train_classes = world.train_classes(train.split)
    model = build_model(config, world)
    optimizer = SGDOptimizer(model.param_groups(train.encoder_lr_multiplier), train)

    history: List[EpisodeRecord] = []
    loss_rows: List[LossRow] = []
    started = time.monotonic()
    logger.info(
        f"Training {train.episodes_total} episodes on split {train.split} "
        f"(shots={train.shots}, queries={train.queries}, attention={train.attention}, aux={train.aux_loss})"
    )
    for t in range(train.episodes_total):
        seed = episode_seed(train.seed, t)
        try:
            episode = sample_episode(world, Phase.TRAIN, train.split, train.shots, train.queries, seed)
        except TaftSegError as exc:
            raise exc.with_context(episode_seed=seed)
        bundle = episode_step(model, episode, train, train_classes)
        values = bundle.values()
        if not all(np.isfinite(v) for v in values.values()):
            raise TrainingAbortedError(f"non-finite loss {values}", episode=t, episode_seed=seed)
        if on_episode is not None:
            on_episode(t, episode, bundle, model)
        rates = optimizer.step(t)
        history.append(
            EpisodeRecord(
                episode=t + 1,
                seed=seed,
                target_class=episode.target_class,
                lr=rates[GROUP_DECODER],
                **values,
            )
        )
        if (t + 1) % train.log_interval == 0:
            row = _window_row(history[-train.log_interval:])
            loss_rows.append(row)
            logger.info(
                f"episode {row.episode}/{train.episodes_total}: L_R={row.l_r:.4f} "
                f"L_S={row.l_s:.4f} L_aux={row.l_aux:.4f} lr={row.lr:g}"
            )

    logger.info(f"Training finished in {time.monotonic() - started:.1f}s")
    metadata = checkpoint_metadata(config, world, train.episodes_total)
    result = TrainResult(model=model, history=history, loss_rows=loss_rows, metadata=metadata)
    if out_dir is not None:
        write_training_artifacts(result, Path(out_dir))
    return result


def write_training_artifacts(result: TrainResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / CHECKPOINT_NAME
    content = save_checkpoint(checkpoint_path, result.model, result.metadata)
    result.checkpoint_path = checkpoint_path
    result.artifacts[CHECKPOINT_NAME] = git_blob_hash(content)

    log = write_csv(out_dir / LOSS_LOG_NAME, LOSS_CSV_HEADER, [r.as_row() for r in result.loss_rows])
    result.artifacts[LOSS_LOG_NAME] = git_blob_hash(log)

    if result.loss_rows:
        episodes = [r.episode for r in result.loss_rows]
        plot_path = plot_losses(
            episodes,
            {
                "L_R": [r.l_r for r in result.loss_rows],
                "L_S": [r.l_s for r in result.loss_rows],
                "L_aux": [r.l_aux for r in result.loss_rows],
            },
            out_dir / LOSS_PLOT_NAME,
        )
        result.artifacts[LOSS_PLOT_NAME] = git_blob_hash(plot_path.read_bytes())
