"""
Experiment harness: shot sweeps, prototype/reference stability, ablation table.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from taftseg.data.episodes import Episode
from taftseg.data.scenes import SceneSource
from taftseg.data.shape_world import build_world
from taftseg.models.networks import TaftSegModel
from taftseg.schemas.config import RunConfig
from taftseg.schemas.reports import (
    METRICS_CSV_HEADER,
    STABILITY_CSV_HEADER,
    AblationRow,
    MetricsReport,
    StabilitySummary,
    StabilityTrace,
)
from taftseg.services.eval_service import evaluate, with_deltas
from taftseg.services.forward_service import TransformSettings
from taftseg.services.train_service import LossBundle, TrainResult, train_run
from taftseg.utils.hashing import config_hash, git_blob_hash
from taftseg.utils.io import write_csv, write_json
from taftseg.utils.plots import plot_shot_sweep, plot_stability

logger = logging.getLogger(__name__)


def shot_sweep(
    model: TaftSegModel,
    world: SceneSource,
    split: int,
    shots: Sequence[int] = (1, 3, 5, 7, 10),
    episodes: int = 1000,
    scales: Sequence[float] = (1.0,),
    seed: int = 1234,
    workers: int = 1,
    settings: Optional[TransformSettings] = None,
    metadata: Optional[Dict[str, object]] = None,
    config_hash: str = "",
) -> List[MetricsReport]:
    """Evaluate every shot count with the same evaluation seed; Δ columns filled."""
    reports = [
        evaluate(
            model,
            world,
            split,
            n,
            episodes,
            scales=scales,
            seed=seed,
            workers=workers,
            settings=settings,
            metadata=metadata,
            config_hash=config_hash,
        )
        for n in shots
    ]
    return with_deltas(reports)


def write_sweep(reports: Sequence[MetricsReport], out_dir: Path, stem: str = "sweep") -> Dict[str, str]:
    artifacts = {}
    artifacts[f"{stem}.json"] = git_blob_hash(write_json(out_dir / f"{stem}.json", [r.model_dump(mode="json") for r in reports]))
    artifacts[f"{stem}.csv"] = git_blob_hash(
        write_csv(out_dir / f"{stem}.csv", METRICS_CSV_HEADER, [r.csv_row() for r in reports])
    )
    plot = plot_shot_sweep([r.shots for r in reports], [r.miou for r in reports], out_dir / f"{stem}.svg")
    artifacts[f"{stem}.svg"] = git_blob_hash(plot.read_bytes())
    return artifacts


@dataclass
class StabilityRecorder:
    """Observer that snapshots prototypes and references at every training episode."""
    prototypes: List[np.ndarray] = field(default_factory=list)
    references: List[np.ndarray] = field(default_factory=list)
    targets: List[int] = field(default_factory=list)

    def __call__(self, index: int, episode: Episode, bundle: LossBundle, model: TaftSegModel) -> None:
        protos = bundle.forward.prototypes
        self.prototypes.append(np.stack([protos.fg.data, protos.bg.data]).copy())
        self.references.append(model.references.snapshot().T.copy())
        self.targets.append(episode.target_class)


def _movement(series: Sequence[np.ndarray], plane: int) -> Tuple[List[float], List[float]]:
    distances, percentages = [], []
    for prev, cur in zip(series[:-1], series[1:]):
        distance = float(np.linalg.norm(cur[plane] - prev[plane]))
        norm = float(np.linalg.norm(prev[plane]))
        distances.append(distance)
        percentages.append(100.0 * distance / norm if norm > 0 else 0.0)
    return distances, percentages


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else 0.0


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    return numerator / denominator if denominator > 0 else None


def stability_trace(recorder: StabilityRecorder, config_hash_value: str = "") -> StabilityTrace:
    """
    Distances and percentage changes between consecutive episodes.

    Percentage change is ‖x_t − x_{t−1}‖ / ‖x_{t−1}‖ × 100, and 0 when the previous
    vector is zero.
    """
    p_dist_fg, p_pct_fg = _movement(recorder.prototypes, 0)
    p_dist_bg, p_pct_bg = _movement(recorder.prototypes, 1)
    r_dist_fg, r_pct_fg = _movement(recorder.references, 0)
    r_dist_bg, r_pct_bg = _movement(recorder.references, 1)
    changed = [a != b for a, b in zip(recorder.targets[:-1], recorder.targets[1:])]
    combined = [(f + b) / 2.0 for f, b in zip(p_pct_fg, p_pct_bg)]

    summary = StabilitySummary(
        prototype_pct_fg=_mean(p_pct_fg),
        prototype_pct_bg=_mean(p_pct_bg),
        reference_pct_fg=_mean(r_pct_fg),
        reference_pct_bg=_mean(r_pct_bg),
        ratio_fg=_ratio(_mean(p_pct_fg), _mean(r_pct_fg)),
        ratio_bg=_ratio(_mean(p_pct_bg), _mean(r_pct_bg)),
        prototype_pct_class_changed=_mean([c for c, flag in zip(combined, changed) if flag]) if any(changed) else None,
        prototype_pct_class_unchanged=(
            _mean([c for c, flag in zip(combined, changed) if not flag]) if not all(changed) else None
        ),
    )
    return StabilityTrace(
        episodes=list(range(2, len(recorder.targets) + 1)),
        target_classes=recorder.targets[1:],
        class_changed=changed,
        prototype_distance_fg=p_dist_fg,
        prototype_distance_bg=p_dist_bg,
        reference_distance_fg=r_dist_fg,
        reference_distance_bg=r_dist_bg,
        prototype_pct_fg=p_pct_fg,
        prototype_pct_bg=p_pct_bg,
        reference_pct_fg=r_pct_fg,
        reference_pct_bg=r_pct_bg,
        summary=summary,
        config_hash=config_hash_value,
    )


def stability_config(config: RunConfig) -> RunConfig:
    if not config.experiments.stability_without_se:
        return config
    train = config.train.model_copy(update={"attention": False, "aux_loss": False})
    return config.model_copy(update={"train": train})


def stability_run(config: RunConfig, out_dir: Optional[Path] = None) -> Tuple[StabilityTrace, TrainResult]:
    """Train while recording prototypes and references, then summarise their movement."""
    config = stability_config(config)
    recorder = StabilityRecorder()
    result = train_run(config, out_dir=out_dir, on_episode=recorder)
    trace = stability_trace(recorder, config_hash(config.train))
    s = trace.summary
    logger.info(
        f"Stability: prototype change fg={s.prototype_pct_fg:.3f}% bg={s.prototype_pct_bg:.3f}%, "
        f"reference change fg={s.reference_pct_fg:.3f}% bg={s.reference_pct_bg:.3f}%"
    )
    if out_dir is not None:
        result.artifacts.update(write_stability(trace, Path(out_dir)))
    return trace, result


def write_stability(trace: StabilityTrace, out_dir: Path) -> Dict[str, str]:
    artifacts = {"stability.json": git_blob_hash(write_json(out_dir / "stability.json", trace))}
    rows = zip(
        trace.episodes,
        trace.target_classes,
        trace.class_changed,
        trace.prototype_distance_fg,
        trace.prototype_distance_bg,
        trace.reference_distance_fg,
        trace.reference_distance_bg,
        trace.prototype_pct_fg,
        trace.prototype_pct_bg,
        trace.reference_pct_fg,
        trace.reference_pct_bg,
    )
    artifacts["stability.csv"] = git_blob_hash(write_csv(out_dir / "stability.csv", STABILITY_CSV_HEADER, rows))
    plot = plot_stability(
        trace.episodes,
        {
            "prototype fg": trace.prototype_pct_fg,
            "prototype bg": trace.prototype_pct_bg,
            "reference fg": trace.reference_pct_fg,
            "reference bg": trace.reference_pct_bg,
        },
        out_dir / "stability.svg",
    )
    artifacts["stability.svg"] = git_blob_hash(plot.read_bytes())
    return artifacts


@dataclass
class AblationSetting:
    """One ablation row: training toggles plus the evaluation scales."""
    name: str
    attention: bool
    aux_loss: bool
    multi_scale: bool = False
    low_level_transform: bool = False
    identity_transform: bool = False

    def train_config(self, config: RunConfig) -> RunConfig:
        train = config.train.model_copy(
            update={
                "attention": self.attention,
                "aux_loss": self.aux_loss,
                "low_level_transform": self.low_level_transform,
                "identity_transform": self.identity_transform,
            }
        )
        return config.model_copy(update={"train": train})


def ablation_settings(config: RunConfig) -> List[AblationSetting]:
    """The four main rows, then the optional low-level and identity-baseline rows."""
    settings = [
        AblationSetting("TAFT", attention=False, aux_loss=False),
        AblationSetting("TAFT+Attn", attention=True, aux_loss=False),
        AblationSetting("TAFT+Attn+Laux", attention=True, aux_loss=True),
        AblationSetting("TAFT+Attn+Laux+MS", attention=True, aux_loss=True, multi_scale=True),
    ]
    if config.experiments.ablation_low_level_row:
        settings.append(AblationSetting("TAFT+LowLevel", attention=False, aux_loss=False, low_level_transform=True))
    if config.experiments.ablation_baseline_row:
        settings.append(
            AblationSetting("Identity+Attn+Laux", attention=True, aux_loss=True, identity_transform=True)
        )
    return settings


ABLATION_CSV_PREFIX = ["row", "attn", "l_aux", "ms", "low_level", "identity", "seed", "train_hash"]


def ablation_run(config: RunConfig, out_dir: Optional[Path] = None) -> List[AblationRow]:
    """
    Train and evaluate every ablation row.

    Rows that differ only in evaluation scales share one trained checkpoint.
    """
    world = build_world(config.world)
    shots = list(config.experiments.ablation_shots)
    trained: Dict[str, TrainResult] = {}
    rows: List[AblationRow] = []
    for setting in ablation_settings(config):
        row_config = setting.train_config(config)
        train_hash = config_hash(row_config.train)
        if train_hash not in trained:
            logger.info(f"Ablation row {setting.name}: training")
            row_dir = Path(out_dir) / "checkpoints" / train_hash if out_dir is not None else None
            trained[train_hash] = train_run(row_config, out_dir=row_dir, world=world)
        result = trained[train_hash]
        scales = config.experiments.ablation_scales if setting.multi_scale else [1.0]
        miou, fb = {}, {}
        for n in shots:
            report = evaluate(
                result.model,
                world,
                row_config.train.split,
                n,
                config.eval.episodes,
                scales=scales,
                seed=config.eval.seed,
                queries=config.eval.queries,
                workers=config.eval.workers or 1,
                settings=TransformSettings(ridge=row_config.train.ridge, identity=setting.identity_transform),
                metadata=result.metadata,
                config_hash=train_hash,
            )
            miou[n] = report.miou
            fb[n] = report.fbiou
        rows.append(
            AblationRow(
                name=setting.name,
                attention=setting.attention,
                aux_loss=setting.aux_loss,
                multi_scale=setting.multi_scale,
                low_level_transform=setting.low_level_transform,
                identity_transform=setting.identity_transform,
                seed=row_config.train.seed,
                train_hash=train_hash,
                miou=miou,
                fbiou=fb,
            )
        )
    if out_dir is not None:
        write_ablation(rows, shots, Path(out_dir))
    return rows


def ablation_table(rows: Sequence[AblationRow], shots: Sequence[int]) -> Tuple[List[str], List[List[object]]]:
    header = ABLATION_CSV_PREFIX + [f"miou_{n}shot" for n in shots] + [f"fbiou_{n}shot" for n in shots]
    body = [
        [
            r.name,
            r.attention,
            r.aux_loss,
            r.multi_scale,
            r.low_level_transform,
            r.identity_transform,
            r.seed,
            r.train_hash,
        ]
        + [r.miou[n] for n in shots]
        + [r.fbiou[n] for n in shots]
        for r in rows
    ]
    return header, body


def write_ablation(rows: Sequence[AblationRow], shots: Sequence[int], out_dir: Path) -> Dict[str, str]:
    header, body = ablation_table(rows, shots)
    return {
        "ablation.csv": git_blob_hash(write_csv(out_dir / "ablation.csv", header, body)),
        "ablation.json": git_blob_hash(
            write_json(out_dir / "ablation.json", [r.model_dump(mode="json") for r in rows])
        ),
    }
