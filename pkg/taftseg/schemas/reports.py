"""
Pydantic schemas for training logs, evaluation reports and run manifests.
"""

from typing import Dict, List, Optional

from pydantic import BaseModel, Field, computed_field, validator


class LossRow(BaseModel):
    """Window means of the three losses, logged every ``log_interval`` episodes."""
    episode: int = Field(..., ge=1)
    l_r: float
    l_s: float
    l_aux: float
    lr: float = Field(..., ge=0)

    def as_row(self) -> List[float]:
        return [self.episode, self.l_r, self.l_s, self.l_aux, self.lr]


LOSS_CSV_HEADER = ["episode", "L_R", "L_S", "L_aux", "lr"]


class ClassIoU(BaseModel):
    """Pooled foreground IoU of one test class."""
    class_id: int
    name: str
    intersection: int = Field(..., ge=0)
    union: int = Field(..., ge=0)

    @computed_field
    @property
    def iou(self) -> float:
        return self.intersection / self.union if self.union else 0.0


class MetricsReport(BaseModel):
    """Evaluation result for one split and shot count."""
    split: int
    shots: int = Field(..., ge=1)
    episodes: int = Field(..., ge=1)
    scales: List[float]
    seed: int
    per_class: List[ClassIoU]
    miou: float = Field(..., ge=0, le=1)
    fbiou: float = Field(..., ge=0, le=1)
    fg_iou: float = Field(..., ge=0, le=1)
    bg_iou: float = Field(..., ge=0, le=1)
    config_hash: str
    parameter_hash: str
    delta_from_previous: Optional[float] = None
    delta_from_one_shot: Optional[float] = None

    @validator('per_class')
    def classes_sorted(cls, v):
        return sorted(v, key=lambda c: c.class_id)

    def csv_row(self) -> List[object]:
        return [
            self.split,
            self.shots,
            self.episodes,
            " ".join(format(s, "g") for s in self.scales),
            self.miou,
            self.fbiou,
            self.delta_from_previous,
            self.delta_from_one_shot,
            self.config_hash,
        ]


METRICS_CSV_HEADER = ["split", "shots", "episodes", "scales", "miou", "fbiou", "delta_prev", "delta_1shot", "config_hash"]


class StabilitySummary(BaseModel):
    """Mean percentage changes and the prototype/reference ratio."""
    prototype_pct_fg: float
    prototype_pct_bg: float
    reference_pct_fg: float
    reference_pct_bg: float
    ratio_fg: Optional[float] = None
    ratio_bg: Optional[float] = None
    prototype_pct_class_changed: Optional[float] = None
    prototype_pct_class_unchanged: Optional[float] = None


class StabilityTrace(BaseModel):
    """Per-episode movement of prototypes and reference vectors during training."""
    episodes: List[int]
    target_classes: List[int]
    class_changed: List[bool]
    prototype_distance_fg: List[float]
    prototype_distance_bg: List[float]
    reference_distance_fg: List[float]
    reference_distance_bg: List[float]
    prototype_pct_fg: List[float]
    prototype_pct_bg: List[float]
    reference_pct_fg: List[float]
    reference_pct_bg: List[float]
    summary: StabilitySummary
    config_hash: str

    @validator('prototype_distance_fg', 'prototype_distance_bg', 'reference_distance_fg', 'reference_distance_bg')
    def non_negative(cls, v):
        if any(x < 0 for x in v):
            raise ValueError('distances must be non-negative')
        return v

    def __len__(self) -> int:
        return len(self.episodes)


STABILITY_CSV_HEADER = [
    "episode",
    "target_class",
    "class_changed",
    "proto_dist_fg",
    "proto_dist_bg",
    "ref_dist_fg",
    "ref_dist_bg",
    "proto_pct_fg",
    "proto_pct_bg",
    "ref_pct_fg",
    "ref_pct_bg",
]


class AblationRow(BaseModel):
    """One row of the ablation table: toggles, seed and per-shot scores."""
    name: str
    attention: bool
    aux_loss: bool
    multi_scale: bool
    low_level_transform: bool = False
    identity_transform: bool = False
    seed: int
    train_hash: str
    miou: Dict[int, float]
    fbiou: Dict[int, float]


class SuiteResult(BaseModel):
    """Pass counts of one self-check suite."""
    name: str
    passed: int = Field(..., ge=0)
    total: int = Field(..., ge=0)
    worst_error: Optional[float] = None

    @computed_field
    @property
    def ok(self) -> bool:
        return self.passed == self.total


class RunManifest(BaseModel):
    """Written by every command next to its artifacts."""
    run_id: str
    command: str
    package_version: str
    schema_version: int
    seed: int
    config_hash: str
    config: Dict[str, object]
    artifacts: Dict[str, str] = Field(default_factory=dict)
    summary: Dict[str, object] = Field(default_factory=dict)
