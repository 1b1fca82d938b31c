"""
Pydantic schemas for run configuration files.
"""

import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field, ValidationError, validator

from taftseg.errors import ConfigurationError

SCHEMA_VERSION = 1


class DatasetSource(str, Enum):
    """Where scenes come from."""
    SYNTHETIC = "synthetic"
    FOLDER = "folder"


class FolderConfig(BaseModel):
    """Folder dataset locations."""
    images_dir: str
    masks_dir: str
    class_index: str

    class Config:
        extra = "forbid"


class WorldConfig(BaseModel):
    """Scene source and geometry."""
    source: DatasetSource = DatasetSource.SYNTHETIC
    image_size: int = Field(default=64, ge=16)
    shapes_min: int = Field(default=1, ge=1)
    shapes_max: int = Field(default=4, ge=1)
    min_area_fraction: float = Field(default=0.02, gt=0, lt=1)
    max_area_fraction: float = Field(default=0.40, gt=0, le=1)
    noise_std: float = Field(default=0.03, ge=0)
    num_splits: int = Field(default=4, ge=2)
    folder: Optional[FolderConfig] = None

    class Config:
        extra = "forbid"

    @validator('image_size')
    def image_size_divisible(cls, v):
        if v % 16:
            raise ValueError('image_size must be divisible by 16')
        return v

    @validator('shapes_max', always=True)
    def shapes_range(cls, v, values):
        if 'shapes_min' in values and v < values['shapes_min']:
            raise ValueError('shapes_max must be >= shapes_min')
        return v

    @validator('max_area_fraction', always=True)
    def area_range(cls, v, values):
        if 'min_area_fraction' in values and v <= values['min_area_fraction']:
            raise ValueError('max_area_fraction must exceed min_area_fraction')
        return v

    @validator('folder', always=True)
    def folder_for_folder_source(cls, v, values):
        if values.get('source') == DatasetSource.FOLDER and v is None:
            raise ValueError('folder settings are required when source is "folder"')
        return v


class ModelConfig(BaseModel):
    """Toy encoder/decoder widths."""
    d: int = Field(default=64, ge=2)
    d_low: int = Field(default=32, ge=2)
    heads: int = Field(default=1, ge=1)
    aspp_rates: List[int] = Field(default_factory=lambda: [1, 2, 3], min_length=1)
    aspp_channels: int = Field(default=32, ge=1)
    decoder_channels: int = Field(default=32, ge=1)
    low_reduce_channels: int = Field(default=16, ge=1)

    class Config:
        extra = "forbid"

    @validator('heads', always=True)
    def heads_divide_width(cls, v, values):
        if 'd' in values and values['d'] % v:
            raise ValueError('d must be divisible by heads')
        return v

    @validator('aspp_rates')
    def rates_positive(cls, v):
        if any(rate < 1 for rate in v):
            raise ValueError('aspp_rates must be positive')
        return v


class TrainConfig(BaseModel):
    """Meta-training schedule and toggles."""
    episodes_total: int = Field(default=3000, ge=1)
    lr: float = Field(default=0.01, ge=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=3e-4, ge=0)
    lr_decay_factor: float = Field(default=10.0, gt=0)
    decay_point: int = Field(default=2000, ge=0)
    encoder_lr_multiplier: float = Field(default=1.0, gt=0)
    shots: int = Field(default=1, ge=1)
    queries: int = Field(default=12, ge=1)
    split: int = Field(default=0, ge=0)
    attention: bool = True
    aux_loss: bool = True
    low_level_transform: bool = False
    identity_transform: bool = False
    ridge: float = Field(default=1e-8, ge=0)
    seed: int = 0
    log_interval: int = Field(default=50, ge=1)

    class Config:
        extra = "forbid"

    @validator('decay_point', always=True)
    def decay_before_end(cls, v, values):
        if 'episodes_total' in values and v >= values['episodes_total']:
            raise ValueError('decay_point must be smaller than episodes_total')
        return v


class EvalConfig(BaseModel):
    """Evaluation protocol."""
    episodes: int = Field(default=1000, ge=1)
    shots: int = Field(default=1, ge=1)
    queries: int = Field(default=1, ge=1)
    scales: List[float] = Field(default_factory=lambda: [1.0], min_length=1)
    seed: int = 1234
    workers: Optional[int] = Field(default=None, ge=1)
    sweep_shots: List[int] = Field(default_factory=lambda: [1, 3, 5, 7, 10], min_length=1)

    class Config:
        extra = "forbid"

    @validator('scales')
    def scales_positive(cls, v):
        if any(s <= 0 for s in v):
            raise ValueError('scales must be positive')
        return v

    @validator('sweep_shots')
    def shots_positive(cls, v):
        if any(s < 1 for s in v):
            raise ValueError('sweep_shots must be >= 1')
        return v


class ExperimentConfig(BaseModel):
    """Stability and ablation harness options."""
    stability_without_se: bool = True
    ablation_shots: List[int] = Field(default_factory=lambda: [1, 5], min_length=1)
    ablation_scales: List[float] = Field(default_factory=lambda: [0.7, 1.0, 1.3], min_length=1)
    ablation_low_level_row: bool = True
    ablation_baseline_row: bool = False

    class Config:
        extra = "forbid"


class RunConfig(BaseModel):
    """Root of a run configuration file."""
    schema_version: int = SCHEMA_VERSION
    world: WorldConfig = Field(default_factory=WorldConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    experiments: ExperimentConfig = Field(default_factory=ExperimentConfig)
    output_dir: Optional[str] = None

    class Config:
        extra = "forbid"

    @validator('schema_version')
    def known_schema(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f'unsupported schema_version {v}; expected {SCHEMA_VERSION}')
        return v

    @validator('train', always=True)
    def split_in_range(cls, v, values):
        world = values.get('world')
        if world is not None and v.split >= world.num_splits:
            raise ValueError(f'split {v.split} out of range for {world.num_splits} splits')
        return v


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply ``section.key=value`` overrides to a raw config dict.

    Raises:
        ConfigurationError: If an override is malformed
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override must look like key=value, got {item!r}", key=item)
        dotted, raw = item.split("=", 1)
        parts = [p for p in dotted.strip().split(".") if p]
        if not parts:
            raise ConfigurationError(f"empty override key in {item!r}", key=item)
        node = data
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"{part} is not a section", key=dotted)
            node = child
        node[parts[-1]] = _parse_value(raw.strip())
    return data


def _first_error_key(exc: ValidationError) -> Tuple[str, str]:
    first = exc.errors()[0]
    key = ".".join(str(p) for p in first.get("loc", ())) or "<root>"
    return key, first.get("msg", "invalid value")


def validate_run_config(data: Dict[str, Any]) -> RunConfig:
    """Validate a raw dict; failures become ``ConfigurationError`` naming the key."""
    try:
        return RunConfig(**data)
    except ValidationError as exc:
        key, msg = _first_error_key(exc)
        raise ConfigurationError(f"invalid configuration: {msg}", key=key) from exc
    except TypeError as exc:
        raise ConfigurationError(f"invalid configuration: {exc}", key="<root>") from exc


def load_run_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Read a JSON config file (or start from defaults), apply overrides, validate."""
    data: Dict[str, Any] = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}", key="--config") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file is not valid JSON: {exc}", key="--config") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("config root must be a JSON object", key="<root>")
    data = apply_overrides(data, overrides)
    return validate_run_config(data)
