"""
Shared fixtures: a small world and model that keep tests fast.
"""

import os
import sys

import pytest

# Add project root to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from taftseg.data.shape_world import ShapeWorld
from taftseg.schemas.config import ModelConfig, RunConfig, WorldConfig, validate_run_config

SMALL_RUN = {
    "world": {"image_size": 32, "shapes_max": 3},
    "model": {
        "d": 16,
        "d_low": 8,
        "aspp_rates": [1, 2],
        "aspp_channels": 8,
        "decoder_channels": 8,
        "low_reduce_channels": 4,
    },
    "train": {"episodes_total": 4, "decay_point": 2, "queries": 2, "log_interval": 2},
    "eval": {"episodes": 4, "sweep_shots": [1, 2]},
    "experiments": {"ablation_shots": [1], "ablation_scales": [0.5, 1.0]},
}

def pytest_collection_modifyitems(config, items):
    """Skip slow tests unless TAFTSEG_RUN_SLOW=1 and desk tests unless TAFTSEG_RUN_DESK=1."""
    gates = {
        "slow": ("TAFTSEG_RUN_SLOW", "set TAFTSEG_RUN_SLOW=1 to run end-to-end training"),
        "desk": ("TAFTSEG_RUN_DESK", "set TAFTSEG_RUN_DESK=1 to run the full default-world protocol"),
    }
    for marker, (variable, reason) in gates.items():
        if os.getenv(variable) == "1":
            continue
        skip = pytest.mark.skip(reason=reason)
        for item in items:
            if marker in item.keywords:
                item.add_marker(skip)


@pytest.fixture
def small_run_config() -> RunConfig:
    return validate_run_config({k: dict(v) for k, v in SMALL_RUN.items()})


@pytest.fixture
def small_model_config(small_run_config) -> ModelConfig:
    return small_run_config.model


@pytest.fixture
def small_world() -> ShapeWorld:
    return ShapeWorld(config=WorldConfig(image_size=32, shapes_max=3))
