"""
JSON checkpoint container for model parameters.

Every tensor is stored with its shape and the base64 of its little-endian
float64 bytes, so files are self-describing and reproduce values exactly.
Reference vectors live under their own ``references`` key.
"""

import base64
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from taftseg.errors import CheckpointError
from taftseg.models.networks import ModelOptions, TaftSegModel
from taftseg.schemas.config import ModelConfig
from taftseg.utils.hashing import config_hash

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "taftseg-checkpoint"
CHECKPOINT_VERSION = 1
_REFERENCE_PREFIXES = ("references.", "low_references.")


@dataclass
class Checkpoint:
    """A loaded model plus the metadata written next to its parameters."""
    model: TaftSegModel
    metadata: Dict[str, Any]
    config_hash: str


def _encode(array: np.ndarray) -> Dict[str, Any]:
    data = np.ascontiguousarray(array, dtype="<f8")
    return {"shape": list(data.shape), "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode(name: str, entry: Dict[str, Any]) -> np.ndarray:
    try:
        raw = base64.b64decode(entry["data"])
        return np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"tensor {name} is malformed: {exc}", tensor=name) from exc


def checkpoint_bytes(model: TaftSegModel, metadata: Dict[str, Any]) -> bytes:
    tensors: Dict[str, Any] = {}
    references: Dict[str, Any] = {}
    for name, tensor in model.named_parameters():
        target = references if name.startswith(_REFERENCE_PREFIXES) else tensors
        target[name] = _encode(tensor.data)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash(model.config),
        "model_config": model.config.model_dump(mode="json"),
        "options": model.options.to_dict(),
        "metadata": metadata,
        "tensors": tensors,
        "references": references,
    }
    return json.dumps(payload, sort_keys=True, indent=1).encode("utf-8")


def save_checkpoint(path: Union[str, Path], model: TaftSegModel, metadata: Dict[str, Any]) -> bytes:
    """Write the checkpoint and return the bytes written."""
    content = checkpoint_bytes(model, metadata)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(content)
    logger.info(f"Checkpoint written to {path} ({len(content)} bytes)")
    return content


def load_state(model: TaftSegModel, payload: Dict[str, Any]) -> None:
    """
    Copy stored tensors into ``model``.

    Raises:
        CheckpointError: On missing, unexpected or mis-shaped tensors
    """
    stored = dict(payload.get("tensors", {}))
    stored.update(payload.get("references", {}))
    expected = dict(model.named_parameters())
    missing = sorted(set(expected) - set(stored))
    unexpected = sorted(set(stored) - set(expected))
    if missing or unexpected:
        raise CheckpointError(
            f"checkpoint does not match model: missing={missing[:5]} unexpected={unexpected[:5]}",
            missing=len(missing),
            unexpected=len(unexpected),
        )
    for name, tensor in expected.items():
        array = _decode(name, stored[name])
        if array.shape != tensor.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {array.shape}, model {tensor.shape}",
                tensor=name,
            )
        tensor.data[...] = array


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Rebuild the model described by a checkpoint file and load its parameters."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}", path=str(path)) from exc
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format in {path}", path=str(path))
    config = ModelConfig(**payload["model_config"])
    if config_hash(config) != payload.get("config_hash"):
        raise CheckpointError("model config hash does not match the stored hash", path=str(path))
    options = ModelOptions(**payload["options"])
    model = TaftSegModel(config, options)
    load_state(model, payload)
    return Checkpoint(model=model, metadata=payload.get("metadata", {}), config_hash=payload["config_hash"])


def parameter_arrays(model: TaftSegModel) -> Dict[str, np.ndarray]:
    return {name: t.data for name, t in model.named_parameters()}

