"""
Content hashes for configs, parameters and artifacts.
"""

import hashlib
import json
from typing import Any, Mapping

import numpy as np
from pydantic import BaseModel


def canonical_json(value: Any) -> str:
    """Key-sorted compact JSON; pydantic models are dumped first."""
    if isinstance(value, BaseModel):
        value = value.model_dump(mode="json")
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def short_hash(value: Any, length: int = 12) -> str:
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()[:length]


def config_hash(config: BaseModel) -> str:
    return short_hash(config)


def git_blob_hash(content: bytes) -> str:
    """SHA-1 of ``blob <len>\\0<content>``, the way git names file contents."""
    header = f"blob {len(content)}\0".encode("utf-8")
    return hashlib.sha1(header + content).hexdigest()


def arrays_hash(named: Mapping[str, np.ndarray]) -> str:
    """Hash of named float arrays, independent of insertion order."""
    digest = hashlib.sha256()
    for name in sorted(named):
        array = np.ascontiguousarray(named[name], dtype="<f8")
        digest.update(name.encode("utf-8"))
        digest.update(str(array.shape).encode("utf-8"))
        digest.update(array.tobytes())
    return digest.hexdigest()[:16]
