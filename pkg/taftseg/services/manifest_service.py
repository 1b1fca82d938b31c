"""
Run identifiers and the manifest every command writes next to its artifacts.
"""

import logging
from pathlib import Path
from typing import Dict, Optional

from taftseg import __version__
from taftseg.schemas.config import SCHEMA_VERSION, RunConfig
from taftseg.schemas.reports import RunManifest
from taftseg.utils.hashing import config_hash, short_hash
from taftseg.utils.io import write_json

logger = logging.getLogger(__name__)


def run_id(config: RunConfig) -> str:
    """
    Short hash of the sections that determine a trained model, plus the seed and
    package version. Evaluation settings are excluded so ``eval`` finds the
    checkpoint written by ``train``.
    """
    return short_hash(
        {
            "world": config.world.model_dump(mode="json"),
            "model": config.model.model_dump(mode="json"),
            "train": config.train.model_dump(mode="json"),
            "seed": config.train.seed,
            "version": __version__,
        }
    )


def write_manifest(
    out_dir: Path,
    command: str,
    config: RunConfig,
    identifier: str,
    artifacts: Optional[Dict[str, str]] = None,
    summary: Optional[Dict[str, object]] = None,
) -> RunManifest:
    manifest = RunManifest(
        run_id=identifier,
        command=command,
        package_version=__version__,
        schema_version=SCHEMA_VERSION,
        seed=config.train.seed,
        config_hash=config_hash(config),
        config=config.model_dump(mode="json"),
        artifacts=dict(sorted((artifacts or {}).items())),
        summary=summary or {},
    )
    path = Path(out_dir) / f"manifest-{command}.json"
    write_json(path, manifest)
    logger.info(f"Manifest written to {path}")
    return manifest
