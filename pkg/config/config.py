"""
Runtime settings read from the environment.
"""

import os
from dataclasses import dataclass
from typing import Optional

from dotenv import load_dotenv

DEFAULT_OUT_ROOT = "./runs"


@dataclass
class RuntimeSettings:
    """Process-level settings that are not part of a run configuration."""
    out_root: Optional[str] = None
    log_level: str = "INFO"
    eval_workers: int = 1

    @classmethod
    def from_env(cls, dotenv_path: Optional[str] = None) -> 'RuntimeSettings':
        """Load settings from environment variables (and a ``.env`` file if present)."""
        load_dotenv(dotenv_path)

        # Malformed worker counts fall back to sequential evaluation
        workers_str = os.getenv('TAFTSEG_WORKERS', '').strip()
        workers = 1
        if workers_str:
            try:
                workers = max(1, int(workers_str))
            except ValueError:
                workers = 1

        return cls(
            out_root=os.getenv('TAFTSEG_OUT') or None,
            log_level=os.getenv('LOG_LEVEL', 'INFO').upper(),
            eval_workers=workers,
        )

    def resolve_out_root(self, override: Optional[str] = None, configured: Optional[str] = None) -> str:
        """``--out`` wins over ``TAFTSEG_OUT``, then the config's ``output_dir``, then the default."""
        return override or self.out_root or configured or DEFAULT_OUT_ROOT
