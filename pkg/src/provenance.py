"""Provenance stamps for output files.

A stamp holds the config hash, the top-level seed and library versions. It
carries no timestamp, so rerunning a config reproduces identical files.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any, Dict, List, Mapping

import numpy as np
import pandas as pd
import scipy

from . import __version__


def config_hash(config: Mapping[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]


def provenance(config: Mapping[str, Any], seed: int, command: str) -> Dict[str, Any]:
    return {
        'command': command,
        'config_hash': config_hash(config),
        'seed': int(seed),
        'versions': {
            'choicenet': __version__,
            'numpy': np.__version__,
            'pandas': pd.__version__,
            'scipy': scipy.__version__,
        },
    }


def header_lines(stamp: Mapping[str, Any]) -> List[str]:
    """'# '-prefixed CSV header lines (the prefix is added by the writers)."""
    versions = ' '.join(f"{k}={v}" for k, v in stamp['versions'].items())
    return [
        f"command={stamp['command']} config_hash={stamp['config_hash']} seed={stamp['seed']}",
        f"versions {versions}",
    ]


def write_frame(frame: pd.DataFrame, path: str, stamp: Mapping[str, Any]) -> None:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        for line in header_lines(stamp):
            f.write(f"# {line}\n")
        frame.to_csv(f, index=False, lineterminator='\n')


def read_frame(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment='#')


def write_json(document: Mapping[str, Any], path: str, stamp: Mapping[str, Any]) -> None:
    body = dict(document)
    body['provenance'] = dict(stamp)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(body, f, indent=2, sort_keys=True, default=str)
        f.write('\n')
