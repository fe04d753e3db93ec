"""Service configuration: the model is pinned here and echoed in responses."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

DEFAULT_MODEL_ID = "hashconv-ctx-64-v1"
DEFAULT_PORT = 8601
DEFAULT_MAX_SEQ_LEN = 64  # phrases are short


@dataclass(frozen=True)
class ServiceConfig:
    model_id: str = DEFAULT_MODEL_ID
    device: str = "cpu"
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN
    port: int = DEFAULT_PORT
    host: str = "127.0.0.1"
    # both transforms are OFF by default: thresholds downstream are
    # calibrated against whatever scale the service emits
    idf_table_path: Optional[str] = None
    baseline_rescale: Optional[float] = None

    def load_idf_table(self) -> Optional[dict]:
        if self.idf_table_path is None:
            return None
        return json.loads(Path(self.idf_table_path).read_text(encoding="utf-8"))


def load_config(path=None) -> ServiceConfig:
    if path is None:
        return ServiceConfig()
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    known = {f for f in ServiceConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ServiceConfig(**raw)
