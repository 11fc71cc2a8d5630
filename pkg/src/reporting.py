"""Deterministic JSON/CSV writers; every file carries the config hash and overrides."""

import json
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, List, Sequence

import numpy as np
from loguru import logger

from .config import LabConfig, config_hash


def to_jsonable(value: Any) -> Any:
    """Fractions become strings, numpy values become Python floats/lists."""
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    return value


def metadata(config: LabConfig) -> dict:
    return {
        "config_hash": config_hash(config),
        "overrides": to_jsonable(config.run.overrides),
        "seed": config.run.seed,
    }


def write_json(path: Path, payload: Any, config: LabConfig) -> Path:
    """Sorted keys, no timestamps; floats keep their repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"meta": metadata(config), "data": to_jsonable(payload)}
    with open(path, "w") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.debug(f"Wrote {path}")
    return path


def format_cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, Fraction):
        return str(value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]], config: LabConfig) -> Path:
    """CSV with a leading ``# config_hash=... overrides=...`` comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = metadata(config)
    overrides = json.dumps(meta["overrides"], sort_keys=True, separators=(",", ":"))
    lines: List[str] = [f"# config_hash={meta['config_hash']} seed={meta['seed']} overrides={overrides}"]
    lines.append(",".join(header))
    lines.extend(",".join(format_cell(v) for v in row) for row in rows)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    logger.debug(f"Wrote {path}")
    return path


def write_bytes(path: Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)
    return path
