"""
File plumbing: particle clouds as CSV, reports as CSV/JSON, flows as hex-float JSON.

Every writer produces the same bytes for the same input: fixed column order,
shortest round-trip float text and no timestamps.
"""
import csv
import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, TypeAdapter, ValidationError

from resflow.errors import ConfigError, InputError
from resflow.feature_maps import build_feature_map
from resflow.models import ParticleCloud, ResidualBlock, ResidualFlow
from resflow.schemas import AffineMapSpec, BuildReport, CsvSpec, ExperimentConfig, FeatureMapSpec

PathLike = Union[str, Path]

BLOCK_COLUMNS = ("m", "epsilon", "mmd_sq", "delta", "delta1", "delta2", "lip_bound")

_map_spec_adapter = TypeAdapter(FeatureMapSpec)


def format_float(value) -> str:
    return repr(float(value))


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


# --- Config ---

def load_config(path: PathLike) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    try:
        config = ExperimentConfig.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f"Invalid config {path}: {e}")
    base = Path(path).resolve().parent
    return config.model_copy(
        update={"source": _anchor(config.source, base), "target": _anchor(config.target, base)}
    )


def _anchor(spec, base: Path):
    """Relative csv paths are read from the config file's directory."""
    if isinstance(spec, CsvSpec) and not Path(spec.path).is_absolute():
        return spec.model_copy(update={"path": str(base / spec.path)})
    return spec


# --- Clouds ---

def read_cloud_csv(path: PathLike) -> ParticleCloud:
    try:
        points = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except (OSError, ValueError) as e:
        raise ConfigError(f"Cannot read particle cloud {path}: {e}")
    return ParticleCloud(points)


def write_cloud_csv(cloud: ParticleCloud, path: PathLike) -> Path:
    return write_rows(path, None, (row.tolist() for row in cloud.points))


# --- Reports ---

def write_rows(path: PathLike, header: Optional[Sequence[str]], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        if header is not None:
            writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])
    return path


def write_blocks_csv(report: BuildReport, path: PathLike) -> Path:
    rows = ([getattr(block, column) for column in BLOCK_COLUMNS] for block in report.blocks)
    return write_rows(path, BLOCK_COLUMNS, rows)


def write_json(model: BaseModel, path: PathLike, exclude: Optional[set] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2, exclude=exclude) + "\n")
    logging.info(f"Wrote {path}")
    return path


# --- Flows ---

def _hex_list(values) -> List[str]:
    return [float(v).hex() for v in values]


def flow_to_dict(flow: ResidualFlow) -> dict:
    if not flow.blocks:
        return {"feature_map": None, "blocks": []}
    fmap = flow.blocks[0].feature_map
    return {
        "feature_map": fmap.to_spec().model_dump(mode="json"),
        "blocks": [{"epsilon": block.epsilon.hex(), "psi": _hex_list(block.psi)} for block in flow],
    }


def flow_from_dict(data: dict) -> ResidualFlow:
    try:
        if not data["blocks"]:
            return ResidualFlow(())
        spec = _map_spec_adapter.validate_python(data["feature_map"])
        dim = len(spec.matrix[0]) if isinstance(spec, AffineMapSpec) else len(spec.weights[0])
        fmap = build_feature_map(spec, dim)
        blocks = tuple(
            ResidualBlock(
                epsilon=float.fromhex(entry["epsilon"]),
                psi=np.array([float.fromhex(v) for v in entry["psi"]]),
                feature_map=fmap,
            )
            for entry in data["blocks"]
        )
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        if isinstance(e, InputError):
            raise
        raise InputError(f"Malformed flow document: {e}")
    return ResidualFlow(blocks)


def save_flow(flow: ResidualFlow, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(flow_to_dict(flow), indent=2) + "\n")
    logging.info(f"Wrote {path}")
    return path


def load_flow(path: PathLike) -> ResidualFlow:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"Cannot read flow {path}: {e}")
    return flow_from_dict(data)
