"""YAML config loading with strict, path-qualified validation.

Every validation failure raises ConfigError naming the offending dotted key
and the file it came from, so a typo in a config is a one-line diagnosis.
"""

from __future__ import annotations

from dataclasses import dataclass

import yaml

from .pcio import MODES, GridSpec


class ConfigError(ValueError):
    """A config file is malformed: unknown/missing keys or invalid values."""


def load_yaml(path) -> dict:
    """Load a YAML file whose root must be a mapping."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return doc


def _join(prefix: str, key: str) -> str:
    return f"{prefix}.{key}" if prefix else key


def check_keys(doc, allowed, required, prefix, filename) -> None:
    """Reject unknown keys and missing required keys under one mapping."""
    if not isinstance(doc, dict):
        where = prefix if prefix else "config root"
        raise ConfigError(f"{filename}: {where} must be a mapping")
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{filename}: unknown key {_join(prefix, str(key))!r}")
    for key in required:
        if key not in doc:
            raise ConfigError(f"{filename}: missing required key {_join(prefix, key)!r}")


def expect_int(value, path, filename, minimum=None):
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{filename}: {path} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{filename}: {path} must be >= {minimum}, got {value}")
    return value


def expect_number(value, path, filename, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{filename}: {path} must be a number, got {value!r}")
    value = float(value)
    if positive and not value > 0:
        raise ConfigError(f"{filename}: {path} must be > 0, got {value}")
    return value


def expect_str(value, path, filename):
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{filename}: {path} must be a non-empty string")
    return value


def expect_number_list(value, path, filename, length):
    if not isinstance(value, list) or len(value) != length:
        raise ConfigError(f"{filename}: {path} must be a list of {length} numbers")
    return [expect_number(v, f"{path}[{i}]", filename) for i, v in enumerate(value)]


@dataclass(frozen=True)
class AttentionRuntime:
    """Runtime attention settings for feature extraction on one scan."""

    kind: str  # "fsa" or "dsa"
    layers: int
    heads: int
    dim: int
    groups: int
    seed: int
    keypoints: int
    deform_radius: float
    pool_radius: float
    neighbor_k: int
    interp_radius: float
    interp_samples: int
    upsample: str


@dataclass(frozen=True)
class ExtractConfig:
    """Everything an extraction run needs besides the scan itself."""

    id: str
    grid: GridSpec
    mode: str
    encoder_seed: int
    encoder_scale: float
    attention: AttentionRuntime


def _parse_grid(doc, filename) -> GridSpec:
    allowed = {"range_min", "range_max", "cell_size"}
    check_keys(doc, allowed, allowed, "grid", filename)
    range_min = expect_number_list(doc["range_min"], "grid.range_min", filename, 3)
    range_max = expect_number_list(doc["range_max"], "grid.range_max", filename, 3)
    cell = doc["cell_size"]
    if not isinstance(cell, list) or len(cell) not in (2, 3):
        raise ConfigError(f"{filename}: grid.cell_size must be a list of 2 (pillar) or 3 (voxel) numbers")
    cell = [expect_number(v, f"grid.cell_size[{i}]", filename, positive=True) for i, v in enumerate(cell)]
    for axis in range(3):
        if not range_min[axis] < range_max[axis]:
            raise ConfigError(
                f"{filename}: grid.range_min[{axis}] must be < grid.range_max[{axis}] "
                f"({range_min[axis]} vs {range_max[axis]})"
            )
    return GridSpec(range_min=tuple(range_min), range_max=tuple(range_max), cell_size=tuple(cell))


def _parse_attention_runtime(doc, filename) -> AttentionRuntime:
    allowed = {
        "kind",
        "layers",
        "heads",
        "dim",
        "groups",
        "seed",
        "keypoints",
        "deform_radius",
        "pool_radius",
        "neighbor_k",
        "interp_radius",
        "interp_samples",
        "upsample",
    }
    check_keys(doc, allowed, {"kind", "dim", "heads"}, "attention", filename)
    kind = expect_str(doc["kind"], "attention.kind", filename)
    if kind not in ("fsa", "dsa"):
        raise ConfigError(f"{filename}: attention.kind must be 'fsa' or 'dsa', got {kind!r}")
    dim = expect_int(doc["dim"], "attention.dim", filename, minimum=1)
    heads = expect_int(doc["heads"], "attention.heads", filename, minimum=1)
    if dim % heads != 0:
        raise ConfigError(f"{filename}: attention.dim={dim} is not divisible by attention.heads={heads}")
    groups = expect_int(doc.get("groups", heads), "attention.groups", filename, minimum=1)
    if dim % groups != 0:
        raise ConfigError(f"{filename}: attention.dim={dim} is not divisible by attention.groups={groups}")
    upsample = expect_str(doc.get("upsample", "idw"), "attention.upsample", filename)
    if upsample not in ("idw", "attention"):
        raise ConfigError(f"{filename}: attention.upsample must be 'idw' or 'attention', got {upsample!r}")
    return AttentionRuntime(
        kind=kind,
        layers=expect_int(doc.get("layers", 1), "attention.layers", filename, minimum=1),
        heads=heads,
        dim=dim,
        groups=groups,
        seed=expect_int(doc.get("seed", 0), "attention.seed", filename, minimum=0),
        keypoints=expect_int(doc.get("keypoints", 2048), "attention.keypoints", filename, minimum=1),
        deform_radius=expect_number(doc.get("deform_radius", 3.0), "attention.deform_radius", filename, positive=True),
        pool_radius=expect_number(doc.get("pool_radius", 2.0), "attention.pool_radius", filename, positive=True),
        neighbor_k=expect_int(doc.get("neighbor_k", 16), "attention.neighbor_k", filename, minimum=1),
        interp_radius=expect_number(doc.get("interp_radius", 1.6), "attention.interp_radius", filename, positive=True),
        interp_samples=expect_int(doc.get("interp_samples", 16), "attention.interp_samples", filename, minimum=1),
        upsample=upsample,
    )


def load_extract_config(path) -> ExtractConfig:
    """Parse and validate an extraction config file."""
    filename = str(path)
    doc = load_yaml(path)
    allowed = {"id", "grid", "mode", "encoder_seed", "encoder_scale", "attention"}
    check_keys(doc, allowed, {"id", "grid", "mode", "attention"}, "", filename)
    mode = expect_str(doc["mode"], "mode", filename)
    if mode not in MODES:
        raise ConfigError(f"{filename}: mode must be one of {MODES}, got {mode!r}")
    grid = _parse_grid(doc["grid"], filename)
    if mode == "voxel" and len(grid.cell_size) != 3:
        raise ConfigError(f"{filename}: mode 'voxel' needs grid.cell_size with 3 entries")
    return ExtractConfig(
        id=expect_str(doc["id"], "id", filename),
        grid=grid,
        mode=mode,
        encoder_seed=expect_int(doc.get("encoder_seed", 0), "encoder_seed", filename, minimum=0),
        encoder_scale=expect_number(doc.get("encoder_scale", 0.5), "encoder_scale", filename, positive=True),
        attention=_parse_attention_runtime(doc["attention"], filename),
    )
