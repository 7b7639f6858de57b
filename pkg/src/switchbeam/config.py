"""Experiment configuration: a strict TOML schema.

A config file fully describes an experiment: the [geometry] acquisition
block, an optional [pulse] block, a [phantom] block (seeded diffuse regions
and/or explicit point scatterers), a [pipeline] block (PSF source, l1
weight, despeckle parameters, display dynamic range), a [training] block,
and a top-level ``styles`` list. Unknown keys are rejected and every
diagnostic names the offending key by its dotted path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import tomli

from .despeckle import DespeckleParams
from .errors import ConfigError
from .geometry import ArrayGeometry, PulseModel, RegionSpec
from .model import STYLE_BY_LABEL

_GEOMETRY_FLOATS = ("pitch", "sound_speed", "sampling_freq", "center_freq",
                    "focal_depth")
_GEOMETRY_INTS = ("element_count", "aperture_size", "scan_lines",
                  "depth_samples")


@dataclass
class ExperimentConfig:
    """Parsed, validated experiment description."""

    geometry: ArrayGeometry
    pulse: PulseModel
    regions: list[RegionSpec] = field(default_factory=list)
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    phantom_seed: int = 0
    psf_source: str = "simulated"
    lam: float = 0.02
    dynamic_range: float = 60.0
    despeckle: DespeckleParams = field(default_factory=DespeckleParams)
    epochs: int = 100
    batch: int = 32
    lr0: float = 1e-4
    patience: int = 20
    train_seed: int = 0
    width: int = 16
    bottleneck: int = 32
    context: int = 7
    styles: tuple[str, ...] = ("das", "despeckle", "deconvolution",
                               "deconv_despeckle")


def _reject_unknown(table: dict, path: str, allowed) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"unknown config key {where!r}")


def _get_float(table: dict, path: str, key: str, default=None) -> float:
    if key not in table:
        if default is None:
            raise ConfigError(f"missing required key {path}.{key!r}")
        return default
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(
            f"{path}.{key} must be a number, got {type(value).__name__}")
    return float(value)


def _get_int(table: dict, path: str, key: str, default=None) -> int:
    if key not in table:
        if default is None:
            raise ConfigError(f"missing required key {path}.{key!r}")
        return default
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(
            f"{path}.{key} must be an integer, got {type(value).__name__}")
    return value


def _get_str(table: dict, path: str, key: str, default=None) -> str:
    if key not in table:
        if default is None:
            raise ConfigError(f"missing required key {path}.{key!r}")
        return default
    value = table[key]
    if not isinstance(value, str):
        raise ConfigError(
            f"{path}.{key} must be a string, got {type(value).__name__}")
    return value


def _get_table(raw: dict, key: str, required: bool = False) -> dict:
    if key not in raw:
        if required:
            raise ConfigError(f"missing required section [{key}]")
        return {}
    value = raw[key]
    if not isinstance(value, dict):
        raise ConfigError(f"{key} must be a table")
    return value


def parse_region(table: dict, path: str) -> RegionSpec:
    shape = _get_str(table, path, "shape")
    if shape not in ("rectangle", "disk"):
        raise ConfigError(
            f"{path}.shape must be 'rectangle' or 'disk', got {shape!r}")
    common = ["label", "shape", "center_lateral", "center_axial",
              "echogenicity", "density", "anechoic"]
    anechoic = table.get("anechoic", False)
    if not isinstance(anechoic, bool):
        raise ConfigError(f"{path}.anechoic must be a boolean")
    base = dict(
        label=_get_str(table, path, "label", default="region"),
        shape=shape,
        center_lateral=_get_float(table, path, "center_lateral"),
        center_axial=_get_float(table, path, "center_axial"),
        echogenicity=_get_float(table, path, "echogenicity", default=1.0),
        density=_get_float(table, path, "density", default=0.0),
        anechoic=anechoic)
    if shape == "rectangle":
        _reject_unknown(table, path, common + ["width", "height"])
        spec = RegionSpec(**base, width=_get_float(table, path, "width"),
                          height=_get_float(table, path, "height"))
    else:
        _reject_unknown(table, path, common + ["radius"])
        spec = RegionSpec(**base, radius=_get_float(table, path, "radius"))
    try:
        spec.validate()
    except Exception as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return spec


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a decoded TOML document into an ExperimentConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    _reject_unknown(raw, "", ["geometry", "pulse", "phantom", "pipeline",
                              "training", "styles"])

    geo = _get_table(raw, "geometry", required=True)
    _reject_unknown(geo, "geometry", _GEOMETRY_FLOATS + _GEOMETRY_INTS)
    geometry = ArrayGeometry(
        element_count=_get_int(geo, "geometry", "element_count"),
        pitch=_get_float(geo, "geometry", "pitch"),
        sound_speed=_get_float(geo, "geometry", "sound_speed"),
        sampling_freq=_get_float(geo, "geometry", "sampling_freq"),
        center_freq=_get_float(geo, "geometry", "center_freq"),
        aperture_size=_get_int(geo, "geometry", "aperture_size"),
        scan_lines=_get_int(geo, "geometry", "scan_lines"),
        depth_samples=_get_int(geo, "geometry", "depth_samples"),
        focal_depth=_get_float(geo, "geometry", "focal_depth"))
    try:
        geometry.validate()
    except Exception as exc:
        raise ConfigError(f"geometry: {exc}") from exc

    pul = _get_table(raw, "pulse")
    _reject_unknown(pul, "pulse", ["fractional_bandwidth", "length_cycles"])
    pulse = PulseModel(
        center_freq=geometry.center_freq,
        fractional_bandwidth=_get_float(pul, "pulse", "fractional_bandwidth",
                                        default=0.6),
        length_cycles=_get_float(pul, "pulse", "length_cycles", default=4.0))
    try:
        pulse.validate()
    except Exception as exc:
        raise ConfigError(f"pulse: {exc}") from exc

    pha = _get_table(raw, "phantom")
    _reject_unknown(pha, "phantom", ["seed", "regions", "points"])
    phantom_seed = _get_int(pha, "phantom", "seed", default=0)
    regions = []
    raw_regions = pha.get("regions", [])
    if not isinstance(raw_regions, list):
        raise ConfigError("phantom.regions must be an array of tables")
    for i, entry in enumerate(raw_regions):
        if not isinstance(entry, dict):
            raise ConfigError(f"phantom.regions[{i}] must be a table")
        regions.append(parse_region(entry, f"phantom.regions[{i}]"))
    points = []
    raw_points = pha.get("points", [])
    if not isinstance(raw_points, list):
        raise ConfigError("phantom.points must be an array of tables")
    for i, entry in enumerate(raw_points):
        path = f"phantom.points[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{path} must be a table")
        _reject_unknown(entry, path, ["lateral", "axial", "amplitude"])
        points.append((_get_float(entry, path, "lateral"),
                       _get_float(entry, path, "axial"),
                       _get_float(entry, path, "amplitude", default=1.0)))
    points_arr = np.array(points, dtype=np.float64).reshape(-1, 3)

    pipe = _get_table(raw, "pipeline")
    _reject_unknown(pipe, "pipeline",
                    ["psf", "lam", "dynamic_range", "despeckle"])
    psf_source = _get_str(pipe, "pipeline", "psf", default="simulated")
    if psf_source not in ("simulated", "estimated"):
        raise ConfigError(
            f"pipeline.psf must be 'simulated' or 'estimated', "
            f"got {psf_source!r}")
    lam = _get_float(pipe, "pipeline", "lam", default=0.02)
    dynamic_range = _get_float(pipe, "pipeline", "dynamic_range",
                               default=60.0)
    des = pipe.get("despeckle", {})
    if not isinstance(des, dict):
        raise ConfigError("pipeline.despeckle must be a table")
    _reject_unknown(des, "pipeline.despeckle",
                    ["patch", "stride", "radius", "group", "iterations"])
    despeckle = DespeckleParams(
        patch=_get_int(des, "pipeline.despeckle", "patch", default=8),
        stride=_get_int(des, "pipeline.despeckle", "stride", default=4),
        search_radius=_get_int(des, "pipeline.despeckle", "radius",
                               default=16),
        group_size=_get_int(des, "pipeline.despeckle", "group", default=24),
        iterations=_get_int(des, "pipeline.despeckle", "iterations",
                            default=2))
    try:
        despeckle.validate()
    except Exception as exc:
        raise ConfigError(f"pipeline.despeckle: {exc}") from exc

    tra = _get_table(raw, "training")
    _reject_unknown(tra, "training",
                    ["epochs", "batch", "lr0", "patience", "seed", "width",
                     "bottleneck", "context"])

    styles = raw.get("styles", list(STYLE_BY_LABEL))
    if (not isinstance(styles, list)
            or not all(isinstance(s, str) for s in styles)):
        raise ConfigError("styles must be an array of strings")
    for s in styles:
        if s not in STYLE_BY_LABEL:
            raise ConfigError(
                f"styles contains unknown style {s!r}; expected values in "
                f"{sorted(STYLE_BY_LABEL)}")
    if not styles:
        raise ConfigError("styles must not be empty")

    return ExperimentConfig(
        geometry=geometry, pulse=pulse, regions=regions, points=points_arr,
        phantom_seed=phantom_seed, psf_source=psf_source, lam=lam,
        dynamic_range=dynamic_range, despeckle=despeckle,
        epochs=_get_int(tra, "training", "epochs", default=100),
        batch=_get_int(tra, "training", "batch", default=32),
        lr0=_get_float(tra, "training", "lr0", default=1e-4),
        patience=_get_int(tra, "training", "patience", default=20),
        train_seed=_get_int(tra, "training", "seed", default=0),
        width=_get_int(tra, "training", "width", default=16),
        bottleneck=_get_int(tra, "training", "bottleneck", default=32),
        context=_get_int(tra, "training", "context", default=7),
        styles=tuple(styles))


def load_config(path: str) -> ExperimentConfig:
    """Read and validate a TOML config file.

    Syntax errors surface with tomli's line/column diagnostic; schema
    errors name the offending key by dotted path.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc
    return parse_config(raw)
