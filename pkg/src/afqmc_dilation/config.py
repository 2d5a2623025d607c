"""Experiment configuration: schema, file loading and environment overrides."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

ENV_PREFIX = "AFQMCDIL__"


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(_Block):
    sites: int = Field(2, ge=2)
    t: float = Field(1.0, gt=0)
    U: float = 4.0
    pbc: bool = False
    ordering: Literal["interleaved", "spin_blocked"] = "interleaved"
    decomposition: Literal["spin", "charge"] = "spin"
    psi_T: str = "1001"
    E_T: float = 0.0


class RetentionBlock(_Block):
    policy: Literal["all", "top_k", "threshold"] = "threshold"
    eps: float = Field(1e-8, ge=0)
    top_k: Optional[int] = Field(None, ge=1)


class SegmentBlock(_Block):
    tau: float = Field(0.3, gt=0)
    dt: float = Field(0.05, gt=0)
    order: Literal[1, 2] = 2
    backend: Literal["exact_expm", "dilation", "lcu"] = "exact_expm"
    n_A: int = Field(4, ge=2)
    theta: float = Field(2.0, gt=0)
    noise: Optional[Literal["gaussian", "bounded3point"]] = None
    segments: int = Field(1, ge=1)
    success_floor: float = Field(1e-6, ge=0)
    retention: RetentionBlock = RetentionBlock()


class EnsembleBlock(_Block):
    n_traj: Optional[int] = Field(None, ge=2)
    seed: int = 2024
    shots: int = Field(400, ge=0)
    bootstrap: int = Field(200, ge=0)


class SweepBlock(_Block):
    n_A: list[int] = [2, 3, 4, 5]
    dt: list[float] = [0.2, 0.1, 0.05, 0.025]
    order: list[int] = [1, 2]
    n_slices: int = Field(100, ge=1)
    slice_dt: Optional[float] = Field(None, gt=0)
    k_max: Optional[int] = Field(None, ge=0)
    n_T: list[int] = [1, 2, 3, 4, 5]
    epsilon: float = Field(1e-3, ge=0)


class OutputBlock(_Block):
    path: str = "results"


class ExperimentConfig(_Block):
    model: ModelBlock = ModelBlock()
    segment: SegmentBlock = SegmentBlock()
    ensemble: EnsembleBlock = EnsembleBlock()
    sweep: SweepBlock = SweepBlock()
    output: OutputBlock = OutputBlock()


class ConfigError(ValueError):
    pass


def read_config_file(path: str | Path) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        if p.suffix.lower() == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc


def _resolve_field(block: type[BaseModel], name: str) -> tuple[str, object]:
    for field_name, info in block.model_fields.items():
        if field_name.lower() == name.lower():
            return field_name, info.annotation
    raise ConfigError(f"unknown config key {name!r} in {block.__name__}")


def env_overrides(environ=None) -> dict:
    """``AFQMCDIL__SEGMENT__TAU=0.2`` becomes ``{"segment": {"tau": 0.2}}``.

    Names match schema fields case-insensitively.  Values are parsed as JSON
    except for string fields, which keep the raw text (``psi_T=0110``).
    """
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        path = [part for part in key[len(ENV_PREFIX):].split("__") if part]
        if not path:
            continue
        block: type[BaseModel] = ExperimentConfig
        node = out
        for depth, part in enumerate(path):
            name, annotation = _resolve_field(block, part)
            if depth == len(path) - 1:
                if annotation is str:
                    node[name] = raw
                else:
                    try:
                        node[name] = json.loads(raw)
                    except ValueError:
                        node[name] = raw
            else:
                if not (isinstance(annotation, type) and issubclass(annotation, BaseModel)):
                    raise ConfigError(f"{key}: {name!r} is not a config section")
                block = annotation
                node = node.setdefault(name, {})
    return out


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(path: str | None = None, overrides: dict | None = None, environ=None) -> ExperimentConfig:
    """File, then environment, then explicit overrides; unknown keys are errors."""
    data = read_config_file(path) if path else {}
    data = _merge(data, env_overrides(environ))
    data = _merge(data, overrides or {})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
