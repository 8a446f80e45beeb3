"""Run configuration: one JSON file, every leaf overridable by dotted name."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from .errors import ConfigError


@dataclass
class BackendConfig:
    kind: str = "sim"
    url: str = ""
    model: str = ""
    api_key_env: str = "POINTFLOW_API_KEY"
    timeout: float = 120.0
    retries: int = 2
    seed: int = 0
    strict: bool = False
    scripts: str = ""


@dataclass
class CostConfig:
    prefill_base: float = 2.0
    prefill_per_token: float = 0.01
    decode_per_token: float = 1.0
    search_cost: float = 5.0
    default_output_tokens: int = 64
    default_points: int = 3


@dataclass
class CapacityConfig:
    search: int = 1
    compute: int = 2
    bandwidth: int = 4


@dataclass
class RetrievalConfig:
    corpus: str = ""
    index: str = ""
    chunk_size: int = 512
    overlap: int = 64
    k: int = 4
    dimension: int = 256
    embed_seed: int = 0


@dataclass
class PromptConfig:
    dir: str = ""
    max_chars: int = 0


@dataclass
class GenerationConfig:
    keypoint_tokens: int = 1024
    point_tokens: int = 512
    answer_tokens: int = 4096


@dataclass
class SchedulerConfig:
    mode: str = "depexp"
    pipelined: bool = True
    queue_limit: int = 64


@dataclass
class OutputConfig:
    dir: str = "out"


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    lru_size: int = 256
    spill_dir: str = ""
    gather_window: float = 0.05


@dataclass
class Config:
    backend: BackendConfig = field(default_factory=BackendConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    capacities: CapacityConfig = field(default_factory=CapacityConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    prompts: PromptConfig = field(default_factory=PromptConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def leaves(cfg: Config | None = None) -> Iterator[tuple[str, Any]]:
    """Yield ``(dotted_name, default_value)`` for every config field."""
    cfg = cfg or Config()
    for section in dataclasses.fields(cfg):
        sub = getattr(cfg, section.name)
        for f in dataclasses.fields(sub):
            yield f"{section.name}.{f.name}", getattr(sub, f.name)


def _coerce(name: str, value: Any, like: Any) -> Any:
    try:
        if isinstance(like, bool):
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(like, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(like, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot use {value!r} as {type(like).__name__}") from None


def set_value(cfg: Config, dotted: str, value: Any) -> None:
    section, _, key = dotted.partition(".")
    sub = getattr(cfg, section, None)
    if sub is None or not key or not hasattr(sub, key):
        raise ConfigError(f"unknown config field {dotted!r}")
    setattr(sub, key, _coerce(dotted, value, getattr(sub, key)))


def from_dict(data: dict) -> Config:
    cfg = Config()
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    for section, values in data.items():
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        for key, value in values.items():
            set_value(cfg, f"{section}.{key}", value)
    return cfg


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> Config:
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        cfg = from_dict(data)
    else:
        cfg = Config()
    for dotted, value in (overrides or {}).items():
        set_value(cfg, dotted, value)
    return cfg
