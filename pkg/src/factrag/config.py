"""Engine configuration: defaults, YAML config file, environment overrides.

Precedence (highest first): CLI flags > environment variables > config file
> built-in defaults. Environment variables: FACTRAG_API_KEY (provider key),
FACTRAG_BASE_URL (provider endpoint).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from factrag.extraction import ConfigError
from factrag.gateway import PriceTable, ProviderConfig
from factrag.retrieval import RetrievalConfig


@dataclass
class ExtractionConfig:
    max_chunk_tokens: int = 1200
    overlap_tokens: int = 100
    strict: bool = False
    workers: int = 16
    max_attempts: int = 3


@dataclass
class GenerationConfig:
    knowledge_budget_tokens: int = 6000
    max_output_tokens: int = 32000
    temperature: float = 1.0


@dataclass
class EngineConfig:
    store_dir: str = "./store"
    provider_kind: str = "mock"  # "mock" | "openai"
    mock_script: str = ""  # path to a JSON list of {match, response}
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    templates_dir: str = ""  # empty: packaged templates
    eval_multiset_f1: bool = False


def _apply(obj, data: dict, context: str) -> None:
    known = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key '{context}{key}'")
        current = getattr(obj, key)
        if is_dataclass(current) and isinstance(value, dict):
            _apply(current, value, f"{context}{key}.")
        else:
            setattr(obj, key, type_coerce(current, value, f"{context}{key}"))


def type_coerce(current, value, name: str):
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"config key '{name}' expects a boolean")
    if isinstance(current, int) and not isinstance(value, bool):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, str):
        return str(value)
    return value


def load_config(
    path: Path | str | None = None, overrides: dict | None = None
) -> EngineConfig:
    """Build an EngineConfig from defaults, optional YAML file, environment,
    and explicit overrides (flattened dot-keyed dict from CLI flags)."""
    config = EngineConfig()
    config.provider.prices = PriceTable()
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must be a mapping")
        _apply(config, data, "")
    base_url = os.environ.get("FACTRAG_BASE_URL")
    if base_url:
        config.provider.base_url = base_url
    for dotted, value in (overrides or {}).items():
        target = config
        parts = dotted.split(".")
        for part in parts[:-1]:
            target = getattr(target, part)
        setattr(target, parts[-1], type_coerce(getattr(target, parts[-1]), value, dotted))
    return config


def resolve_api_key(config: EngineConfig) -> str:
    key = os.environ.get(config.provider.api_key_env, "")
    if config.provider_kind == "openai" and not key:
        raise ConfigError(
            f"provider 'openai' requires the {config.provider.api_key_env} environment variable"
        )
    return key
