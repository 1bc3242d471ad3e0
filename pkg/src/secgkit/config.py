"""Pipeline configuration: dataclasses, file/env/flag layering, validation.

Precedence is file < environment < flags. Environment variables use the
prefix SECGKIT_ with double underscores between path segments, e.g.
``SECGKIT_DBSCAN__EPS=0.9``. Unknown keys are rejected everywhere so a typo
cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any

ENV_PREFIX = "SECGKIT_"


class ConfigError(ValueError):
    pass


@dataclass
class GateConfig:
    enabled: bool = True
    quantile: float = 0.85
    window_s: float = 0.234375
    nzc_min: int = 2
    gate_min_s: float = 0.75
    hf_imf_count: int = 3
    ensemble: int = 100
    noise_std_frac: float = 0.2
    max_sift: int = 10


@dataclass
class QrsConfig:
    kde_bandwidth_s: float = 0.05
    min_support: int = 2
    refractory_s: float = 0.25
    matched_threshold: float = 0.55
    maxima_mad_factor: float = 6.0


@dataclass
class HistogramConfig:
    grid: int = 5
    bounds_s: float | None = None  # None: derive from the training corpus
    bounds_percentile: float = 99.0


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    n_iter: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float | None = None  # None: n / early_exaggeration
    trace_every: int = 25


@dataclass
class DbscanConfig:
    eps: float = 0.75
    min_pts: int = 15


@dataclass
class PipelineConfig:
    window_s: float = 10.0
    seed: int = 0
    workers: int = 1
    min_corpus_size: int = 500
    noise_gate: GateConfig = field(default_factory=GateConfig)
    qrs: QrsConfig = field(default_factory=QrsConfig)
    histogram: HistogramConfig = field(default_factory=HistogramConfig)
    tsne: TsneConfig = field(default_factory=TsneConfig)
    dbscan: DbscanConfig = field(default_factory=DbscanConfig)
    #: label name -> p-value threshold; persisted into the model
    overrides: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _merge_into(cfg: Any, data: dict, path: str = "") -> None:
    names = {f.name: f for f in dataclasses.fields(cfg)}
    for key, value in data.items():
        where = f"{path}{key}"
        if key not in names:
            raise ConfigError(f"unknown config key: {where}")
        current = getattr(cfg, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be a mapping")
            _merge_into(current, value, where + ".")
        else:
            setattr(cfg, key, value)


def config_from_dict(data: dict) -> PipelineConfig:
    cfg = PipelineConfig()
    _merge_into(cfg, data)
    validate(cfg)
    return cfg


def _set_path(cfg: PipelineConfig, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node: Any = cfg
    for p in parts[:-1]:
        if not dataclasses.is_dataclass(node) or p not in {f.name for f in dataclasses.fields(node)}:
            raise ConfigError(f"unknown config key: {dotted}")
        node = getattr(node, p)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(node) or leaf not in {f.name for f in dataclasses.fields(node)}:
        raise ConfigError(f"unknown config key: {dotted}")
    if dataclasses.is_dataclass(getattr(node, leaf)):
        raise ConfigError(f"{dotted} is a section, not a value")
    setattr(node, leaf, value)


def _parse_scalar(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(
    path: str | None = None,
    env: dict[str, str] | None = None,
    sets: list[tuple[str, Any]] | None = None,
) -> PipelineConfig:
    """Build a config with file < environment < explicit-set precedence."""
    cfg = PipelineConfig()
    if path is not None:
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path}: top level must be an object")
        _merge_into(cfg, data)

    env = os.environ if env is None else env
    for name in sorted(env):
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = name[len(ENV_PREFIX) :].lower().replace("__", ".")
        _set_path(cfg, dotted, _parse_scalar(env[name]))

    for dotted, value in sets or []:
        _set_path(cfg, dotted, value)

    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig) -> None:
    if cfg.window_s <= 0:
        raise ConfigError("window_s must be positive")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if not 0 < cfg.noise_gate.quantile < 1:
        raise ConfigError("noise_gate.quantile must be in (0, 1)")
    if cfg.dbscan.eps <= 0 or cfg.dbscan.min_pts < 1:
        raise ConfigError("dbscan.eps must be > 0 and dbscan.min_pts >= 1")
    if cfg.tsne.perplexity <= 0:
        raise ConfigError("tsne.perplexity must be positive")
    if cfg.histogram.grid < 1:
        raise ConfigError("histogram.grid must be >= 1")
    for label, thr in cfg.overrides.items():
        if thr < 0:
            raise ConfigError(f"override threshold for {label} must be >= 0")
