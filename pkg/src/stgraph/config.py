"""Run configuration: key=value sections, strictly validated.

Unknown sections or keys are rejected, required keys must be present,
and numeric ranges are checked at parse time. Most keys have defaults;
a config file only needs to override what differs.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class DataSection:
    root: str = "runs/dataset"
    samples_per_class: int = 140
    image_width: int = 32
    image_height: int = 32
    timesteps: int = 3
    noise: float = 0.05
    seed: int = 0


@dataclass
class GraphSection:
    superpixels: int = 16
    compactness: float = 10.0
    slic_iters: int = 10
    features: str = "mean-color"  # mean-color | mean-color+filter-bank | external-file
    filter_count: int = 16
    filter_seed: int = 0
    filter_file: str = ""
    feature_pool: str = "mean"    # mean | sum


@dataclass
class EncoderSection:
    heads: int = 1
    layers: int = 1
    ffn_multiplier: int = 2


@dataclass
class GnnSection:
    kind: str = "gat"             # gat | gcn
    hidden: int = 8
    heads: int = 2
    out_dim: int = 8
    leaky_slope: float = 0.2
    weighted_logits: bool = False


@dataclass
class MendingSection:
    strategy: str = "encoder"     # encoder | fixed | random-weighted | random-binary | none
    temporal_only: bool = False
    fixed_neighbors: int = 1
    random_edges_per_node: int = 1


@dataclass
class LossSection:
    penalty: float = 1e-6
    norm: str = "l1"              # l1 | l2 | none
    penalty_target: str = "skew"  # skew | full


@dataclass
class TrainingSection:
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0


@dataclass
class PathsSection:
    out_dir: str = "runs/out"


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    graph: GraphSection = field(default_factory=GraphSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    gnn: GnnSection = field(default_factory=GnnSection)
    mending: MendingSection = field(default_factory=MendingSection)
    loss: LossSection = field(default_factory=LossSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    paths: PathsSection = field(default_factory=PathsSection)


_SECTIONS = {
    "data": DataSection, "graph": GraphSection, "encoder": EncoderSection,
    "gnn": GnnSection, "mending": MendingSection, "loss": LossSection,
    "training": TrainingSection, "paths": PathsSection,
}

_CHOICES = {
    ("graph", "features"): ("mean-color", "mean-color+filter-bank", "external-file"),
    ("graph", "feature_pool"): ("mean", "sum"),
    ("gnn", "kind"): ("gat", "gcn"),
    ("mending", "strategy"): ("encoder", "fixed", "random-weighted", "random-binary", "none"),
    ("loss", "norm"): ("l1", "l2", "none"),
    ("loss", "penalty_target"): ("skew", "full"),
}

_POSITIVE = {
    ("data", "samples_per_class"), ("data", "image_width"), ("data", "image_height"),
    ("graph", "superpixels"), ("graph", "slic_iters"), ("graph", "filter_count"),
    ("encoder", "heads"), ("encoder", "layers"), ("encoder", "ffn_multiplier"),
    ("gnn", "hidden"), ("gnn", "heads"), ("gnn", "out_dim"),
    ("mending", "fixed_neighbors"), ("mending", "random_edges_per_node"),
    ("training", "max_epochs"),
}

_REQUIRED = {("data", "root"), ("paths", "out_dir")}


def _parse_value(section: str, name: str, kind, raw: str):
    where = f"[{section}] {name}"
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from exc


def load_config(path) -> RunConfig:
    """Parse and validate a run configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    cfg = RunConfig()
    seen: set[tuple[str, str]] = set()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        target = getattr(cfg, section)
        types = {f.name: type(getattr(target, f.name)) for f in fields(_SECTIONS[section])}
        for name, raw in parser.items(section):
            if name not in types:
                raise ConfigError(f"unknown key {name!r} in section [{section}]")
            setattr(target, name, _parse_value(section, name, types[name], raw))
            seen.add((section, name))
    for section, name in _REQUIRED:
        if (section, name) not in seen:
            raise ConfigError(f"missing required key {name!r} in section [{section}]")
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    for (section, name), choices in _CHOICES.items():
        value = getattr(getattr(cfg, section), name)
        if value not in choices:
            raise ConfigError(f"[{section}] {name}: {value!r} not one of {choices}")
    for section, name in _POSITIVE:
        value = getattr(getattr(cfg, section), name)
        if value < 1:
            raise ConfigError(f"[{section}] {name}: must be >= 1, got {value}")
    if cfg.data.timesteps < 2:
        raise ConfigError(f"[data] timesteps: must be >= 2, got {cfg.data.timesteps}")
    if cfg.data.noise < 0:
        raise ConfigError(f"[data] noise: must be >= 0, got {cfg.data.noise}")
    if cfg.graph.compactness <= 0:
        raise ConfigError(f"[graph] compactness: must be positive, got {cfg.graph.compactness}")
    if cfg.graph.features == "external-file" and not cfg.graph.filter_file:
        raise ConfigError("[graph] filter_file: required when features = external-file")
    if cfg.loss.penalty < 0:
        raise ConfigError(f"[loss] penalty: must be >= 0, got {cfg.loss.penalty}")
    if cfg.training.learning_rate <= 0:
        raise ConfigError(f"[training] learning_rate: must be positive, got {cfg.training.learning_rate}")
    if cfg.training.patience < 0:
        raise ConfigError(f"[training] patience: must be >= 0, got {cfg.training.patience}")
    if cfg.training.patience > cfg.training.max_epochs:
        raise ConfigError(
            f"[training] patience {cfg.training.patience} exceeds max_epochs {cfg.training.max_epochs}")
    total = cfg.graph.superpixels * cfg.data.timesteps
    if cfg.mending.strategy == "encoder" and total % cfg.encoder.heads != 0:
        raise ConfigError(
            f"[encoder] heads: {cfg.encoder.heads} must divide total node count {total}")


def config_echo(cfg: RunConfig) -> dict[str, str]:
    """Flat key=value snapshot stored inside checkpoints."""
    out = {}
    for section_name in _SECTIONS:
        section = getattr(cfg, section_name)
        for f in fields(section):
            out[f"{section_name}.{f.name}"] = str(getattr(section, f.name))
    return out


def describe_keys(sections: list[str]) -> str:
    """Help text listing every config key a command reads."""
    parts = []
    for section_name in sections:
        names = ", ".join(f.name for f in fields(_SECTIONS[section_name]))
        parts.append(f"[{section_name}] {names}")
    return "config keys read: " + "; ".join(parts)
