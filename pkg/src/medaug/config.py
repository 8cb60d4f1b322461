"""Run configuration: flat key-value sections with overlays.

Example::

    [paths]
    records = data/records.jsonl
    dx_hierarchy = data/dx_hierarchy.tsv
    rx_hierarchy = data/rx_hierarchy.tsv

    [relation]
    zeta = 0.07

Every key has a default, so a config only needs the paths. Overlays such
as ``relation.zeta=0.05`` are applied on top, which is how the sweep and
study harnesses derive their grid points.
"""

from __future__ import annotations

import configparser
import copy
import dataclasses
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError

OUTPUT_DIR_ENV = "MEDAUG_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "medaug-out"

VARIANTS = ("full", "rg-", "hg-", "hgrg-", "r-", "rgw-")
ENCODER_STUDY = {"AC": ("gat", "gcn"), "AA": ("gat", "gat"), "CC": ("gcn", "gcn"), "CA": ("gcn", "gat")}


@dataclass
class PathsConfig:
    records: str = ""
    dx_hierarchy: str = ""
    rx_hierarchy: str = ""
    output_dir: str = ""


@dataclass
class OntologyConfig:
    embedding_dim: int = 128
    n_heads: int = 4
    encoder: str = "gat"
    activation: str = "sigmoid"
    include_self: bool = True
    ancestors: str = "all"
    train_table: bool = True
    epochs: int = 40
    learning_rate: float = 5e-4


@dataclass
class RelationConfig:
    zeta: float = 0.07
    embedding_dim: int = 64
    encoder: str = "gcn"
    n_heads: int = 4
    epochs: int = 40
    learning_rate: float = 5e-4


@dataclass
class PredictorConfig:
    embedding_dim: int = 64
    hidden_dim: int = 256
    patient_dim: int = 64
    epochs: int = 40
    learning_rate: float = 5e-4
    threshold: float = 0.5
    pooled_prauc: bool = False


@dataclass
class ExperimentConfig:
    seed: int = 0
    variant: str = "full"
    leaky_slope: float = 0.01


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    ontology: OntologyConfig = field(default_factory=OntologyConfig)
    relation: RelationConfig = field(default_factory=RelationConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    SECTIONS = ("paths", "ontology", "relation", "predictor", "experiment")

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        """SHA-256 over every setting except the output directory."""
        d = self.to_dict()
        d["paths"] = {k: v for k, v in d["paths"].items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()

    def output_dir(self):
        return Path(self.paths.output_dir or os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR)

    def with_overrides(self, overrides):
        cfg = copy.deepcopy(self)
        for key, value in overrides.items():
            cfg.set(key, value)
        cfg.validate()
        return cfg

    def set(self, dotted, value, where=""):
        try:
            section, key = dotted.split(".", 1)
        except ValueError:
            raise ConfigError(f"{where}override {dotted!r} must look like section.key") from None
        if section not in self.SECTIONS:
            raise ConfigError(f"{where}unknown section [{section}]")
        sec = getattr(self, section)
        if not hasattr(sec, key):
            raise ConfigError(f"{where}unknown key {key!r} in [{section}]")
        setattr(sec, key, _coerce(type(getattr(sec, key)), value, f"{where}{section}.{key}"))

    def validate(self):
        for name in ("embedding_dim", "n_heads", "epochs"):
            if getattr(self.ontology, name) <= 0:
                raise ConfigError(f"ontology.{name} must be positive")
        for name in ("embedding_dim", "n_heads", "epochs"):
            if getattr(self.relation, name) <= 0:
                raise ConfigError(f"relation.{name} must be positive")
        for name in ("embedding_dim", "hidden_dim", "patient_dim", "epochs"):
            if getattr(self.predictor, name) <= 0:
                raise ConfigError(f"predictor.{name} must be positive")
        for sec in (self.ontology, self.relation, self.predictor):
            if sec.learning_rate < 0:
                raise ConfigError("learning rates must be non-negative")
        if self.ontology.encoder not in ("gat", "gcn") or self.relation.encoder not in ("gat", "gcn"):
            raise ConfigError("encoders must be 'gat' or 'gcn'")
        if self.ontology.encoder == "gat" and self.ontology.embedding_dim % self.ontology.n_heads:
            raise ConfigError("ontology.embedding_dim must be divisible by ontology.n_heads")
        if self.relation.encoder == "gat" and self.relation.embedding_dim % self.relation.n_heads:
            raise ConfigError("relation.embedding_dim must be divisible by relation.n_heads")
        if self.ontology.ancestors not in ("all", "parent"):
            raise ConfigError("ontology.ancestors must be 'all' or 'parent'")
        if self.ontology.activation not in ("sigmoid", "elu"):
            raise ConfigError("ontology.activation must be 'sigmoid' or 'elu'")
        if self.experiment.variant not in VARIANTS:
            raise ConfigError(f"experiment.variant must be one of {', '.join(VARIANTS)}")
        if not 0.0 <= self.predictor.threshold <= 1.0:
            raise ConfigError("predictor.threshold must lie in [0, 1]")
        return self

    def require_paths(self, *names):
        for name in names:
            value = getattr(self.paths, name)
            if not value:
                raise ConfigError(f"paths.{name} is not set")
            if not Path(value).exists():
                raise ConfigError(f"paths.{name}: {value} does not exist")


def _coerce(kind, value, where):
    if not isinstance(value, str):
        return kind(value)
    text = value.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {kind.__name__}") from None


def _key_lines(text):
    """Map (section, key) to the 1-based line number where it is set."""
    lines, section = {}, None
    for lineno, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"\s*([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section:
            lines[(section, m.group(1).strip().lower())] = lineno
    return lines


def parse_config(text, path="<config>", base_dir=None):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    lines = _key_lines(text)
    cfg = RunConfig()
    for section in parser.sections():
        if section not in RunConfig.SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, value in parser[section].items():
            where = f"{path}:{lines.get((section, key), '?')}: "
            if section == "paths" and value and base_dir is not None and not Path(value).is_absolute():
                value = str(Path(base_dir) / value)
            cfg.set(f"{section}.{key}", value, where)
    try:
        return cfg.validate()
    except ConfigError as exc:
        m = re.match(r"(\w+)\.(\w+)", str(exc))
        line = lines.get((m.group(1), m.group(2))) if m else None
        raise ConfigError(f"{path}:{line}: {exc}" if line else f"{path}: {exc}") from None


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path, base_dir=path.parent)


def format_config(cfg):
    out = []
    for section in RunConfig.SECTIONS:
        out.append(f"[{section}]")
        for key, value in dataclasses.asdict(getattr(cfg, section)).items():
            out.append(f"{key} = {str(value).lower() if isinstance(value, bool) else value}")
        out.append("")
    return "\n".join(out)


def parse_overrides(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def stage_seed(seed, stage):
    """Stable per-stage seed derived from the experiment seed."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")
