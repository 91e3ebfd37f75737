"""Experiment configuration files (YAML).

Every key has a default; unknown keys are rejected with their line number.
See README for the full list.
"""
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from . import data
from .augment import AugmentPolicy
from .errors import ConfigError, EpassError, InvalidSpec
from .model import NetworkSpec
from .trainer import RunConfig


@dataclass
class DataConfig:
    source: str = "two_moons"
    train_size: int = 508
    test_size: int = 1000
    noise: float = 0.05
    labels_per_class: int = 4
    train_path: str = None
    test_path: str = None
    imbalance_ratio: float = None
    n_max: int = None


@dataclass
class ModelConfig:
    encoder_layers: list = field(default_factory=lambda: [448, 448, 64])
    proj_hidden: int = 64
    proj_dim: int = 16


@dataclass
class AugmentConfig:
    sigma_weak: float = 0.05
    sigma_strong: float = None
    dropout: float = 0.1
    pad: int = 4
    flip_p: float = 0.5
    n_ops: int = 2


@dataclass
class EvalConfig:
    bins: int = 10


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/experiment"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: RunConfig = field(default_factory=RunConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self):
        d = asdict(self)
        d["train"].pop("seed")  # the top-level seed is authoritative
        return d

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


SECTIONS = {"data": DataConfig, "model": ModelConfig, "augment": AugmentConfig,
            "train": RunConfig, "eval": EvalConfig}
TOP_LEVEL = {"seed": int, "out": str}


def _field_types(cls):
    return {f.name: f.type for f in fields(cls)}


def _coerce(value, default_type, key, line):
    if value is None:
        return None
    if default_type is bool:
        if isinstance(value, bool):
            return value
    elif default_type is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif default_type is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif default_type is list:
        if isinstance(value, list):
            return value
    elif default_type is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"expected {default_type.__name__}, got {value!r}", line, key)


def _mapping(node, where):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{where} must be a mapping", node.start_mark.line + 1)
    out = {}
    for knode, vnode in node.value:
        out[knode.value] = (vnode, knode.start_mark.line + 1)
    return out


def parse_config(text, overrides=None):
    """Parse YAML text into an :class:`ExperimentConfig`."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from None
    cfg = ExperimentConfig()
    sections = {}
    if root is not None:
        for key, (vnode, line) in _mapping(root, "config").items():
            if key in TOP_LEVEL:
                value = yaml.safe_load(yaml.serialize(vnode))
                setattr(cfg, key, _coerce(value, TOP_LEVEL[key], key, line))
            elif key in SECTIONS:
                sections[key] = (vnode, line)
            else:
                raise ConfigError("unknown top-level key", line, key)
    for name, cls in SECTIONS.items():
        values = {}
        if name in sections:
            vnode, _ = sections[name]
            types = _field_types(cls)
            for key, (sub, line) in _mapping(vnode, name).items():
                if key not in types or (name == "train" and key == "seed"):
                    raise ConfigError(f"unknown key in section '{name}'", line, f"{name}.{key}")
                value = yaml.safe_load(yaml.serialize(sub))
                values[key] = (_coerce(value, types[key], f"{name}.{key}", line), line)
        kwargs = {k: v for k, (v, _) in values.items()}
        if name == "train":
            kwargs["seed"] = cfg.seed
        try:
            setattr(cfg, name, cls(**kwargs))
        except (ValueError, TypeError, EpassError) as exc:
            raise ConfigError(str(exc), sections.get(name, (None, None))[1], name) from None
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    cfg.train.seed = cfg.seed
    _validate(cfg)
    return cfg


def _validate(cfg):
    d = cfg.data
    if d.source not in ("two_moons", "file"):
        raise ConfigError("data.source must be 'two_moons' or 'file'", key="data.source")
    if d.source == "file" and not d.train_path:
        raise ConfigError("data.train_path is required for file data", key="data.train_path")
    if d.labels_per_class < 1:
        raise ConfigError("labels_per_class must be >= 1", key="data.labels_per_class")
    if cfg.eval.bins < 1:
        raise ConfigError("eval.bins must be >= 1", key="eval.bins")
    try:
        policy(cfg, "vector")
    except ValueError as exc:
        raise ConfigError(str(exc), key="augment") from None


def load_config(path, overrides=None):
    with open(path) as fh:
        return parse_config(fh.read(), overrides)


def policy(cfg, kind):
    a = cfg.augment
    return AugmentPolicy(kind=kind, sigma_weak=a.sigma_weak, sigma_strong=a.sigma_strong,
                         dropout=a.dropout, pad=a.pad, flip_p=a.flip_p, n_ops=a.n_ops)


def build_datasets(cfg):
    """Return ``(labeled, unlabeled, test)`` for an experiment config."""
    d = cfg.data
    if d.source == "two_moons":
        train = data.gen_two_moons(d.train_size, d.noise, cfg.seed)
        test = data.gen_two_moons(d.test_size, d.noise, cfg.seed + 1000)
    else:
        train = data.load_dataset(d.train_path)
        test = data.load_dataset(d.test_path) if d.test_path else None
    if d.imbalance_ratio is not None:
        n_max = d.n_max or int(np.bincount(train.labels).min())
        train = data.make_imbalanced(
            train, data.ImbalanceSpec(n_max, d.imbalance_ratio, train.num_classes), cfg.seed)
    labeled, unlabeled = data.split(train, data.SplitSpec(d.labels_per_class, cfg.seed))
    if test is None:
        test = unlabeled
    return labeled, unlabeled, test


def network_spec(cfg, dataset):
    m = cfg.model
    input_dim = int(np.prod(dataset.inputs.shape[1:]))
    try:
        return NetworkSpec(input_dim, dataset.num_classes, tuple(m.encoder_layers),
                           m.proj_hidden, m.proj_dim, cfg.train.num_projectors)
    except InvalidSpec as exc:
        raise ConfigError(str(exc), key="model") from None
