"""Run configuration: flat key-per-line text with dotted section prefixes.

Example::

    # comment lines and blanks are ignored
    model.num_heads=4
    train.lr=0.0001
    data.path=corpus.jsonl

Sections ``model.*``, ``train.*``, ``sample.*`` mirror the fields of
:class:`~smtpp.model.ModelConfig`, :class:`~smtpp.training.TrainConfig` and
:class:`~smtpp.sampling.SamplerConfig`; ``data.*`` and ``eval.*`` are defined
here. Unknown keys are rejected. The top-level ``seed`` seeds every section
whose own seed was not set explicitly.

Layering order (later wins): built-in defaults, a named profile, a config
file, then command-line overrides.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any, Mapping

from .errors import ConfigError
from .metrics import DEFAULT_QUANTILE_GRID
from .model import ModelConfig
from .sampling import SamplerConfig
from .training import TrainConfig

_FIELD_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def _section_schema(prefix: str, cls) -> dict[str, tuple[type, Any]]:
    out = {}
    for f in fields(cls):
        ftype = f.type if isinstance(f.type, type) else _FIELD_TYPES[f.type]
        out[f"{prefix}.{f.name}"] = (ftype, f.default)
    return out


_DATA_SCHEMA: dict[str, tuple[type, Any]] = {
    "data.path": (str, ""),          # single corpus, split by the ratios below
    "data.train": (str, ""),         # or explicit per-split files
    "data.dev": (str, ""),
    "data.test": (str, ""),
    "data.normalizer": (str, "none"),
    "data.scale_kind": (str, "variance"),
    "data.split_train": (float, 0.8),
    "data.split_dev": (float, 0.1),
    "data.split_test": (float, 0.1),
    "data.split_seed": (int, 0),
}

SCHEMA: dict[str, tuple[type, Any]] = {
    "seed": (int, 0),
    "eval.grid": (str, ",".join(str(q) for q in DEFAULT_QUANTILE_GRID)),
    **_section_schema("model", ModelConfig),
    **_section_schema("train", TrainConfig),
    **_section_schema("sample", SamplerConfig),
    **_DATA_SCHEMA,
}
# resolved from the data at train time when left at 0
SCHEMA["model.num_types"] = (int, 0)
# resolved from the checkpoint at sample time when left at 0
SCHEMA["sample.prior_max"] = (float, 0.0)

# Per-corpus hyperparameter profiles. The four real-data rows carry the
# published training settings; ``synthetic`` is sized for the end-to-end
# Hawkes pipeline on a laptop.
PROFILES: dict[str, dict[str, Any]] = {
    "stackoverflow": {
        "model.num_heads": 4, "model.num_layers": 4, "model.d_model": 64,
        "model.d_k": 16, "model.d_v": 16, "model.d_hidden": 256,
        "model.dropout": 0.1,
        "train.batch_size": 4, "train.lr": 1e-4, "train.sigma": 1e-1,
        "sample.step_size": 5e-2, "sample.num_steps": 1000, "sample.sigma": 1e-1,
        "data.normalizer": "none",
    },
    "retweet": {
        "model.num_heads": 3, "model.num_layers": 3, "model.d_model": 64,
        "model.d_k": 16, "model.d_v": 16, "model.d_hidden": 256,
        "model.dropout": 0.1,
        "train.batch_size": 16, "train.lr": 5e-3, "train.sigma": 5e-2,
        "sample.step_size": 1e-3, "sample.num_steps": 5000, "sample.sigma": 5e-2,
        "data.normalizer": "log-standard",
    },
    "mimic2": {
        "model.num_heads": 3, "model.num_layers": 3, "model.d_model": 64,
        "model.d_k": 16, "model.d_v": 16, "model.d_hidden": 256,
        "model.dropout": 0.1,
        "train.batch_size": 1, "train.lr": 1e-4, "train.sigma": 1e-1,
        "sample.step_size": 2e-2, "sample.num_steps": 1000, "sample.sigma": 1e-1,
        "data.normalizer": "standard",
    },
    "financial": {
        "model.num_heads": 6, "model.num_layers": 6, "model.d_model": 128,
        "model.d_k": 64, "model.d_v": 64, "model.d_hidden": 2048,
        "model.dropout": 0.1,
        "train.batch_size": 1, "train.lr": 1e-4, "train.sigma": 5e-2,
        "sample.step_size": 5e-3, "sample.num_steps": 3000, "sample.sigma": 5e-2,
        "data.normalizer": "log-standard",
    },
    "synthetic": {
        "model.num_heads": 2, "model.num_layers": 2, "model.d_model": 32,
        "model.d_k": 16, "model.d_v": 16, "model.d_hidden": 64,
        "model.d_head": 32, "model.dropout": 0.0,
        "train.batch_size": 16, "train.lr": 3e-3, "train.sigma": 1e-1,
        "train.num_perturbations": 20, "train.epochs": 10,
        "sample.step_size": 1e-2, "sample.num_steps": 500, "sample.sigma": 1e-1,
        "data.normalizer": "none",
    },
}


def _coerce(key: str, raw, target: type):
    if isinstance(raw, str):
        text = raw.strip()
        try:
            if target is bool:
                if text not in ("true", "false"):
                    raise ValueError
                return text == "true"
            if target is int:
                return int(text)
            if target is float:
                return float(text)
            return text
        except ValueError:
            raise ConfigError(f"config key {key}: cannot parse {raw!r} as {target.__name__}")
    if target is float and isinstance(raw, int):
        return float(raw)
    if not isinstance(raw, target):
        raise ConfigError(f"config key {key}: expected {target.__name__}, got {type(raw).__name__}")
    return raw


@dataclass
class RunConfig:
    """Fully resolved configuration plus the set of explicitly set keys."""

    values: dict[str, Any]
    explicit: frozenset[str]

    def __getitem__(self, key: str):
        return self.values[key]

    def was_set(self, key: str) -> bool:
        return key in self.explicit

    def model_config(self, num_types: int | None = None) -> ModelConfig:
        kwargs = {f.name: self.values[f"model.{f.name}"] for f in fields(ModelConfig)}
        if num_types is not None:
            kwargs["num_types"] = num_types
        if kwargs["num_types"] < 1:
            raise ConfigError("model.num_types unset and no data to infer it from")
        return ModelConfig(**kwargs)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{f.name: self.values[f"train.{f.name}"] for f in fields(TrainConfig)})

    def sampler_config(self, prior_max: float | None = None,
                       sigma: float | None = None) -> SamplerConfig:
        kwargs = {f.name: self.values[f"sample.{f.name}"] for f in fields(SamplerConfig)}
        if prior_max is not None and kwargs["prior_max"] <= 0:
            kwargs["prior_max"] = prior_max
        if sigma is not None and not self.was_set("sample.sigma"):
            kwargs["sigma"] = sigma
        return SamplerConfig(**kwargs)

    def quantile_grid(self) -> tuple[float, ...]:
        try:
            return tuple(float(x) for x in self.values["eval.grid"].split(","))
        except ValueError:
            raise ConfigError(f"eval.grid is not a comma-separated float list: "
                              f"{self.values['eval.grid']!r}")


def parse_config_text(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in entries:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        entries[key] = value.strip()
    return entries


def resolve(profile: str | None = None, config_path=None,
            overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Layer defaults, profile, file, and overrides into a RunConfig."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    explicit: set[str] = set()

    def apply(entries: Mapping[str, Any], origin: str):
        for key, raw in entries.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r} (from {origin})")
            values[key] = _coerce(key, raw, SCHEMA[key][0])
            explicit.add(key)

    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; available: {sorted(PROFILES)}")
        apply(PROFILES[profile], f"profile {profile}")
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            apply(parse_config_text(fh.read()), str(config_path))
    if overrides:
        apply(overrides, "command line")

    # the top-level seed feeds every section seed not set on its own
    for key in ("train.seed", "sample.seed", "data.split_seed"):
        if key not in explicit:
            values[key] = values["seed"]
    return RunConfig(values=values, explicit=frozenset(explicit))


def format_config(config: RunConfig) -> str:
    """Canonical flat rendering of every resolved key, sorted."""
    lines = []
    for key in sorted(SCHEMA):
        value = config.values[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
