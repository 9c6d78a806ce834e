"""Checkpoint file format: text header + named little-endian float64 arrays.

Layout (stable across versions; version bumps change the magic line):

* UTF-8 header lines, LF-terminated:
    - line 1: ``smtpp-checkpoint 1``
    - ``epoch=<int>`` and ``prior_max=<repr float>``
    - every model config field as ``model.<name>=<value>``
    - every train config field as ``train.<name>=<value>``
    - normalizer fields ``normalizer.mode|center|scale|scale_kind``
    - ``arrays=<count>``
    - terminator line ``---``
* then ``count`` records, each:
    - one UTF-8 line ``<name> <dim0,dim1,...>``
    - ``8 * prod(dims)`` raw bytes, little-endian float64, row-major

Array names are sorted, floats serialized with ``repr`` (exact round-trip),
so identical states produce byte-identical files.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .data import Normalizer
from .errors import ConfigError
from .model import Model, ModelConfig
from .training import AdamState, TrainConfig

MAGIC = "smtpp-checkpoint 1"


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    normalizer: Normalizer
    train_config: TrainConfig
    epoch: int = 0
    prior_max: float = 1.0
    adam: AdamState | None = None

    def to_model(self) -> Model:
        return Model(self.model_config, {k: v.copy() for k, v in self.params.items()})


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, target_type: type):
    if target_type is bool:
        if text not in ("true", "false"):
            raise ConfigError(f"expected true/false, got {text!r}")
        return text == "true"
    return target_type(text)


def _config_lines(prefix: str, config) -> list[str]:
    return [f"{prefix}.{f.name}={_format_value(getattr(config, f.name))}"
            for f in fields(config)]


def _config_from(prefix: str, cls, entries: Mapping[str, str]):
    kwargs = {}
    for f in fields(cls):
        key = f"{prefix}.{f.name}"
        if key not in entries:
            raise ConfigError(f"checkpoint header missing {key}")
        target = f.type if isinstance(f.type, type) else {"int": int, "float": float,
                                                          "str": str, "bool": bool}[f.type]
        kwargs[f.name] = _parse_value(entries[key], target)
    return cls(**kwargs)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    arrays: dict[str, np.ndarray] = {k: np.asarray(v, dtype=np.float64)
                                     for k, v in ckpt.params.items()}
    if ckpt.adam is not None:
        for k, v in ckpt.adam.m.items():
            arrays[f"adam.m.{k}"] = np.asarray(v, dtype=np.float64)
        for k, v in ckpt.adam.v.items():
            arrays[f"adam.v.{k}"] = np.asarray(v, dtype=np.float64)
        arrays["adam.t"] = np.array([float(ckpt.adam.t)])
    header = [MAGIC,
              f"epoch={ckpt.epoch}",
              f"prior_max={repr(float(ckpt.prior_max))}"]
    header += _config_lines("model", ckpt.model_config)
    header += _config_lines("train", ckpt.train_config)
    header += [f"normalizer.mode={ckpt.normalizer.mode}",
               f"normalizer.center={repr(float(ckpt.normalizer.center))}",
               f"normalizer.scale={repr(float(ckpt.normalizer.scale))}",
               f"normalizer.scale_kind={ckpt.normalizer.scale_kind}",
               f"arrays={len(arrays)}",
               "---"]
    buf = io.BytesIO()
    buf.write(("\n".join(header) + "\n").encode("utf-8"))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(np.atleast_1d(arrays[name]), dtype="<f8")
        dims = ",".join(str(d) for d in arr.shape)
        buf.write(f"{name} {dims}\n".encode("utf-8"))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_line(blob: bytes, pos: int) -> tuple[str, int]:
    nl = blob.find(b"\n", pos)
    if nl < 0:
        raise ConfigError("truncated checkpoint file")
    return blob[pos:nl].decode("utf-8"), nl + 1


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    line, pos = _read_line(blob, 0)
    if line != MAGIC:
        raise ConfigError(f"checkpoint version mismatch: expected {MAGIC!r}, got {line!r}")
    entries: dict[str, str] = {}
    while True:
        line, pos = _read_line(blob, pos)
        if line == "---":
            break
        if "=" not in line:
            raise ConfigError(f"malformed checkpoint header line: {line!r}")
        key, value = line.split("=", 1)
        entries[key] = value
    count = int(entries.pop("arrays"))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        line, pos = _read_line(blob, pos)
        name, dims_text = line.rsplit(" ", 1)
        shape = tuple(int(d) for d in dims_text.split(","))
        n = int(np.prod(shape))
        if pos + 8 * n > len(blob):
            raise ConfigError("truncated checkpoint file")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
    model_config = _config_from("model", ModelConfig, entries)
    train_config = _config_from("train", TrainConfig, entries)
    normalizer = Normalizer(mode=entries["normalizer.mode"],
                            center=float(entries["normalizer.center"]),
                            scale=float(entries["normalizer.scale"]),
                            scale_kind=entries["normalizer.scale_kind"])
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    adam = None
    if "adam.t" in arrays:
        adam = AdamState(
            m={k[len("adam.m."):]: v for k, v in arrays.items() if k.startswith("adam.m.")},
            v={k[len("adam.v."):]: v for k, v in arrays.items() if k.startswith("adam.v.")},
            t=int(arrays["adam.t"][0]),
        )
    return Checkpoint(model_config=model_config, params=params, normalizer=normalizer,
                      train_config=train_config, epoch=int(entries["epoch"]),
                      prior_max=float(entries["prior_max"]), adam=adam)
