"""Model = encoder + heads + a named parameter store.

Parameters live as a flat ``dict[str, np.ndarray]`` keyed by dotted names
(``layer0.attn.q0``, ``head.time.w3``, ...). Training wraps them in autodiff
leaves per step; sampling uses them raw. The dict is the unit of
checkpointing, so ordering is normalized to sorted keys on serialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import encoder, heads
from .errors import ConfigError

SCORE_HEADS = ("intensity", "direct")


@dataclass(frozen=True)
class ModelConfig:
    num_types: int
    num_heads: int = 4
    num_layers: int = 4
    d_model: int = 64
    d_k: int = 16
    d_v: int = 16
    d_hidden: int = 256
    d_head: int = 64
    dropout: float = 0.1
    use_residual_norm: bool = True
    norm_first: bool = True
    score_head: str = "intensity"

    def __post_init__(self):
        if self.num_types < 1:
            raise ConfigError("num_types must be >= 1")
        if self.d_model % 2:
            raise ConfigError("d_model must be even")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout must lie in [0, 1)")
        if self.score_head not in SCORE_HEADS:
            raise ConfigError(f"score_head must be one of {SCORE_HEADS}")
        for name in ("num_heads", "num_layers", "d_model", "d_k", "d_v",
                     "d_hidden", "d_head"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    d, dk, dv, dh = config.d_model, config.d_k, config.d_v, config.d_hidden
    p: dict[str, np.ndarray] = {}
    p["embed.type"] = rng.normal(0.0, 1.0 / np.sqrt(d), size=(config.num_types, d))
    for i in range(config.num_layers):
        pre = f"layer{i}"
        for h in range(config.num_heads):
            p[f"{pre}.attn.q{h}"] = _xavier(rng, d, dk)
            p[f"{pre}.attn.k{h}"] = _xavier(rng, d, dk)
            p[f"{pre}.attn.v{h}"] = _xavier(rng, d, dv)
        p[f"{pre}.attn.out"] = _xavier(rng, dv * config.num_heads, d)
        if config.use_residual_norm:
            p[f"{pre}.ln1.gain"] = np.ones(d)
            p[f"{pre}.ln1.bias"] = np.zeros(d)
            p[f"{pre}.ln2.gain"] = np.ones(d)
            p[f"{pre}.ln2.bias"] = np.zeros(d)
        p[f"{pre}.ffn.w1"] = _xavier(rng, d, dh)
        p[f"{pre}.ffn.b1"] = np.zeros(dh)
        p[f"{pre}.ffn.w2"] = _xavier(rng, dh, d)
        p[f"{pre}.ffn.b2"] = np.zeros(d)
    df = config.d_head
    score_prefix = heads.INTENSITY_PREFIX if config.score_head == "intensity" else heads.DIRECT_PREFIX
    p[f"{score_prefix}.w1"] = _xavier(rng, d, df)
    p[f"{score_prefix}.w2"] = _xavier(rng, d, df)
    p[f"{score_prefix}.b1"] = np.zeros(df)
    p[f"{score_prefix}.w3"] = _xavier(rng, df, 1)
    p[f"{score_prefix}.b2"] = np.zeros(1)
    m = config.num_types
    p[f"{heads.TYPE_PREFIX}.w1"] = _xavier(rng, d, m)
    p[f"{heads.TYPE_PREFIX}.w2"] = _xavier(rng, d, m)
    p[f"{heads.TYPE_PREFIX}.b"] = np.zeros(m)
    return p


class Model:
    """Bundles a config with its parameter store and exposes the model math."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0) -> "Model":
        return cls(config, init_params(config, seed))

    def clone(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})

    def leaves(self) -> dict[str, ad.Tensor]:
        """Fresh autodiff leaf tensors over the current parameter values."""
        return {k: ad.Tensor(v, name=k, requires_grad=True) for k, v in self.params.items()}

    # -- forward surfaces; ``params`` defaults to the raw numpy store

    def encode(self, times, types, params=None, mask=None, dropout_masks=None):
        return encoder.encode(times, types, self.params if params is None else params, self.config,
                              mask=mask, dropout_masks=dropout_masks)

    def score(self, h, dt, params=None):
        params = self.params if params is None else params
        if self.config.score_head == "direct":
            return heads.direct_score(h, dt, params)
        return heads.score(h, dt, params)

    def score_time_derivative(self, h, dt, params=None):
        params = self.params if params is None else params
        if self.config.score_head == "direct":
            return heads.direct_score_time_derivative(h, dt, params)
        return heads.score_time_derivative(h, dt, params)

    def intensity(self, h, dt, params=None):
        if self.config.score_head == "direct":
            raise ConfigError("direct score head does not define an intensity")
        return heads.intensity(h, dt, self.params if params is None else params)

    def type_distribution(self, h, dt, params=None):
        return heads.type_distribution(h, dt, self.params if params is None else params)
