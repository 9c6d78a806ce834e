"""Self-attention sequence encoder for event histories.

Each event is embedded as the sum of a sinusoidal temporal encoding of its
(normalized) arrival time and a learned type embedding, then passed through
stacked causal multi-head self-attention and position-wise FFN blocks. Row j
of the output depends only on events 1..j, so one forward pass yields the
conditioning state for every one-step-ahead prediction in the sequence.

Residual connections and layer normalization around both sublayers are on by
default (pre-norm); both can be disabled for ablations. All functions accept
parameter dicts of either autodiff tensors (training) or plain numpy arrays
(sampling) and return the matching kind.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad

MASK_FILL = -1e30   # finite stand-in for -inf in masked attention logits


def temporal_encode(times: np.ndarray, d_model: int) -> np.ndarray:
    """Sinusoidal position code: (i, 2m) -> sin(t_i / 10000^(2m/d)), odd -> cos."""
    if d_model % 2:
        raise ValueError(f"d_model must be even, got {d_model}")
    times = np.asarray(times, dtype=np.float64)
    div = np.power(10000.0, 2.0 * np.arange(d_model // 2) / d_model)
    angles = times[:, None] / div[None, :]
    out = np.empty((times.shape[0], d_model))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def causal_mask(length: int) -> np.ndarray:
    """Boolean (L, L) mask, True where attention is forbidden (future)."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def block_causal_mask(lengths: list[int]) -> np.ndarray:
    """Causal masks for several sequences concatenated along the row axis.

    Positions never attend across sequence boundaries, which lets a whole
    batch run as one (sum L, d_model) attention problem.
    """
    total = sum(lengths)
    mask = np.ones((total, total), dtype=bool)
    start = 0
    for n in lengths:
        mask[start:start + n, start:start + n] = causal_mask(n)
        start += n
    return mask


def layer_norm(x, gain, bias, eps: float = 1e-5):
    mu = ad.mean(x, axis=1, keepdims=True)
    centered = x - mu
    var = ad.mean(centered * centered, axis=1, keepdims=True)
    # sqrt through exp(log)/2; var + eps > 0 always
    denom = ad.exp(ad.affine(ad.log(var + eps), 0.5))
    return (centered / denom) * gain + bias


def attention_layer(x, params, prefix: str, config, mask: np.ndarray):
    """Masked multi-head self-attention: softmax(QK^T / sqrt(d_k)) V per head."""
    scale = 1.0 / math.sqrt(config.d_k)
    heads = []
    for h in range(config.num_heads):
        q = ad.matmul(x, params[f"{prefix}.q{h}"])
        k = ad.matmul(x, params[f"{prefix}.k{h}"])
        v = ad.matmul(x, params[f"{prefix}.v{h}"])
        logits = ad.affine(ad.matmul(q, k, transpose_b=True), scale)
        if mask is not None:
            logits = ad.masked_fill(logits, mask, MASK_FILL)
        heads.append(ad.matmul(ad.softmax(logits), v))
    merged = ad.concat(heads, axis=1) if config.num_heads > 1 else heads[0]
    return ad.matmul(merged, params[f"{prefix}.out"])


def attention_weights(x, params, prefix: str, head: int, config,
                      mask: np.ndarray) -> np.ndarray:
    """Post-softmax attention matrix of one head (numpy, for inspection/tests)."""
    x = x if isinstance(x, np.ndarray) else x.data
    p = {k: (v if isinstance(v, np.ndarray) else v.data) for k, v in params.items()}
    q = x @ p[f"{prefix}.q{head}"]
    k = x @ p[f"{prefix}.k{head}"]
    logits = (q @ k.T) / math.sqrt(config.d_k)
    if mask is not None:
        logits = np.where(mask, MASK_FILL, logits)
    return ad.softmax(logits)


def _ffn(x, params, prefix: str):
    inner = ad.relu(ad.matmul(x, params[f"{prefix}.w1"]) + params[f"{prefix}.b1"])
    return ad.matmul(inner, params[f"{prefix}.w2"]) + params[f"{prefix}.b2"]


def encode(times: np.ndarray, types: np.ndarray, params, config,
           mask: np.ndarray | None = None, dropout_masks=None):
    """Hidden states for a (possibly concatenated) event sequence.

    ``dropout_masks`` is None in evaluation mode, otherwise a list with one
    ``(attn_mask, ffn_mask)`` pair of pre-scaled multiplier arrays per layer;
    randomness is injected here and never drawn inside the graph.
    """
    times = np.asarray(times, dtype=np.float64)
    types = np.asarray(types, dtype=np.intp)
    if np.any(types >= config.num_types) or np.any(types < 0):
        raise ValueError(f"event type out of range [0, {config.num_types})")
    if mask is None:
        mask = causal_mask(len(times))
    x = ad.take_rows(params["embed.type"], types) + temporal_encode(times, config.d_model)
    for i in range(config.num_layers):
        prefix = f"layer{i}"
        drop_a, drop_f = dropout_masks[i] if dropout_masks is not None else (None, None)
        if config.use_residual_norm and config.norm_first:
            a = attention_layer(
                layer_norm(x, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"]),
                params, f"{prefix}.attn", config, mask)
            if drop_a is not None:
                a = a * drop_a
            x = x + a
            f = _ffn(layer_norm(x, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"]),
                     params, f"{prefix}.ffn")
            if drop_f is not None:
                f = f * drop_f
            x = x + f
        elif config.use_residual_norm:
            a = attention_layer(x, params, f"{prefix}.attn", config, mask)
            if drop_a is not None:
                a = a * drop_a
            x = layer_norm(x + a, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"])
            f = _ffn(x, params, f"{prefix}.ffn")
            if drop_f is not None:
                f = f * drop_f
            x = layer_norm(x + f, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"])
        else:
            x = attention_layer(x, params, f"{prefix}.attn", config, mask)
            if drop_a is not None:
                x = x * drop_a
            x = _ffn(x, params, f"{prefix}.ffn")
            if drop_f is not None:
                x = x * drop_f
    return x


def make_dropout_masks(rng: np.random.Generator, config, length: int):
    """Pre-scaled Bernoulli keep-masks, one (attn, ffn) pair per layer."""
    if config.dropout <= 0.0:
        return None
    keep = 1.0 - config.dropout
    shape = (length, config.d_model)
    return [
        (rng.binomial(1, keep, size=shape) / keep, rng.binomial(1, keep, size=shape) / keep)
        for _ in range(config.num_layers)
    ]
