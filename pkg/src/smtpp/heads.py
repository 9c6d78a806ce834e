"""Prediction heads mapping (hidden state, candidate time gap) to outputs.

The raw head value is ``f = tanh(h [W1 dt + W2] + b1) . w3 + b2`` and the
total intensity is ``softplus(f)``, which keeps the log-density defined while
staying asymptotically linear. The arrival-time score and its time derivative
are computed with analytic gap-derivatives of ``f`` (never nested autodiff):

    df/dt   = ((1 - tanh(u)^2)        * (h W1))   . w3
    d2f/dt2 = (-2 tanh(u)(1-tanh(u)^2) * (h W1)^2) . w3

with ``u = h [W1 dt + W2] + b1``. The candidate gap ``dt`` may be any real
(perturbed training samples and Langevin iterates go negative); nothing here
clamps it.

``h`` has shape (B, d_model) and ``dt`` shape (B,) or (B, S); outputs match
``dt``. Parameter dicts may hold autodiff tensors or numpy arrays.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

INTENSITY_PREFIX = "head.time"
DIRECT_PREFIX = "head.score"
TYPE_PREFIX = "head.type"


def _flat_gaps(dt) -> tuple[np.ndarray, tuple[int, ...], int]:
    dt = np.asarray(dt, dtype=np.float64)
    shape = dt.shape
    if dt.ndim == 1:
        dt = dt[:, None]
    if dt.ndim != 2:
        raise ValueError(f"dt must be (B,) or (B, S), got shape {shape}")
    return dt, shape, dt.shape[1]


def _time_features(h, dt, params, prefix):
    """Per-(row, candidate) pre-activation u and the repeated slope h @ W1."""
    dt, shape, s = _flat_gaps(dt)
    a = ad.matmul(h, params[f"{prefix}.w1"])                            # (B, d_f)
    c = ad.matmul(h, params[f"{prefix}.w2"]) + params[f"{prefix}.b1"]   # (B, d_f)
    a_rep = ad.repeat_rows(a, s)
    u = a_rep * dt.reshape(-1, 1) + ad.repeat_rows(c, s)                # (B*S, d_f)
    return u, a_rep, shape


def _collapse(x, params, prefix, shape):
    out = ad.matmul(x, params[f"{prefix}.w3"]) + params[f"{prefix}.b2"]
    return ad.reshape(out, shape)


def raw_value(h, dt, params, prefix: str = INTENSITY_PREFIX):
    """The scalar pre-intensity f (one value per (row, candidate gap))."""
    u, _, shape = _time_features(h, dt, params, prefix)
    return _collapse(ad.tanh(u), params, prefix, shape)


def raw_value_dt(h, dt, params, prefix: str = INTENSITY_PREFIX):
    """Analytic df/dt."""
    u, a_rep, shape = _time_features(h, dt, params, prefix)
    t = ad.tanh(u)
    return _collapse((1.0 - t * t) * a_rep, params, prefix, shape)


def raw_value_dtt(h, dt, params, prefix: str = INTENSITY_PREFIX):
    """Analytic d2f/dt2."""
    u, a_rep, shape = _time_features(h, dt, params, prefix)
    t = ad.tanh(u)
    return _collapse(ad.affine(t * (1.0 - t * t), -2.0) * (a_rep * a_rep),
                     params, prefix, shape)


def intensity(h, dt, params):
    """Total intensity softplus(f) > 0."""
    return ad.softplus(raw_value(h, dt, params))


def _intensity_terms(h, dt, params, order: int):
    """Shared plumbing for score/score_derivative; avoids re-encoding u."""
    u, a_rep, shape = _time_features(h, dt, params, INTENSITY_PREFIX)
    t = ad.tanh(u)
    f = _collapse(t, params, INTENSITY_PREFIX, shape)
    df = _collapse((1.0 - t * t) * a_rep, params, INTENSITY_PREFIX, shape)
    lam = ad.softplus(f)
    sig = ad.sigmoid(f)
    dlam = sig * df
    dlog = dlam / lam
    psi = dlog - lam
    if order < 2:
        return lam, psi, None
    d2f = _collapse(ad.affine(t * (1.0 - t * t), -2.0) * (a_rep * a_rep),
                    params, INTENSITY_PREFIX, shape)
    d2lam = sig * (1.0 - sig) * (df * df) + sig * d2f
    d2log = d2lam / lam - dlog * dlog
    dpsi = d2log - dlam
    return lam, psi, dpsi


def score(h, dt, params):
    """Arrival-time score psi = dlog(lambda)/dt - lambda at the gap dt."""
    return _intensity_terms(h, dt, params, order=1)[1]


def score_time_derivative(h, dt, params):
    """dpsi/dt = d2log(lambda)/dt2 - dlambda/dt (needed by exact SM)."""
    return _intensity_terms(h, dt, params, order=2)[2]


def direct_score(h, dt, params):
    """Ablation head: psi parametrized directly, no positivity constraint."""
    return raw_value(h, dt, params, prefix=DIRECT_PREFIX)


def direct_score_time_derivative(h, dt, params):
    return raw_value_dt(h, dt, params, prefix=DIRECT_PREFIX)


def type_logits(h, dt, params):
    """Unnormalized type scores h [W1 dt + W2] + b, shape (..., M)."""
    dt, shape, s = _flat_gaps(dt)
    a = ad.matmul(h, params[f"{TYPE_PREFIX}.w1"])
    c = ad.matmul(h, params[f"{TYPE_PREFIX}.w2"]) + params[f"{TYPE_PREFIX}.b"]
    logits = ad.repeat_rows(a, s) * dt.reshape(-1, 1) + ad.repeat_rows(c, s)
    m = logits.shape[1] if isinstance(logits, np.ndarray) else logits.data.shape[1]
    return ad.reshape(logits, shape + (m,))


def type_distribution(h, dt, params):
    """Softmax type probabilities at the candidate gap."""
    return ad.softmax(type_logits(h, dt, params))
