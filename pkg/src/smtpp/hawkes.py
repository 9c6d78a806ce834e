"""Classical marked Hawkes process with exponential kernels.

Everything here is closed-form or exact-by-construction, which is what makes
this module usable as ground truth for the learned models: exact intensity,
exact conditional score, Ogata-thinning simulation, and the conditional
next-arrival cdf/quantile via the closed-form compensator.

Conventions: ``mu`` has shape (M,), ``alpha`` and ``beta`` shape (M, M) with
``alpha[k, j]`` the excitation that a past event of type ``j`` adds to the
intensity of type ``k``. All history events contribute with elapsed time
``t - t_j >= 0`` (right-continuous kernels).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from .data import Dataset, EventSequence
from .errors import ConfigError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class HawkesParams:
    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        m = mu.shape[0]
        alpha = np.asarray(self.alpha, dtype=np.float64).reshape(m, m)
        beta = np.asarray(self.beta, dtype=np.float64).reshape(m, m)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        if np.any(mu < 0) or np.any(alpha < 0) or np.any(beta <= 0):
            raise ConfigError("require mu >= 0, alpha >= 0, beta > 0")

    @property
    def num_types(self) -> int:
        return self.mu.shape[0]

    def branching_radius(self) -> float:
        """Spectral radius of the expected offspring matrix alpha/beta."""
        return float(np.max(np.abs(np.linalg.eigvals(self.alpha / self.beta))))

    def require_stationary(self) -> None:
        rho = self.branching_radius()
        if rho >= 1.0:
            raise ConfigError(f"nonstationary parameters: branching radius {rho:.4f} >= 1")


def load_params(path) -> HawkesParams:
    """Read a parameter file: a JSON object with mu, alpha, beta."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed Hawkes parameter file: {exc.msg}") from exc
    try:
        return HawkesParams(np.asarray(obj["mu"], float),
                            np.asarray(obj["alpha"], float),
                            np.asarray(obj["beta"], float))
    except KeyError as exc:
        raise ConfigError(f"Hawkes parameter file missing field {exc}") from exc


def write_params(path, params: HawkesParams) -> None:
    obj = {"mu": params.mu.tolist(), "alpha": params.alpha.tolist(), "beta": params.beta.tolist()}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# intensity, score, compensator


def intensity(params: HawkesParams, times: np.ndarray, types: np.ndarray,
              t: float) -> tuple[np.ndarray, float]:
    """Per-type intensities lambda_k(t) and their total, given history."""
    times = np.asarray(times, dtype=np.float64)
    types = np.asarray(types, dtype=np.intp)
    if times.size and t < times[-1]:
        raise ValueError(f"t={t} precedes history end {times[-1]}")
    lam = params.mu.copy()
    if times.size:
        # alpha[:, types] has shape (M, n); decay per (target type, event)
        decay = np.exp(-params.beta[:, types] * (t - times)[None, :])
        lam = lam + (params.alpha[:, types] * decay).sum(axis=1)
    return lam, float(lam.sum())


def intensity_derivative(params: HawkesParams, times: np.ndarray, types: np.ndarray,
                         t: float) -> float:
    """d/dt of the total intensity (sum of decaying kernels)."""
    times = np.asarray(times, dtype=np.float64)
    types = np.asarray(types, dtype=np.intp)
    if not times.size:
        return 0.0
    decay = np.exp(-params.beta[:, types] * (t - times)[None, :])
    return float(-(params.beta[:, types] * params.alpha[:, types] * decay).sum())


def conditional_score(params: HawkesParams, times: np.ndarray, types: np.ndarray,
                      t: float) -> float:
    """Score of the next-arrival density: dlog(lambda)/dt - lambda."""
    _, lam = intensity(params, times, types, t)
    if lam <= 0.0:
        raise ValueError("zero intensity; score undefined")
    return intensity_derivative(params, times, types, t) / lam - lam


def compensator(params: HawkesParams, times: np.ndarray, types: np.ndarray,
                a: float, b) -> np.ndarray:
    """Integral of the total intensity over [a, b], history fixed before a.

    ``b`` may be a scalar or an array of endpoints >= a.
    """
    times = np.asarray(times, dtype=np.float64)
    types = np.asarray(types, dtype=np.intp)
    b = np.asarray(b, dtype=np.float64)
    out = params.mu.sum() * (b - a)
    if times.size:
        bet = params.beta[:, types]        # (M, n)
        ratio = params.alpha[:, types] / bet
        start = np.exp(-bet * (a - times)[None, :])
        if b.ndim == 0:
            end = np.exp(-bet * (float(b) - times)[None, :])
            out = out + (ratio * (start - end)).sum()
        else:
            delta = b[:, None, None] - times[None, None, :]    # (B, 1, n)
            end = np.exp(-bet[None, :, :] * delta)             # (B, M, n)
            out = out + (ratio[None, :, :] * (start[None, :, :] - end)).sum(axis=(1, 2))
    return out


def conditional_cdf(params: HawkesParams, times: np.ndarray, types: np.ndarray, t) -> np.ndarray:
    """cdf of the next arrival time after the history end, F(t) = 1 - e^{-int lambda}."""
    times = np.asarray(times, dtype=np.float64)
    t0 = float(times[-1]) if times.size else 0.0
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < t0):
        raise ValueError("cdf argument precedes history end")
    return 1.0 - np.exp(-compensator(params, times, types, t0, t))


def conditional_quantile(params: HawkesParams, times: np.ndarray, types: np.ndarray,
                         q, tol: float = 1e-10) -> np.ndarray:
    """Inverse of :func:`conditional_cdf` by bisection (vectorized in q)."""
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    if np.any((q <= 0.0) | (q >= 1.0)):
        raise ValueError("quantile levels must lie in (0, 1)")
    times = np.asarray(times, dtype=np.float64)
    t0 = float(times[-1]) if times.size else 0.0
    # mu.sum() lower-bounds the intensity, so this horizon covers any q < 1
    mu_total = float(params.mu.sum())
    if mu_total <= 0.0:
        raise ValueError("quantile requires a positive base rate")
    span = 1.0
    hi = t0 + span
    while np.any(conditional_cdf(params, times, types, hi) < q.max()):
        span *= 2.0
        hi = t0 + span
        if span > 1e3 * (-math.log(1.0 - q.max()) / mu_total + 1.0):
            raise RuntimeError("bisection bracket failure")
    lo = np.full_like(q, t0)
    hi = np.full_like(q, hi)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        below = conditional_cdf(params, times, types, mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = 0.5 * (lo + hi)
    return out


def oracle_gap_samples(params: HawkesParams, times: np.ndarray, types: np.ndarray,
                       num_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Exact samples of the next inter-arrival gap via inverse-cdf."""
    u = rng.uniform(1e-12, 1.0 - 1e-12, size=num_samples)
    times = np.asarray(times, dtype=np.float64)
    t0 = float(times[-1]) if times.size else 0.0
    return conditional_quantile(params, times, types, u) - t0


# ---------------------------------------------------------------------------
# simulation


def simulate(params: HawkesParams, t_max: float, rng: np.random.Generator,
             max_events: int = 1_000_000) -> EventSequence:
    """Exact Ogata thinning on [0, t_max]."""
    params.require_stationary()
    m = params.num_types
    # state[k, c]: summed kernels of source type c acting on target type k
    state = np.zeros((m, m))
    s = 0.0
    times: list[float] = []
    types: list[int] = []
    while True:
        lam_bar = float(params.mu.sum() + state.sum())
        if lam_bar <= 0.0:
            break
        w = rng.exponential(1.0 / lam_bar)
        if s + w > t_max:
            break
        # decay the state to the candidate point
        state = state * np.exp(-params.beta * w)
        s = s + w
        lam_k = params.mu + state.sum(axis=1)
        lam = float(lam_k.sum())
        if rng.uniform() * lam_bar <= lam:
            k = int(rng.choice(m, p=lam_k / lam))
            state[:, k] += params.alpha[:, k]
            times.append(s)
            types.append(k)
            if len(times) > max_events:
                raise RuntimeError(f"runaway intensity: more than {max_events} events")
    return EventSequence.from_arrays(times, types)


def simulate_dataset(params: HawkesParams, t_max: float, count: int,
                     seed: int) -> Dataset:
    """Simulate ``count`` independent sequences; empty draws are re-drawn."""
    root = np.random.SeedSequence(seed)
    sequences = []
    for child in root.spawn(count):
        rng = np.random.Generator(np.random.PCG64(child))
        seq = simulate(params, t_max, rng)
        while len(seq) == 0:
            seq = simulate(params, t_max, rng)
        sequences.append(seq)
    return Dataset(tuple(sequences), num_types=params.num_types)


def time_rescaled_gaps(params: HawkesParams, seq: EventSequence) -> np.ndarray:
    """Compensator increments between consecutive events.

    For a correctly specified model these are iid Exponential(1), which is
    the basis of the simulator validity test.
    """
    times = seq.times
    types = seq.types
    out = np.empty(len(times))
    for i in range(len(times)):
        a = times[i - 1] if i else 0.0
        out[i] = compensator(params, times[:i], types[:i], a, times[i])
    return out


# ---------------------------------------------------------------------------
# perturbed constant-rate oracle


def perturbed_exponential_score(y, rate: float, sigma: float):
    """Score of a Gaussian-smoothed Exponential(rate) gap distribution.

    The clean density lives on [0, inf); adding N(0, sigma^2) noise gives
    q(y) = rate * exp(rate^2 sigma^2 / 2 - rate*y) * Phi((y - rate*sigma^2)/sigma),
    whose score is ``-rate + phi(a) / (sigma * Phi(a))`` with
    ``a = (y - rate*sigma^2)/sigma``. Evaluated via log_ndtr for stability.
    """
    y = np.asarray(y, dtype=np.float64)
    a = (y - rate * sigma * sigma) / sigma
    log_phi = -0.5 * a * a - _LOG_SQRT_2PI
    return -rate + np.exp(log_phi - log_ndtr(a)) / sigma
