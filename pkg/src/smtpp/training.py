"""Score-matching training objectives and the optimization loop.

Two score objectives are available. The exact one penalizes
``mean_i [ psi(t_i)^2 / 2 + dpsi/dt(t_i) ]`` at the observed gaps and needs
the analytic time-derivative of the score. The denoising variant (the
default) perturbs each observed gap with Gaussian noise of scale ``sigma``
and regresses the model score at the perturbed gap onto the noise score
``(t_i - t_i^sigma) / sigma^2``; the encoder always consumes the clean
history, the perturbation enters only through the candidate gap at the head.

Losses are averaged over events (and perturbations), not summed, so the
score weight ``alpha`` and the learning rate transfer across dataset sizes.

The combined objective is ``alpha * score_loss + type_cross_entropy`` with
the type classifier conditioned on the true arrival gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import autodiff as ad
from . import encoder, heads
from .data import EventSequence
from .errors import ConfigError, NumericError
from .hawkes import perturbed_exponential_score
from .model import Model, ModelConfig

OBJECTIVES = ("dsm", "sm")


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "dsm"
    alpha: float = 1.0              # weight of the score-matching term
    sigma: float = 0.1              # std of the Gaussian gap perturbation
    num_perturbations: int = 100    # perturbed copies per event (dsm only)
    batch_size: int = 4
    lr: float = 1e-4
    epochs: int = 50
    seed: int = 0
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.objective == "dsm" and self.sigma <= 0:
            raise ConfigError("dsm requires sigma > 0")
        if self.num_perturbations < 1:
            raise ConfigError("num_perturbations must be >= 1")
        for name in ("batch_size", "lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


# ---------------------------------------------------------------------------
# batch assembly


@dataclass(frozen=True)
class PreparedBatch:
    """Several sequences concatenated into one attention problem.

    ``h_rows[e]`` indexes the hidden state that conditions prediction ``e``
    (the row of the event preceding it); the first event of every sequence
    has no history and is never a target.
    """

    times: np.ndarray
    types: np.ndarray
    mask: np.ndarray
    h_rows: np.ndarray
    target_gaps: np.ndarray
    target_types: np.ndarray

    @property
    def num_events(self) -> int:
        return self.h_rows.shape[0]


def prepare_batch(sequences: Sequence[EventSequence]) -> PreparedBatch:
    usable = [s for s in sequences if len(s) >= 2]
    if not usable:
        raise ValueError("batch contains no sequence with at least 2 events")
    times, types, h_rows, gaps, tgt_types = [], [], [], [], []
    offset = 0
    for seq in usable:
        t = seq.times
        k = seq.types
        g = seq.gaps()
        n = len(seq)
        times.append(t)
        types.append(k)
        h_rows.append(offset + np.arange(n - 1))
        gaps.append(g[1:])
        tgt_types.append(k[1:])
        offset += n
    return PreparedBatch(
        times=np.concatenate(times),
        types=np.concatenate(types),
        mask=encoder.block_causal_mask([len(s) for s in usable]),
        h_rows=np.concatenate(h_rows),
        target_gaps=np.concatenate(gaps),
        target_types=np.concatenate(tgt_types).astype(np.intp),
    )


# ---------------------------------------------------------------------------
# loss graphs (shared by the public losses and the training step)


def _hidden_rows(params, prep: PreparedBatch, config: ModelConfig, dropout_masks=None):
    h_all = encoder.encode(prep.times, prep.types, params, config,
                           mask=prep.mask, dropout_masks=dropout_masks)
    return ad.take_rows(h_all, prep.h_rows)


def _model_score(h, dt, params, config: ModelConfig):
    if config.score_head == "direct":
        return heads.direct_score(h, dt, params)
    return heads.score(h, dt, params)


def _model_score_dt(h, dt, params, config: ModelConfig):
    if config.score_head == "direct":
        return heads.direct_score_time_derivative(h, dt, params)
    return heads.score_time_derivative(h, dt, params)


def _sm_graph(h, prep: PreparedBatch, params, config: ModelConfig):
    psi = _model_score(h, prep.target_gaps, params, config)
    dpsi = _model_score_dt(h, prep.target_gaps, params, config)
    return ad.mean(ad.affine(psi * psi, 0.5) + dpsi)


def _dsm_graph(h, prep: PreparedBatch, params, config: ModelConfig,
               sigma: float, noise: np.ndarray):
    perturbed = prep.target_gaps[:, None] + sigma * noise      # (E, S)
    psi = _model_score(h, perturbed, params, config)
    residual = psi - (-noise / sigma)                          # noise score = -z/sigma
    return ad.affine(ad.mean(residual * residual), 0.5)


def _type_graph(h, prep: PreparedBatch, params, config: ModelConfig):
    logits = heads.type_logits(h, prep.target_gaps, params)
    logp = ad.log_softmax(logits)
    onehot = np.eye(config.num_types)[prep.target_types]
    return ad.affine(ad.mean(ad.sum_(logp * onehot, axis=1)), -1.0)


def _draw_noise(prep: PreparedBatch, num_perturbations: int,
                rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((prep.num_events, num_perturbations))


# ---------------------------------------------------------------------------
# public losses (evaluation mode, scalar floats)


def _as_batch(batch) -> PreparedBatch:
    if isinstance(batch, PreparedBatch):
        return batch
    if isinstance(batch, EventSequence):
        batch = [batch]
    return prepare_batch(batch)


def sm_loss(model: Model, batch) -> float:
    """Exact score-matching objective, averaged over events."""
    prep = _as_batch(batch)
    h = _hidden_rows(model.params, prep, model.config)
    return float(_sm_graph(h, prep, model.params, model.config))


def dsm_loss(model: Model, batch, sigma: float, num_perturbations: int,
             rng: np.random.Generator) -> float:
    """Denoising score-matching objective, averaged over events x perturbations."""
    prep = _as_batch(batch)
    noise = _draw_noise(prep, num_perturbations, rng)
    h = _hidden_rows(model.params, prep, model.config)
    return float(_dsm_graph(h, prep, model.params, model.config, sigma, noise))


def type_loss(model: Model, batch) -> float:
    """Mean cross entropy of the type classifier at the true arrival gaps."""
    prep = _as_batch(batch)
    h = _hidden_rows(model.params, prep, model.config)
    return float(_type_graph(h, prep, model.params, model.config))


def combined_loss(model: Model, batch, config: TrainConfig,
                  rng: np.random.Generator | None = None) -> float:
    """alpha * score objective + type cross entropy."""
    prep = _as_batch(batch)
    h = _hidden_rows(model.params, prep, model.config)
    if config.objective == "dsm":
        if rng is None:
            raise ValueError("dsm objective needs an rng for the perturbations")
        noise = _draw_noise(prep, config.num_perturbations, rng)
        score = _dsm_graph(h, prep, model.params, model.config, config.sigma, noise)
    else:
        score = _sm_graph(h, prep, model.params, model.config)
    total = config.alpha * score + _type_graph(h, prep, model.params, model.config)
    return float(total)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()},
                   t=0)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> None:
    """In-place global-norm clipping; protects the squared-score term early on."""
    if max_norm <= 0:
        return
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    state.t += 1
    correct1 = 1.0 - beta1 ** state.t
    correct2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / correct1) / (np.sqrt(v / correct2) + eps)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: Model
    adam: AdamState
    epoch: int
    train_losses: list[float] = field(default_factory=list)
    dev_losses: list[float] = field(default_factory=list)
    prior_max: float = 1.0


def suggest_prior_max(sequences: Iterable[EventSequence]) -> float:
    """99th percentile of model-space target gaps; the Langevin init bound."""
    parts = [s.gaps()[1:] for s in sequences if len(s) >= 2]
    gaps = np.concatenate(parts) if parts else np.array([])
    if gaps.size == 0 or float(np.quantile(gaps, 0.99)) <= 0:
        return 1.0
    return float(np.quantile(gaps, 0.99))


def train(model: Model, train_seqs: Sequence[EventSequence],
          dev_seqs: Sequence[EventSequence], config: TrainConfig,
          on_epoch: Callable[["TrainResult", float, float], None] | None = None,
          freeze: tuple[str, ...] = ()) -> TrainResult:
    """Optimize the model in place with Adam.

    ``train_seqs``/``dev_seqs`` must already be normalized. ``on_epoch`` is
    called after every epoch with the live result (for checkpointing) plus
    the epoch's train and dev losses; ``freeze`` names parameters whose
    gradients are zeroed each step.

    Raises :class:`NumericError` when a step produces a non-finite loss.
    """
    for name in freeze:
        if name not in model.params:
            raise ConfigError(f"cannot freeze unknown parameter {name!r}")
    usable = [s for s in train_seqs if len(s) >= 2]
    if not usable and config.epochs > 0:
        raise ConfigError("training data has no sequence with >= 2 events")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    dev_rng_seed = np.random.SeedSequence((config.seed, 0xDEF))
    adam = AdamState.for_params(model.params)
    result = TrainResult(model=model, adam=adam, epoch=0,
                         prior_max=suggest_prior_max(usable) if usable else 1.0)
    dev_usable = [s for s in dev_seqs if len(s) >= 2]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(usable))
        epoch_loss = 0.0
        epoch_events = 0
        for start in range(0, len(order), config.batch_size):
            chunk = [usable[i] for i in order[start:start + config.batch_size]]
            prep = prepare_batch(chunk)
            drop_rng = rng
            masks = encoder.make_dropout_masks(drop_rng, model.config, prep.times.shape[0])
            noise = (_draw_noise(prep, config.num_perturbations, rng)
                     if config.objective == "dsm" else None)
            leaves = model.leaves()
            h = _hidden_rows(leaves, prep, model.config, dropout_masks=masks)
            if config.objective == "dsm":
                score = _dsm_graph(h, prep, leaves, model.config, config.sigma, noise)
            else:
                score = _sm_graph(h, prep, leaves, model.config)
            loss = config.alpha * score + _type_graph(h, prep, leaves, model.config)
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch starting at {start}")
            grads = ad.gradients(loss, leaves)
            for name in freeze:
                grads[name][...] = 0.0
            clip_gradients(grads, config.grad_clip)
            adam_step(model.params, grads, adam, config.lr)
            epoch_loss += loss_val * prep.num_events
            epoch_events += prep.num_events
        train_loss = epoch_loss / max(epoch_events, 1)
        dev_loss = math.nan
        if dev_usable:
            dev_rng = np.random.Generator(np.random.PCG64(dev_rng_seed))
            dev_loss = combined_loss(model, dev_usable, config, rng=dev_rng)
        result.epoch = epoch
        result.train_losses.append(train_loss)
        result.dev_losses.append(dev_loss)
        if on_epoch is not None:
            on_epoch(result, train_loss, dev_loss)
    return result


# ---------------------------------------------------------------------------
# constant-rate reference estimator


def fit_constant_rate_dsm(gaps: np.ndarray, sigma: float, num_perturbations: int,
                          seed: int, rate_bounds: tuple[float, float] = (1e-3, 1e3)) -> float:
    """Denoising score-matching estimate of a constant event rate.

    The model family is the constant-intensity process, whose clean gap
    density is Exponential(rate); its sigma-perturbed marginal has the
    closed-form score :func:`~smtpp.hawkes.perturbed_exponential_score`.
    The estimate minimizes the empirical DSM objective, regressing that
    perturbed-model score (evaluated at noisy gaps) onto the noise score.
    """
    gaps = np.asarray(gaps, dtype=np.float64)
    if gaps.size == 0:
        raise ValueError("no gaps to fit")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    z = rng.standard_normal((gaps.size, num_perturbations))
    y = gaps[:, None] + sigma * z
    target = -z / sigma

    def objective(log_rate: float) -> float:
        psi = perturbed_exponential_score(y, math.exp(log_rate), sigma)
        return 0.5 * float(np.mean((psi - target) ** 2))

    res = minimize_scalar(objective, bounds=(math.log(rate_bounds[0]), math.log(rate_bounds[1])),
                          method="bounded", options={"xatol": 1e-10})
    return float(math.exp(res.x))
