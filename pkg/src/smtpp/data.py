"""Marked event-sequence datasets: parsing, normalization, splits, stats.

Sequence file format (one JSON record per line, UTF-8, LF-terminated)::

    {"events": [{"t": 0.3, "k": 0}, {"t": 1.1, "k": 2}], "num_types": 3}

``t`` is the arrival time on the sequence clock (starts at 0), ``k`` the
integer event-type index. ``num_types`` is an optional dataset-level
override; without it the type count is inferred as ``max(k) + 1``.

Normalization acts on inter-arrival gaps ``t_i - t_{i-1}`` (with ``t_0 = 0``),
not on absolute times: the model and the sampler are gap-based, and gaps keep
the log mode well-defined. Zero gaps are floored at ``GAP_FLOOR`` before
taking logs, since real corpora contain tied timestamps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError

# floor applied to zero gaps before log-normalization
GAP_FLOOR = 1e-9

NORMALIZER_MODES = ("none", "standard", "log-standard")


@dataclass(frozen=True)
class Event:
    t: float
    k: int


@dataclass(frozen=True)
class EventSequence:
    """An ordered sequence of (time, type) events on a common clock."""

    events: tuple[Event, ...]

    def __len__(self) -> int:
        return len(self.events)

    @property
    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.events], dtype=np.float64)

    @property
    def types(self) -> np.ndarray:
        return np.array([e.k for e in self.events], dtype=np.intp)

    def gaps(self) -> np.ndarray:
        """Inter-arrival gaps with the clock origin as the first anchor."""
        t = self.times
        return np.diff(t, prepend=0.0)

    @staticmethod
    def from_arrays(times: Sequence[float], types: Sequence[int]) -> "EventSequence":
        return EventSequence(tuple(Event(float(t), int(k)) for t, k in zip(times, types)))


@dataclass(frozen=True)
class Dataset:
    sequences: tuple[EventSequence, ...]
    num_types: int
    split_tag: str = "train"

    def __len__(self) -> int:
        return len(self.sequences)


def parse_sequences(text: str | Iterable[str], split_tag: str = "train") -> Dataset:
    """Parse line-delimited sequence records into a validated dataset.

    Raises :class:`ConfigError` with the 1-based line number on malformed
    lines, decreasing timestamps, or type indices >= a declared num_types.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    sequences: list[EventSequence] = []
    declared_m: int | None = None
    max_k = -1
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {lineno}: malformed record ({exc.msg})") from exc
        if not isinstance(record, dict) or "events" not in record:
            raise ConfigError(f"line {lineno}: record must be an object with an 'events' array")
        if "num_types" in record:
            m = int(record["num_types"])
            if m < 1:
                raise ConfigError(f"line {lineno}: num_types must be >= 1")
            declared_m = max(declared_m or 0, m)
        events = []
        prev_t = -math.inf
        for j, item in enumerate(record["events"]):
            try:
                t = float(item["t"])
                k = int(item["k"])
            except (TypeError, KeyError, ValueError) as exc:
                raise ConfigError(f"line {lineno}: event {j} needs numeric 't' and integer 'k'") from exc
            if not math.isfinite(t) or t < 0:
                raise ConfigError(f"line {lineno}: event {j} has invalid time {t}")
            if t < prev_t:
                raise ConfigError(f"line {lineno}: non-monotone timestamps ({t} after {prev_t})")
            if k < 0:
                raise ConfigError(f"line {lineno}: negative type index {k}")
            prev_t = t
            max_k = max(max_k, k)
            events.append(Event(t, k))
        if not events:
            raise ConfigError(f"line {lineno}: empty sequence")
        sequences.append(EventSequence(tuple(events)))
    if not sequences:
        raise ConfigError("no sequence records found")
    num_types = declared_m if declared_m is not None else max_k + 1
    if max_k >= num_types:
        raise ConfigError(f"type index {max_k} >= declared num_types {num_types}")
    return Dataset(tuple(sequences), num_types=num_types, split_tag=split_tag)


def load_sequences(path, split_tag: str = "train") -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_sequences(fh, split_tag=split_tag)


def write_sequences(path, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, seq in enumerate(dataset.sequences):
            record = {"events": [{"t": e.t, "k": e.k} for e in seq.events]}
            if i == 0:
                record["num_types"] = dataset.num_types
            fh.write(json.dumps(record) + "\n")


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class Normalizer:
    """Affine (or log-affine) rescaling of inter-arrival gaps.

    ``apply`` maps original-scale gaps into model space; ``invert`` maps
    model-space values back. The divisor is the variance of the (log-)gaps
    by default, matching the corpus recipe verbatim; set
    ``scale_kind="stddev"`` for the conventional z-score.
    """

    mode: str = "none"
    center: float = 0.0
    scale: float = 1.0
    scale_kind: str = "variance"

    def apply(self, gaps: np.ndarray) -> np.ndarray:
        gaps = np.asarray(gaps, dtype=np.float64)
        if self.mode == "none":
            return gaps.copy()
        if self.mode == "standard":
            return (gaps - self.center) / self.scale
        if np.any(gaps < 0):
            raise ValueError("nonpositive gap under log-standard normalization")
        return (np.log(np.maximum(gaps, GAP_FLOOR)) - self.center) / self.scale

    def invert(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if self.mode == "none":
            return values.copy()
        if self.mode == "standard":
            return values * self.scale + self.center
        return np.exp(values * self.scale + self.center)

    def apply_sequence(self, seq: EventSequence) -> EventSequence:
        normalized = self.apply(seq.gaps())
        return EventSequence.from_arrays(np.cumsum(normalized), seq.types)


def fit_normalizer(dataset: Dataset, mode: str, scale_kind: str = "variance") -> Normalizer:
    """Fit gap statistics on a training split.

    For ``log-standard``: center = mean(log gaps), scale = variance of the
    log gaps (or their standard deviation under ``scale_kind="stddev"``).
    """
    if mode not in NORMALIZER_MODES:
        raise ConfigError(f"unknown normalizer mode {mode!r}")
    if scale_kind not in ("variance", "stddev"):
        raise ConfigError(f"unknown scale kind {scale_kind!r}")
    if mode == "none":
        return Normalizer("none")
    gaps = np.concatenate([seq.gaps() for seq in dataset.sequences])
    if mode == "log-standard":
        if np.any(gaps < 0):
            raise ValueError("nonpositive gap under log-standard normalization")
        gaps = np.log(np.maximum(gaps, GAP_FLOOR))
    center = float(gaps.mean())
    var = float(gaps.var())
    if var <= 0.0:
        raise ValueError("zero variance: degenerate corpus under this normalizer")
    scale = var if scale_kind == "variance" else math.sqrt(var)
    return Normalizer(mode, center=center, scale=scale, scale_kind=scale_kind)


# ---------------------------------------------------------------------------
# splits and stats


def split(dataset: Dataset, ratios: tuple[float, float, float],
          seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic sequence-level train/dev/test partition."""
    if len(ratios) != 3 or any(not (0.0 < r < 1.0) for r in ratios):
        raise ConfigError(f"split ratios must each lie in (0, 1), got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    n = len(dataset.sequences)
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    n_dev = int(round(ratios[1] * n))
    n_test = int(round(ratios[2] * n))
    n_train = n - n_dev - n_test
    if n_train <= 0:
        raise ConfigError("split leaves no training sequences")
    picks = (order[:n_train], order[n_train:n_train + n_dev], order[n_train + n_dev:])
    tags = ("train", "dev", "test")
    return tuple(
        Dataset(tuple(dataset.sequences[i] for i in sorted(idx)), dataset.num_types, tag)
        for idx, tag in zip(picks, tags)
    )


def dataset_stats(dataset: Dataset) -> tuple[int, int, float]:
    """(num_types, total event count, mean sequence length)."""
    if not dataset.sequences:
        raise ConfigError("empty dataset")
    lengths = [len(s) for s in dataset.sequences]
    total = int(sum(lengths))
    return dataset.num_types, total, total / len(lengths)
