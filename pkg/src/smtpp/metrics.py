"""Sample-based uncertainty metrics for arrival-time prediction.

All metrics consume per-event sample packs: for event ``i`` a vector of U
generated arrival gaps (original scale) plus U generated types, evaluated
against the true gap and type. Quantiles are nearest-rank (the ceil(qU)-th
order statistic), with no interpolation, so every value is exactly testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_QUANTILE_GRID = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


def quantile_grid(levels=DEFAULT_QUANTILE_GRID) -> tuple[float, ...]:
    levels = tuple(float(q) for q in levels)
    if any(not (0.0 < q < 1.0) for q in levels):
        raise ValueError("quantile levels must lie in (0, 1)")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("quantile levels must be strictly increasing")
    return levels


def empirical_quantile(samples: np.ndarray, q: float) -> np.ndarray:
    """Nearest-rank q-quantile along the last axis."""
    samples = np.asarray(samples, dtype=np.float64)
    u = samples.shape[-1]
    if u == 0:
        raise ValueError("empty sample pack")
    rank = max(1, math.ceil(q * u))          # 1-based order statistic
    return np.sort(samples, axis=-1)[..., rank - 1]


def coverage(truths: np.ndarray, samples: np.ndarray, q: float) -> float:
    """Fraction of events whose truth falls strictly below its q-quantile."""
    truths = np.asarray(truths, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    if truths.shape[0] != samples.shape[0]:
        raise ValueError(f"{truths.shape[0]} truths vs {samples.shape[0]} sample packs")
    return float(np.mean(truths < empirical_quantile(samples, q)))


def calibration_score(truths: np.ndarray, samples: np.ndarray,
                      grid=DEFAULT_QUANTILE_GRID) -> float:
    """RMSE between empirical coverages and nominal levels, in percent."""
    grid = quantile_grid(grid)
    sq = [(coverage(truths, samples, q) - q) ** 2 for q in grid]
    return 100.0 * math.sqrt(float(np.mean(sq)))


def crps(truths: np.ndarray, samples: np.ndarray) -> float:
    """Empirical continuous ranked probability score.

    For each event: mean_j |s_j - t| - (1/(2U^2)) sum_jk |s_j - s_k|,
    averaged over events. Exact O(U^2) evaluation.
    """
    truths = np.asarray(truths, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("empty sample pack")
    u = samples.shape[-1]
    term1 = np.abs(samples - truths[:, None]).mean(axis=1)
    pair = np.abs(samples[:, :, None] - samples[:, None, :]).sum(axis=(1, 2))
    return float(np.mean(term1 - pair / (2.0 * u * u)))


def interval_length(samples: np.ndarray, q: float) -> float:
    """Mean upper endpoint of the per-event [0, q-quantile] intervals."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("empty sample pack")
    return float(np.mean(empirical_quantile(samples, q)))


def coverage_error(truths: np.ndarray, samples: np.ndarray, q: float) -> float:
    """Absolute gap between empirical coverage and the nominal level."""
    return abs(coverage(truths, samples, q) - q)


def type_accuracy(true_types: np.ndarray, sampled_types: np.ndarray) -> float:
    """Percent of events whose modal sampled type matches the truth.

    Ties in the mode break toward the smallest type index.
    """
    true_types = np.asarray(true_types, dtype=np.intp)
    sampled_types = np.asarray(sampled_types, dtype=np.intp)
    if sampled_types.size == 0:
        raise ValueError("empty sample pack")
    correct = 0
    for truth, row in zip(true_types, sampled_types):
        mode = np.bincount(row).argmax()      # argmax returns the first max
        correct += int(mode == truth)
    return 100.0 * correct / len(true_types)


# ---------------------------------------------------------------------------
# aggregate report


@dataclass(frozen=True)
class MetricReport:
    """Flat record of all metrics; CER and IL are reported at q=0.5."""

    cs: float
    crps: float
    cer: float
    il: float
    accuracy: float
    num_events: int
    num_samples: int
    grid: tuple[float, ...] = DEFAULT_QUANTILE_GRID
    coverages: tuple[float, ...] = field(default=())
    interval_lengths: tuple[float, ...] = field(default=())


def compute_report(truths: np.ndarray, samples: np.ndarray,
                   true_types: np.ndarray, sampled_types: np.ndarray,
                   grid=DEFAULT_QUANTILE_GRID) -> MetricReport:
    grid = quantile_grid(grid)
    covs = tuple(coverage(truths, samples, q) for q in grid)
    ils = tuple(interval_length(samples, q) for q in grid)
    return MetricReport(
        cs=calibration_score(truths, samples, grid),
        crps=crps(truths, samples),
        cer=100.0 * coverage_error(truths, samples, 0.5),
        il=interval_length(samples, 0.5),
        accuracy=type_accuracy(true_types, sampled_types),
        num_events=int(np.asarray(truths).shape[0]),
        num_samples=int(np.asarray(samples).shape[-1]),
        grid=grid,
        coverages=covs,
        interval_lengths=ils,
    )


def format_report(report: MetricReport) -> str:
    """Flat key=value text; field names mirror the usual results tables."""
    lines = [
        f"CS={report.cs:.6f}",
        f"CRPS={report.crps:.6f}",
        f"CER={report.cer:.6f}",
        f"IL={report.il:.6f}",
        f"Acc={report.accuracy:.6f}",
        f"events={report.num_events}",
        f"samples_per_event={report.num_samples}",
    ]
    return "\n".join(lines) + "\n"


def format_curves(report: MetricReport) -> str:
    """Per-level (q, coverage, interval length) rows as CSV, plot-ready."""
    rows = ["q,coverage,interval_length"]
    for q, c, il in zip(report.grid, report.coverages, report.interval_lengths):
        rows.append(f"{q:.2f},{c:.6f},{il:.6f}")
    return "\n".join(rows) + "\n"
