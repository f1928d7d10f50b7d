"""Descriptive statistics over CFC displacement data and the rank-based
cross-corpus correlation test.

Per-sample statistics run over displacement magnitudes by default; the
signed displacements of short jumps span [-128, 127], and magnitudes are
what make spread/median figures comparable across samples.  A signed mode
is available for completeness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import t as student_t

from .errors import (
    DegenerateInputError,
    EmptyInputError,
    LengthMismatchError,
)

# field name -> report row label
STAT_FIELDS = (
    ("spread", "Spread"),
    ("scatter", "Scatter"),
    ("variance", "Variance"),
    ("median", "Medians"),
    ("median_over_spread", "Medians/Spread"),
    ("variance_coefficient", "Variance Coefficient"),
    ("frequency", "Frequencies"),
)

# rows of the classic two-column overview table (no variance row there;
# scatter already carries the same information as its square root)
TABLE_ROWS = (
    "Spread", "Scatter", "Medians", "Medians/Spread",
    "Variance Coefficient", "Frequencies",
)


@dataclass(frozen=True)
class SampleStats:
    spread: float
    variance: float
    median: float
    median_over_spread: float | None      # None when spread == 0
    variance_coefficient: float | None    # stddev / mean; None when mean == 0
    frequency: int

    @property
    def scatter(self) -> float:
        """Standard deviation, the square-root companion of variance."""
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class CorpusSummary:
    class_label: str
    sample_count: int
    averages: dict[str, float | None]     # keyed by STAT_FIELDS names
    excluded: dict[str, int]              # per-field count of undefined values


@dataclass(frozen=True)
class RhoResult:
    rho: float
    n_pairs: int
    p_value: float | None


def sample_stats(displacements: Sequence[int], signed: bool = False) -> SampleStats:
    """Spread, population variance, median and derived ratios of one
    sample's displacement list."""
    if not displacements:
        raise EmptyInputError("stats over empty displacement list")
    # sorted so results are bit-identical under input permutation
    values = sorted(float(d) if signed else float(abs(d)) for d in displacements)
    arr = np.asarray(values)
    spread = float(arr.max() - arr.min())
    variance = float(arr.var())           # population variance
    median = float(np.median(arr))
    mean = float(arr.mean())
    return SampleStats(
        spread=spread,
        variance=variance,
        median=median,
        median_over_spread=median / spread if spread != 0 else None,
        variance_coefficient=math.sqrt(variance) / mean if mean != 0 else None,
        frequency=len(values),
    )


def corpus_summary(samples: Sequence[SampleStats], label: str) -> CorpusSummary:
    """Field-wise arithmetic means; undefined per-sample values are left
    out of their field's mean and counted as exclusions."""
    if not samples:
        raise EmptyInputError("summary over empty corpus")
    averages: dict[str, float | None] = {}
    excluded: dict[str, int] = {}
    for field, _ in STAT_FIELDS:
        defined = [getattr(s, field) for s in samples if getattr(s, field) is not None]
        excluded[field] = len(samples) - len(defined)
        averages[field] = sum(defined) / len(defined) if defined else None
    return CorpusSummary(
        class_label=label,
        sample_count=len(samples),
        averages=averages,
        excluded=excluded,
    )


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the mean of their rank positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> RhoResult:
    """Spearman's rank correlation: Pearson correlation of average ranks.

    The p-value uses the large-sample t approximation and is reported only
    for n >= 10.
    """
    if len(x) != len(y) or len(x) < 2:
        raise LengthMismatchError(f"need equal-length lists of >= 2 values, got {len(x)} and {len(y)}")
    rx = average_ranks(x)
    ry = average_ranks(y)
    ax = np.asarray(rx) - np.mean(rx)
    ay = np.asarray(ry) - np.mean(ry)
    denom = math.sqrt(float(ax @ ax) * float(ay @ ay))
    if denom == 0:
        raise DegenerateInputError("all-tied list; rank correlation undefined")
    rho = float(ax @ ay) / denom
    rho = max(-1.0, min(1.0, rho))

    p_value = None
    n = len(x)
    if n >= 10:
        if abs(rho) == 1.0:
            p_value = 0.0
        else:
            t_stat = rho * math.sqrt((n - 2) / (1 - rho * rho))
            p_value = float(2 * student_t.sf(abs(t_stat), n - 2))
    return RhoResult(rho=rho, n_pairs=n, p_value=p_value)


def corpus_correlation(good: Sequence[float], bad: Sequence[float]) -> RhoResult:
    """Rank correlation between two unequal-size value collections.

    Both sides are sorted and resampled to the same K quantile points
    (K = the smaller length), so the test asks whether one distribution is
    a monotone function of the other.
    """
    if not good or not bad:
        raise EmptyInputError("correlation over empty value list")
    k = min(len(good), len(bad))
    qs = np.linspace(0.0, 1.0, k) if k > 1 else np.asarray([0.5])
    a = np.quantile(np.sort(np.asarray(good, dtype=float)), qs)
    b = np.quantile(np.sort(np.asarray(bad, dtype=float)), qs)
    return spearman_rho(list(a), list(b))
