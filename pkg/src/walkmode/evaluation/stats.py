"""Exact one-sided Wilcoxon signed-rank test and run-level summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

MAX_EXACT_N = 20


class UndefinedTestError(ValueError):
    pass


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W+, sum of ranks of positive differences
    p_value: float
    n: int


def signed_rank_null_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign assignments giving each value of ``2*W+``.

    Tallies all ``2**n`` assignments by convolving one rank at a time; ranks
    are doubled so that average ranks of ties stay integral.
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks.astype(np.int64):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(diffs, alternative: str = "greater") -> WilcoxonResult:
    """Exact p-value for paired differences, zeros dropped, ties average-ranked.

    ``alternative="greater"`` tests whether differences tend to be positive:
    ``p = P(W+ >= observed)`` under random signs.
    """
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise UndefinedTestError("all differences are zero")
    if n > MAX_EXACT_N:
        raise ValueError(f"exact enumeration is limited to n <= {MAX_EXACT_N}, got {n}")
    ranks = rankdata(np.abs(d), method="average")
    doubled = np.rint(2 * ranks).astype(np.int64)
    w_plus2 = int(doubled[d > 0].sum())
    counts = signed_rank_null_counts(doubled)
    if alternative == "greater":
        tail = counts[w_plus2:].sum()
    elif alternative == "less":
        tail = counts[: w_plus2 + 1].sum()
    else:
        raise ValueError("alternative must be 'greater' or 'less'")
    return WilcoxonResult(w_plus2 / 2.0, float(tail) / 2.0**n, n)


@dataclass(frozen=True)
class RunSummary:
    mean: float
    ci_half_width: float
    n: int

    @property
    def low(self) -> float:
        return self.mean - self.ci_half_width

    @property
    def high(self) -> float:
        return self.mean + self.ci_half_width


def summarize_runs(values, z: float = 1.959963984540054) -> RunSummary:
    """Mean with a normal-approximation 95% confidence half-width."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        raise ValueError("no runs to summarise")
    half = z * v.std(ddof=1) / np.sqrt(len(v)) if len(v) > 1 else 0.0
    return RunSummary(float(v.mean()), float(half), len(v))
