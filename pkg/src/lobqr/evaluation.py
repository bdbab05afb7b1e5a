"""Forecast metrics, persistence-normalized reports, calibration, and the
two-sample Kolmogorov-Smirnov / Wilcoxon signed-rank tests.

Error metrics are reported raw and divided by the repetitive (persistence)
baseline's, so 1.0 marks zero intelligence.  R^2 is computed about the
evaluation split's target mean and passed through unnormalized; it is
reported as None when the targets have zero variance.

Test p-values are asymptotic (Kolmogorov distribution for KS, normal
approximation with tie correction for Wilcoxon); results carry a
``small_sample`` flag below n = 10 where the statistic is still exact but
the p-value is only indicative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, TooFewSamples

SMALL_SAMPLE_N = 10


@dataclass(frozen=True)
class PointMetrics:
    mae: float
    mse: float
    meae: float
    r2: float | None
    n: int

    def as_dict(self) -> dict:
        return {"mae": self.mae, "mse": self.mse, "meae": self.meae, "r2": self.r2, "n": self.n}


@dataclass(frozen=True)
class NormalizedMetrics:
    """Error metrics divided by the repetitive model's; R^2 passed through."""

    mae: float | None
    mse: float | None
    meae: float | None
    r2: float | None
    degenerate_baseline: bool

    def as_dict(self) -> dict:
        return {
            "mae": self.mae,
            "mse": self.mse,
            "meae": self.meae,
            "r2": self.r2,
            "degenerate_baseline": self.degenerate_baseline,
        }


def point_metrics(predictions: np.ndarray, targets: np.ndarray) -> PointMetrics:
    """MAE, MSE, median absolute error, and R^2 about the target mean."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {targets.shape}")
    n = predictions.size
    if n == 0:
        raise EmptyInput("point_metrics on zero samples")
    err = predictions - targets
    ss_res = float(err @ err)
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    r2 = None if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return PointMetrics(
        mae=float(np.mean(np.abs(err))),
        mse=ss_res / n,
        meae=float(np.median(np.abs(err))),
        r2=r2,
        n=n,
    )


def normalize_metrics(model: PointMetrics, repetitive: PointMetrics) -> NormalizedMetrics:
    """Divide each error metric by the repetitive model's counterpart."""

    def ratio(a: float, b: float) -> float | None:
        return None if b == 0.0 else a / b

    degenerate = repetitive.mae == 0.0 or repetitive.mse == 0.0 or repetitive.meae == 0.0
    return NormalizedMetrics(
        mae=ratio(model.mae, repetitive.mae),
        mse=ratio(model.mse, repetitive.mse),
        meae=ratio(model.meae, repetitive.meae),
        r2=model.r2,
        degenerate_baseline=degenerate,
    )


@dataclass(frozen=True)
class CalibrationReport:
    """Empirical CDF coverage of each quantile column plus interval coverage."""

    taus: tuple[float, ...]
    coverage: tuple[float, ...]
    intervals: tuple[tuple[float, float, float], ...]  # (tau_lo, tau_hi, coverage)

    def as_dict(self) -> dict:
        return {
            "taus": list(self.taus),
            "coverage": list(self.coverage),
            "intervals": [list(row) for row in self.intervals],
        }


def coverage(
    fan: np.ndarray,
    targets: np.ndarray,
    taus: tuple[float, ...],
    interval_pairs: tuple[tuple[int, int], ...] = ((0, -1),),
) -> CalibrationReport:
    """Fraction of realized targets at or below each (rearranged) estimate."""
    fan = np.asarray(fan, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(fan) == 0:
        raise EmptyInput("coverage on zero samples")
    cov = tuple(float(np.mean(targets <= fan[:, j])) for j in range(fan.shape[1]))
    intervals = []
    for lo, hi in interval_pairs:
        inside = (targets >= fan[:, lo]) & (targets <= fan[:, hi])
        intervals.append((taus[lo], taus[hi], float(np.mean(inside))))
    return CalibrationReport(taus=tuple(taus), coverage=cov, intervals=tuple(intervals))


# ---------------------------------------------------------------------------
# distribution tests


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    n1: int
    n2: int
    small_sample: bool


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    pvalue: float | None
    n_nonzero: int
    degenerate: bool
    small_sample: bool


def _kolmogorov_sf(x: float) -> float:
    """Survival function of the Kolmogorov distribution, 2*sum (-1)^(j-1) e^(-2 j^2 x^2)."""
    if x <= 0.0:
        return 1.0
    total = 0.0
    for j in range(1, 101):
        term = 2.0 * (-1.0) ** (j - 1) * math.exp(-2.0 * j * j * x * x)
        total += term
        if abs(term) < 1e-12:
            break
    return min(max(total, 0.0), 1.0)


def ks_two_sample(a: np.ndarray, b: np.ndarray) -> KSResult:
    """Two-sample KS: D = sup |ECDF_a - ECDF_b|, asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise TooFewSamples("ks_two_sample needs non-empty samples")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / n1
    cdf_b = np.searchsorted(b, grid, side="right") / n2
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    en = math.sqrt(n1 * n2 / (n1 + n2))
    return KSResult(
        statistic=d,
        pvalue=_kolmogorov_sf(en * d),
        n1=n1,
        n2=n2,
        small_sample=min(n1, n2) < SMALL_SAMPLE_N,
    )


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1 with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(a: np.ndarray, b: np.ndarray) -> WilcoxonResult:
    """Paired signed-rank test; zero differences dropped, ties share ranks.

    The statistic is min(W+, W-); the p-value uses the normal approximation
    with tie correction.  All-zero differences yield a degenerate flagged
    result rather than an error.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"paired samples must match: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise TooFewSamples("wilcoxon_signed_rank needs non-empty samples")
    d = a - b
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return WilcoxonResult(statistic=0.0, pvalue=None, n_nonzero=0, degenerate=True, small_sample=True)
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # tie correction: subtract sum(t^3 - t)/48 over tie groups
    _, counts = np.unique(np.abs(d), return_counts=True)
    var -= float(np.sum(counts**3 - counts)) / 48.0
    if var <= 0.0:
        return WilcoxonResult(statistic=w, pvalue=None, n_nonzero=n, degenerate=True, small_sample=n < SMALL_SAMPLE_N)
    z = (w - mean) / math.sqrt(var)
    p = min(1.0, 2.0 * 0.5 * math.erfc(-z / math.sqrt(2.0)))
    return WilcoxonResult(
        statistic=w, pvalue=p, n_nonzero=n, degenerate=False, small_sample=n < SMALL_SAMPLE_N
    )
