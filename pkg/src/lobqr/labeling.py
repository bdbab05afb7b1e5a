"""Spread-adjusted long/short return labels and their mid/spread decomposition.

A round trip entered aggressively at t and exited at t+k pays half the spread
at each end, so the raw return for side i (+1 long, -1 short) is

    r_i(t) = (z_i * dm - (s(t) + s(t+k)) / 2) / p_mid(t)

with dm the mid-price change over the horizon.  Because the spread at entry
is already observed, the modeled target adds it back:

    r'_i(t) = r_i(t) + s(t) / p_mid(t)
            = z_i * r_mid(t) - r_spread(t) / 2

where r_mid = dm / p_mid(t) and r_spread = (s(t+k) - s(t)) / p_mid(t).

All numerators are formed in exact integer tick arithmetic and divided once,
so each value incurs a single float rounding and the tick size cancels.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .book import BookSnapshot, SnapshotArray
from .ingest import WindowSet

LONG, SHORT = "long", "short"
SIDES = (LONG, SHORT)


def _z(side: str) -> int:
    if side == LONG:
        return 1
    if side == SHORT:
        return -1
    raise ValueError(f"side must be 'long' or 'short', got {side!r}")


def _tick_terms(snap_t: BookSnapshot, snap_tk: BookSnapshot) -> tuple[int, int, int, int]:
    """(2*dm, s(t)+s(t+k), 2*ds, 2*p_mid) in integer ticks."""
    mid2_t = snap_t.asks[0].price + snap_t.bids[0].price
    mid2_k = snap_tk.asks[0].price + snap_tk.bids[0].price
    s_t = snap_t.asks[0].price - snap_t.bids[0].price
    s_k = snap_tk.asks[0].price - snap_tk.bids[0].price
    return mid2_k - mid2_t, s_t + s_k, 2 * (s_k - s_t), mid2_t


def raw_return(side: str, snap_t: BookSnapshot, snap_tk: BookSnapshot) -> float:
    """Return net of both half-spread crossings, relative to mid at t."""
    dm2, s_sum, _, p2 = _tick_terms(snap_t, snap_tk)
    return (_z(side) * dm2 - s_sum) / p2


def adjusted_return(side: str, snap_t: BookSnapshot, snap_tk: BookSnapshot) -> float:
    """Raw return with the already-observed entry spread added back."""
    dm2, s_sum, _, p2 = _tick_terms(snap_t, snap_tk)
    s_t2 = 2 * (snap_t.asks[0].price - snap_t.bids[0].price)
    return (_z(side) * dm2 - s_sum + s_t2) / p2


def decompose(snap_t: BookSnapshot, snap_tk: BookSnapshot) -> tuple[float, float]:
    """(r_mid, r_spread): mid-change and spread-change components."""
    dm2, _, ds2, p2 = _tick_terms(snap_t, snap_tk)
    return dm2 / p2, ds2 / p2


def raw_return_exact(side: str, snap_t: BookSnapshot, snap_tk: BookSnapshot) -> Fraction:
    """Raw return in exact rational arithmetic (oracle-grade)."""
    dm2, s_sum, _, p2 = _tick_terms(snap_t, snap_tk)
    return Fraction(_z(side) * dm2 - s_sum, p2)


@dataclass(frozen=True)
class ReturnPair:
    """Both adjusted returns and their decomposition for one (t, t+k) pair."""

    r_long_adj: float
    r_short_adj: float
    r_mid: float
    r_spread: float
    k: int


def return_pair(snap_t: BookSnapshot, snap_tk: BookSnapshot, k: int) -> ReturnPair:
    r_mid, r_spread = decompose(snap_t, snap_tk)
    return ReturnPair(
        r_long_adj=adjusted_return(LONG, snap_t, snap_tk),
        r_short_adj=adjusted_return(SHORT, snap_t, snap_tk),
        r_mid=r_mid,
        r_spread=r_spread,
        k=k,
    )


@dataclass
class ReturnSeries:
    """Vectorized returns over a stream: index t covers snapshots 0..n-1-k."""

    r_long_adj: np.ndarray
    r_short_adj: np.ndarray
    r_mid: np.ndarray
    r_spread: np.ndarray
    k: int

    def __len__(self) -> int:
        return len(self.r_mid)


def return_series(arr: SnapshotArray, k: int) -> ReturnSeries:
    """Adjusted returns and decomposition for every index with a full horizon."""
    if k < 1:
        raise ValueError(f"horizon k must be >= 1, got {k}")
    n = len(arr)
    if n <= k:
        empty = np.empty(0, dtype=np.float64)
        return ReturnSeries(empty, empty, empty, empty, k)
    mid2 = arr.mid_ticks2()
    sp = arr.spread_ticks()
    dm2 = mid2[k:] - mid2[:-k]
    s_t = sp[:-k]
    s_sum = s_t + sp[k:]
    ds2 = 2 * (sp[k:] - s_t)
    p2 = mid2[:-k].astype(np.float64)
    return ReturnSeries(
        r_long_adj=(dm2 - s_sum + 2 * s_t) / p2,
        r_short_adj=(-dm2 - s_sum + 2 * s_t) / p2,
        r_mid=dm2 / p2,
        r_spread=ds2 / p2,
        k=k,
    )


@dataclass
class SampleSet:
    """Labeled samples as parallel arrays (batch-of-LabeledSample).

    Row i pairs the input window ending at stream index ``end_indices[i]``
    with the target returns over [t, t+k] and per-side auxiliary histories of
    the T most recent fully realized adjusted returns, the latest being
    r'(t - k).  ``windows`` may be a zero-copy view; treat it as read-only.
    """

    windows: np.ndarray
    aux_long: np.ndarray
    aux_short: np.ndarray
    target_long: np.ndarray
    target_short: np.ndarray
    target_mid: np.ndarray
    target_spread: np.ndarray
    end_indices: np.ndarray
    end_ts: np.ndarray
    k: int
    skipped_no_aux: int = 0
    skipped_no_horizon: int = 0

    def __len__(self) -> int:
        return len(self.end_indices)

    @property
    def T(self) -> int:
        return self.windows.shape[1]

    def select(self, idx) -> "SampleSet":
        return SampleSet(
            windows=self.windows[idx],
            aux_long=self.aux_long[idx],
            aux_short=self.aux_short[idx],
            target_long=self.target_long[idx],
            target_short=self.target_short[idx],
            target_mid=self.target_mid[idx],
            target_spread=self.target_spread[idx],
            end_indices=self.end_indices[idx],
            end_ts=self.end_ts[idx],
            k=self.k,
        )

    def slice(self, lo: int, hi: int) -> "SampleSet":
        return self.select(slice(lo, hi))

    def target(self, side: str) -> np.ndarray:
        return self.target_long if side == LONG else self.target_short


def label_stream(arr: SnapshotArray, windows: WindowSet, k: int) -> SampleSet:
    """Attach targets and aux histories to every window where both exist.

    A window ending at t is kept iff t + k < len(arr) (target realized in the
    data) and t - k - T + 1 >= 0 (full aux history of realized returns).
    Windows failing either condition are skipped and counted.
    """
    series = return_series(arr, k)
    T = windows.T
    n = len(arr)
    ends = windows.end_indices
    need_aux = ends - k - T + 1 >= 0
    has_future = ends + k <= n - 1
    keep = need_aux & has_future
    skipped_no_aux = int(np.sum(~need_aux))
    skipped_no_horizon = int(np.sum(need_aux & ~has_future))

    ends_kept = ends[keep]
    vals = windows.values[keep]

    if len(ends_kept):
        # aux entry j (oldest -> newest) is r'(t - k - T + 1 + j); build all
        # rows as one strided view over the precomputed return series.
        starts = ends_kept - k - T + 1
        long_view = np.lib.stride_tricks.sliding_window_view(series.r_long_adj, T)
        short_view = np.lib.stride_tricks.sliding_window_view(series.r_short_adj, T)
        aux_long = long_view[starts]
        aux_short = short_view[starts]
        target_long = series.r_long_adj[ends_kept]
        target_short = series.r_short_adj[ends_kept]
        target_mid = series.r_mid[ends_kept]
        target_spread = series.r_spread[ends_kept]
    else:
        aux_long = np.empty((0, T))
        aux_short = np.empty((0, T))
        target_long = target_short = target_mid = target_spread = np.empty(0)

    return SampleSet(
        windows=vals,
        aux_long=np.ascontiguousarray(aux_long),
        aux_short=np.ascontiguousarray(aux_short),
        target_long=target_long,
        target_short=target_short,
        target_mid=target_mid,
        target_spread=target_spread,
        end_indices=ends_kept,
        end_ts=arr.ts[ends_kept],
        k=k,
        skipped_no_aux=skipped_no_aux,
        skipped_no_horizon=skipped_no_horizon,
    )


LABELS_HEADER = "end_ts_ns,k,r_long_adj,r_short_adj,r_mid,r_spread"


def write_labels_csv(path, samples: SampleSet) -> None:
    """Export labels with 17 significant digits (lossless f64 round trip)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(LABELS_HEADER + "\n")
        for i in range(len(samples)):
            f.write(
                f"{samples.end_ts[i]},{samples.k},"
                f"{samples.target_long[i]:.17g},{samples.target_short[i]:.17g},"
                f"{samples.target_mid[i]:.17g},{samples.target_spread[i]:.17g}\n"
            )


def read_labels_csv(path) -> dict[str, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=np.float64)
    data = np.atleast_1d(data)
    return {name: np.asarray(data[name]) for name in data.dtype.names}
