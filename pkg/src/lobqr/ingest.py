"""Snapshot-stream ingest: CSV parsing, rolling normalization, windowing, splits.

The file schema (UTF-8, header required) is::

    ts_ns,ask_px_1,ask_sz_1,...,ask_px_10,ask_sz_10,bid_px_1,bid_sz_1,...,bid_px_10,bid_sz_10

with prices as integer ticks, sizes as integers and ts_ns strictly increasing.
Structural problems (bad header, wrong column count, non-integer fields) raise
``MalformedRow``; rows violating book invariants are counted and dropped with
the stream continuing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .book import DEPTH, SnapshotArray
from .errors import EmptySplit, MalformedRow, StreamTooShort

CSV_COLUMNS: tuple[str, ...] = (
    ("ts_ns",)
    + tuple(f"ask_{kind}_{lvl}" for lvl in range(1, DEPTH + 1) for kind in ("px", "sz"))
    + tuple(f"bid_{kind}_{lvl}" for lvl in range(1, DEPTH + 1) for kind in ("px", "sz"))
)

N_FEATURES = 4 * DEPTH


@dataclass
class ParseReport:
    """Row accounting for one parsed file; rejects are counted per reason."""

    total_rows: int = 0
    accepted: int = 0
    rejected: dict[str, int] = field(default_factory=dict)

    @property
    def total_rejected(self) -> int:
        return sum(self.rejected.values())

    def as_dict(self) -> dict:
        return {
            "total_rows": self.total_rows,
            "accepted": self.accepted,
            "rejected": dict(sorted(self.rejected.items())),
        }


def write_stream_csv(path, arr: SnapshotArray) -> None:
    """Write a snapshot stream in the canonical CSV schema."""
    cols = np.empty((len(arr), 1 + N_FEATURES), dtype=np.int64)
    cols[:, 0] = arr.ts
    cols[:, 1 : 2 * DEPTH + 1 : 2] = arr.ask_px
    cols[:, 2 : 2 * DEPTH + 1 : 2] = arr.ask_sz
    cols[:, 2 * DEPTH + 1 :: 2] = arr.bid_px
    cols[:, 2 * DEPTH + 2 :: 2] = arr.bid_sz
    df = pd.DataFrame(cols, columns=list(CSV_COLUMNS))
    df.to_csv(path, index=False)


def parse_stream(path, tick_size: float) -> tuple[SnapshotArray, ParseReport]:
    """Parse and validate a snapshot stream.

    Returns accepted snapshots in timestamp order plus a report of rejected
    rows.  Rejection reasons mirror the book invariants: ``crossed_book``,
    ``non_monotone_levels``, ``non_positive_size``, ``non_monotone_timestamp``.
    """
    try:
        df = pd.read_csv(path, dtype="object", engine="c", on_bad_lines="error")
    except pd.errors.ParserError as exc:
        raise MalformedRow(_bad_line_from(exc), str(exc)) from exc
    if tuple(df.columns) != CSV_COLUMNS:
        raise MalformedRow(1, f"bad header: expected {','.join(CSV_COLUMNS)}")

    values = np.empty((len(df), 1 + N_FEATURES), dtype=np.int64)
    for j, col in enumerate(CSV_COLUMNS):
        numeric = pd.to_numeric(df[col], errors="coerce")
        bad = numeric.isna()
        if bad.any():
            # +2: header line plus 1-based numbering
            raise MalformedRow(int(np.flatnonzero(bad.to_numpy())[0]) + 2, f"non-numeric value in {col}")
        floats = numeric.to_numpy(dtype=np.float64)
        if np.any(floats != np.floor(floats)):
            line = int(np.flatnonzero(floats != np.floor(floats))[0]) + 2
            raise MalformedRow(line, f"non-integer value in {col}")
        values[:, j] = floats.astype(np.int64)

    report = ParseReport(total_rows=len(df))
    ts = values[:, 0]
    ask_px = values[:, 1 : 2 * DEPTH + 1 : 2]
    ask_sz = values[:, 2 : 2 * DEPTH + 1 : 2]
    bid_px = values[:, 2 * DEPTH + 1 :: 2]
    bid_sz = values[:, 2 * DEPTH + 2 :: 2]

    ok = np.ones(len(df), dtype=bool)
    _reject(report, ok, np.any(ask_sz <= 0, axis=1) | np.any(bid_sz <= 0, axis=1), "non_positive_size")
    _reject(
        report,
        ok,
        np.any(np.diff(ask_px, axis=1) <= 0, axis=1) | np.any(np.diff(bid_px, axis=1) >= 0, axis=1),
        "non_monotone_levels",
    )
    _reject(report, ok, ask_px[:, 0] <= bid_px[:, 0], "crossed_book")

    # Timestamps must be strictly increasing over accepted rows; a rejected
    # row does not gate later rows.
    idx = np.flatnonzero(ok)
    if len(idx) and np.any(np.diff(ts[idx]) <= 0):
        last = np.iinfo(np.int64).min
        for i in idx:
            if ts[i] <= last:
                ok[i] = False
                report.rejected["non_monotone_timestamp"] = (
                    report.rejected.get("non_monotone_timestamp", 0) + 1
                )
            else:
                last = ts[i]
        idx = np.flatnonzero(ok)

    report.accepted = len(idx)
    arr = SnapshotArray(ts[idx], ask_px[idx], ask_sz[idx], bid_px[idx], bid_sz[idx], tick_size)
    return arr, report


def _reject(report: ParseReport, ok: np.ndarray, bad: np.ndarray, reason: str) -> None:
    hit = bad & ok
    n = int(hit.sum())
    if n:
        report.rejected[reason] = report.rejected.get(reason, 0) + n
        ok[hit] = False


def _bad_line_from(exc: Exception) -> int | None:
    import re

    m = re.search(r"line (\d+)", str(exc))
    return int(m.group(1)) if m else None


@dataclass
class NormalizedStream:
    """Per-event feature rows after trailing z-scoring.

    Rows before ``valid_from`` are the warm-up: they carry the raw values,
    are flagged unnormalized and excluded from window construction.
    """

    values: np.ndarray
    valid_from: int

    @property
    def usable(self) -> np.ndarray:
        return self.values[self.valid_from :]


def normalize(features: np.ndarray, w_norm: int, epsilon_std: float = 1e-8) -> NormalizedStream:
    """Trailing per-column z-score over the previous ``w_norm`` events.

    Row t (t >= w_norm) becomes (x_t - mean) / max(std, epsilon_std) where the
    statistics run over rows t-w_norm .. t-1 (population std).  Strictly
    causal: appending rows never changes earlier outputs.
    """
    if w_norm < 2:
        raise ValueError(f"w_norm must be >= 2, got {w_norm}")
    if epsilon_std <= 0:
        raise ValueError("epsilon_std must be positive")
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    out = x.copy()
    if n <= w_norm:
        return NormalizedStream(values=out, valid_from=n)

    # Center each column at its first value before accumulating; the shift
    # cancels in the z-score but keeps the cumulative sums well conditioned
    # for large tick prices.
    c = x - x[0]
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(c, axis=0)])
    csum2 = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(c * c, axis=0)])
    upper = csum[w_norm:n]
    lower = csum[0 : n - w_norm]
    mean_c = (upper - lower) / w_norm
    var = (csum2[w_norm:n] - csum2[0 : n - w_norm]) / w_norm - mean_c * mean_c
    std = np.sqrt(np.maximum(var, 0.0))
    out[w_norm:] = (c[w_norm:] - mean_c) / np.maximum(std, epsilon_std)
    return NormalizedStream(values=out, valid_from=w_norm)


@dataclass
class WindowSet:
    """Sliding input windows over the usable (normalized) rows, stride 1.

    ``values`` is a zero-copy view of shape (n_windows, T, 40);
    ``end_indices`` maps each window to the stream index of its last row.
    """

    values: np.ndarray
    end_indices: np.ndarray
    T: int

    def __len__(self) -> int:
        return len(self.end_indices)


def make_windows(stream: NormalizedStream, T: int) -> WindowSet:
    """All length-T windows of consecutive usable rows (count = usable - T + 1)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    usable = stream.usable
    if usable.shape[0] < T:
        raise StreamTooShort(f"{usable.shape[0]} usable rows < window length {T}")
    view = np.lib.stride_tricks.sliding_window_view(usable, T, axis=0)
    values = view.transpose(0, 2, 1)  # (n_win, T, 40), still a view
    n_win = values.shape[0]
    end_indices = stream.valid_from + T - 1 + np.arange(n_win, dtype=np.int64)
    return WindowSet(values=values, end_indices=end_indices, T=T)


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation/test fractions; must sum to 1."""

    train: float = 0.5
    validation: float = 0.25
    test: float = 0.25

    def __post_init__(self):
        for f in (self.train, self.validation, self.test):
            if f < 0:
                raise ValueError(f"negative split fraction {f}")
        if abs(self.train + self.validation + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


@dataclass(frozen=True)
class SplitRanges:
    """Half-open sample-index ranges, pairwise separated by the safety gap."""

    train: tuple[int, int]
    validation: tuple[int, int]
    test: tuple[int, int]


def chronological_split(n_samples: int, spec: SplitSpec, gap: int) -> SplitRanges:
    """Contiguous, ordered, gap-separated index ranges over n_samples.

    ``gap`` should be T + k so that no sample's input window or label horizon
    straddles a boundary (two samples i < j are independent iff j - i >= T+k).
    """
    if gap < 0:
        raise ValueError("gap must be non-negative")
    b1 = int(n_samples * spec.train)
    b2 = int(n_samples * (spec.train + spec.validation))
    train = (0, b1)
    validation = (min(b1 + gap, n_samples), b2)
    test = (min(b2 + gap, n_samples), n_samples)
    for name, (lo, hi) in (("train", train), ("validation", validation), ("test", test)):
        if hi <= lo:
            raise EmptySplit(f"{name} split is empty for n={n_samples}, spec={spec}, gap={gap}")
    return SplitRanges(train=train, validation=validation, test=test)
