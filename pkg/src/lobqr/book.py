"""Order-book value types and elementary quantities.

Prices are kept as integer tick counts (real price = ticks * tick_size) so
book invariants are exact and file round-trips are bit-stable.  Conversion to
real price units happens only where returns and metrics are computed.

Two representations coexist:

* ``BookSnapshot`` -- a single immutable snapshot, used by scalar operations
  and tests.
* ``SnapshotArray`` -- a struct-of-arrays stream of snapshots, used by the
  ingest/labeling pipeline at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CrossedBook, NonMonotoneLevels, NonPositiveSize

DEPTH = 10


@dataclass(frozen=True)
class BookLevel:
    """One resting price level: integer tick price and positive size."""

    price: int
    size: int


@dataclass(frozen=True)
class BookSnapshot:
    """One timestamped book state: 10 ask levels and 10 bid levels.

    Invariants (enforced by :func:`validate_snapshot`):
      * ask prices strictly increasing from level 1 to 10
      * bid prices strictly decreasing from level 1 to 10
      * best ask strictly above best bid (no crossed or locked books)
      * every level size positive
    """

    timestamp: int
    asks: tuple[BookLevel, ...]
    bids: tuple[BookLevel, ...]
    tick_size: float = 1.0


@dataclass(frozen=True)
class Quote:
    """Mid price and spread of a snapshot, in real price units."""

    mid: float
    spread: float


def validate_snapshot(
    timestamp: int,
    asks: tuple[BookLevel, ...] | list[BookLevel],
    bids: tuple[BookLevel, ...] | list[BookLevel],
    tick_size: float = 1.0,
) -> BookSnapshot:
    """Construct a snapshot iff all book invariants hold.

    Raises NonMonotoneLevels, NonPositiveSize or CrossedBook naming the
    violated invariant.  Depth must be exactly 10 on each side; shallower
    books are rejected rather than padded.
    """
    asks = tuple(asks)
    bids = tuple(bids)
    if len(asks) != DEPTH or len(bids) != DEPTH:
        raise NonMonotoneLevels(f"expected {DEPTH} levels per side, got {len(asks)}/{len(bids)}")
    if tick_size <= 0:
        raise NonPositiveSize(f"tick_size must be positive, got {tick_size}")
    for side, levels in (("ask", asks), ("bid", bids)):
        for lvl in levels:
            if lvl.size <= 0:
                raise NonPositiveSize(f"{side} level with size {lvl.size}")
    ask_px = [l.price for l in asks]
    bid_px = [l.price for l in bids]
    if any(b <= a for a, b in zip(ask_px, ask_px[1:])):
        raise NonMonotoneLevels("ask prices not strictly increasing")
    if any(b >= a for a, b in zip(bid_px, bid_px[1:])):
        raise NonMonotoneLevels("bid prices not strictly decreasing")
    if ask_px[0] <= bid_px[0]:
        raise CrossedBook(f"best ask {ask_px[0]} <= best bid {bid_px[0]}")
    return BookSnapshot(timestamp=timestamp, asks=asks, bids=bids, tick_size=tick_size)


def mid_price(snap: BookSnapshot) -> float:
    """(best ask + best bid) / 2 in real price units."""
    return (snap.asks[0].price + snap.bids[0].price) * snap.tick_size / 2.0


def spread(snap: BookSnapshot) -> float:
    """Best ask minus best bid in real price units; strictly positive."""
    return (snap.asks[0].price - snap.bids[0].price) * snap.tick_size


def quote(snap: BookSnapshot) -> Quote:
    return Quote(mid=mid_price(snap), spread=spread(snap))


class SnapshotArray:
    """A validated stream of snapshots as a struct of arrays.

    Fields are read-only int64 arrays: ``ts`` (n,), ``ask_px``/``ask_sz``/
    ``bid_px``/``bid_sz`` (n, 10).  Prices are integer ticks.  Instances are
    immutable after construction and safe to share across threads.
    """

    __slots__ = ("ts", "ask_px", "ask_sz", "bid_px", "bid_sz", "tick_size")

    def __init__(self, ts, ask_px, ask_sz, bid_px, bid_sz, tick_size: float):
        self.ts = np.ascontiguousarray(ts, dtype=np.int64)
        self.ask_px = np.ascontiguousarray(ask_px, dtype=np.int64)
        self.ask_sz = np.ascontiguousarray(ask_sz, dtype=np.int64)
        self.bid_px = np.ascontiguousarray(bid_px, dtype=np.int64)
        self.bid_sz = np.ascontiguousarray(bid_sz, dtype=np.int64)
        self.tick_size = float(tick_size)
        n = len(self.ts)
        for a in (self.ask_px, self.ask_sz, self.bid_px, self.bid_sz):
            if a.shape != (n, DEPTH):
                raise ValueError(f"expected shape ({n}, {DEPTH}), got {a.shape}")
        for a in (self.ts, self.ask_px, self.ask_sz, self.bid_px, self.bid_sz):
            a.setflags(write=False)

    def __len__(self) -> int:
        return len(self.ts)

    def snapshot(self, i: int) -> BookSnapshot:
        """Materialize row ``i`` as a single validated BookSnapshot."""
        asks = tuple(BookLevel(int(p), int(s)) for p, s in zip(self.ask_px[i], self.ask_sz[i]))
        bids = tuple(BookLevel(int(p), int(s)) for p, s in zip(self.bid_px[i], self.bid_sz[i]))
        return validate_snapshot(int(self.ts[i]), asks, bids, self.tick_size)

    def features(self) -> np.ndarray:
        """The (n, 40) raw feature matrix in CSV column order.

        Columns 0..19 interleave ask price/size for levels 1..10, columns
        20..39 the same for bids.  Values are raw ticks/quantities; rolling
        normalization happens downstream.
        """
        n = len(self)
        out = np.empty((n, 4 * DEPTH), dtype=np.float64)
        out[:, 0 : 2 * DEPTH : 2] = self.ask_px
        out[:, 1 : 2 * DEPTH : 2] = self.ask_sz
        out[:, 2 * DEPTH :: 2] = self.bid_px
        out[:, 2 * DEPTH + 1 :: 2] = self.bid_sz
        return out

    def mid_ticks2(self) -> np.ndarray:
        """Twice the mid price in ticks (ask1 + bid1); exact int64."""
        return self.ask_px[:, 0] + self.bid_px[:, 0]

    def spread_ticks(self) -> np.ndarray:
        """Best-ask minus best-bid in ticks; exact int64, always >= 1."""
        return self.ask_px[:, 0] - self.bid_px[:, 0]

    def slice(self, start: int, stop: int) -> "SnapshotArray":
        return SnapshotArray(
            self.ts[start:stop],
            self.ask_px[start:stop],
            self.ask_sz[start:stop],
            self.bid_px[start:stop],
            self.bid_sz[start:stop],
            self.tick_size,
        )
