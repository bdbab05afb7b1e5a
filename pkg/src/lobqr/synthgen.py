"""Seeded synthetic order-book streams with a controllable predictive signal.

This is a testbed, not a market model: the point is that (a) every emitted
snapshot satisfies the book invariants, (b) generation is deterministic and
prefix-stable in the seed, and (c) the strength of the learnable signal is a
dial.  The signal lives in the book itself: per-side resting sizes carry a
persistent factor, and the latent mid drifts each event by

    signal_beta * signal_scale * mid_sigma_ticks * imbalance(t)

where imbalance = (sum bid sizes - sum ask sizes) / (sum of both) of the
current snapshot, so a model reading size columns can anticipate the drift.

The spread follows a mean-reverting AR(1) in log-spread floored at one tick.
Setting ``spread_spike_prob`` > 0 adds upward jumps that decay through the
AR pull, which skews spread *changes* and makes the long and negated-short
return distributions genuinely different (the asymmetry testbed).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .book import DEPTH, SnapshotArray
from .errors import ConfigInvalid

# per-event draw layout in the flat normal stream
_COL_MID, _COL_SPREAD, _COL_ASK_F, _COL_BID_F, _COL_SPIKE_U, _COL_SPIKE_SZ = range(6)
_N_COLS = 6 + 2 * DEPTH


@dataclass(frozen=True)
class GenConfig:
    n_events: int = 10_000
    tick_size: float = 0.01
    initial_mid_ticks: int = 20_000
    mid_sigma_ticks: float = 1.5
    signal_beta: float = 0.0
    signal_scale: float = 0.3
    imbalance_persistence: float = 0.995
    imbalance_sigma: float = 0.5
    mean_spread_ticks: float = 2.0
    spread_persistence: float = 0.97
    spread_sigma: float = 0.0
    spread_spike_prob: float = 0.0
    spread_spike_scale: float = 0.0
    level_spacing_ticks: int = 1
    size_mu: float = 4.0
    size_sigma: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_events < 1:
            raise ConfigInvalid("n_events must be >= 1")
        if self.tick_size <= 0 or self.initial_mid_ticks <= 0 or self.mid_sigma_ticks < 0:
            raise ConfigInvalid("tick_size, initial mid and mid volatility must be positive")
        if not 0.0 <= self.signal_beta <= 1.0:
            raise ConfigInvalid("signal_beta must lie in [0, 1]")
        if not 0.0 <= self.imbalance_persistence < 1.0 or not 0.0 <= self.spread_persistence < 1.0:
            raise ConfigInvalid("persistence parameters must lie in [0, 1)")
        if self.mean_spread_ticks < 1.0:
            raise ConfigInvalid("mean spread must be at least one tick")
        if self.spread_sigma < 0 or self.spread_spike_prob < 0 or self.spread_spike_scale < 0:
            raise ConfigInvalid("spread process parameters must be non-negative")
        if not 0.0 <= self.spread_spike_prob < 1.0:
            raise ConfigInvalid("spread_spike_prob must lie in [0, 1)")
        if self.level_spacing_ticks < 1:
            raise ConfigInvalid("level spacing must be at least one tick")
        if self.size_sigma < 0:
            raise ConfigInvalid("size_sigma must be non-negative")


def _ar1(innovations: np.ndarray, rho: float, stationary_sigma: float) -> np.ndarray:
    """Stationary AR(1) path with the given marginal standard deviation."""
    out = np.empty_like(innovations)
    scale = stationary_sigma * np.sqrt(1.0 - rho * rho)
    prev = stationary_sigma * innovations[0]  # draw the start from the marginal
    out[0] = prev
    for t in range(1, len(innovations)):
        prev = rho * prev + scale * innovations[t]
        out[t] = prev
    return out


def generate(config: GenConfig) -> SnapshotArray:
    """Generate a validated snapshot stream; deterministic and prefix-stable.

    All randomness comes from one flat standard-normal stream consumed in
    event order, so growing ``n_events`` only appends events.
    """
    n = config.n_events
    rng = np.random.default_rng(config.seed)
    z = rng.standard_normal(n * _N_COLS).reshape(n, _N_COLS)

    # Per-side log-size factors: persistent, so book imbalance is persistent.
    f_ask = _ar1(z[:, _COL_ASK_F], config.imbalance_persistence, config.imbalance_sigma)
    f_bid = _ar1(z[:, _COL_BID_F], config.imbalance_persistence, config.imbalance_sigma)

    noise = z[:, 6:].reshape(n, 2, DEPTH)
    log_ask = config.size_mu + f_ask[:, None] + config.size_sigma * noise[:, 0]
    log_bid = config.size_mu + f_bid[:, None] + config.size_sigma * noise[:, 1]
    ask_sz = np.maximum(1, np.rint(np.exp(log_ask)).astype(np.int64))
    bid_sz = np.maximum(1, np.rint(np.exp(log_bid)).astype(np.int64))

    sum_ask = ask_sz.sum(axis=1)
    sum_bid = bid_sz.sum(axis=1)
    imbalance = (sum_bid - sum_ask) / (sum_bid + sum_ask)

    # Mean-reverting log-spread, optionally with upward jumps that decay
    # through the AR pull (skewed spread changes).
    log_mean = np.log(config.mean_spread_ticks)
    shocks = config.spread_sigma * z[:, _COL_SPREAD]
    if config.spread_spike_prob > 0.0:
        # a jump fires when the normal surrogate exceeds the tail threshold
        threshold = np.sqrt(2.0) * _erfinv_scalar(1.0 - 2.0 * config.spread_spike_prob)
        jumps = (z[:, _COL_SPIKE_U] > threshold).astype(np.float64)
        shocks = shocks + jumps * config.spread_spike_scale * np.abs(z[:, _COL_SPIKE_SZ])
    rho = config.spread_persistence
    log_spread = np.empty(n)
    prev = log_mean
    for t in range(n):
        prev = log_mean * (1.0 - rho) + rho * prev + shocks[t]
        log_spread[t] = prev
    spread = np.maximum(1, np.rint(np.exp(log_spread)).astype(np.int64))

    # Latent mid random walk with imbalance-driven drift; the book at event t
    # is built before the drift from imbalance(t) is applied.
    drift_coeff = config.signal_beta * config.signal_scale * config.mid_sigma_ticks
    increments = config.mid_sigma_ticks * z[:, _COL_MID] + drift_coeff * imbalance
    latent_mid = config.initial_mid_ticks + np.concatenate([[0.0], np.cumsum(increments[:-1])])

    ask1 = np.rint(latent_mid + spread / 2.0).astype(np.int64)
    bid1 = ask1 - spread
    offsets = np.arange(DEPTH, dtype=np.int64) * config.level_spacing_ticks
    ask_px = ask1[:, None] + offsets
    bid_px = bid1[:, None] - offsets

    ts = 1_000_000_000 + np.arange(n, dtype=np.int64) * 1_000_000
    return SnapshotArray(ts, ask_px, ask_sz, bid_px, bid_sz, config.tick_size)


def generate_paired_asymmetric(config: GenConfig) -> SnapshotArray:
    """A stream whose long and negated-short return distributions differ.

    Requires a genuinely stochastic spread; if the config has no spread
    variability or jumps, spike defaults are switched on.
    """
    if config.spread_persistence <= 0.0:
        raise ConfigInvalid("asymmetric stream needs spread_persistence > 0")
    if config.spread_sigma == 0.0 and config.spread_spike_prob == 0.0:
        config = replace(config, spread_sigma=0.05, spread_spike_prob=0.02, spread_spike_scale=0.6)
    if config.spread_spike_prob == 0.0 or config.spread_spike_scale == 0.0:
        config = replace(config, spread_spike_prob=0.02, spread_spike_scale=0.6)
    return generate(config)


def _erfinv_scalar(y: float) -> float:
    """Inverse error function via Newton on erf; plenty for one threshold."""
    from math import erf, exp, pi, sqrt

    if not -1.0 < y < 1.0:
        raise ValueError("erfinv domain is (-1, 1)")
    x = 0.0
    for _ in range(60):
        err = erf(x) - y
        step = err / (2.0 / sqrt(pi) * exp(-x * x))
        x -= step
        if abs(step) < 1e-15:
            break
    return x
