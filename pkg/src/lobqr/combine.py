"""Point forecasts as simplex-weighted combinations of quantile estimates.

Given a rearranged fan of estimates per timestamp, a point forecast is
``sum_tau pi(tau) * r_hat_tau(t)`` with non-negative weights summing to one.
Weights can be fixed, fit once on a held-out segment, or refit on a rolling
window of realized observations (lagged by the horizon so fitting never sees
an unrealized return).

With three quantiles the constrained least squares is solved exactly by
enumerating the active sets of the KKT system: the interior equality-
constrained solution, each edge (one weight pinned at zero) and each vertex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySegment, WeightsOffSimplex
from .labeling import SIDES

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class CombinationWeights:
    """Per-side weight vector over the quantile grid; lives on the simplex."""

    taus: tuple[float, ...]
    long: np.ndarray
    short: np.ndarray

    def weights(self, side: str) -> np.ndarray:
        return self.long if side == "long" else self.short

    def __post_init__(self):
        for side in SIDES:
            _check_simplex(self.weights(side))


def _check_simplex(w: np.ndarray) -> None:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or np.any(w < -SIMPLEX_TOL) or abs(float(w.sum()) - 1.0) > SIMPLEX_TOL:
        raise WeightsOffSimplex(f"weights {w} are not a probability vector")


def combine_fixed(estimates: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted combination per timestamp: (n, m) estimates x (m,) weights."""
    _check_simplex(np.asarray(weights))
    return np.asarray(estimates) @ np.asarray(weights, dtype=np.float64)


def _objective_terms(estimates: np.ndarray, realized: np.ndarray):
    """Quadratic form of the mean squared error: pi'A pi - 2 b'pi + c."""
    n = len(realized)
    a = estimates.T @ estimates / n
    b = estimates.T @ realized / n
    c = float(realized @ realized) / n
    return a, b, c


def _mse(a, b, c, w) -> float:
    return float(w @ a @ w - 2.0 * b @ w + c)


def _edge_solution(a, b, i, j):
    """Minimize on the segment pi = t*e_i + (1-t)*e_j, t in [0, 1]."""
    # f(t) = alpha t^2 + beta t + const
    alpha = a[i, i] - 2.0 * a[i, j] + a[j, j]
    beta = 2.0 * (a[i, j] - a[j, j]) - 2.0 * (b[i] - b[j])
    if alpha <= 1e-18:
        t = 0.5  # flat edge: pick the symmetric point
    else:
        t = float(np.clip(-beta / (2.0 * alpha), 0.0, 1.0))
    w = np.zeros(len(b))
    w[i] = t
    w[j] = 1.0 - t
    return w


def _interior_solution(a, b):
    """Equality-constrained stationary point of the KKT system, if solvable."""
    m = len(b)
    kkt = np.zeros((m + 1, m + 1))
    kkt[:m, :m] = 2.0 * a
    kkt[:m, m] = 1.0
    kkt[m, :m] = 1.0
    rhs = np.concatenate([2.0 * b, [1.0]])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    w = sol[:m]
    if not np.all(np.isfinite(w)):
        return None
    return w


def _entropy(w: np.ndarray) -> float:
    p = np.clip(w, 1e-15, None)
    p = p / p.sum()
    return float(-(p * np.log(p)).sum())


def fit_weights(estimates: np.ndarray, realized: np.ndarray) -> np.ndarray:
    """Least-squares weights on the probability simplex, solved exactly.

    Ties (flat directions of the objective) are broken toward the candidate
    with maximum entropy, so e.g. identical estimate columns yield uniform
    weights.  The returned vector is clipped and renormalized to the simplex
    well inside the 1e-9 tolerance.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    realized = np.asarray(realized, dtype=np.float64)
    if estimates.ndim != 2 or len(estimates) != len(realized):
        raise ValueError(f"estimates {estimates.shape} vs realized {realized.shape}")
    if len(realized) == 0:
        raise EmptySegment("cannot fit combination weights on an empty segment")
    m = estimates.shape[1]
    a, b, c = _objective_terms(estimates, realized)

    candidates: list[np.ndarray] = [np.full(m, 1.0 / m)]
    for i in range(m):
        w = np.zeros(m)
        w[i] = 1.0
        candidates.append(w)
    for i in range(m):
        for j in range(i + 1, m):
            candidates.append(_edge_solution(a, b, i, j))
    interior = _interior_solution(a, b)
    if interior is not None and np.all(interior >= -1e-12):
        candidates.append(np.clip(interior, 0.0, None))

    objective = np.array([_mse(a, b, c, w) for w in candidates])
    best = float(objective.min())
    tol = 1e-12 * (1.0 + abs(best))
    tied = [w for w, obj in zip(candidates, objective) if obj <= best + tol]
    w = max(tied, key=_entropy)
    w = np.clip(w, 0.0, None)
    w = w / w.sum()
    return w


def fit_combination(fan_long, fan_short, realized_long, realized_short, taus) -> CombinationWeights:
    return CombinationWeights(
        taus=tuple(taus),
        long=fit_weights(fan_long, realized_long),
        short=fit_weights(fan_short, realized_short),
    )


def rolling_combine(
    estimates: np.ndarray,
    realized: np.ndarray,
    end_indices: np.ndarray,
    k: int,
    window: int,
    predict_from: int,
) -> np.ndarray:
    """Rolling refit: each prediction uses the trailing ``window`` realized rows.

    Row j is usable when fitting the prediction at row i iff
    end_indices[j] <= end_indices[i] - k (its return is realized by the
    prediction's information time).  Rows before ``predict_from`` only serve
    as fitting history; predictions are returned for rows >= predict_from.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    realized = np.asarray(realized, dtype=np.float64)
    n = len(realized)
    out = np.full(n - predict_from, np.nan)
    for i in range(predict_from, n):
        usable = int(np.searchsorted(end_indices, end_indices[i] - k, side="right"))
        lo = max(0, usable - window)
        if usable - lo == 0:
            raise EmptySegment(f"no realized observations before row {i}")
        w = fit_weights(estimates[lo:usable], realized[lo:usable])
        out[i - predict_from] = estimates[i] @ w
    return out
