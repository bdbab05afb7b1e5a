"""Reference predictors: repetitive persistence, autoregression, small MLP.

All three consume the same :class:`~lobqr.labeling.SampleSet` as the main
network and are strictly causal: every input they read is realized by the
sample's end time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import DivergedLoss, SingularDesign
from .labeling import SIDES, SampleSet


def repetitive_predict(samples: SampleSet) -> dict[str, np.ndarray]:
    """Predict each side's return by its most recent fully observed value.

    The latest observable value of the target quantity r'(t) at decision time
    t is r'(t - k), i.e. the last auxiliary-history entry.  This is the
    zero-intelligence persistence baseline all error metrics are divided by.
    """
    return {"long": samples.aux_long[:, -1].copy(), "short": samples.aux_short[:, -1].copy()}


@dataclass
class ARModel:
    """Per-side least-squares autoregression on realized adjusted returns.

    Regressors for a sample ending at t are the p most recent realized
    returns r'(t-k), ..., r'(t-k-p+1) plus an intercept.
    """

    p: int = 10
    coef: dict[str, np.ndarray] = field(default_factory=dict)
    used_ridge: bool = False

    def _design(self, samples: SampleSet, side: str) -> np.ndarray:
        aux = samples.aux_long if side == "long" else samples.aux_short
        if self.p > aux.shape[1]:
            raise ValueError(f"lag order {self.p} exceeds aux history length {aux.shape[1]}")
        n = len(samples)
        x = np.empty((n, self.p + 1))
        x[:, 0] = 1.0
        for j in range(self.p):
            x[:, 1 + j] = aux[:, aux.shape[1] - 1 - j]
        return x

    def fit(self, samples: SampleSet) -> "ARModel":
        for side in SIDES:
            x = self._design(samples, side)
            y = samples.target(side)
            gram = x.T @ x
            rhs = x.T @ y
            try:
                coef = np.linalg.solve(gram, rhs)
                if not np.all(np.isfinite(coef)):
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                # rank-deficient design: fall back to a tiny ridge, reported
                self.used_ridge = True
                coef = np.linalg.solve(gram + 1e-6 * np.eye(self.p + 1), rhs)
                if not np.all(np.isfinite(coef)):
                    raise SingularDesign(f"AR design singular for side {side}") from None
            self.coef[side] = coef
        return self

    def predict(self, samples: SampleSet) -> dict[str, np.ndarray]:
        if not self.coef:
            raise ValueError("ARModel.predict called before fit")
        return {side: self._design(samples, side) @ self.coef[side] for side in SIDES}

    def normal_equation_residual(self, samples: SampleSet, side: str) -> float:
        """Max |X'(y - X beta)| / n; ~0 when the normal equations hold."""
        x = self._design(samples, side)
        resid = samples.target(side) - x @ self.coef[side]
        return float(np.max(np.abs(x.T @ resid)) / len(samples))


@dataclass(frozen=True)
class MLPConfig:
    hidden: tuple[int, ...] = (128, 64)
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 20
    patience: int = 3
    seed: int = 0
    leaky_alpha: float = 0.01


class MLPModel:
    """Per-side fully connected network on the flattened window.

    Trained with the tau = 0.5 pinball loss (half the MAE), so it targets the
    conditional median like the main model's central head.
    """

    def __init__(self, config: MLPConfig, input_dim: int):
        self.config = config
        self.input_dim = input_dim
        self.params: dict[str, nn.Parameter] = {}
        rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
        for side in SIDES:
            sizes = (input_dim, *config.hidden, 1)
            for i, (d_in, d_out) in enumerate(zip(sizes, sizes[1:])):
                self.params[f"{side}.l{i}.w"] = nn.Parameter(
                    nn.glorot_uniform(rng, (d_in, d_out), d_in, d_out, np.float64)
                )
                self.params[f"{side}.l{i}.b"] = nn.Parameter(np.zeros(d_out))

    def _forward(self, x: np.ndarray, side: str, keep: bool = False):
        caches = []
        h = x
        n_layers = len(self.config.hidden) + 1
        for i in range(n_layers):
            h, dc = nn.dense_forward(h, self.params[f"{side}.l{i}.w"].value, self.params[f"{side}.l{i}.b"].value)
            if i < n_layers - 1:
                h, rc = nn.leaky_relu_forward(h, self.config.leaky_alpha)
            else:
                rc = None
            if keep:
                caches.append((dc, rc))
        return h[:, 0], caches

    def _backward(self, grad_out: np.ndarray, side: str, caches) -> None:
        g = grad_out[:, None]
        for i in range(len(caches) - 1, -1, -1):
            dc, rc = caches[i]
            if rc is not None:
                g = nn.leaky_relu_backward(g, rc)
            g, gw, gb = nn.dense_backward(g, dc)
            self.params[f"{side}.l{i}.w"].grad += gw
            self.params[f"{side}.l{i}.b"].grad += gb

    def train(self, train_samples: SampleSet, val_samples: SampleSet) -> dict[str, list[float]]:
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
        x_train = train_samples.windows.reshape(len(train_samples), -1)
        x_val = val_samples.windows.reshape(len(val_samples), -1)
        history: dict[str, list[float]] = {side: [] for side in SIDES}
        for side in SIDES:
            y_train = train_samples.target(side)
            y_val = val_samples.target(side)
            side_params = {k: p for k, p in self.params.items() if k.startswith(side)}
            best = None
            best_loss = np.inf
            stall = 0
            adam_t = 0
            for _epoch in range(cfg.max_epochs):
                order = rng.permutation(len(x_train))
                for lo in range(0, len(order), cfg.batch_size):
                    idx = order[lo : lo + cfg.batch_size]
                    for p in side_params.values():
                        p.zero_grad()
                    out, caches = self._forward(x_train[idx], side, keep=True)
                    loss, grad = nn.pinball_loss(y_train[idx], out, 0.5)
                    if not np.isfinite(loss):
                        raise DivergedLoss("MLP training loss is not finite")
                    self._backward(grad, side, caches)
                    adam_t += 1
                    nn.adam_step(side_params, cfg.learning_rate, adam_t)
                val_out, _ = self._forward(x_val, side)
                val_loss, _ = nn.pinball_loss(y_val, val_out, 0.5)
                history[side].append(val_loss)
                if val_loss < best_loss:
                    best_loss = val_loss
                    best = {k: p.value.copy() for k, p in side_params.items()}
                    stall = 0
                else:
                    stall += 1
                    if stall > cfg.patience:
                        break
            if best is not None:
                for k, v in best.items():
                    self.params[k].value[...] = v
        return history

    def predict(self, samples: SampleSet) -> dict[str, np.ndarray]:
        x = samples.windows.reshape(len(samples), -1)
        return {side: self._forward(x, side)[0] for side in SIDES}
