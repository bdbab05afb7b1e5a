"""The shared-trunk multi-branch quantile network and its training loop.

Architecture (input window T x 40 treated as a 1-channel image):

    conv 1x2 stride (1,2) -> width 20 \
    conv 1x2 stride (1,2) -> width 10  } leaky-relu after each, C channels
    conv 1x10 stride (1,1) -> width 1 /
    reshape to a T x C sequence

Per side (long/short): the trunk sequence is concatenated with that side's
T x 1 history of past adjusted returns, fed to a branch LSTM, and each
quantile head runs its own LSTM whose final hidden state feeds a scalar
readout.  Six pinball losses (2 sides x 3 quantiles) are summed with equal
weights; each head's loss reaches only its own head parameters, its side's
branch and the shared trunk.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import nn
from .errors import ConfigInvalid, DivergedLoss, ShapeMismatch
from .labeling import SIDES, SampleSet

MAGIC = b"LOBQR1"
BOOK_WIDTH = 40


@dataclass(frozen=True)
class ModelConfig:
    T: int = 50
    quantiles: tuple[float, ...] = (0.25, 0.5, 0.75)
    k: int = 100
    conv_channels: int = 16
    branch_hidden: int = 64
    head_hidden: int = 32
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    leaky_alpha: float = 0.01
    dtype: str = "float64"

    def __post_init__(self):
        if self.T < 1 or self.k < 1:
            raise ConfigInvalid(f"T and k must be positive, got T={self.T}, k={self.k}")
        if len(self.quantiles) < 1 or any(not 0.0 < q < 1.0 for q in self.quantiles):
            raise ConfigInvalid(f"quantiles must lie in (0,1): {self.quantiles}")
        if any(later <= earlier for earlier, later in zip(self.quantiles, self.quantiles[1:])):
            raise ConfigInvalid(f"quantiles must be strictly increasing: {self.quantiles}")
        if min(self.conv_channels, self.branch_hidden, self.head_hidden, self.batch_size) < 1:
            raise ConfigInvalid("layer sizes and batch size must be positive")
        if self.max_epochs < 1 or self.patience < 0:
            raise ConfigInvalid("max_epochs must be >= 1 and patience >= 0")
        if self.learning_rate <= 0:
            raise ConfigInvalid("learning rate must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ConfigInvalid(f"dtype must be float64 or float32, got {self.dtype}")

    @property
    def heads(self) -> tuple[tuple[str, float], ...]:
        return tuple((side, q) for side in SIDES for q in self.quantiles)


def _tau_tag(tau: float) -> str:
    return f"q{tau:g}"


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")

    def as_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
        }


@dataclass
class QuantileFan:
    """Aligned per-side quantile estimates, one row per sample end timestamp."""

    taus: tuple[float, ...]
    long: np.ndarray
    short: np.ndarray
    end_ts: np.ndarray

    def estimates(self, side: str) -> np.ndarray:
        return self.long if side == "long" else self.short

    def is_monotone(self) -> bool:
        return bool(
            np.all(np.diff(self.long, axis=1) >= 0) and np.all(np.diff(self.short, axis=1) >= 0)
        )


def rearrange(fan: QuantileFan) -> QuantileFan:
    """Monotone rearrangement on the finite quantile grid: sort each row.

    Restores non-crossing and never increases the summed pinball loss of the
    fan against any fixed target.
    """
    return QuantileFan(
        taus=fan.taus,
        long=np.sort(fan.long, axis=1),
        short=np.sort(fan.short, axis=1),
        end_ts=fan.end_ts,
    )


class DeepLOBQR:
    """Network state: named parameters, optimizer moments, epoch counter."""

    def __init__(self, config: ModelConfig, _init: bool = True):
        self.config = config
        self.params: dict[str, nn.Parameter] = {}
        self.adam_t = 0
        self.epoch = 0
        if _init:
            self._build()

    # -- construction -------------------------------------------------------

    def _build(self) -> None:
        cfg = self.config
        dt = np.dtype(cfg.dtype)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
        c = cfg.conv_channels

        def par(name: str, value: np.ndarray) -> None:
            self.params[name] = nn.Parameter(value)

        # trunk: 40 -> 20 -> 10 -> 1 along the feature axis
        par("trunk.conv1.w", nn.glorot_uniform(rng, (c, 1, 1, 2), 2, c * 2, dt))
        par("trunk.conv1.b", np.zeros(c, dtype=dt))
        par("trunk.conv2.w", nn.glorot_uniform(rng, (c, c, 1, 2), c * 2, c * 2, dt))
        par("trunk.conv2.b", np.zeros(c, dtype=dt))
        par("trunk.conv3.w", nn.glorot_uniform(rng, (c, c, 1, 10), c * 10, c * 10, dt))
        par("trunk.conv3.b", np.zeros(c, dtype=dt))
        for side in SIDES:
            wx, wh, b = nn.lstm_params(rng, c + 1, cfg.branch_hidden, dt)
            par(f"branch.{side}.wx", wx)
            par(f"branch.{side}.wh", wh)
            par(f"branch.{side}.b", b)
            for tau in cfg.quantiles:
                tag = f"head.{side}.{_tau_tag(tau)}"
                wx, wh, b = nn.lstm_params(rng, cfg.branch_hidden, cfg.head_hidden, dt)
                par(f"{tag}.wx", wx)
                par(f"{tag}.wh", wh)
                par(f"{tag}.b", b)
                par(f"{tag}.out.w", nn.glorot_uniform(rng, (cfg.head_hidden, 1), cfg.head_hidden, 1, dt))
                par(f"{tag}.out.b", np.zeros(1, dtype=dt))

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def head_param_names(self, side: str, tau: float) -> list[str]:
        tag = f"head.{side}.{_tau_tag(tau)}"
        return [n for n in self.params if n.startswith(tag)]

    # -- forward / backward -------------------------------------------------

    def _p(self, name: str) -> np.ndarray:
        return self.params[name].value

    def forward(self, samples: SampleSet, keep_cache: bool = False):
        """Per-sample estimate for every (side, tau) head.

        Returns (outputs, cache) where outputs maps (side, tau) -> (N,).
        """
        cfg = self.config
        dt = np.dtype(cfg.dtype)
        if samples.windows.shape[1] != cfg.T or samples.windows.shape[2] != BOOK_WIDTH:
            raise ShapeMismatch(
                f"windows {samples.windows.shape[1:]} do not match config (T={cfg.T}, {BOOK_WIDTH})"
            )
        n = len(samples)
        x = np.ascontiguousarray(samples.windows, dtype=dt).reshape(n, 1, cfg.T, BOOK_WIDTH)

        a1, c1 = nn.conv2d_forward(x, self._p("trunk.conv1.w"), self._p("trunk.conv1.b"), (1, 2))
        r1, rc1 = nn.leaky_relu_forward(a1, cfg.leaky_alpha)
        a2, c2 = nn.conv2d_forward(r1, self._p("trunk.conv2.w"), self._p("trunk.conv2.b"), (1, 2))
        r2, rc2 = nn.leaky_relu_forward(a2, cfg.leaky_alpha)
        a3, c3 = nn.conv2d_forward(r2, self._p("trunk.conv3.w"), self._p("trunk.conv3.b"), (1, 1))
        r3, rc3 = nn.leaky_relu_forward(a3, cfg.leaky_alpha)
        # (N, C, T, 1) -> (N, T, C)
        trunk_seq = np.ascontiguousarray(r3[:, :, :, 0].transpose(0, 2, 1))

        outputs: dict[tuple[str, float], np.ndarray] = {}
        branch_caches = {}
        head_caches = {}
        for side in SIDES:
            aux = (samples.aux_long if side == "long" else samples.aux_short).astype(dt, copy=False)
            seq = np.concatenate([trunk_seq, aux[:, :, None]], axis=2)
            h_branch, bc = nn.lstm_forward(
                seq, self._p(f"branch.{side}.wx"), self._p(f"branch.{side}.wh"), self._p(f"branch.{side}.b")
            )
            branch_caches[side] = bc
            for tau in cfg.quantiles:
                tag = f"head.{side}.{_tau_tag(tau)}"
                h_head, hc = nn.lstm_forward(
                    h_branch, self._p(f"{tag}.wx"), self._p(f"{tag}.wh"), self._p(f"{tag}.b")
                )
                y, dc = nn.dense_forward(h_head[:, -1, :], self._p(f"{tag}.out.w"), self._p(f"{tag}.out.b"))
                outputs[(side, tau)] = y[:, 0]
                head_caches[(side, tau)] = (hc, dc)
        cache = (c1, rc1, c2, rc2, c3, rc3, branch_caches, head_caches, n) if keep_cache else None
        return outputs, cache

    def backward(self, cache, grad_outputs: dict[tuple[str, float], np.ndarray]) -> None:
        """Accumulate parameter gradients for dL/d(head output) per head.

        Heads absent from ``grad_outputs`` (or with zero gradient) contribute
        nothing, which is what routes each pinball loss to its own head.
        """
        cfg = self.config
        dt = np.dtype(cfg.dtype)
        c1, rc1, c2, rc2, c3, rc3, branch_caches, head_caches, n = cache
        g_trunk_seq = np.zeros((n, cfg.T, cfg.conv_channels), dtype=dt)

        for side in SIDES:
            bc = branch_caches[side]
            g_branch_seq = np.zeros((n, cfg.T, cfg.branch_hidden), dtype=dt)
            touched = False
            for tau in cfg.quantiles:
                gy = grad_outputs.get((side, tau))
                if gy is None:
                    continue
                touched = True
                tag = f"head.{side}.{_tau_tag(tau)}"
                hc, dc = head_caches[(side, tau)]
                g_last, gw, gb = nn.dense_backward(gy[:, None].astype(dt, copy=False), dc)
                self.params[f"{tag}.out.w"].grad += gw
                self.params[f"{tag}.out.b"].grad += gb
                gh_seq = np.zeros((n, cfg.T, cfg.head_hidden), dtype=dt)
                gh_seq[:, -1, :] = g_last
                gx, gwx, gwh, gbs = nn.lstm_backward(gh_seq, hc)
                self.params[f"{tag}.wx"].grad += gwx
                self.params[f"{tag}.wh"].grad += gwh
                self.params[f"{tag}.b"].grad += gbs
                g_branch_seq += gx
            if not touched:
                continue
            gx, gwx, gwh, gbs = nn.lstm_backward(g_branch_seq, bc)
            self.params[f"branch.{side}.wx"].grad += gwx
            self.params[f"branch.{side}.wh"].grad += gwh
            self.params[f"branch.{side}.b"].grad += gbs
            g_trunk_seq += gx[:, :, : cfg.conv_channels]  # aux column is an input

        g_r3 = np.ascontiguousarray(g_trunk_seq.transpose(0, 2, 1))[:, :, :, None]
        g_a3 = nn.leaky_relu_backward(g_r3, rc3)
        g_r2, gw, gb = nn.conv2d_backward(g_a3, c3)
        self.params["trunk.conv3.w"].grad += gw
        self.params["trunk.conv3.b"].grad += gb
        g_a2 = nn.leaky_relu_backward(g_r2, rc2)
        g_r1, gw, gb = nn.conv2d_backward(g_a2, c2)
        self.params["trunk.conv2.w"].grad += gw
        self.params["trunk.conv2.b"].grad += gb
        g_a1 = nn.leaky_relu_backward(g_r1, rc1)
        _, gw, gb = nn.conv2d_backward(g_a1, c1)
        self.params["trunk.conv1.w"].grad += gw
        self.params["trunk.conv1.b"].grad += gb

    def loss_and_grads(
        self, samples: SampleSet, loss_weights: dict[tuple[str, float], float] | None = None
    ) -> tuple[float, dict[tuple[str, float], float]]:
        """Total (weighted) pinball loss; accumulates gradients in place."""
        outputs, cache = self.forward(samples, keep_cache=True)
        total = 0.0
        per_head: dict[tuple[str, float], float] = {}
        grad_outputs = {}
        for side, tau in self.config.heads:
            w = 1.0 if loss_weights is None else loss_weights.get((side, tau), 0.0)
            target = samples.target(side)
            loss, grad = nn.pinball_loss(target, outputs[(side, tau)], tau)
            per_head[(side, tau)] = loss
            total += w * loss
            if w != 0.0:
                grad_outputs[(side, tau)] = w * grad
        self.backward(cache, grad_outputs)
        return total, per_head

    def total_loss(self, samples: SampleSet, batch_size: int = 4096) -> float:
        """Unweighted sum of the six pinball losses, computed in chunks."""
        n = len(samples)
        sums = {head: 0.0 for head in self.config.heads}
        for lo in range(0, n, batch_size):
            batch = samples.slice(lo, min(lo + batch_size, n))
            outputs, _ = self.forward(batch)
            for side, tau in self.config.heads:
                loss, _ = nn.pinball_loss(batch.target(side), outputs[(side, tau)], tau)
                sums[(side, tau)] += loss * len(batch)
        return sum(v / n for v in sums.values())

    # -- training -----------------------------------------------------------

    def train(self, train_samples: SampleSet, val_samples: SampleSet) -> TrainHistory:
        """Mini-batch descent on the summed pinball losses with early stopping.

        Stops when the validation total loss has not improved for ``patience``
        consecutive epochs and restores the best-validation parameters.
        """
        cfg = self.config
        if len(train_samples) == 0 or len(val_samples) == 0:
            raise ValueError("train and validation sample sets must be non-empty")
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
        history = TrainHistory()
        best_state: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None
        best_t = 0
        stall = 0
        n = len(train_samples)
        for epoch in range(cfg.max_epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                batch = train_samples.select(idx)
                for p in self.params.values():
                    p.zero_grad()
                loss, _ = self.loss_and_grads(batch)
                if not np.isfinite(loss):
                    raise DivergedLoss(f"non-finite training loss at epoch {epoch}")
                self.adam_t += 1
                nn.adam_step(self.params, cfg.learning_rate, self.adam_t)
                epoch_loss += loss * len(idx)
            self.epoch = epoch + 1
            val_loss = self.total_loss(val_samples)
            if not np.isfinite(val_loss):
                raise DivergedLoss(f"non-finite validation loss at epoch {epoch}")
            history.train_loss.append(epoch_loss / n)
            history.val_loss.append(val_loss)
            if val_loss < history.best_val_loss:
                history.best_val_loss = val_loss
                history.best_epoch = epoch
                best_state = {
                    k: (p.value.copy(), p.m.copy(), p.v.copy()) for k, p in self.params.items()
                }
                best_t = self.adam_t
                stall = 0
            else:
                stall += 1
                if stall > cfg.patience:
                    break
        if best_state is not None:
            for k, (value, m, v) in best_state.items():
                self.params[k].value[...] = value
                self.params[k].m[...] = m
                self.params[k].v[...] = v
            self.adam_t = best_t
            self.epoch = history.best_epoch + 1
        return history

    # -- prediction ---------------------------------------------------------

    def predict(self, samples: SampleSet, batch_size: int = 4096) -> QuantileFan:
        """Raw (pre-rearrangement) quantile fan aligned to sample end times."""
        cfg = self.config
        n = len(samples)
        grids = {side: np.empty((n, len(cfg.quantiles))) for side in SIDES}
        for lo in range(0, n, batch_size):
            hi = min(lo + batch_size, n)
            outputs, _ = self.forward(samples.slice(lo, hi))
            for side in SIDES:
                for j, tau in enumerate(cfg.quantiles):
                    grids[side][lo:hi, j] = outputs[(side, tau)]
        if not (np.all(np.isfinite(grids["long"])) and np.all(np.isfinite(grids["short"]))):
            raise DivergedLoss("non-finite prediction")
        return QuantileFan(
            taus=cfg.quantiles, long=grids["long"], short=grids["short"], end_ts=samples.end_ts.copy()
        )

    # -- serialization ------------------------------------------------------

    def _config_text(self) -> str:
        cfg = self.config
        items = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
        items["quantiles"] = ",".join(f"{q:.17g}" for q in cfg.quantiles)
        items["adam_t"] = self.adam_t
        items["epoch"] = self.epoch
        return "".join(f"{k}={items[k]}\n" for k in sorted(items))

    def save(self, path) -> None:
        """Write magic, canonical config block, then named f64 arrays (LE)."""
        buf = io.BytesIO()
        buf.write(MAGIC)
        text = self._config_text().encode("utf-8")
        buf.write(struct.pack("<I", len(text)))
        buf.write(text)
        arrays: list[tuple[str, np.ndarray]] = []
        for name, p in self.params.items():
            arrays.append((name, p.value))
            arrays.append((name + ".m", p.m))
            arrays.append((name + ".v", p.v))
        buf.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            nb = name.encode("utf-8")
            buf.write(struct.pack("<I", len(nb)))
            buf.write(nb)
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        with open(path, "wb") as f:
            f.write(buf.getvalue())

    @classmethod
    def load(cls, path) -> "DeepLOBQR":
        with open(path, "rb") as f:
            raw = f.read()
        if raw[: len(MAGIC)] != MAGIC:
            raise ConfigInvalid(f"{path}: bad checkpoint magic")
        off = len(MAGIC)
        (text_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        text = raw[off : off + text_len].decode("utf-8")
        off += text_len
        kv = dict(line.split("=", 1) for line in text.splitlines() if line)
        quantiles = tuple(float(q) for q in kv["quantiles"].split(","))
        cfg = ModelConfig(
            T=int(kv["T"]),
            quantiles=quantiles,
            k=int(kv["k"]),
            conv_channels=int(kv["conv_channels"]),
            branch_hidden=int(kv["branch_hidden"]),
            head_hidden=int(kv["head_hidden"]),
            learning_rate=float(kv["learning_rate"]),
            batch_size=int(kv["batch_size"]),
            max_epochs=int(kv["max_epochs"]),
            patience=int(kv["patience"]),
            seed=int(kv["seed"]),
            leaky_alpha=float(kv["leaky_alpha"]),
            dtype=kv["dtype"],
        )
        model = cls(cfg)
        model.adam_t = int(kv["adam_t"])
        model.epoch = int(kv["epoch"])
        dt = np.dtype(cfg.dtype)
        (n_arrays,) = struct.unpack_from("<I", raw, off)
        off += 4
        for _ in range(n_arrays):
            (name_len,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", raw, off)
            off += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
            off += 8 * count
            base, _, kind = name.rpartition(".")
            if kind in ("m", "v") and base in model.params:
                target = model.params[base].m if kind == "m" else model.params[base].v
            elif name in model.params:
                target = model.params[name].value
            else:
                raise ConfigInvalid(f"{path}: unknown parameter {name!r}")
            if target.shape != arr.shape:
                raise ConfigInvalid(f"{path}: shape mismatch for {name!r}")
            target[...] = arr.astype(dt)
        return model


def clone_config(config: ModelConfig, **overrides) -> ModelConfig:
    return replace(config, **overrides)
