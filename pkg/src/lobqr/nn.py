"""Dense / conv2d / LSTM kernels with explicit forward and backward passes.

Everything is plain numpy: each forward returns (output, cache) and the
matching backward consumes (upstream gradient, cache) and returns exact
gradients.  No autodiff graph, no padding/dilation, no internal randomness.
Kernels are pure given their inputs; the batch axis is leading everywhere.

Gradients here are what the gradient-check harness at the bottom verifies
against central differences, so keep every backward in closed form.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping

import numpy as np

from .errors import CheckFailed, ShapeMismatch


class Parameter:
    """A trainable array with its gradient and adaptive-moment buffers."""

    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow for very negative x still yields the correct limit 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# dense / activation


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """y = x @ w + b with x: (N, D), w: (D, M), b: (M,)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"dense: x {x.shape} vs w {w.shape}")
    return x @ w + b, (x, w)


def dense_backward(gy: np.ndarray, cache):
    x, w = cache
    return gy @ w.T, x.T @ gy, gy.sum(axis=0)


def leaky_relu_forward(x: np.ndarray, alpha: float = 0.01):
    # for alpha < 1, max(x, alpha*x) equals x on x>=0 and alpha*x on x<0
    y = np.maximum(x, alpha * x)
    return y, (x >= 0, alpha)


def leaky_relu_backward(gy: np.ndarray, cache):
    pos, alpha = cache
    return np.where(pos, gy, alpha * gy)


# ---------------------------------------------------------------------------
# conv2d (valid padding only)


def conv_output_extent(extent: int, filt: int, stride: int) -> int:
    return (extent - filt) // stride + 1


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: tuple[int, int] = (1, 1)):
    """Valid cross-correlation: x (N,C,H,W), w (K,C,fh,fw), b (K,).

    Filters here are tiny (at most 1x10), so the kernel accumulates one
    strided tensordot per filter tap instead of materializing im2col buffers.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-d operands, got {x.shape} and {w.shape}")
    n, c, h, width = x.shape
    k, cw, fh, fw = w.shape
    sh, sw = stride
    if cw != c:
        raise ShapeMismatch(f"conv2d: {c} input channels vs filters with {cw}")
    if fh > h or fw > width:
        raise ShapeMismatch(f"filter ({fh},{fw}) larger than input ({h},{width})")
    if sh < 1 or sw < 1:
        raise ShapeMismatch("stride components must be >= 1")
    oh = conv_output_extent(h, fh, sh)
    ow = conv_output_extent(width, fw, sw)
    y = np.zeros((k, n, oh, ow), dtype=x.dtype)
    for p in range(fh):
        for q in range(fw):
            xs = x[:, :, p : p + sh * oh : sh, q : q + sw * ow : sw]
            y += np.tensordot(w[:, :, p, q], xs, axes=([1], [1]))
    y = y.transpose(1, 0, 2, 3) + b.reshape(1, k, 1, 1)
    return y, (x, w, stride, (oh, ow))


def conv2d_backward(gy: np.ndarray, cache):
    x, w, (sh, sw), (oh, ow) = cache
    k = w.shape[0]
    fh, fw = w.shape[2], w.shape[3]
    gw = np.empty_like(w)
    gx = np.zeros_like(x)
    gb = gy.sum(axis=(0, 2, 3))
    for p in range(fh):
        for q in range(fw):
            xs = x[:, :, p : p + sh * oh : sh, q : q + sw * ow : sw]
            gw[:, :, p, q] = np.tensordot(gy, xs, axes=([0, 2, 3], [0, 2, 3]))
            gx[:, :, p : p + sh * oh : sh, q : q + sw * ow : sw] += np.einsum(
                "nkhw,kc->nchw", gy, w[:, :, p, q], optimize=True
            )
    return gx, gw, gb


# ---------------------------------------------------------------------------
# LSTM (gate order: input, forget, cell, output)


def lstm_forward(x: np.ndarray, wx: np.ndarray, wh: np.ndarray, b: np.ndarray):
    """Gated recurrence over x: (N, T, D) -> hidden sequence (N, T, H).

    wx: (D, 4H), wh: (H, 4H), b: (4H,).  Initial hidden and cell states are
    zero.  Internals run time-major so per-step reads and writes stay
    contiguous; the cache keeps the gate activations for exact BPTT.
    """
    n, t_len, d = x.shape
    hs = wh.shape[0]
    if wx.shape != (d, 4 * hs) or wh.shape != (hs, 4 * hs) or b.shape != (4 * hs,):
        raise ShapeMismatch(f"lstm: x {x.shape}, wx {wx.shape}, wh {wh.shape}, b {b.shape}")
    x_tm = np.ascontiguousarray(x.transpose(1, 0, 2))  # (T, N, D)
    gates = x_tm.reshape(t_len * n, d) @ wx
    gates = gates.reshape(t_len, n, 4 * hs)
    gates += b
    h_all = np.empty((t_len, n, hs), dtype=x.dtype)
    c_all = np.empty((t_len, n, hs), dtype=x.dtype)
    tanh_c = np.empty((t_len, n, hs), dtype=x.dtype)
    h = np.zeros((n, hs), dtype=x.dtype)
    c = np.zeros((n, hs), dtype=x.dtype)
    with np.errstate(over="ignore"):
        for t in range(t_len):
            z = gates[t]
            z += h @ wh
            z[:, 0 : 2 * hs] = 1.0 / (1.0 + np.exp(-z[:, 0 : 2 * hs]))  # input, forget
            z[:, 3 * hs :] = 1.0 / (1.0 + np.exp(-z[:, 3 * hs :]))  # output
            np.tanh(z[:, 2 * hs : 3 * hs], out=z[:, 2 * hs : 3 * hs])  # cell
            i = z[:, 0:hs]
            f = z[:, hs : 2 * hs]
            g = z[:, 2 * hs : 3 * hs]
            o = z[:, 3 * hs :]
            np.multiply(i, g, out=c_all[t])
            c_all[t] += f * c
            c = c_all[t]
            np.tanh(c, out=tanh_c[t])
            np.multiply(o, tanh_c[t], out=h_all[t])
            h = h_all[t]
    h_seq = np.ascontiguousarray(h_all.transpose(1, 0, 2))
    return h_seq, (x_tm, h_all, c_all, tanh_c, gates, wx, wh)


def lstm_backward(gh_seq: np.ndarray, cache):
    """Backpropagation through time; gh_seq holds dL/dh_t for every step."""
    x_tm, h_all, c_all, tanh_c, gates, wx, wh = cache
    t_len, n, d = x_tm.shape
    hs = wh.shape[0]
    gh_tm = gh_seq.transpose(1, 0, 2)  # (T, N, H) view
    wh_t = np.ascontiguousarray(wh.T)
    dh_next = np.zeros((n, hs), dtype=x_tm.dtype)
    dc_next = np.zeros((n, hs), dtype=x_tm.dtype)
    dz_all = np.empty((t_len, n, 4 * hs), dtype=x_tm.dtype)
    gwh = np.zeros_like(wh)
    for t in range(t_len - 1, -1, -1):
        z = gates[t]
        i = z[:, 0:hs]
        f = z[:, hs : 2 * hs]
        g = z[:, 2 * hs : 3 * hs]
        o = z[:, 3 * hs :]
        tc = tanh_c[t]
        dh = gh_tm[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dz_all[t]
        np.multiply(dc * g, i * (1.0 - i), out=dz[:, 0:hs])
        if t > 0:
            np.multiply(dc * c_all[t - 1], f * (1.0 - f), out=dz[:, hs : 2 * hs])
        else:
            dz[:, hs : 2 * hs] = 0.0  # initial cell state is zero
        np.multiply(dc * i, 1.0 - g * g, out=dz[:, 2 * hs : 3 * hs])
        np.multiply(dh * tc, o * (1.0 - o), out=dz[:, 3 * hs :])
        dh_next = dz @ wh_t
        dc_next = dc * f
        if t > 0:
            gwh += h_all[t - 1].T @ dz
    flat_dz = dz_all.reshape(t_len * n, 4 * hs)
    gwx = x_tm.reshape(t_len * n, d).T @ flat_dz
    gb = flat_dz.sum(axis=0)
    gx = np.ascontiguousarray((flat_dz @ wx.T).reshape(t_len, n, d).transpose(1, 0, 2))
    return gx, gwx, gwh, gb


# ---------------------------------------------------------------------------
# pinball loss and optimizer


def pinball_loss(r: np.ndarray, r_hat: np.ndarray, tau: float):
    """Mean pinball loss and its gradient w.r.t. the predictions.

    loss = mean_t max(tau*u, (tau-1)*u) with u = r - r_hat; nonnegative,
    zero iff r_hat == r.  At tau = 0.5 this is half the mean absolute error.
    The subgradient at u = 0 is taken as 0.
    """
    r = np.asarray(r)
    r_hat = np.asarray(r_hat)
    if r.shape != r_hat.shape:
        raise ShapeMismatch(f"pinball: targets {r.shape} vs predictions {r_hat.shape}")
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    u = r - r_hat
    loss = float(np.mean(np.maximum(tau * u, (tau - 1.0) * u)))
    grad = np.where(u > 0, -tau, np.where(u < 0, 1.0 - tau, 0.0)) / r.size
    return loss, grad.astype(r_hat.dtype, copy=False)


def adam_step(
    params,
    lr: float,
    t: int,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected adaptive-moment update, in place; t is 1-based."""
    if t < 1:
        raise ValueError("adam step count t must be >= 1")
    values = params.values() if isinstance(params, Mapping) else params
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p in values:
        p.m *= beta1
        p.m += (1.0 - beta1) * p.grad
        p.v *= beta2
        p.v += (1.0 - beta2) * np.square(p.grad)
        p.value -= lr * (p.m / bc1) / (np.sqrt(p.v / bc2) + eps)


# ---------------------------------------------------------------------------
# initialization


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def lstm_params(rng: np.random.Generator, d: int, h: int, dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Input matrix glorot, recurrent matrix uniform +-1/sqrt(H), forget bias 1."""
    wx = glorot_uniform(rng, (d, 4 * h), d, 4 * h, dtype)
    wh = rng.uniform(-1.0 / np.sqrt(h), 1.0 / np.sqrt(h), size=(h, 4 * h)).astype(dtype)
    b = np.zeros(4 * h, dtype=dtype)
    b[h : 2 * h] = 1.0
    return wx, wh, b


# ---------------------------------------------------------------------------
# gradient checking


def gradient_check(
    loss_fn: Callable[[], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    *,
    n_samples: int = 100,
    step: float = 1e-5,
    tol: float = 1e-4,
    min_grad: float = 1e-7,
    rng: np.random.Generator | None = None,
) -> float:
    """Central-difference check of analytic gradients; returns max rel error.

    ``loss_fn`` recomputes the scalar loss from the (mutated in place) arrays
    in ``params``.  Coordinates are sampled uniformly across all parameters.
    Must run on 64-bit values; raises CheckFailed on the first coordinate
    whose relative error exceeds ``tol``.

    Coordinates where both gradients fall below ``min_grad`` are skipped:
    a central difference of step 1e-5 cannot resolve them against the
    float64 rounding noise of the loss itself.
    """
    rng = rng or np.random.default_rng(0)
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    if sizes.sum() == 0:
        return 0.0
    flat_choices = rng.integers(0, sizes.sum(), size=n_samples)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for flat in flat_choices:
        which = int(np.searchsorted(bounds, flat, side="right"))
        offset = int(flat - (bounds[which - 1] if which else 0))
        name = names[which]
        arr = params[name]
        idx = np.unravel_index(offset, arr.shape)
        orig = arr[idx]
        arr[idx] = orig + step
        plus = loss_fn()
        arr[idx] = orig - step
        minus = loss_fn()
        arr[idx] = orig
        numeric = (plus - minus) / (2.0 * step)
        a = float(analytic[name][idx])
        denom = max(abs(a), abs(numeric))
        if denom < min_grad:
            continue
        rel = abs(a - numeric) / denom
        worst = max(worst, rel)
        if rel > tol:
            raise CheckFailed(name, idx, a, numeric, rel)
    return worst
