"""Forward numeric kernels for the layer set: conv1d, batchnorm1d, activations,
linear, LSTM and temporal mean pooling.

Public functions take and return :class:`~diopt.tensor.Tensor` and validate
shapes against their contracts.  The underscore-prefixed ndarray helpers are
shared with the autograd tape and the graph executor; the dense ones accept
arbitrary leading batch dimensions.

All kernels are pure: identical inputs produce bitwise identical outputs.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor


def conv_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    """Output length of a 1-d convolution: floor((L + 2p - K) / s) + 1."""
    return (length + 2 * padding - kernel) // stride + 1


# ---------------------------------------------------------------------------
# ndarray helpers
# ---------------------------------------------------------------------------

def _conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray,
            stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation on (..., C_in, L) with weight (C_out, C_in, K)."""
    if padding:
        pad = [(0, 0)] * (x.ndim - 1) + [(padding, padding)]
        x = np.pad(x, pad)
    k = w.shape[-1]
    l_out = (x.shape[-1] - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, k, axis=-1)[..., ::stride, :]
    # im2col: (..., L_out, C_in*K) @ (C_in*K, C_out) runs on BLAS
    cols = np.moveaxis(win, -3, -2).reshape(win.shape[:-3] + (l_out, w.shape[1] * k))
    y = cols @ w.reshape(w.shape[0], -1).T
    return np.moveaxis(y, -1, -2) + b[:, None]


def _int_matmul_exact(qa: np.ndarray, qb_t: np.ndarray) -> np.ndarray:
    """a @ b.T of int8 operands with integer-exact accumulation.

    Runs on BLAS in a float dtype whose mantissa covers the accumulator bound
    (terms * 127^2), so every partial sum is an exactly representable integer
    and the result equals 32-bit integer accumulation.
    """
    terms = qa.shape[-1]
    dt = np.float32 if terms * 127 * 127 < 2 ** 24 else np.float64
    return qa.astype(dt) @ qb_t.astype(dt).T


def _conv1d_int8(x: np.ndarray, qw: np.ndarray, w_scale: float, b: np.ndarray,
                 stride: int = 1, padding: int = 0) -> np.ndarray:
    """Dynamic weight-only int8 convolution.

    The float activation is quantized per tensor, dot products accumulate as
    exact integers and the result is rescaled to float32 before the bias.
    """
    x_scale, qx = _quantize_dynamic(x)
    if padding:
        pad = [(0, 0)] * (qx.ndim - 1) + [(padding, padding)]
        qx = np.pad(qx, pad)
    k = qw.shape[-1]
    l_out = (qx.shape[-1] - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(qx, k, axis=-1)[..., ::stride, :]
    cols = np.moveaxis(win, -3, -2).reshape(win.shape[:-3] + (l_out, qw.shape[1] * k))
    acc = _int_matmul_exact(cols, qw.reshape(qw.shape[0], -1))
    y = (acc * (w_scale * x_scale)).astype(np.float32)
    return np.moveaxis(y, -1, -2) + b[:, None]


def _quantize_dynamic(x: np.ndarray) -> tuple[float, np.ndarray]:
    """Symmetric per-tensor int8 quantization of an activation tensor."""
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    scale = peak / 127.0 if peak > 0 else 1.0
    q = np.clip(np.round(x / scale), -127, 127).astype(np.int8)
    return scale, q


def _batchnorm1d(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                 mean: np.ndarray, var: np.ndarray, eps: float) -> np.ndarray:
    """Inference-mode normalization on (..., C, L) with per-channel stats."""
    shape = (-1, 1)
    inv = 1.0 / np.sqrt(var + eps)
    return (x - mean.reshape(shape)) * (gamma * inv).reshape(shape) + beta.reshape(shape)


def _batch_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/biased variance over batch and time of (..., C, L)."""
    axes = tuple(i for i in range(x.ndim) if i != x.ndim - 2)
    return x.mean(axis=axes), x.var(axis=axes)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def _leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, x, x * np.asarray(slope, dtype=x.dtype))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map on the last axis: x @ w.T + b."""
    return x @ w.T + b


def _linear_int8(x: np.ndarray, qw: np.ndarray, w_scale: float, b: np.ndarray) -> np.ndarray:
    x_scale, qx = _quantize_dynamic(x)
    acc = _int_matmul_exact(qx, qw)
    return (acc * (w_scale * x_scale)).astype(np.float32) + b


def _mean_pool(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=-1)


def _lstm(x: np.ndarray, w_ih: np.ndarray, w_hh: np.ndarray,
          b_ih: np.ndarray, b_hh: np.ndarray,
          h0: np.ndarray | None = None, c0: np.ndarray | None = None) -> np.ndarray:
    """Single-direction LSTM over (T, D); returns hidden states (T, H).

    Gate layout in the stacked weights is (input, forget, cell, output).
    """
    steps = x.shape[0]
    hidden = w_hh.shape[1]
    h = np.zeros(hidden, dtype=x.dtype) if h0 is None else h0
    c = np.zeros(hidden, dtype=x.dtype) if c0 is None else c0
    out = np.empty((steps, hidden), dtype=x.dtype)
    pre = x @ w_ih.T + b_ih  # (T, 4H), input contribution hoisted out of the loop
    for t in range(steps):
        gates = pre[t] + h @ w_hh.T + b_hh
        i = _sigmoid(gates[:hidden])
        f = _sigmoid(gates[hidden:2 * hidden])
        g = np.tanh(gates[2 * hidden:3 * hidden])
        o = _sigmoid(gates[3 * hidden:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out


# ---------------------------------------------------------------------------
# public ops
# ---------------------------------------------------------------------------

def conv1d_forward(input: Tensor, weight: Tensor, bias: Tensor,
                   stride: int = 1, padding: int = 0) -> Tensor:
    """1-d convolution of a (C_in, L) signal with a (C_out, C_in, K) kernel.

    Output length is floor((L + 2*padding - K) / stride) + 1; each output
    element is the kernel/window dot product plus the channel bias.
    """
    x, w, b = input.data, weight.data, bias.data
    if x.ndim != 2 or w.ndim != 3 or b.ndim != 1:
        raise ShapeError(f"conv1d expects input (C_in, L), weight (C_out, C_in, K), "
                         f"bias (C_out,); got {x.shape}, {w.shape}, {b.shape}")
    if x.shape[0] != w.shape[1]:
        raise ShapeError(f"conv1d channel mismatch: input has {x.shape[0]} channels, "
                         f"weight expects {w.shape[1]}")
    if b.shape[0] != w.shape[0]:
        raise ShapeError(f"conv1d bias length {b.shape[0]} != output channels {w.shape[0]}")
    if stride < 1 or padding < 0:
        raise ValueError(f"stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    if w.shape[2] > x.shape[1] + 2 * padding:
        raise ShapeError(f"conv1d kernel {w.shape[2]} longer than padded input "
                         f"{x.shape[1] + 2 * padding}")
    return Tensor(_conv1d(x, w, b, stride, padding))


def batchnorm1d_forward(input: Tensor, gamma: Tensor, beta: Tensor,
                        running_mean: Tensor, running_var: Tensor,
                        eps: float = 1e-5) -> Tensor:
    """Inference-mode batch normalization of (C, L) with per-channel stats."""
    x = input.data
    c = x.shape[0]
    for name, t in (("gamma", gamma), ("beta", beta),
                    ("running_mean", running_mean), ("running_var", running_var)):
        if t.shape != (c,):
            raise ShapeError(f"batchnorm1d {name} shape {t.shape} != ({c},)")
    if np.any(running_var.data < 0):
        raise ValueError("batchnorm1d running_var must be nonnegative")
    return Tensor(_batchnorm1d(x, gamma.data, beta.data,
                               running_mean.data, running_var.data, eps))


def activation_forward(input: Tensor, kind: str, slope: float = 0.01) -> Tensor:
    """Elementwise relu or leaky_relu; shape preserved."""
    if kind == "relu":
        return Tensor(_relu(input.data))
    if kind == "leaky_relu":
        return Tensor(_leaky_relu(input.data, slope))
    raise ValueError(f"unknown activation kind {kind!r}")


def linear_forward(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map W @ x + b of a length-N vector with an (M, N) weight."""
    x, w, b = input.data, weight.data, bias.data
    if w.ndim != 2:
        raise ShapeError(f"linear weight must be 2-d, got {w.shape}")
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear input features {x.shape[-1]} != weight columns {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"linear bias shape {b.shape} != ({w.shape[0]},)")
    return Tensor(_linear(x, w, b))


def lstm_forward(input: Tensor, w_ih: Tensor, w_hh: Tensor,
                 b_ih: Tensor, b_hh: Tensor,
                 h0: Tensor | None = None, c0: Tensor | None = None) -> Tensor:
    """LSTM over a (T, D) sequence; returns the (T, H) hidden sequence."""
    x = input.data
    if x.ndim != 2:
        raise ShapeError(f"lstm input must be (T, D), got {x.shape}")
    d = x.shape[1]
    h = w_hh.shape[1]
    if w_ih.shape != (4 * h, d):
        raise ShapeError(f"lstm w_ih shape {w_ih.shape} != ({4 * h}, {d})")
    if w_hh.shape != (4 * h, h):
        raise ShapeError(f"lstm w_hh shape {w_hh.shape} != ({4 * h}, {h})")
    if b_ih.shape != (4 * h,) or b_hh.shape != (4 * h,):
        raise ShapeError(f"lstm bias shapes {b_ih.shape}, {b_hh.shape} != ({4 * h},)")
    for name, t in (("h0", h0), ("c0", c0)):
        if t is not None and t.shape != (h,):
            raise ShapeError(f"lstm {name} shape {t.shape} != ({h},)")
    return Tensor(_lstm(x, w_ih.data, w_hh.data, b_ih.data, b_hh.data,
                        None if h0 is None else h0.data,
                        None if c0 is None else c0.data))


def temporal_stats_pool(input: Tensor) -> Tensor:
    """Mean over the time axis of (C, L); requires at least one frame."""
    x = input.data
    if x.ndim != 2:
        raise ShapeError(f"pool input must be (C, L), got {x.shape}")
    if x.shape[1] == 0:
        raise ValueError("temporal_stats_pool requires L >= 1")
    return Tensor(_mean_pool(x))
