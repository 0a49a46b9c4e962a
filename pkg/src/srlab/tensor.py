"""Valid cross-correlation and ReLU kernels with their gradients.

Tensors are plain numpy arrays laid out as ``(channels, height, width)``.
The conv kernels also accept a leading batch axis ``(batch, channels,
height, width)``. Filters are applied without flipping (cross-correlation),
so exported weights read in the same orientation as the images they act on.

Internally the work is done channels-last (``(batch, height, width,
channels)``) where every reduction is a plain matrix product; the network
code calls the ``*_nhwc`` variants directly to skip the layout round trip.
All reductions run in a fixed order, so results are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError

# Kernel strategy per layer shape:
#   f*f*C <= IM2COL_MAX  -> im2col + one GEMM
#   f*f*O <= IM2COL_MAX  -> project every pixel onto all taps with one GEMM,
#                           then add the shifted tap planes
#   otherwise            -> one GEMM per filter tap
IM2COL_MAX = 256


@dataclass
class FilterBank:
    """Weights ``(n_out, n_in, f, f)`` and biases ``(n_out,)`` of one layer."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.biases = np.asarray(self.biases)
        if self.weights.ndim != 4:
            raise ShapeError(f"filter weights must be 4-D, got shape {self.weights.shape}")
        n_out, _, fh, fw = self.weights.shape
        if fh != fw:
            raise ShapeError(f"filters must be square, got {fh}x{fw}")
        if fh % 2 == 0:
            raise ConfigError(f"filter size must be odd, got {fh}")
        if self.biases.shape != (n_out,):
            raise ShapeError(f"expected {n_out} biases, got shape {self.biases.shape}")

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def f(self) -> int:
        return self.weights.shape[2]

    @classmethod
    def zeros(cls, n_out: int, n_in: int, f: int, dtype=np.float64) -> "FilterBank":
        return cls(np.zeros((n_out, n_in, f, f), dtype=dtype), np.zeros(n_out, dtype=dtype))

    def copy(self) -> "FilterBank":
        return FilterBank(self.weights.copy(), self.biases.copy())

    def hwio(self) -> np.ndarray:
        """Weights as ``(f, f, n_in, n_out)`` for the channels-last kernels."""
        return np.ascontiguousarray(self.weights.transpose(2, 3, 1, 0))


def output_shape(input_shape, bank: FilterBank) -> tuple[int, ...]:
    """Shape of ``conv2d_valid(x, bank)`` for a channels-first input shape."""
    *lead, c, h, w = input_shape
    if c != bank.n_in:
        raise ConfigError(f"input has {c} channels, filter bank expects {bank.n_in}")
    f = bank.f
    if h < f or w < f:
        raise ShapeError(f"input {h}x{w} is smaller than the {f}x{f} filter")
    return (*lead, bank.n_out, h - f + 1, w - f + 1)


def _im2col(x: np.ndarray, f: int) -> np.ndarray:
    """``(B*Ho*Wo, f*f*C)`` patch matrix of a channels-last batch, tap-major columns."""
    b, h, w, c = x.shape
    win = sliding_window_view(x, (f, f), axis=(1, 2))  # (B, Ho, Wo, C, f, f)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, f * f * c)


def conv2d_valid_nhwc(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid correlation of ``x`` ``(B,H,W,C)`` with ``w`` ``(f,f,C,O)``."""
    bsz, h, wd, c = x.shape
    f, _, _, o = w.shape
    ho, wo = h - f + 1, wd - f + 1
    if f == 1:
        out = x.reshape(-1, c) @ w[0, 0]
    elif f * f * c <= IM2COL_MAX:
        out = _im2col(x, f) @ w.reshape(-1, o)
    elif f * f * o <= IM2COL_MAX:
        proj = x.reshape(-1, c) @ w.transpose(2, 0, 1, 3).reshape(c, f * f * o)
        proj = proj.reshape(bsz, h, wd, f, f, o)
        out = np.zeros((bsz, ho, wo, o), dtype=proj.dtype)
        for r in range(f):
            for s in range(f):
                out += proj[:, r : r + ho, s : s + wo, r, s, :]
        out = out.reshape(-1, o)
    else:
        out = np.zeros((bsz * ho * wo, o), dtype=np.result_type(x, w))
        for r in range(f):
            for s in range(f):
                out += x[:, r : r + ho, s : s + wo, :].reshape(-1, c) @ w[r, s]
    out += b
    return out.reshape(bsz, ho, wo, o)


def conv2d_backward_nhwc(
    x: np.ndarray, w: np.ndarray, g: np.ndarray, need_input_grad: bool = True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients w.r.t. input ``(B,H,W,C)``, weights ``(f,f,C,O)`` and biases ``(O,)``."""
    bsz, h, wd, c = x.shape
    f, _, _, o = w.shape
    ho, wo = g.shape[1:3]
    g2 = g.reshape(-1, o)
    grad_b = g2.sum(axis=0)
    if f == 1:
        grad_w = (x.reshape(-1, c).T @ g2)[None, None]
    elif f * f * c <= IM2COL_MAX:
        grad_w = (_im2col(x, f).T @ g2).reshape(f, f, c, o)
    elif f * f * o <= IM2COL_MAX:
        shifted = np.zeros((bsz, h, wd, f, f, o), dtype=g.dtype)
        for r in range(f):
            for s in range(f):
                shifted[:, r : r + ho, s : s + wo, r, s, :] = g
        grad_w = x.reshape(-1, c).T @ shifted.reshape(-1, f * f * o)
        grad_w = grad_w.reshape(c, f, f, o).transpose(1, 2, 0, 3)
    else:
        grad_w = np.empty((f, f, c, o), dtype=np.result_type(x, g))
        for r in range(f):
            for s in range(f):
                grad_w[r, s] = x[:, r : r + ho, s : s + wo, :].reshape(-1, c).T @ g2

    grad_x = None
    if need_input_grad:
        if f == 1:
            grad_x = (g2 @ w[0, 0].T).reshape(bsz, h, wd, c)
        else:
            # full correlation: pad the gradient, flip taps, swap in/out channels
            p = f - 1
            gp = np.pad(g, ((0, 0), (p, p), (p, p), (0, 0)))
            wt = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
            grad_x = conv2d_valid_nhwc(gp, wt, np.zeros(c, dtype=wt.dtype))
    return grad_x, grad_w, grad_b


def _as_nhwc(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 3:
        return x.transpose(1, 2, 0)[None], True
    if x.ndim == 4:
        return x.transpose(0, 2, 3, 1), False
    raise ShapeError(f"expected (C,H,W) or (B,C,H,W) array, got shape {x.shape}")


def _from_nhwc(x: np.ndarray, squeeze: bool) -> np.ndarray:
    x = np.ascontiguousarray(x.transpose(0, 3, 1, 2))
    return x[0] if squeeze else x


def conv2d_valid(x: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Cross-correlate ``x`` with every filter of ``bank``, no padding.

    ``out[o, y, x] = b[o] + sum_{i,r,c} W[o, i, r, c] * x[i, y + r, x + c]``;
    each spatial dimension shrinks by ``f - 1``.
    """
    x = np.asarray(x)
    output_shape(x.shape, bank)
    xn, squeeze = _as_nhwc(x)
    out = conv2d_valid_nhwc(np.ascontiguousarray(xn), bank.hwio(), bank.biases)
    return _from_nhwc(out, squeeze)


def conv2d_backward(
    x: np.ndarray, bank: FilterBank, grad_out: np.ndarray, need_input_grad: bool = True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d_valid` w.r.t. its input, weights and biases.

    Weight and bias gradients are summed over the batch axis when there is
    one. ``need_input_grad=False`` skips the input gradient.
    """
    x = np.asarray(x)
    grad_out = np.asarray(grad_out)
    expected = output_shape(x.shape, bank)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out has shape {grad_out.shape}, conv output is {expected}")
    xn, squeeze = _as_nhwc(x)
    gn, _ = _as_nhwc(grad_out)
    gx, gw, gb = conv2d_backward_nhwc(
        np.ascontiguousarray(xn), bank.hwio(), np.ascontiguousarray(gn), need_input_grad
    )
    grad_w = np.ascontiguousarray(gw.transpose(3, 2, 0, 1))
    return (_from_nhwc(gx, squeeze) if gx is not None else None), grad_w, gb


def relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0)


def relu_backward(pre_activation: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Pass ``grad_out`` where the pre-activation was strictly positive.

    The subgradient at exactly zero is taken as 0.
    """
    pre_activation = np.asarray(pre_activation)
    grad_out = np.asarray(grad_out)
    if pre_activation.shape != grad_out.shape:
        raise ShapeError(f"shape mismatch {pre_activation.shape} vs {grad_out.shape}")
    return grad_out * (pre_activation > 0)
