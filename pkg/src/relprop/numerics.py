"""Forward layer primitives on float64 numpy arrays.

Summation order is fixed and explicit (no BLAS), so every result is
bit-reproducible regardless of thread count:

* dense: ``sum_j x_j * w_jk`` accumulated left to right over ``j``, then ``+ b_k``;
* conv: accumulated over input channel, then kernel row, then kernel column,
  then ``+ bias``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def as_tensor(x, *, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Return ``x`` as a C-contiguous float64 array, optionally reshaped."""
    arr = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != arr.size:
            raise ShapeError(f"cannot view {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    return arr


def frozen(x: np.ndarray) -> np.ndarray:
    """Read-only view of ``x``; used for values recorded in traces."""
    view = x.view()
    view.flags.writeable = False
    return view


def _pair(v, name: str) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


@dataclass(frozen=True)
class ConvSpec:
    """Kernel ``(out_channels, in_channels, kh, kw)``, bias ``(out_channels,)``."""

    kernel: np.ndarray
    bias: np.ndarray
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        kernel = as_tensor(self.kernel)
        bias = as_tensor(self.bias)
        if kernel.ndim != 4:
            raise ShapeError(f"conv kernel must be rank 4, got shape {kernel.shape}")
        if bias.shape != (kernel.shape[0],):
            raise ShapeError(
                f"conv bias shape {bias.shape} does not match {kernel.shape[0]} output channels"
            )
        stride = _pair(self.stride, "stride")
        padding = _pair(self.padding, "padding")
        if min(stride) < 1:
            raise ShapeError(f"stride must be positive, got {stride}")
        if min(padding) < 0:
            raise ShapeError(f"padding must be non-negative, got {padding}")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "padding", padding)

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def window(self) -> tuple[int, int]:
        return self.kernel.shape[2], self.kernel.shape[3]

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, int, int]:
        if len(in_shape) != 3:
            raise ShapeError(f"conv input must be c x h x w, got shape {tuple(in_shape)}")
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(
                f"conv expects {self.in_channels} input channels, got shape {tuple(in_shape)}"
            )
        kh, kw = self.window
        (sh, sw), (ph, pw) = self.stride, self.padding
        oh = (h + 2 * ph - kh) // sh + 1
        ow = (w + 2 * pw - kw) // sw + 1
        if h + 2 * ph < kh or w + 2 * pw < kw or oh < 1 or ow < 1:
            raise ShapeError(
                f"kernel {kh}x{kw} (padding {ph},{pw}) does not fit input {h}x{w}"
            )
        return self.out_channels, oh, ow


def dense_forward(x, weights, bias) -> np.ndarray:
    """``out_k = sum_j x_j * w_jk + b_k`` with ``weights`` shaped ``(n, m)``."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.ndim != 1 or weights.ndim != 2 or bias.ndim != 1:
        raise ShapeError(
            f"dense expects x[n], W[n x m], b[m]; got x{x.shape}, W{weights.shape}, b{bias.shape}"
        )
    n, m = weights.shape
    if x.shape[0] != n or bias.shape[0] != m:
        raise ShapeError(
            f"dense shape mismatch: x{x.shape} with W{weights.shape} and b{bias.shape}"
        )
    return linear_sum(x, weights) + bias


def linear_sum(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_j x_j * w_jk`` accumulated in increasing ``j``; no shape checks."""
    acc = np.zeros(weights.shape[1], dtype=np.float64)
    for j in range(weights.shape[0]):
        acc += x[j] * weights[j]
    return acc


def linear_sum_transpose(s: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``c_j = sum_k w_jk * s_k`` accumulated in increasing ``k``."""
    acc = np.zeros(weights.shape[0], dtype=np.float64)
    for k in range(weights.shape[1]):
        acc += weights[:, k] * s[k]
    return acc


def _pad(x: np.ndarray, padding: tuple[int, int]) -> np.ndarray:
    ph, pw = padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw)))


def conv_linear(x: np.ndarray, kernel: np.ndarray, stride, padding, out_hw) -> np.ndarray:
    """Bias-free cross-correlation with a fixed (channel, row, column) order."""
    o = kernel.shape[0]
    c_in, kh, kw = kernel.shape[1:]
    sh, sw = stride
    oh, ow = out_hw
    xp = _pad(x, padding)
    acc = np.zeros((o, oh, ow), dtype=np.float64)
    for c in range(c_in):
        for i in range(kh):
            rows = slice(i, i + sh * (oh - 1) + 1, sh)
            for j in range(kw):
                patch = xp[c, rows, j : j + sw * (ow - 1) + 1 : sw]
                acc += kernel[:, c, i, j][:, None, None] * patch
    return acc


def conv_linear_transpose(s: np.ndarray, kernel: np.ndarray, stride, padding, in_shape) -> np.ndarray:
    """Adjoint of :func:`conv_linear`: scatters ``s`` back onto the input grid."""
    o, c_in, kh, kw = kernel.shape
    sh, sw = stride
    ph, pw = padding
    _, h, w = in_shape
    oh, ow = s.shape[1:]
    acc = np.zeros((c_in, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    for i in range(kh):
        rows = slice(i, i + sh * (oh - 1) + 1, sh)
        for j in range(kw):
            cols = slice(j, j + sw * (ow - 1) + 1, sw)
            for k in range(o):
                acc[:, rows, cols] += kernel[k, :, i, j][:, None, None] * s[k]
    return acc[:, ph : ph + h, pw : pw + w]


def conv_forward(x, spec: ConvSpec) -> np.ndarray:
    x = as_tensor(x)
    _, oh, ow = spec.output_shape(x.shape)
    out = conv_linear(x, spec.kernel, spec.stride, spec.padding, (oh, ow))
    return out + spec.bias[:, None, None]


def pool_output_shape(in_shape, window, stride) -> tuple[int, int, int]:
    if len(in_shape) != 3:
        raise ShapeError(f"pooling input must be c x h x w, got shape {tuple(in_shape)}")
    c, h, w = in_shape
    kh, kw = _pair(window, "window")
    sh, sw = _pair(stride, "stride")
    if kh < 1 or kw < 1 or sh < 1 or sw < 1:
        raise ShapeError(f"pool window {kh}x{kw} and stride {sh}x{sw} must be positive")
    if kh > h or kw > w:
        raise ShapeError(f"pool window {kh}x{kw} larger than input {h}x{w}")
    return c, (h - kh) // sh + 1, (w - kw) // sw + 1


def pool_forward(x, kind: str, window, stride) -> tuple[np.ndarray, np.ndarray | None]:
    """Max or average pooling over ``c x h x w``.

    Returns ``(out, argmax)``. For ``kind="max"``, ``argmax[c, p, q]`` is the
    window-local flat index ``i * kw + j`` of the winner; ties go to the
    smallest index. ``argmax`` is ``None`` for average pooling.
    """
    x = as_tensor(x)
    kh, kw = _pair(window, "window")
    sh, sw = _pair(stride, "stride")
    c, oh, ow = pool_output_shape(x.shape, (kh, kw), (sh, sw))
    # windows[c, p, q, i, j]
    windows = np.empty((c, oh, ow, kh, kw), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            windows[..., i, j] = x[:, i : i + sh * (oh - 1) + 1 : sh, j : j + sw * (ow - 1) + 1 : sw]
    flat = windows.reshape(c, oh, ow, kh * kw)
    if kind == "max":
        argmax = np.argmax(flat, axis=-1)  # first occurrence wins
        out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
        return out, argmax
    if kind == "avg":
        acc = np.zeros((c, oh, ow), dtype=np.float64)
        for t in range(kh * kw):
            acc += flat[..., t]
        return acc / (kh * kw), None
    raise ValueError(f"unknown pooling kind {kind!r}")


def argmax_to_input_index(argmax: np.ndarray, in_shape, window, stride) -> np.ndarray:
    """Convert window-local argmax indices to flat indices into the pool input."""
    c, h, w = in_shape
    kh, kw = _pair(window, "window")
    sh, sw = _pair(stride, "stride")
    _, oh, ow = argmax.shape
    ch = np.arange(c)[:, None, None]
    p = np.arange(oh)[None, :, None]
    q = np.arange(ow)[None, None, :]
    rows = p * sh + argmax // kw
    cols = q * sw + argmax % kw
    return (ch * h + rows) * w + cols


def avg_pool_kernel(channels: int, window) -> np.ndarray:
    """Kernel of the convolution equivalent to per-channel average pooling."""
    kh, kw = _pair(window, "window")
    kernel = np.zeros((channels, channels, kh, kw), dtype=np.float64)
    for c in range(channels):
        kernel[c, c] = 1.0 / (kh * kw)
    return kernel


def relu_forward(x) -> np.ndarray:
    x = as_tensor(x)
    return np.where(x > 0, x, 0.0)


def conv_as_dense(spec: ConvSpec, in_shape) -> tuple[np.ndarray, np.ndarray]:
    """Materialize a convolution as an explicit ``(n_in, n_out)`` weight matrix.

    Built by probing index positions rather than by running the convolution,
    so it serves as an independent check on :func:`conv_forward`.
    """
    c, h, w = in_shape
    o, oh, ow = spec.output_shape(in_shape)
    kh, kw = spec.window
    (sh, sw), (ph, pw) = spec.stride, spec.padding
    weights = np.zeros((c * h * w, o * oh * ow), dtype=np.float64)
    for k in range(o):
        for p in range(oh):
            for q in range(ow):
                col = (k * oh + p) * ow + q
                for ci in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            r, s = p * sh + i - ph, q * sw + j - pw
                            if 0 <= r < h and 0 <= s < w:
                                weights[(ci * h + r) * w + s, col] = spec.kernel[k, ci, i, j]
    bias = np.repeat(spec.bias, oh * ow)
    return weights, bias
