"""Dense 4-D tensor type and the numeric primitives everything else builds on.

The reference numeric type is float64; float32 storage exists for the
benchmarking paths. All operations are pure functions: they never mutate
their inputs and identical inputs produce bit-identical outputs.

Convolution comes in three internal flavours picked automatically:

* depthwise            — kernel-tap accumulation, vectorized over channels,
                         accumulating taps in ascending (row, col) order
* pointwise (1x1, s=1) — a single matmul per batch
* general              — im2col + one BLAS matmul per channel group

All three satisfy the same contract: the value at each output site equals
the direct sliding-window sum over dilated taps, plus bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf, expit

from .errors import ConfigError, GeometryError, ShapeError

SUPPORTED_DTYPES = (np.float64, np.float32)

_SQRT1_2 = float(np.sqrt(0.5))


def _as_pair(value, name: str) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        if len(value) != 2:
            raise ConfigError(f"{name} must be an int or a pair, got {value!r}")
        return int(value[0]), int(value[1])
    return int(value), int(value)


class Tensor4:
    """Dense (batch, channel, row, col) array of float64 or float32.

    Wraps a C-contiguous numpy array. The dtype doubles as the element-width
    flag: float64 is the reference type, float32 the benchmarking type.
    """

    __slots__ = ("data",)

    def __init__(self, data) -> None:
        arr = np.asarray(data)
        if arr.dtype not in SUPPORTED_DTYPES:
            raise ShapeError(f"unsupported dtype {arr.dtype}; expected float64 or float32")
        if arr.ndim != 4:
            raise ShapeError(f"expected a 4-D (n, c, h, w) array, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError(f"all dimensions must be >= 1, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def w(self) -> int:
        return self.data.shape[3]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def astype(self, dtype) -> "Tensor4":
        return Tensor4(self.data.astype(dtype, copy=False))

    def copy(self) -> "Tensor4":
        return Tensor4(self.data.copy())

    def __add__(self, other: "Tensor4") -> "Tensor4":
        if not isinstance(other, Tensor4):
            return NotImplemented
        if self.shape != other.shape:
            raise ShapeError(f"cannot add tensors of shapes {self.shape} and {other.shape}")
        return Tensor4(self.data + other.data)

    def __repr__(self) -> str:
        return f"Tensor4(shape={self.shape}, dtype={self.dtype.name})"


@dataclass(frozen=True)
class ConvLayer:
    """Convolution weights plus geometry.

    weight has shape (c_out, c_in/groups, k_h, k_w); bias, when present, has
    length c_out. A layer is depthwise iff groups == c_in == c_out.
    """

    weight: Tensor4
    bias: np.ndarray | None = None
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    dilation: tuple[int, int] = (1, 1)
    groups: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stride", _as_pair(self.stride, "stride"))
        object.__setattr__(self, "padding", _as_pair(self.padding, "padding"))
        object.__setattr__(self, "dilation", _as_pair(self.dilation, "dilation"))
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")
        if min(self.stride) < 1 or min(self.dilation) < 1:
            raise ConfigError(f"stride {self.stride} and dilation {self.dilation} must be positive")
        if min(self.padding) < 0:
            raise ConfigError(f"padding must be non-negative, got {self.padding}")
        if self.out_channels % self.groups != 0:
            raise ShapeError(
                f"c_out={self.out_channels} not divisible by groups={self.groups}"
            )
        if self.bias is not None:
            b = np.asarray(self.bias)
            if b.shape != (self.out_channels,):
                raise ShapeError(
                    f"bias shape {b.shape} does not match c_out={self.out_channels}"
                )
            if b.dtype != self.weight.dtype:
                raise ShapeError(f"bias dtype {b.dtype} != weight dtype {self.weight.dtype}")
            object.__setattr__(self, "bias", np.ascontiguousarray(b))

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    def astype(self, dtype) -> "ConvLayer":
        return ConvLayer(
            weight=self.weight.astype(dtype),
            bias=None if self.bias is None else self.bias.astype(dtype),
            stride=self.stride,
            padding=self.padding,
            dilation=self.dilation,
            groups=self.groups,
        )


@dataclass(frozen=True)
class BnParams:
    """Inference-mode batch-norm statistics for one channel axis."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        vecs = {
            "gamma": self.gamma,
            "beta": self.beta,
            "running_mean": self.running_mean,
            "running_var": self.running_var,
        }
        lengths = set()
        for name, v in vecs.items():
            arr = np.ascontiguousarray(v)
            if arr.ndim != 1:
                raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
            lengths.add(arr.shape[0])
            object.__setattr__(self, name, arr)
        if len(lengths) != 1:
            raise ShapeError(f"batch-norm vectors disagree on channel count: {sorted(lengths)}")
        if np.any(self.running_var < 0):
            raise ShapeError("running_var entries must be >= 0")
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def astype(self, dtype) -> "BnParams":
        return BnParams(
            gamma=self.gamma.astype(dtype),
            beta=self.beta.astype(dtype),
            running_mean=self.running_mean.astype(dtype),
            running_var=self.running_var.astype(dtype),
            eps=self.eps,
        )


def identity_bn(channels: int, eps: float = 1e-5, dtype=np.float64) -> BnParams:
    """BN statistics that leave the input (almost) unchanged: gamma=1, beta=0, mean=0, var=1."""
    return BnParams(
        gamma=np.ones(channels, dtype=dtype),
        beta=np.zeros(channels, dtype=dtype),
        running_mean=np.zeros(channels, dtype=dtype),
        running_var=np.ones(channels, dtype=dtype),
        eps=eps,
    )


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    """Closed-form output extent: floor((size + 2p - d*(k-1) - 1) / s) + 1."""
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def _pad_input(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    out[:, :, ph:ph + h, pw:pw + w] = x
    return out


def _conv2d_depthwise(x, weight, sh, sw, ph, pw, dh, dw, oh, ow):
    kh, kw = weight.shape[2], weight.shape[3]
    xp = _pad_input(x, ph, pw)
    eff_h = (kh - 1) * dh + 1
    eff_w = (kw - 1) * dw + 1
    # one (kh, kw) tap window per output site, as a strided view: stride picks
    # the window origin, dilation subsamples taps inside the window
    win = np.lib.stride_tricks.sliding_window_view(xp, (eff_h, eff_w), axis=(2, 3))
    win = win[:, :, ::sh, ::sw, ::dh, ::dw]
    return np.einsum("nchwij,cij->nchw", win, weight[:, 0], optimize=False)


def _im2col(x, kh, kw, sh, sw, ph, pw, dh, dw, oh, ow):
    n, c, _, _ = x.shape
    xp = _pad_input(x, ph, pw)
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        rows = slice(i * dh, i * dh + (oh - 1) * sh + 1, sh)
        for j in range(kw):
            cs = slice(j * dw, j * dw + (ow - 1) * sw + 1, sw)
            cols[:, :, i, j] = xp[:, :, rows, cs]
    return cols.reshape(n, c * kh * kw, oh * ow)


def conv2d(input: Tensor4, layer: ConvLayer) -> Tensor4:
    """2-D convolution with stride, zero-padding, dilation and channel groups.

    Output spatial size follows conv_output_size per axis; a non-positive
    result raises GeometryError. The value at each site is the sliding-window
    sum over dilated taps plus bias.
    """
    x = input.data
    w = layer.weight.data
    if w.dtype != x.dtype:
        raise ShapeError(f"input dtype {x.dtype} != weight dtype {w.dtype}")
    g = layer.groups
    c_out, cin_g, kh, kw = w.shape
    if input.c != cin_g * g:
        raise ShapeError(
            f"input has {input.c} channels but layer expects {cin_g * g} "
            f"(c_in/g={cin_g}, groups={g})"
        )
    sh, sw = layer.stride
    ph, pw = layer.padding
    dh, dw = layer.dilation
    oh = conv_output_size(input.h, kh, sh, ph, dh)
    ow = conv_output_size(input.w, kw, sw, pw, dw)
    if oh < 1 or ow < 1:
        raise GeometryError(
            f"kernel {kh}x{kw} (dilation {dh}x{dw}, padding {ph}x{pw}) does not fit "
            f"input {input.h}x{input.w}: output would be {oh}x{ow}"
        )

    if layer.is_depthwise:
        out = _conv2d_depthwise(x, w, sh, sw, ph, pw, dh, dw, oh, ow)
    elif kh == 1 and kw == 1 and (sh, sw) == (1, 1) and (ph, pw) == (0, 0) and g == 1:
        out = np.matmul(w.reshape(c_out, cin_g), x.reshape(input.n, input.c, oh * ow))
        out = out.reshape(input.n, c_out, oh, ow)
    else:
        cols = _im2col(x, kh, kw, sh, sw, ph, pw, dh, dw, oh, ow)
        if g == 1:
            out = np.matmul(w.reshape(c_out, cin_g * kh * kw), cols)
        else:
            cog = c_out // g
            ck = cin_g * kh * kw
            out = np.empty((input.n, c_out, oh * ow), dtype=x.dtype)
            for gi in range(g):
                out[:, gi * cog:(gi + 1) * cog] = np.matmul(
                    w[gi * cog:(gi + 1) * cog].reshape(cog, ck),
                    cols[:, gi * ck:(gi + 1) * ck],
                )
        out = out.reshape(input.n, c_out, oh, ow)

    if layer.bias is not None:
        out = out + layer.bias[None, :, None, None]
    return Tensor4(out)


def conv_transpose2d_kernel(weight: Tensor4, stride: int) -> Tensor4:
    """Expand a (m, 1, k, k) kernel slice by zero insertion.

    Equivalent to a transpose convolution of the kernel with a 1x1 identity
    kernel at the given stride: entry (i, j) lands at (i*stride, j*stride) of a
    ((k-1)*stride+1)-sized kernel and every other entry is exactly zero.
    """
    r = int(stride)
    if r < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    m, one, kh, kw = weight.shape
    if one != 1 or kh != kw:
        raise ShapeError(f"expected a (m, 1, k, k) kernel slice, got shape {weight.shape}")
    k = kh
    size = (k - 1) * r + 1
    out = np.zeros((m, 1, size, size), dtype=weight.dtype)
    out[:, :, ::r, ::r] = weight.data
    return Tensor4(out)


# ---------------------------------------------------------------------------
# normalization, activations, pooling, linear
# ---------------------------------------------------------------------------

def batchnorm_infer(input: Tensor4, bn: BnParams) -> Tensor4:
    """Per-channel affine map (x - mean) / sqrt(var + eps) * gamma + beta."""
    if input.c != bn.channels:
        raise ShapeError(f"input has {input.c} channels, BN has {bn.channels}")
    dtype = input.dtype
    mean = bn.running_mean.astype(dtype, copy=False)[None, :, None, None]
    std = np.sqrt(bn.running_var.astype(dtype, copy=False) + dtype.type(bn.eps))[None, :, None, None]
    gamma = bn.gamma.astype(dtype, copy=False)[None, :, None, None]
    beta = bn.beta.astype(dtype, copy=False)[None, :, None, None]
    return Tensor4((input.data - mean) / std * gamma + beta)


def relu(x: Tensor4) -> Tensor4:
    return Tensor4(np.maximum(x.data, 0))


def gelu(x: Tensor4) -> Tensor4:
    """Exact Gaussian-CDF form: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    d = x.data
    return Tensor4(0.5 * d * (1.0 + erf(d * d.dtype.type(_SQRT1_2))))


def sigmoid(x: Tensor4) -> Tensor4:
    return Tensor4(expit(x.data))


def global_avg_pool(x: Tensor4) -> Tensor4:
    """Mean over the spatial axes, keeping a 1x1 spatial footprint."""
    return Tensor4(x.data.mean(axis=(2, 3), keepdims=True))


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """y = x @ weight.T (+ bias) for a single vector or a (batch, in) matrix.

    Batch rows are multiplied sample by sample so that a batched call is
    bit-identical to concatenated single-sample calls.
    """
    x = np.asarray(x)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear input width {x.shape[-1]} != weight in-dim {weight.shape[1]}")
    if x.ndim == 1:
        y = weight @ x
    else:
        y = np.matmul(x[:, None, :], weight.T)[:, 0, :]
    if bias is not None:
        y = y + bias
    return y


def grn(input: Tensor4, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-6) -> Tensor4:
    """Global response normalization.

    Per sample: G_c = spatial L2 norm of channel c, N_c = G_c / (mean_c(G) + eps),
    output = gamma * (x * N) + beta + x.
    """
    gamma = np.asarray(gamma)
    beta = np.asarray(beta)
    if gamma.shape != (input.c,) or beta.shape != (input.c,):
        raise ShapeError(
            f"grn gamma/beta must have shape ({input.c},), got {gamma.shape} and {beta.shape}"
        )
    x = input.data
    gx = np.sqrt(np.sum(x * x, axis=(2, 3)))              # (n, c)
    nx = gx / (gx.mean(axis=1, keepdims=True) + x.dtype.type(eps))
    scaled = x * nx[:, :, None, None]
    return Tensor4(gamma[None, :, None, None] * scaled + beta[None, :, None, None] + x)
