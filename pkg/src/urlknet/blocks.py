"""Composite blocks: SE gating, FFN with GRN, LarK/SmaK blocks, downsampling.

A block runs in one of two modes. In train-structure mode the depthwise stage
is a multi-branch dilated block (LarK) or a 3x3 depthwise conv followed by its
own BN (SmaK). merge_block() produces the deploy twin: the LarK branches
collapse into one KxK conv, the SmaK conv absorbs its BN, and the post-FFN BN
folds into the FFN's second 1x1 conv. Both modes compute

    y   = x + BN(SE(DW(x)))
    out = y + BN_ffn(FFN(y))        (BN_ffn already folded when merged)

and agree to ~1e-10 relative error in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ShapeError, StateError
from .reparam import (
    DilatedBranch,
    DilatedReparamCfg,
    fuse_bn,
    merge_dilated_reparam,
    reparam_forward,
)
from .tensor import (
    BnParams,
    ConvLayer,
    Tensor4,
    batchnorm_infer,
    conv2d,
    gelu,
    grn,
    linear,
)

LARK = "lark"
SMAK = "smak"


@dataclass(frozen=True)
class SeBlock:
    """Channel gate: pool -> C/4 bottleneck -> sigmoid, reduction ratio fixed at 4."""

    reduce_weight: np.ndarray   # (C/4, C)
    reduce_bias: np.ndarray     # (C/4,)
    expand_weight: np.ndarray   # (C, C/4)
    expand_bias: np.ndarray     # (C,)

    def __post_init__(self):
        hidden, c = self.reduce_weight.shape
        if c != 4 * hidden:
            raise ConfigError(
                f"SE reduction ratio must be exactly 4, got {c} -> {hidden}"
            )
        if self.expand_weight.shape != (c, hidden):
            raise ShapeError(
                f"SE expand weight shape {self.expand_weight.shape} != ({c}, {hidden})"
            )
        if self.reduce_bias.shape != (hidden,) or self.expand_bias.shape != (c,):
            raise ShapeError("SE bias shapes do not match their weights")

    @property
    def channels(self) -> int:
        return self.reduce_weight.shape[1]

    def astype(self, dtype) -> "SeBlock":
        return SeBlock(*(np.asarray(a).astype(dtype) for a in (
            self.reduce_weight, self.reduce_bias, self.expand_weight, self.expand_bias)))


def se_forward(x: Tensor4, se: SeBlock) -> Tensor4:
    """Multiply x by its per-sample channel gate sigmoid(expand(relu(reduce(gap(x)))))."""
    if x.c != se.channels:
        raise ShapeError(f"input has {x.c} channels, SE expects {se.channels}")
    pooled = x.data.mean(axis=(2, 3))                                  # (n, C)
    hidden = np.maximum(linear(pooled, se.reduce_weight, se.reduce_bias), 0)
    gate = expit(linear(hidden, se.expand_weight, se.expand_bias))
    return Tensor4(x.data * gate[:, :, None, None])


@dataclass(frozen=True)
class FfnBlock:
    """1x1 expand -> GELU -> GRN -> 1x1 project, expansion ratio fixed at 4."""

    pw1: ConvLayer
    grn_gamma: np.ndarray
    grn_beta: np.ndarray
    pw2: ConvLayer

    def __post_init__(self):
        c = self.pw1.in_channels
        e = self.pw1.out_channels
        if e != 4 * c:
            raise ConfigError(f"FFN expansion ratio must be 4, got {c} -> {e}")
        if self.pw2.in_channels != e or self.pw2.out_channels != c:
            raise ShapeError(
                f"FFN pw2 maps {self.pw2.in_channels} -> {self.pw2.out_channels}, expected {e} -> {c}"
            )
        if self.grn_gamma.shape != (e,) or self.grn_beta.shape != (e,):
            raise ShapeError(f"GRN params must have shape ({e},)")
        for name, layer in (("pw1", self.pw1), ("pw2", self.pw2)):
            if layer.kernel_size != (1, 1):
                raise ConfigError(f"FFN {name} must be a 1x1 conv")

    @property
    def channels(self) -> int:
        return self.pw1.in_channels

    def astype(self, dtype) -> "FfnBlock":
        return FfnBlock(
            pw1=self.pw1.astype(dtype),
            grn_gamma=self.grn_gamma.astype(dtype),
            grn_beta=self.grn_beta.astype(dtype),
            pw2=self.pw2.astype(dtype),
        )


def ffn_forward(x: Tensor4, ffn: FfnBlock) -> Tensor4:
    if x.c != ffn.channels:
        raise ShapeError(f"input has {x.c} channels, FFN expects {ffn.channels}")
    h = gelu(conv2d(x, ffn.pw1))
    h = grn(h, ffn.grn_gamma, ffn.grn_beta)
    return conv2d(h, ffn.pw2)


@dataclass(frozen=True)
class BlockSpec:
    """One LarK or SmaK block with all parameters and a mode flag.

    Train structure:  LarK carries (reparam_cfg, branches); SmaK carries
    (dw_conv, dw_bn). Merged: both carry just dw_conv (with bias) and
    post_ffn_bn is None, already folded into ffn.pw2.
    """

    kind: str
    channels: int
    se: SeBlock
    post_dw_bn: BnParams
    ffn: FfnBlock
    reparam_cfg: DilatedReparamCfg | None = None
    branches: tuple[DilatedBranch, ...] | None = None
    dw_conv: ConvLayer | None = None
    dw_bn: BnParams | None = None
    post_ffn_bn: BnParams | None = None
    merged: bool = False

    def __post_init__(self):
        if self.kind not in (LARK, SMAK):
            raise ConfigError(f"unknown block kind {self.kind!r}")
        if self.merged:
            if self.dw_conv is None or self.post_ffn_bn is not None or self.dw_bn is not None:
                raise StateError("merged block must carry a fused dw_conv and no loose BNs")
        elif self.kind == LARK:
            if self.reparam_cfg is None or self.branches is None:
                raise StateError("train-structure LarK block needs reparam_cfg and branches")
            if self.post_ffn_bn is None:
                raise StateError("train-structure block needs its post-FFN BN")
        else:
            if self.dw_conv is None or self.dw_bn is None or self.post_ffn_bn is None:
                raise StateError("train-structure SmaK block needs dw_conv, dw_bn and post-FFN BN")


def _dw_forward(x: Tensor4, b: BlockSpec) -> Tensor4:
    if b.merged:
        if b.dw_conv is None:
            raise StateError("block flagged merged but has no fused conv")
        return conv2d(x, b.dw_conv)
    if b.kind == LARK:
        return reparam_forward(x, b.reparam_cfg, b.branches)
    return batchnorm_infer(conv2d(x, b.dw_conv), b.dw_bn)


def block_forward(x: Tensor4, b: BlockSpec) -> Tensor4:
    """y = x + BN(SE(DW(x))); out = y + BN(FFN(y)). Shape preserved."""
    if x.c != b.channels:
        raise ShapeError(f"input has {x.c} channels, block expects {b.channels}")
    y = x + batchnorm_infer(se_forward(_dw_forward(x, b), b.se), b.post_dw_bn)
    f = ffn_forward(y, b.ffn)
    if b.post_ffn_bn is not None:
        f = batchnorm_infer(f, b.post_ffn_bn)
    return y + f


def merge_block(b: BlockSpec) -> BlockSpec:
    """Deploy twin of a train-structure block; the input block is untouched."""
    if b.merged:
        raise StateError("block is already merged")
    if b.kind == LARK:
        fused_dw = merge_dilated_reparam(b.reparam_cfg, b.branches)
    else:
        fused_dw = fuse_bn(b.dw_conv, b.dw_bn)
    ffn = replace(b.ffn, pw2=fuse_bn(b.ffn.pw2, b.post_ffn_bn))
    return BlockSpec(
        kind=b.kind,
        channels=b.channels,
        se=b.se,
        post_dw_bn=b.post_dw_bn,
        ffn=ffn,
        dw_conv=fused_dw,
        merged=True,
    )


@dataclass(frozen=True)
class DownsampleBlock:
    """Stem (two stride-2 3x3 convs) or transition (one), each conv followed by BN+GELU."""

    kind: str                       # "stem" | "transition"
    convs: tuple[ConvLayer, ...]
    bns: tuple[BnParams, ...]

    def __post_init__(self):
        expected = 2 if self.kind == "stem" else 1
        if self.kind not in ("stem", "transition"):
            raise ConfigError(f"unknown downsample kind {self.kind!r}")
        if len(self.convs) != expected or len(self.bns) != expected:
            raise ConfigError(f"{self.kind} block needs exactly {expected} conv+BN pair(s)")


def downsample_forward(x: Tensor4, block: DownsampleBlock) -> Tensor4:
    for conv, bn in zip(block.convs, block.bns):
        x = gelu(batchnorm_infer(conv2d(x, conv), bn))
    return x
