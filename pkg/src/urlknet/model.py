"""Model zoo: named architecture instances, builder, forward, merge, param audit.

The backbone has four stages at widths C, 2C, 4C, 8C joined by stride-2
downsampling blocks (the stem halves twice). Stage 1 uses SmaK blocks, stages
2 and 4 use LarK blocks only, and stage 3 mixes them according to the split:
"9+18" lays out LarK,SmaK,SmaK repeated, "9+9" alternates LarK,SmaK.

A freshly built model is in train-structure mode; merge_for_deploy returns its
deploy twin (never mutating the original): every LarK depthwise stage becomes
one fused KxK conv, every SmaK conv absorbs its BN, and each post-FFN BN folds
into the FFN's second 1x1 conv. Parameter counts always describe the deploy
form and include the classifier head; BN running statistics are buffers, not
parameters, and are excluded.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .blocks import (
    LARK,
    SMAK,
    BlockSpec,
    DownsampleBlock,
    FfnBlock,
    SeBlock,
    block_forward,
    downsample_forward,
    merge_block,
)
from .errors import ConfigError, FormatError, GeometryError, ShapeError, StateError
from .reparam import DilatedBranch, DilatedReparamCfg, equivalent_kernel_size
from .tensor import BnParams, ConvLayer, Tensor4, batchnorm_infer, global_avg_pool, linear

TRAIN_MODE = "train-structure"
MERGED_MODE = "merged"

DEFAULT_LARK_BRANCHES = ((5, 1), (7, 2), (3, 3), (3, 4), (3, 5))
BN_EPS = 1e-5
INIT_STD = 0.02


@dataclass(frozen=True)
class ArchConfig:
    """Resolved architecture hyper-parameters for one model."""

    depths: tuple[int, int, int, int]
    width: int
    stage3_lark: int
    stage3_smak: int
    lark_kernel: int = 13
    lark_branches: tuple[tuple[int, int], ...] = DEFAULT_LARK_BRANCHES
    in_channels: int = 3
    num_classes: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(
            self, "lark_branches", tuple((int(k), int(r)) for k, r in self.lark_branches)
        )
        if len(self.depths) != 4 or min(self.depths) < 1:
            raise ConfigError(f"depths must be four positive ints, got {self.depths}")
        if self.width % 4 != 0 or self.width < 8:
            raise ConfigError(f"width must be a multiple of 4 (SE bottleneck), got {self.width}")
        if self.stage3_lark + self.stage3_smak != self.depths[2]:
            raise ConfigError(
                f"stage-3 split {self.stage3_lark}+{self.stage3_smak} != N3={self.depths[2]}"
            )
        if self.stage3_smak not in (0, self.stage3_lark, 2 * self.stage3_lark):
            raise ConfigError(
                f"invalid stage-3 layout split {self.stage3_lark}+{self.stage3_smak}: "
                "SmaK count must be 0, equal to, or twice the LarK count"
            )
        K = self.lark_kernel
        if K % 2 == 0 or K < 3:
            raise ConfigError(f"LarK kernel size must be odd and >= 3, got {K}")
        for k, r in self.lark_branches:
            if equivalent_kernel_size(k, r) > K:
                raise ConfigError(f"branch (k={k}, r={r}) exceeds LarK kernel {K}")
        if self.in_channels < 1 or self.num_classes < 1:
            raise ConfigError("in_channels and num_classes must be positive")

    @property
    def stage_widths(self) -> tuple[int, int, int, int]:
        c = self.width
        return c, 2 * c, 4 * c, 8 * c

    def stage_kinds(self, stage: int) -> tuple[str, ...]:
        """Block kind layout for stage 1..4."""
        n = self.depths[stage - 1]
        if stage == 1:
            return (SMAK,) * n
        if stage in (2, 4):
            return (LARK,) * n
        if self.stage3_smak == 0:
            return (LARK,) * n
        if self.stage3_smak == self.stage3_lark:
            return (LARK, SMAK) * self.stage3_lark
        return (LARK, SMAK, SMAK) * self.stage3_lark

    def reparam_cfg(self, channels: int) -> DilatedReparamCfg:
        return DilatedReparamCfg(
            kernel_size=self.lark_kernel,
            branches=((self.lark_kernel, 1), *self.lark_branches),
            channels=channels,
            groups=channels,
        )


# (N1, N2, (lark, smak), N4, C); reference param counts in millions
_INSTANCE_ROWS = {
    "A": (2, 2, (6, 0), 2, 40),
    "F": (2, 2, (6, 0), 2, 48),
    "P": (2, 2, (6, 0), 2, 64),
    "N": (2, 2, (8, 0), 2, 80),
    "T": (3, 3, (9, 9), 3, 80),
    "S": (3, 3, (9, 18), 3, 96),
    "B": (3, 3, (9, 18), 3, 128),
    "L": (3, 3, (9, 18), 3, 192),
    "XL": (3, 3, (9, 18), 3, 256),
}

REFERENCE_PARAMS_M = {
    "A": 4.4, "F": 6.2, "P": 10.7, "N": 18.3, "T": 31.0,
    "S": 55.6, "B": 97.9, "L": 218.3, "XL": 386.4,
}

INSTANCE_NAMES = tuple(_INSTANCE_ROWS)


def arch_config(name: str, in_channels: int = 3, num_classes: int = 1000) -> ArchConfig:
    """ArchConfig for one of the nine named instances (A F P N T S B L XL)."""
    if name not in _INSTANCE_ROWS:
        raise ConfigError(f"unknown model instance {name!r}; choose from {INSTANCE_NAMES}")
    n1, n2, (lark, smak), n4, width = _INSTANCE_ROWS[name]
    return ArchConfig(
        depths=(n1, n2, lark + smak, n4),
        width=width,
        stage3_lark=lark,
        stage3_smak=smak,
        in_channels=in_channels,
        num_classes=num_classes,
    )


@dataclass(frozen=True)
class ModelInstance:
    name: str
    config: ArchConfig
    stem: DownsampleBlock
    stages: tuple[tuple[BlockSpec, ...], ...]
    transitions: tuple[DownsampleBlock, ...]
    head_bn: BnParams
    head_weight: np.ndarray
    head_bias: np.ndarray
    merged: bool = False

    @property
    def mode(self) -> str:
        return MERGED_MODE if self.merged else TRAIN_MODE

    @property
    def dtype(self) -> np.dtype:
        return self.head_weight.dtype


# ---------------------------------------------------------------------------
# building
# ---------------------------------------------------------------------------

def _trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    # +-2 sigma truncated normal; rejection resampling keeps the draw exact
    x = rng.standard_normal(shape)
    flat = x.reshape(-1)
    bad = np.flatnonzero(np.abs(flat) > 2.0)
    while bad.size:
        draws = rng.standard_normal(bad.size)
        flat[bad] = draws
        bad = bad[np.abs(draws) > 2.0]
    x *= std
    return x


def _identity_bn(channels: int) -> BnParams:
    return BnParams(
        gamma=np.ones(channels),
        beta=np.zeros(channels),
        running_mean=np.zeros(channels),
        running_var=np.ones(channels),
        eps=BN_EPS,
    )


def _conv_for_bn(rng, c_out, c_in_g, k, stride, padding, dilation=1, groups=1) -> ConvLayer:
    return ConvLayer(
        weight=Tensor4(_trunc_normal(rng, (c_out, c_in_g, k, k))),
        bias=None,
        stride=stride,
        padding=padding,
        dilation=dilation,
        groups=groups,
    )


def _build_block(rng, kind: str, channels: int, cfg: ArchConfig) -> BlockSpec:
    c = channels
    if kind == LARK:
        rcfg = cfg.reparam_cfg(c)
        branches = tuple(
            DilatedBranch(
                conv=_conv_for_bn(rng, c, 1, k, (1, 1), ((k - 1) * r // 2,) * 2, (r, r), groups=c),
                bn=_identity_bn(c),
            )
            for k, r in rcfg.branches
        )
        dw_conv, dw_bn = None, None
    else:
        rcfg, branches = None, None
        dw_conv = _conv_for_bn(rng, c, 1, 3, (1, 1), (1, 1), groups=c)
        dw_bn = _identity_bn(c)
    se = SeBlock(
        reduce_weight=_trunc_normal(rng, (c // 4, c)),
        reduce_bias=np.zeros(c // 4),
        expand_weight=_trunc_normal(rng, (c, c // 4)),
        expand_bias=np.zeros(c),
    )
    ffn = FfnBlock(
        pw1=ConvLayer(Tensor4(_trunc_normal(rng, (4 * c, c, 1, 1))), bias=np.zeros(4 * c)),
        grn_gamma=_trunc_normal(rng, (4 * c,)),
        grn_beta=_trunc_normal(rng, (4 * c,)),
        pw2=ConvLayer(Tensor4(_trunc_normal(rng, (c, 4 * c, 1, 1))), bias=np.zeros(c)),
    )
    return BlockSpec(
        kind=kind,
        channels=c,
        se=se,
        post_dw_bn=_identity_bn(c),
        ffn=ffn,
        reparam_cfg=rcfg,
        branches=branches,
        dw_conv=dw_conv,
        dw_bn=dw_bn,
        post_ffn_bn=_identity_bn(c),
    )


def build_model(cfg: ArchConfig, seed: int = 0, name: str = "custom") -> ModelInstance:
    """Deterministically initialize a train-structure model from a seed.

    Conv/linear/GRN parameters draw from a +-2 sigma truncated normal with
    std 0.02 in a fixed structural order, so equal seeds give bit-identical
    parameters. BN starts at identity statistics.
    """
    rng = np.random.default_rng(seed)
    c = cfg.width
    widths = cfg.stage_widths
    stem = DownsampleBlock(
        kind="stem",
        convs=(
            _conv_for_bn(rng, c // 2, cfg.in_channels, 3, (2, 2), (1, 1)),
            _conv_for_bn(rng, c, c // 2, 3, (2, 2), (1, 1)),
        ),
        bns=(_identity_bn(c // 2), _identity_bn(c)),
    )
    stages = []
    transitions = []
    for s in range(1, 5):
        width = widths[s - 1]
        if s > 1:
            transitions.append(DownsampleBlock(
                kind="transition",
                convs=(_conv_for_bn(rng, width, widths[s - 2], 3, (2, 2), (1, 1)),),
                bns=(_identity_bn(width),),
            ))
        stages.append(tuple(
            _build_block(rng, kind, width, cfg) for kind in cfg.stage_kinds(s)
        ))
    return ModelInstance(
        name=name,
        config=cfg,
        stem=stem,
        stages=tuple(stages),
        transitions=tuple(transitions),
        head_bn=_identity_bn(widths[3]),
        head_weight=_trunc_normal(rng, (cfg.num_classes, widths[3])),
        head_bias=np.zeros(cfg.num_classes),
        merged=False,
    )


def build_named(name: str, seed: int = 0, in_channels: int = 3, num_classes: int = 1000) -> ModelInstance:
    return build_model(arch_config(name, in_channels, num_classes), seed=seed, name=name)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForwardTrace:
    """Full forward result: per-stage feature maps plus the classifier output."""

    stage_outputs: tuple[Tensor4, Tensor4, Tensor4, Tensor4]
    logits: np.ndarray


def _down(x: Tensor4, block: DownsampleBlock, label: str) -> Tensor4:
    try:
        return downsample_forward(x, block)
    except GeometryError as e:
        raise GeometryError(f"{label}: {e}") from None


def forward_trace(model: ModelInstance, x: Tensor4) -> ForwardTrace:
    if x.c != model.config.in_channels:
        raise ShapeError(
            f"input has {x.c} channels, model expects {model.config.in_channels}"
        )
    if x.dtype != model.dtype:
        raise ShapeError(f"input dtype {x.dtype} != model dtype {model.dtype}")
    cur = _down(x, model.stem, "stem")
    outs = []
    for s in range(1, 5):
        if s > 1:
            cur = _down(cur, model.transitions[s - 2], f"transition{s}")
        for b in model.stages[s - 1]:
            cur = block_forward(cur, b)
        outs.append(cur)
    pooled = batchnorm_infer(global_avg_pool(cur), model.head_bn)
    logits = linear(pooled.data[:, :, 0, 0], model.head_weight, model.head_bias)
    return ForwardTrace(stage_outputs=tuple(outs), logits=logits)


def forward(model: ModelInstance, x: Tensor4) -> np.ndarray:
    """Class logits, shape (batch, num_classes)."""
    return forward_trace(model, x).logits


# ---------------------------------------------------------------------------
# merge + dtype conversion
# ---------------------------------------------------------------------------

def merge_for_deploy(model: ModelInstance) -> ModelInstance:
    """Deploy twin with every block merged; the input model is left untouched.

    Unchanged parameter arrays (stem, transitions, SE, pw1, GRN, head) are
    shared between the two instances, not copied.
    """
    if model.merged:
        raise StateError("model is already merged")
    return replace(
        model,
        stages=tuple(tuple(merge_block(b) for b in stage) for stage in model.stages),
        merged=True,
    )


def model_astype(model: ModelInstance, dtype) -> ModelInstance:
    """Convert every parameter array to the given element width (f32/f64)."""
    dtype = np.dtype(dtype)
    arrays = {
        name: arr if name.endswith(".eps") else arr.astype(dtype.type, copy=False)
        for name, arr in iter_state(model)
    }
    return build_from_state(model.name, model.mode, arrays, config=model.config)


# ---------------------------------------------------------------------------
# parameter accounting
# ---------------------------------------------------------------------------

def _block_params(kind: str, c: int, K: int) -> int:
    dw = c * K * K + c if kind == LARK else c * 9 + c
    se = (c // 4) * c + c // 4 + c * (c // 4) + c
    post_dw_bn = 2 * c
    ffn = (4 * c * c + 4 * c) + 8 * c + (4 * c * c + c)
    return dw + se + post_dw_bn + ffn


def param_breakdown(cfg: ArchConfig) -> dict:
    """Analytic per-module scalar-parameter counts of the deploy-merged model."""
    c = cfg.width
    widths = cfg.stage_widths
    out = {"stem": (c // 2) * cfg.in_channels * 9 + 2 * (c // 2) + c * (c // 2) * 9 + 2 * c}
    transitions = 0
    for s in range(2, 5):
        transitions += widths[s - 1] * widths[s - 2] * 9 + 2 * widths[s - 1]
    for s in range(1, 5):
        out[f"stage{s}"] = sum(
            _block_params(kind, widths[s - 1], cfg.lark_kernel)
            for kind in cfg.stage_kinds(s)
        )
    out["transitions"] = transitions
    out["head"] = 2 * widths[3] + cfg.num_classes * widths[3] + cfg.num_classes
    out["total"] = sum(out.values())
    return out


def param_count(model: ModelInstance) -> int:
    """Scalar parameters of the deploy-merged form of this model (head included)."""
    return param_breakdown(model.config)["total"]


def learnable_scalars(model: ModelInstance) -> int:
    """Parameters actually carried by this instance in its current mode.

    Counts conv/linear weights and biases plus BN and GRN affine pairs; BN
    running statistics are excluded. For a merged model this equals
    param_count(model).
    """
    total = 0

    def bn(p: BnParams) -> int:
        return p.gamma.size + p.beta.size

    def conv(l: ConvLayer) -> int:
        return l.weight.data.size + (0 if l.bias is None else l.bias.size)

    for block in (model.stem, *model.transitions):
        total += sum(conv(l) for l in block.convs) + sum(bn(p) for p in block.bns)
    for stage in model.stages:
        for b in stage:
            if b.branches is not None:
                total += sum(conv(br.conv) + bn(br.bn) for br in b.branches)
            if b.dw_conv is not None:
                total += conv(b.dw_conv)
            if b.dw_bn is not None:
                total += bn(b.dw_bn)
            total += sum(a.size for a in (
                b.se.reduce_weight, b.se.reduce_bias, b.se.expand_weight, b.se.expand_bias))
            total += bn(b.post_dw_bn)
            total += conv(b.ffn.pw1) + conv(b.ffn.pw2)
            total += b.ffn.grn_gamma.size + b.ffn.grn_beta.size
            if b.post_ffn_bn is not None:
                total += bn(b.post_ffn_bn)
    total += bn(model.head_bn) + model.head_weight.size + model.head_bias.size
    return total


# ---------------------------------------------------------------------------
# state-dict walking (weight container interface)
# ---------------------------------------------------------------------------

def _bn_state(prefix: str, p: BnParams):
    yield f"{prefix}.gamma", p.gamma
    yield f"{prefix}.beta", p.beta
    yield f"{prefix}.running_mean", p.running_mean
    yield f"{prefix}.running_var", p.running_var
    yield f"{prefix}.eps", np.array([p.eps], dtype=np.float64)


def iter_state(model: ModelInstance):
    """Yield (dotted name, array) for every tensor, in the canonical order."""
    yield "stem.conv1.weight", model.stem.convs[0].weight.data
    yield from _bn_state("stem.bn1", model.stem.bns[0])
    yield "stem.conv2.weight", model.stem.convs[1].weight.data
    yield from _bn_state("stem.bn2", model.stem.bns[1])
    for s in range(1, 5):
        if s > 1:
            t = model.transitions[s - 2]
            yield f"transition{s}.conv.weight", t.convs[0].weight.data
            yield from _bn_state(f"transition{s}.bn", t.bns[0])
        for i, b in enumerate(model.stages[s - 1]):
            p = f"stage{s}.block{i}"
            if b.merged:
                yield f"{p}.dw.weight", b.dw_conv.weight.data
                yield f"{p}.dw.bias", b.dw_conv.bias
            elif b.kind == LARK:
                for j, br in enumerate(b.branches):
                    yield f"{p}.dw.branch{j}.weight", br.conv.weight.data
                    yield from _bn_state(f"{p}.dw.branch{j}.bn", br.bn)
            else:
                yield f"{p}.dw.weight", b.dw_conv.weight.data
                yield from _bn_state(f"{p}.dw.bn", b.dw_bn)
            yield f"{p}.se.reduce.weight", b.se.reduce_weight
            yield f"{p}.se.reduce.bias", b.se.reduce_bias
            yield f"{p}.se.expand.weight", b.se.expand_weight
            yield f"{p}.se.expand.bias", b.se.expand_bias
            yield from _bn_state(f"{p}.bn1", b.post_dw_bn)
            yield f"{p}.ffn.pw1.weight", b.ffn.pw1.weight.data
            yield f"{p}.ffn.pw1.bias", b.ffn.pw1.bias
            yield f"{p}.ffn.grn.gamma", b.ffn.grn_gamma
            yield f"{p}.ffn.grn.beta", b.ffn.grn_beta
            yield f"{p}.ffn.pw2.weight", b.ffn.pw2.weight.data
            yield f"{p}.ffn.pw2.bias", b.ffn.pw2.bias
            if b.post_ffn_bn is not None:
                yield from _bn_state(f"{p}.bn2", b.post_ffn_bn)
    yield from _bn_state("head.bn", model.head_bn)
    yield "head.fc.weight", model.head_weight
    yield "head.fc.bias", model.head_bias


class _StateReader:
    def __init__(self, arrays: dict):
        self.arrays = dict(arrays)

    def take(self, name: str, shape: tuple[int, ...] | None = None) -> np.ndarray:
        if name not in self.arrays:
            raise FormatError(f"weight container is missing tensor {name!r}")
        arr = self.arrays.pop(name)
        if shape is not None and tuple(arr.shape) != tuple(shape):
            raise FormatError(
                f"tensor {name!r} has shape {tuple(arr.shape)}, expected {tuple(shape)}"
            )
        return arr

    def bn(self, prefix: str, channels: int) -> BnParams:
        return BnParams(
            gamma=self.take(f"{prefix}.gamma", (channels,)),
            beta=self.take(f"{prefix}.beta", (channels,)),
            running_mean=self.take(f"{prefix}.running_mean", (channels,)),
            running_var=self.take(f"{prefix}.running_var", (channels,)),
            eps=float(self.take(f"{prefix}.eps", (1,))[0]),
        )


def build_from_state(
    name: str,
    mode: str,
    arrays: dict,
    config: ArchConfig | None = None,
) -> ModelInstance:
    """Reconstruct a ModelInstance from named tensors (the container's contents).

    The architecture comes from the instance name; input channels and class
    count are inferred from the stem and head tensor shapes. Missing tensors,
    extra tensors, or shape mismatches raise FormatError.
    """
    if mode not in (TRAIN_MODE, MERGED_MODE):
        raise FormatError(f"unknown mode {mode!r}")
    merged = mode == MERGED_MODE
    rd = _StateReader(arrays)
    if config is None:
        if name not in _INSTANCE_ROWS:
            raise FormatError(f"container names unknown model instance {name!r}")
        if "stem.conv1.weight" not in rd.arrays or "head.fc.weight" not in rd.arrays:
            raise FormatError("container is missing stem.conv1.weight or head.fc.weight")
        in_channels = rd.arrays["stem.conv1.weight"].shape[1]
        num_classes = rd.arrays["head.fc.weight"].shape[0]
        config = arch_config(name, in_channels=in_channels, num_classes=num_classes)
    c = config.width
    widths = config.stage_widths
    K = config.lark_kernel

    def conv(wname: str, shape, stride=(1, 1), padding=(0, 0), dilation=(1, 1), groups=1, bias_name=None):
        bias = rd.take(bias_name, (shape[0],)) if bias_name else None
        return ConvLayer(Tensor4(rd.take(wname, shape)), bias=bias, stride=stride,
                         padding=padding, dilation=dilation, groups=groups)

    stem = DownsampleBlock(
        kind="stem",
        convs=(
            conv("stem.conv1.weight", (c // 2, config.in_channels, 3, 3), (2, 2), (1, 1)),
            conv("stem.conv2.weight", (c, c // 2, 3, 3), (2, 2), (1, 1)),
        ),
        bns=(rd.bn("stem.bn1", c // 2), rd.bn("stem.bn2", c)),
    )
    stages, transitions = [], []
    for s in range(1, 5):
        width = widths[s - 1]
        if s > 1:
            transitions.append(DownsampleBlock(
                kind="transition",
                convs=(conv(f"transition{s}.conv.weight", (width, widths[s - 2], 3, 3), (2, 2), (1, 1)),),
                bns=(rd.bn(f"transition{s}.bn", width),),
            ))
        blocks = []
        for i, kind in enumerate(config.stage_kinds(s)):
            p = f"stage{s}.block{i}"
            rcfg = branches = dw_conv = dw_bn = post_ffn_bn = None
            if merged:
                ksize = K if kind == LARK else 3
                dw_conv = conv(f"{p}.dw.weight", (width, 1, ksize, ksize), (1, 1),
                               (ksize // 2, ksize // 2), groups=width, bias_name=f"{p}.dw.bias")
            elif kind == LARK:
                rcfg = config.reparam_cfg(width)
                branches = tuple(
                    DilatedBranch(
                        conv=conv(f"{p}.dw.branch{j}.weight", (width, 1, k, k), (1, 1),
                                  ((k - 1) * r // 2,) * 2, (r, r), groups=width),
                        bn=rd.bn(f"{p}.dw.branch{j}.bn", width),
                    )
                    for j, (k, r) in enumerate(rcfg.branches)
                )
            else:
                dw_conv = conv(f"{p}.dw.weight", (width, 1, 3, 3), (1, 1), (1, 1), groups=width)
                dw_bn = rd.bn(f"{p}.dw.bn", width)
            se = SeBlock(
                reduce_weight=rd.take(f"{p}.se.reduce.weight", (width // 4, width)),
                reduce_bias=rd.take(f"{p}.se.reduce.bias", (width // 4,)),
                expand_weight=rd.take(f"{p}.se.expand.weight", (width, width // 4)),
                expand_bias=rd.take(f"{p}.se.expand.bias", (width,)),
            )
            post_dw_bn = rd.bn(f"{p}.bn1", width)
            ffn = FfnBlock(
                pw1=conv(f"{p}.ffn.pw1.weight", (4 * width, width, 1, 1), bias_name=f"{p}.ffn.pw1.bias"),
                grn_gamma=rd.take(f"{p}.ffn.grn.gamma", (4 * width,)),
                grn_beta=rd.take(f"{p}.ffn.grn.beta", (4 * width,)),
                pw2=conv(f"{p}.ffn.pw2.weight", (width, 4 * width, 1, 1), bias_name=f"{p}.ffn.pw2.bias"),
            )
            if not merged:
                post_ffn_bn = rd.bn(f"{p}.bn2", width)
            blocks.append(BlockSpec(
                kind=kind, channels=width, se=se, post_dw_bn=post_dw_bn, ffn=ffn,
                reparam_cfg=rcfg, branches=branches, dw_conv=dw_conv, dw_bn=dw_bn,
                post_ffn_bn=post_ffn_bn, merged=merged,
            ))
        stages.append(tuple(blocks))
    head_bn = rd.bn("head.bn", widths[3])
    head_weight = rd.take("head.fc.weight", (config.num_classes, widths[3]))
    head_bias = rd.take("head.fc.bias", (config.num_classes,))
    if rd.arrays:
        extra = ", ".join(sorted(rd.arrays)[:5])
        raise FormatError(f"container holds {len(rd.arrays)} unexpected tensor(s): {extra} ...")
    return ModelInstance(
        name=name, config=config, stem=stem, stages=tuple(stages),
        transitions=tuple(transitions), head_bn=head_bn,
        head_weight=head_weight, head_bias=head_bias, merged=merged,
    )
