"""Merge-equivalence verification: block-level, model-level, and ad-hoc scenarios.

The error metric is the L1-relative discrepancy sum(|a - b|) / sum(|b|)
against the multi-branch (train-structure) forward as reference. In float64 a
correct merge lands around 1e-13; float32 runs sit near 1e-7.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import ModelInstance, forward, merge_for_deploy
from .reparam import (
    DilatedReparamCfg,
    dilate_kernel,
    merge_dilated_reparam,
    random_branches,
    reparam_forward,
)
from .blocks import block_forward
from .tensor import ConvLayer, Tensor4, conv2d


def relative_error(actual: np.ndarray, reference: np.ndarray) -> float:
    """sum(|actual - reference|) / sum(|reference|)."""
    denom = np.abs(reference).sum()
    if denom == 0:
        return float(np.abs(actual).sum())
    return float(np.abs(actual - reference).sum() / denom)


@dataclass(frozen=True)
class Check:
    name: str
    max_rel_err: float

    def passes(self, tolerance: float) -> bool:
        return self.max_rel_err <= tolerance


def verify_reparam_merge(
    cfg: DilatedReparamCfg,
    branches,
    rng: np.random.Generator,
    trials: int,
    dtype=np.float64,
    spatial: int = 19,
) -> float:
    """Max relative error between merged-layer and branch-sum forwards."""
    merged = merge_dilated_reparam(cfg, branches)
    worst = 0.0
    for _ in range(trials):
        x = Tensor4(rng.standard_normal((2, cfg.channels, spatial, spatial)).astype(dtype))
        reference = reparam_forward(x, cfg, branches)
        worst = max(worst, relative_error(conv2d(x, merged).data, reference.data))
    return worst


def verify_model(
    model: ModelInstance,
    rng: np.random.Generator,
    trials: int,
    block_spatial: int = 19,
    model_resolution: int = 64,
) -> list[Check]:
    """Block-by-block and whole-model merge equivalence checks.

    Every block of the train-structure model is compared against its merged
    twin on random inputs, then the full forwards are compared at the given
    resolution. Returns one Check per block plus a final "model" entry.
    """
    merged = merge_for_deploy(model)
    checks = []
    for s, (stage, mstage) in enumerate(zip(model.stages, merged.stages), start=1):
        for i, (b, mb) in enumerate(zip(stage, mstage)):
            worst = 0.0
            for _ in range(trials):
                x = Tensor4(rng.standard_normal(
                    (2, b.channels, block_spatial, block_spatial)).astype(model.dtype))
                worst = max(worst, relative_error(
                    block_forward(x, mb).data, block_forward(x, b).data))
            checks.append(Check(f"stage{s}.block{i}", worst))
    worst = 0.0
    for _ in range(trials):
        x = Tensor4(rng.standard_normal(
            (1, model.config.in_channels, model_resolution, model_resolution)).astype(model.dtype))
        worst = max(worst, relative_error(forward(merged, x), forward(model, x)))
    checks.append(Check("model", worst))
    return checks


def adhoc_scenario(
    in_channels: int,
    out_channels: int,
    groups: int,
    large_kernel: int,
    small_k: int,
    small_r: int,
    rng: np.random.Generator,
    trials: int,
    dtype=np.float64,
    spatial: int = 19,
) -> float:
    """Two-layer scenario: a KxK conv plus one dilated small conv, merged.

    Mirrors the classic hand check — both layers bias-free, no BN, random
    weights, random (2, c_in, 19, 19) inputs — and returns the max relative
    error of the single merged kernel against the two-layer sum.
    """
    if in_channels % groups or out_channels % groups:
        raise ConfigError(
            f"channels in={in_channels}/out={out_channels} must be divisible by groups={groups}"
        )
    if (small_k - 1) * small_r + 1 > large_kernel:
        raise ConfigError(
            f"(k-1)*r+1 = {(small_k - 1) * small_r + 1} exceeds K={large_kernel}"
        )
    cin_g = in_channels // groups
    worst = 0.0
    for _ in range(trials):
        wl = rng.standard_normal((out_channels, cin_g, large_kernel, large_kernel)).astype(dtype)
        ws = rng.standard_normal((out_channels, cin_g, small_k, small_k)).astype(dtype)
        large = ConvLayer(Tensor4(wl), padding=(large_kernel // 2,) * 2, groups=groups)
        eq = (small_k - 1) * small_r + 1
        dilated = ConvLayer(Tensor4(ws), padding=(eq // 2,) * 2,
                            dilation=(small_r, small_r), groups=groups)
        x = Tensor4(rng.standard_normal((2, in_channels, spatial, spatial)).astype(dtype))
        reference = conv2d(x, large) + conv2d(x, dilated)
        pad = large_kernel // 2 - eq // 2
        expanded = dilate_kernel(dilated.weight, small_r).data
        merged_w = wl.copy()
        merged_w[:, :, pad:large_kernel - pad, pad:large_kernel - pad] += expanded
        merged = ConvLayer(Tensor4(merged_w), padding=(large_kernel // 2,) * 2, groups=groups)
        worst = max(worst, relative_error(conv2d(x, merged).data, reference.data))
    return worst


def random_sweep_config(rng: np.random.Generator) -> DilatedReparamCfg:
    """One random block config for the merge-equivalence sweep.

    K in {9, 11, 13, 15}; 1-6 branches; depthwise, grouped, or dense.
    """
    K = int(rng.choice([9, 11, 13, 15]))
    channels = int(rng.choice([4, 8]))
    groups = int(rng.choice([channels, 2, 1]))  # depthwise / grouped / dense
    n_extra = int(rng.integers(0, 6))           # plus the principal branch
    branches = [(K, 1)]
    for _ in range(n_extra):
        k = int(rng.choice([3, 5, 7]))
        max_r = (K - 1) // (k - 1)
        r = int(rng.integers(1, max_r + 1))
        branches.append((k, r))
    return DilatedReparamCfg(kernel_size=K, branches=tuple(branches),
                             channels=channels, groups=groups)


def merge_equivalence_sweep(
    n_configs: int,
    rng: np.random.Generator,
    trials_per_config: int = 1,
    dtype=np.float64,
) -> float:
    """Max relative error over a randomized sweep of block configurations."""
    worst = 0.0
    for _ in range(n_configs):
        cfg = random_sweep_config(rng)
        branches = random_branches(cfg, rng, dtype=dtype)
        worst = max(worst, verify_reparam_merge(cfg, branches, rng, trials_per_config, dtype))
    return worst
