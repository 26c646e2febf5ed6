"""CPU inference engine and kernel algebra for large-kernel conv models.

The package is organized around six concerns:

* tensor    — Tensor4/ConvLayer/BnParams and the numeric primitives
* reparam   — dilated-kernel expansion, BN folding, multi-branch merging
* blocks    — SE, FFN+GRN, LarK/SmaK blocks, downsampling
* model     — named architecture instances, forward, deploy merge, param audit
* modality  — time-series / audio / point-cloud / video embedding maps
* cli       — the `urlk` command-line harness
"""

from .errors import (
    ConfigError,
    FormatError,
    GeometryError,
    ShapeError,
    StateError,
    UrlkError,
)
from .tensor import (
    BnParams,
    ConvLayer,
    Tensor4,
    batchnorm_infer,
    conv2d,
    conv_output_size,
    conv_transpose2d_kernel,
    gelu,
    global_avg_pool,
    grn,
    linear,
    relu,
    sigmoid,
)
from .reparam import (
    DilatedBranch,
    DilatedReparamCfg,
    default_reparam_cfg,
    dilate_kernel,
    equivalent_kernel_size,
    fuse_bn,
    merge_dilated_reparam,
    reparam_forward,
)
from .blocks import (
    BlockSpec,
    DownsampleBlock,
    FfnBlock,
    SeBlock,
    block_forward,
    downsample_forward,
    ffn_forward,
    merge_block,
    se_forward,
)
from .model import (
    ArchConfig,
    INSTANCE_NAMES,
    ModelInstance,
    REFERENCE_PARAMS_M,
    arch_config,
    build_model,
    build_named,
    forward,
    forward_trace,
    merge_for_deploy,
    model_astype,
    param_breakdown,
    param_count,
)
from .modality import (
    AudioBatch,
    PointCloudBatch,
    TimeSeriesBatch,
    VideoBatch,
    embed_audio,
    embed_pointcloud,
    embed_time_series,
    embed_video,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
