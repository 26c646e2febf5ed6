import numpy as np
import pytest

from urlknet import (
    BlockSpec,
    BnParams,
    ConfigError,
    ConvLayer,
    DownsampleBlock,
    FfnBlock,
    SeBlock,
    StateError,
    Tensor4,
    block_forward,
    conv2d,
    downsample_forward,
    ffn_forward,
    gelu,
    grn,
    merge_block,
    se_forward,
)
from urlknet.blocks import LARK, SMAK
from urlknet.reparam import default_reparam_cfg, random_branches
from urlknet.tensor import identity_bn
from urlknet.verify import relative_error
from oracles import se_naive


def make_se(rng, c):
    return SeBlock(
        reduce_weight=rng.standard_normal((c // 4, c)),
        reduce_bias=rng.standard_normal(c // 4),
        expand_weight=rng.standard_normal((c, c // 4)),
        expand_bias=rng.standard_normal(c),
    )


def make_ffn(rng, c, scale=0.2):
    return FfnBlock(
        pw1=ConvLayer(Tensor4(rng.standard_normal((4 * c, c, 1, 1)) * scale),
                      bias=rng.standard_normal(4 * c) * scale),
        grn_gamma=rng.standard_normal(4 * c) * scale,
        grn_beta=rng.standard_normal(4 * c) * scale,
        pw2=ConvLayer(Tensor4(rng.standard_normal((c, 4 * c, 1, 1)) * scale),
                      bias=rng.standard_normal(c) * scale),
    )


def random_bn(rng, c):
    return BnParams(rng.standard_normal(c), rng.standard_normal(c),
                    rng.standard_normal(c), rng.uniform(0.1, 2.0, c), eps=1e-5)


def make_lark_block(rng, c, K=13):
    cfg = default_reparam_cfg(c, kernel_size=K)
    return BlockSpec(
        kind=LARK, channels=c, se=make_se(rng, c), post_dw_bn=random_bn(rng, c),
        ffn=make_ffn(rng, c), reparam_cfg=cfg,
        branches=random_branches(cfg, rng), post_ffn_bn=random_bn(rng, c),
    )


def make_smak_block(rng, c):
    return BlockSpec(
        kind=SMAK, channels=c, se=make_se(rng, c), post_dw_bn=random_bn(rng, c),
        ffn=make_ffn(rng, c),
        dw_conv=ConvLayer(Tensor4(rng.standard_normal((c, 1, 3, 3))),
                          padding=(1, 1), groups=c),
        dw_bn=random_bn(rng, c), post_ffn_bn=random_bn(rng, c),
    )


class TestSeBlock:
    def test_zero_weights_halve_input(self, rng):
        c = 8
        se = SeBlock(np.zeros((2, 8)), np.zeros(2), np.zeros((8, 2)), np.zeros(8))
        x = Tensor4(rng.standard_normal((2, c, 3, 3)))
        np.testing.assert_allclose(se_forward(x, se).data, 0.5 * x.data, rtol=1e-15)

    def test_quarter_reduction_enforced(self):
        with pytest.raises(ConfigError):
            SeBlock(np.zeros((3, 8)), np.zeros(3), np.zeros((8, 3)), np.zeros(8))

    def test_hidden_width(self, rng):
        se = make_se(rng, 8)
        assert se.reduce_weight.shape == (2, 8)

    def test_matches_scalar_oracle(self, rng):
        c = 8
        se = make_se(rng, c)
        x = rng.standard_normal((2, c, 4, 4))
        want = se_naive(x, se.reduce_weight, se.reduce_bias, se.expand_weight, se.expand_bias)
        np.testing.assert_allclose(se_forward(Tensor4(x), se).data, want,
                                   rtol=1e-12, atol=1e-12)

    def test_gate_strictly_inside_unit_interval(self, rng):
        c = 8
        se = make_se(rng, c)
        x = Tensor4(np.abs(rng.standard_normal((3, c, 5, 5))) + 0.5)
        gate = se_forward(x, se).data / x.data
        assert np.all(gate > 0.0) and np.all(gate < 1.0)


class TestFfnBlock:
    def test_zero_projection_gives_zero(self, rng):
        c = 4
        ffn = make_ffn(rng, c)
        zeroed = FfnBlock(
            pw1=ffn.pw1, grn_gamma=ffn.grn_gamma, grn_beta=ffn.grn_beta,
            pw2=ConvLayer(Tensor4(np.zeros((c, 4 * c, 1, 1))), bias=np.zeros(c)),
        )
        x = Tensor4(rng.standard_normal((1, c, 3, 3)))
        np.testing.assert_array_equal(ffn_forward(x, zeroed).data, np.zeros((1, c, 3, 3)))

    def test_expansion_ratio(self, rng):
        ffn = make_ffn(rng, 4)
        assert ffn.pw1.out_channels == 16
        with pytest.raises(ConfigError):
            FfnBlock(
                pw1=ConvLayer(Tensor4(np.zeros((8, 4, 1, 1))), bias=np.zeros(8)),
                grn_gamma=np.zeros(8), grn_beta=np.zeros(8),
                pw2=ConvLayer(Tensor4(np.zeros((4, 8, 1, 1))), bias=np.zeros(4)),
            )

    def test_matches_composition_of_primitives(self, rng):
        c = 4
        ffn = make_ffn(rng, c)
        x = Tensor4(rng.standard_normal((2, c, 5, 5)))
        manual = conv2d(grn(gelu(conv2d(x, ffn.pw1)), ffn.grn_gamma, ffn.grn_beta), ffn.pw2)
        np.testing.assert_allclose(ffn_forward(x, ffn).data, manual.data, rtol=1e-12)


class TestBlockForward:
    def test_identity_preserving_zero_config(self, rng):
        # zero DW weights, zero post-DW BN affine, zero FFN projection and zero
        # post-FFN affine leave only the residual paths
        c = 4
        cfg = default_reparam_cfg(c)
        zero_affine = BnParams(np.zeros(c), np.zeros(c), np.zeros(c), np.ones(c))
        branches = tuple(
            type(b)(conv=ConvLayer(Tensor4(np.zeros_like(b.conv.weight.data)),
                                   stride=b.conv.stride, padding=b.conv.padding,
                                   dilation=b.conv.dilation, groups=b.conv.groups),
                    bn=identity_bn(c))
            for b in random_branches(cfg, rng)
        )
        block = BlockSpec(
            kind=LARK, channels=c, se=make_se(rng, c), post_dw_bn=zero_affine,
            ffn=make_ffn(rng, c), reparam_cfg=cfg, branches=branches,
            post_ffn_bn=zero_affine,
        )
        x = Tensor4(rng.standard_normal((2, c, 6, 6)))
        np.testing.assert_allclose(block_forward(x, block).data, x.data, rtol=1e-12)

    @pytest.mark.parametrize("maker", [make_lark_block, make_smak_block])
    def test_train_vs_merged_equivalence(self, rng, maker):
        c = 8
        block = maker(rng, c)
        merged = merge_block(block)
        x = Tensor4(rng.standard_normal((2, c, 19, 19)))
        err = relative_error(block_forward(x, merged).data, block_forward(x, block).data)
        assert err <= 1e-10

    def test_spatial_size_preserved(self, rng):
        block = make_lark_block(rng, 4, K=13)
        x = Tensor4(rng.standard_normal((1, 4, 19, 19)))
        assert block_forward(x, block).shape == (1, 4, 19, 19)

    def test_zero_branches_give_constant_map(self, rng):
        c = 4
        cfg = default_reparam_cfg(c)
        branches = tuple(
            type(b)(conv=ConvLayer(Tensor4(np.zeros_like(b.conv.weight.data)),
                                   stride=b.conv.stride, padding=b.conv.padding,
                                   dilation=b.conv.dilation, groups=b.conv.groups),
                    bn=b.bn)
            for b in random_branches(cfg, rng)
        )
        from urlknet import merge_dilated_reparam, reparam_forward
        x1 = Tensor4(rng.standard_normal((1, c, 7, 7)))
        x2 = Tensor4(rng.standard_normal((1, c, 7, 7)))
        y1 = reparam_forward(x1, cfg, branches).data
        y2 = reparam_forward(x2, cfg, branches).data
        np.testing.assert_allclose(y1, y2, rtol=1e-12)          # constant in the input
        merged = merge_dilated_reparam(cfg, branches)
        assert np.all(merged.weight.data == 0)
        np.testing.assert_allclose(conv2d(x1, merged).data, y1, rtol=1e-10, atol=1e-12)

    def test_double_merge_rejected(self, rng):
        block = make_smak_block(rng, 4)
        merged = merge_block(block)
        with pytest.raises(StateError):
            merge_block(merged)

    def test_merged_flag_requires_fused_conv(self, rng):
        with pytest.raises(StateError):
            BlockSpec(kind=SMAK, channels=4, se=make_se(rng, 4),
                      post_dw_bn=random_bn(rng, 4), ffn=make_ffn(rng, 4), merged=True)


class TestDownsample:
    def _stem(self, rng, cin, c):
        return DownsampleBlock(
            kind="stem",
            convs=(
                ConvLayer(Tensor4(rng.standard_normal((c // 2, cin, 3, 3)) * 0.1),
                          stride=(2, 2), padding=(1, 1)),
                ConvLayer(Tensor4(rng.standard_normal((c, c // 2, 3, 3)) * 0.1),
                          stride=(2, 2), padding=(1, 1)),
            ),
            bns=(identity_bn(c // 2), identity_bn(c)),
        )

    def test_stem_geometry_224(self, rng):
        stem = self._stem(rng, 3, 96)
        out = downsample_forward(Tensor4(rng.standard_normal((1, 3, 224, 224))), stem)
        assert out.shape == (1, 96, 56, 56)

    def test_transition_doubles_channels(self, rng):
        tr = DownsampleBlock(
            kind="transition",
            convs=(ConvLayer(Tensor4(rng.standard_normal((192, 96, 3, 3)) * 0.1),
                             stride=(2, 2), padding=(1, 1)),),
            bns=(identity_bn(192),),
        )
        out = downsample_forward(Tensor4(rng.standard_normal((1, 96, 56, 56))), tr)
        assert out.shape == (1, 192, 28, 28)

    def test_stem_on_audio_map(self, rng):
        stem = self._stem(rng, 1, 40)
        out = downsample_forward(Tensor4(rng.standard_normal((1, 1, 128, 64))), stem)
        assert out.shape == (1, 40, 32, 16)

    def test_wrong_conv_count(self):
        with pytest.raises(ConfigError):
            DownsampleBlock(kind="stem",
                            convs=(ConvLayer(Tensor4(np.zeros((4, 3, 3, 3)))),),
                            bns=(identity_bn(4),))
