"""Building-block laws: shuffle permutation and involution, attention gating,
shape preservation, zero-branch identities, and gradient agreement with the
central finite-difference oracle."""

import copy

import numpy as np
import pytest
import torch

from conftest import autograd_gradient, fd_gradient, relative_error
from shuffle_histo.blocks import (
    BlockConfig,
    ChannelAttention,
    DualShuffleAttentionBlock,
    FeatureMapSpec,
    ResidualDualShuffleAttentionBlock,
    channel_shuffle,
)
from shuffle_histo.errors import ConfigError


def _all_group_pairs(max_channels: int = 32):
    for c in range(1, max_channels + 1):
        for g in range(1, c + 1):
            if c % g == 0:
                yield c, g


class TestFeatureMapSpec:
    def test_of_reads_shape(self):
        spec = FeatureMapSpec.of(torch.zeros(2, 8, 5, 7))
        assert (spec.batch, spec.channels, spec.height, spec.width) == (2, 8, 5, 7)

    def test_rejects_nonpositive_fields(self):
        with pytest.raises(ConfigError):
            FeatureMapSpec(1, 0, 4, 4)

    def test_rejects_non_4d(self):
        with pytest.raises(ValueError):
            FeatureMapSpec.of(torch.zeros(3, 4))

    def test_check_divisible(self):
        FeatureMapSpec(1, 8, 2, 2).check_divisible(4)
        with pytest.raises(ValueError):
            FeatureMapSpec(1, 8, 2, 2).check_divisible(3)


class TestBlockConfig:
    def test_defaults_valid(self):
        cfg = BlockConfig()
        assert cfg.channels == 256 and cfg.m == 1

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"channels": 6, "groups": 4},
            {"channels": 8, "attention_reduction": 3},
            {"m": 0},
            {"channels": 0},
        ],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            BlockConfig(**kwargs)


class TestChannelShuffle:
    def test_groups_1_is_identity_object(self):
        x = torch.randn(2, 6, 3, 3)
        assert channel_shuffle(x, 1) is x

    def test_frozen_order_c6_g2(self):
        # Channel planes tagged by index; expected order from the
        # reshape-to-(2,3), transpose, flatten oracle.
        x = torch.arange(6, dtype=torch.float32).view(1, 6, 1, 1)
        out = channel_shuffle(x, 2).flatten().tolist()
        assert out == [0.0, 3.0, 1.0, 4.0, 2.0, 5.0]

    @pytest.mark.parametrize("c,g", list(_all_group_pairs(16)))
    def test_index_formula(self, c, g):
        x = torch.arange(c, dtype=torch.float32).view(1, c, 1, 1)
        out = channel_shuffle(x, g).flatten().tolist()
        expected = [float((j % g) * (c // g) + j // g) for j in range(c)]
        assert out == expected

    def test_numpy_reshape_transpose_oracle(self):
        rng = np.random.default_rng(0)
        for c, g in ((8, 2), (12, 3), (32, 8)):
            arr = rng.standard_normal((2, c, 4, 5)).astype(np.float32)
            expected = (
                arr.reshape(2, g, c // g, 4, 5)
                .transpose(0, 2, 1, 3, 4)
                .reshape(2, c, 4, 5)
            )
            out = channel_shuffle(torch.from_numpy(arr), g).numpy()
            assert np.array_equal(out, expected)

    def test_permutation_preserves_plane_multiset(self):
        for c, g in _all_group_pairs(32):
            x = torch.randn(1, c, 3, 3)
            out = channel_shuffle(x, g)
            before = sorted(x[0].reshape(c, -1).sum(dim=1).tolist())
            after = sorted(out[0].reshape(c, -1).sum(dim=1).tolist())
            assert before == pytest.approx(after)

    def test_involution_with_complementary_groups(self):
        for c, g in _all_group_pairs(32):
            x = torch.randn(2, c, 2, 3)
            back = channel_shuffle(channel_shuffle(x, g), c // g)
            assert torch.equal(back, x)

    def test_rejects_non_divisible(self):
        with pytest.raises(ValueError):
            channel_shuffle(torch.zeros(1, 6, 2, 2), 4)


class TestChannelAttention:
    def test_zero_parameters_halve_input(self):
        att = ChannelAttention(8, reduction=4)
        with torch.no_grad():
            for p in att.parameters():
                p.zero_()
        x = torch.randn(3, 8, 4, 4)
        assert torch.allclose(att(x), 0.5 * x)

    def test_constant_map_squeeze(self):
        x = torch.full((2, 8, 5, 5), 3.25)
        squeezed = x.mean(dim=(2, 3))
        assert torch.allclose(squeezed, torch.full((2, 8), 3.25))

    def test_saturated_logit_passes_channel_through(self):
        att = ChannelAttention(8, reduction=4)
        with torch.no_grad():
            for p in att.parameters():
                p.zero_()
            att.fc_excite.bias[3] = 20.0
        x = torch.randn(2, 8, 4, 4)
        out = att(x)
        assert torch.allclose(out[:, 3], x[:, 3], atol=1e-8)
        assert torch.allclose(out[:, :3], 0.5 * x[:, :3])

    def test_magnitude_bound_elementwise(self):
        att = ChannelAttention(16, reduction=4)
        for i in range(100):
            torch.manual_seed(i)
            x = torch.randn(2, 16, 3, 3)
            out = att(x)
            assert torch.all(out.abs() <= x.abs() + 1e-12)

    def test_rejects_channel_mismatch(self):
        att = ChannelAttention(8, reduction=4)
        with pytest.raises(ValueError):
            att(torch.zeros(1, 16, 2, 2))

    def test_rejects_bad_reduction(self):
        with pytest.raises(ConfigError):
            ChannelAttention(8, reduction=3)


class TestDualShuffleAttentionBlock:
    def test_shape_contract_256(self):
        block = DualShuffleAttentionBlock(BlockConfig(channels=256)).eval()
        x = torch.randn(2, 256, 14, 14)
        assert block(x).shape == (2, 256, 14, 14)

    def test_zeroed_convolutions_give_zero_map(self):
        block = DualShuffleAttentionBlock(
            BlockConfig(channels=8, groups=2, attention_reduction=2)
        ).eval()
        with torch.no_grad():
            block.conv_in.weight.zero_()
            block.conv_dw.weight.zero_()
            block.conv_out.weight.zero_()
        x = torch.randn(2, 8, 5, 5)
        assert torch.equal(block(x), torch.zeros_like(x))

    def test_rejects_channel_mismatch(self):
        block = DualShuffleAttentionBlock(BlockConfig(channels=8, groups=2))
        with pytest.raises(ValueError):
            block(torch.zeros(1, 4, 5, 5))

    def test_gradient_single_precision(self):
        # Autograd runs at single precision; the difference quotient is
        # evaluated on a double copy so the oracle itself is not the noise.
        torch.manual_seed(0)
        block = DualShuffleAttentionBlock(
            BlockConfig(channels=8, groups=2, attention_reduction=2)
        ).eval()
        x = torch.randn(1, 8, 5, 5)
        analytic = autograd_gradient(block, x)
        oracle = copy.deepcopy(block).double()
        numeric = fd_gradient(lambda t: oracle(t).sum(), x.double(), step=1e-3)
        assert relative_error(analytic.double(), numeric) < 1e-3

    def test_gradient_double_precision(self):
        torch.manual_seed(0)
        block = (
            DualShuffleAttentionBlock(
                BlockConfig(channels=8, groups=2, attention_reduction=2)
            )
            .double()
            .eval()
        )
        x = torch.randn(1, 8, 5, 5, dtype=torch.float64)
        analytic = autograd_gradient(block, x)
        numeric = fd_gradient(lambda t: block(t).sum(), x.clone(), step=1e-6)
        assert relative_error(analytic, numeric) < 1e-6


def _zero_branch(block: ResidualDualShuffleAttentionBlock) -> None:
    with torch.no_grad():
        for unit in block.units:
            unit.conv_in.weight.zero_()
            unit.conv_dw.weight.zero_()
            unit.conv_out.weight.zero_()
        for proj in block.projections:
            proj.weight.zero_()
            proj.bias.zero_()


class TestResidualBlock:
    def test_shape_contract_m1(self):
        block = ResidualDualShuffleAttentionBlock(BlockConfig(channels=256, m=1)).eval()
        x = torch.randn(4, 256, 14, 14)
        assert block(x).shape == (4, 256, 14, 14)

    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_zero_branch_is_exact_identity(self, m):
        block = ResidualDualShuffleAttentionBlock(
            BlockConfig(channels=8, groups=2, attention_reduction=2, m=m)
        ).eval()
        _zero_branch(block)
        x = torch.randn(2, 8, 5, 5)
        assert torch.equal(block(x), x)

    def test_m1_has_no_projection(self):
        block = ResidualDualShuffleAttentionBlock(BlockConfig(channels=8, groups=2, m=1))
        assert len(block.projections) == 0

    def test_parameter_delta_m2_vs_m1(self):
        c, g, r = 16, 4, 4
        counts = {}
        for m in (1, 2):
            block = ResidualDualShuffleAttentionBlock(
                BlockConfig(channels=c, groups=g, attention_reduction=r, m=m)
            )
            counts[m] = sum(p.numel() for p in block.parameters())
        # One extra inner unit plus the 2C -> C dense projection, sized by
        # plain convolution/linear arithmetic.
        unit = (
            2 * (c * (c // g))   # two grouped 1x1 convolutions, no bias
            + 9 * c              # depthwise 3x3, no bias
            + 3 * 2 * c          # three batch norms (scale + shift)
            + (c * (c // r) + c // r)  # attention reduce
            + ((c // r) * c + c)       # attention excite
        )
        projection = 2 * c * c + c
        assert counts[2] - counts[1] == unit + projection

    def test_gradient_single_precision_m2(self):
        torch.manual_seed(1)
        block = ResidualDualShuffleAttentionBlock(
            BlockConfig(channels=8, groups=2, attention_reduction=2, m=2)
        ).eval()
        x = torch.randn(1, 8, 5, 5)
        analytic = autograd_gradient(block, x)
        oracle = copy.deepcopy(block).double()
        numeric = fd_gradient(lambda t: oracle(t).sum(), x.double(), step=1e-3)
        assert relative_error(analytic.double(), numeric) < 1e-3

    def test_rejects_channel_mismatch(self):
        block = ResidualDualShuffleAttentionBlock(BlockConfig(channels=8, groups=2))
        with pytest.raises(ValueError):
            block(torch.zeros(1, 16, 4, 4))
