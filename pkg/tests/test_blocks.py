"""Block-level behavior: identities, closed forms, scalar-reference
agreement, equivariances, and finite-difference gradients."""

import numpy as np
import numpy.testing as npt
import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st

from tnet_dehaze import (
    ConfigError,
    DownsampleBlock,
    DualAttention,
    RdbSpec,
    ResidualDenseBlock,
    ShapeError,
    UpsampleBlock,
    WeightedFusion,
    channel_attention,
    init_parameters,
    position_attention,
)

from conftest import (
    conv2d_ref,
    conv_transpose2d_ref,
    finite_difference,
    grad_rel_err,
    random_feature,
    relu_ref,
)


def zero_(module: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


class TestResidualDenseBlock:
    def test_zero_body_is_exact_identity(self):
        block = zero_(ResidualDenseBlock(RdbSpec(8, growth=4, layers=3)))
        x = random_feature((2, 8, 6, 6), seed=1)
        assert torch.equal(block(x), x)

    def test_concat_width_before_projection(self):
        block = ResidualDenseBlock(RdbSpec(32, growth=16, layers=5))
        assert block.project.in_channels == 32 + 4 * 16 == 96
        x = random_feature((1, 32, 8, 8), seed=2)
        assert block(x).shape == (1, 32, 8, 8)

    def test_matches_scalar_reference(self):
        spec = RdbSpec(16, growth=16, layers=5)
        block = ResidualDenseBlock(spec)
        init_parameters(block, seed=7)
        x = random_feature((2, 16, 4, 4), seed=3, dtype=torch.float64)
        block = block.double()
        got = block(x).detach().numpy()

        xa = x.numpy()
        feats = [xa]
        for conv in block.convs:
            w = conv.weight.detach().numpy()
            b = conv.bias.detach().numpy()
            feats.append(relu_ref(conv2d_ref(np.concatenate(feats, axis=1), w, b, padding=1)))
        proj = conv2d_ref(
            np.concatenate(feats, axis=1),
            block.project.weight.detach().numpy(),
            block.project.bias.detach().numpy(),
        )
        want = xa + proj
        rel = np.abs(got - want).max() / max(np.abs(want).max(), 1e-12)
        assert rel < 1e-5

    def test_channel_mismatch_rejected(self):
        block = ResidualDenseBlock(RdbSpec(8))
        with pytest.raises(ConfigError):
            block(torch.zeros(1, 4, 4, 4))

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            RdbSpec(0)
        with pytest.raises(ConfigError):
            RdbSpec(8, growth=0)
        with pytest.raises(ConfigError):
            RdbSpec(8, layers=1)

    @settings(max_examples=20, deadline=None)
    @given(
        channels=st.integers(1, 8),
        growth=st.integers(1, 8),
        layers=st.integers(2, 4),
        seed=st.integers(0, 2**16),
    )
    def test_finite_in_finite_out_and_shape(self, channels, growth, layers, seed):
        block = ResidualDenseBlock(RdbSpec(channels, growth, layers))
        init_parameters(block, seed=seed)
        x = random_feature((2, channels, 5, 5), seed=seed)
        y = block(x)
        assert y.shape == x.shape
        assert torch.isfinite(y).all()


class TestResampling:
    def test_downsample_shape(self):
        block = DownsampleBlock(16)
        init_parameters(block, seed=0)
        x = random_feature((1, 16, 256, 256), seed=4)
        assert block(x).shape == (1, 32, 128, 128)

    def test_downsample_rejects_odd_dims(self):
        block = DownsampleBlock(16)
        with pytest.raises(ShapeError):
            block(torch.zeros(1, 16, 5, 5))
        with pytest.raises(ShapeError):
            block(torch.zeros(1, 16, 6, 5))

    def test_downsample_zero_params_zero_output(self):
        block = zero_(DownsampleBlock(8))
        y = block(random_feature((3, 8, 10, 12), seed=5))
        assert y.shape == (3, 16, 5, 6)
        assert torch.equal(y, torch.zeros_like(y))

    def test_downsample_matches_scalar_reference(self):
        block = DownsampleBlock(3)
        init_parameters(block, seed=9)
        x = random_feature((1, 3, 6, 6), seed=6, dtype=torch.float64)
        block = block.double()
        got = block(x).detach().numpy()
        mid = relu_ref(
            conv2d_ref(
                x.numpy(),
                block.spatial.weight.detach().numpy(),
                block.spatial.bias.detach().numpy(),
                stride=2,
                padding=1,
            )
        )
        want = conv2d_ref(
            mid,
            block.expand.weight.detach().numpy(),
            block.expand.bias.detach().numpy(),
        )
        npt.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_upsample_shape(self):
        block = UpsampleBlock(256)
        init_parameters(block, seed=0)
        x = random_feature((1, 256, 16, 16), seed=7)
        assert block(x).shape == (1, 128, 32, 32)

    def test_upsample_rejects_odd_channels(self):
        with pytest.raises(ConfigError):
            UpsampleBlock(5)

    def test_upsample_zero_params_zero_output(self):
        block = zero_(UpsampleBlock(8))
        y = block(random_feature((2, 8, 4, 4), seed=8))
        assert y.shape == (2, 4, 8, 8)
        assert torch.equal(y, torch.zeros_like(y))

    def test_upsample_matches_scalar_reference(self):
        block = UpsampleBlock(4)
        init_parameters(block, seed=10)
        x = random_feature((1, 4, 3, 5), seed=9, dtype=torch.float64)
        block = block.double()
        got = block(x).detach().numpy()
        mid = relu_ref(
            conv_transpose2d_ref(
                x.numpy(),
                block.spatial.weight.detach().numpy(),
                block.spatial.bias.detach().numpy(),
                stride=2,
                padding=1,
            )
        )
        want = conv2d_ref(
            mid,
            block.reduce.weight.detach().numpy(),
            block.reduce.bias.detach().numpy(),
        )
        npt.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_round_trip_restores_shape(self):
        down = DownsampleBlock(16)
        up = UpsampleBlock(32)
        init_parameters(down, 0)
        init_parameters(up, 1)
        x = random_feature((1, 16, 8, 8), seed=10)
        assert up(down(x)).shape == x.shape


class TestAttention:
    def test_position_gamma_zero_identity(self):
        x = random_feature((2, 5, 4, 4), seed=11)
        assert torch.equal(position_attention(x, torch.zeros(())), x)

    def test_channel_gamma_zero_identity(self):
        x = random_feature((2, 5, 4, 4), seed=12)
        assert torch.equal(channel_attention(x, torch.zeros(())), x)

    def test_constant_input_closed_form(self):
        # Every energy entry is equal, so each softmax row is uniform and the
        # increment reproduces the constant: out = (1 + gamma) * c.
        c = 0.37
        gamma = 0.7
        x = torch.full((1, 3, 4, 4), c, dtype=torch.float64)
        for fn in (position_attention, channel_attention):
            out = fn(x, torch.tensor(gamma, dtype=torch.float64))
            npt.assert_allclose(out.numpy(), (1 + gamma) * c, rtol=1e-12)

    def test_rows_stochastic(self):
        x = random_feature((1, 6, 5, 5), seed=13)
        flat = x.reshape(1, 6, 25)
        s = torch.softmax(torch.bmm(flat.transpose(1, 2), flat), dim=-1)
        m = torch.softmax(torch.bmm(flat, flat.transpose(1, 2)), dim=-1)
        npt.assert_allclose(s.sum(-1).numpy(), 1.0, atol=1e-6)
        npt.assert_allclose(m.sum(-1).numpy(), 1.0, atol=1e-6)

    def test_position_spatial_permutation_equivariance(self):
        x = random_feature((1, 4, 3, 4), seed=14, dtype=torch.float64)
        gamma = torch.tensor(0.5, dtype=torch.float64)
        perm = torch.randperm(12, generator=torch.Generator().manual_seed(0))

        def permute(t):
            return t.reshape(1, 4, 12)[:, :, perm].reshape(1, 4, 3, 4)

        npt.assert_allclose(
            position_attention(permute(x), gamma).numpy(),
            permute(position_attention(x, gamma)).numpy(),
            rtol=1e-10,
        )

    def test_channel_permutation_equivariance(self):
        x = random_feature((1, 6, 4, 4), seed=15, dtype=torch.float64)
        gamma = torch.tensor(0.5, dtype=torch.float64)
        perm = torch.randperm(6, generator=torch.Generator().manual_seed(1))
        npt.assert_allclose(
            channel_attention(x[:, perm], gamma).numpy(),
            channel_attention(x, gamma)[:, perm].numpy(),
            rtol=1e-10,
        )

    def test_dual_attention_init_is_exactly_double(self):
        block = DualAttention()
        x = random_feature((2, 7, 4, 4), seed=16)
        assert torch.equal(block(x), 2 * x)

    def test_dual_attention_shape_preserved(self):
        block = DualAttention()
        with torch.no_grad():
            block.gamma_pos.fill_(0.3)
            block.gamma_chan.fill_(-0.2)
        x = random_feature((1, 256, 16, 16), seed=17)
        assert block(x).shape == (1, 256, 16, 16)

    def test_dual_attention_gradient_matches_finite_differences(self):
        block = DualAttention().double()
        with torch.no_grad():
            block.gamma_pos.fill_(0.4)
            block.gamma_chan.fill_(-0.3)
        x = random_feature((1, 3, 4, 4), seed=18, dtype=torch.float64)
        weights = random_feature((1, 3, 4, 4), seed=19, dtype=torch.float64)

        def f(inp):
            return (block(inp) * weights).sum()

        xg = x.clone().requires_grad_(True)
        f(xg).backward()
        numeric = finite_difference(f, x.clone())
        assert grad_rel_err(xg.grad, numeric) < 1e-4

    def test_attention_per_sample_independence(self):
        # Changing sample 1 must not affect sample 0's output.
        a = random_feature((2, 4, 3, 3), seed=20)
        b = a.clone()
        b[1] += 1.0
        block = DualAttention()
        with torch.no_grad():
            block.gamma_pos.fill_(0.9)
            block.gamma_chan.fill_(0.8)
        assert torch.equal(block(a)[0], block(b)[0])


class TestWeightedFusion:
    def test_alpha_one_beta_zero_returns_lateral(self):
        fuse = WeightedFusion(4)
        with torch.no_grad():
            fuse.beta.zero_()
        lat = random_feature((2, 4, 5, 5), seed=21)
        vert = random_feature((2, 4, 5, 5), seed=22)
        assert torch.equal(fuse(lat, vert), lat)

    def test_default_is_plain_additive_skip(self):
        fuse = WeightedFusion(4)
        lat = random_feature((2, 4, 5, 5), seed=23)
        vert = random_feature((2, 4, 5, 5), seed=24)
        assert torch.equal(fuse(lat, vert), lat + vert)

    def test_per_channel_weights(self):
        fuse = WeightedFusion(2)
        with torch.no_grad():
            fuse.alpha.copy_(torch.tensor([2.0, 0.0]))
            fuse.beta.copy_(torch.tensor([0.0, 3.0]))
        lat = random_feature((1, 2, 3, 3), seed=25)
        vert = random_feature((1, 2, 3, 3), seed=26)
        out = fuse(lat, vert)
        assert torch.equal(out[:, 0], 2 * lat[:, 0])
        assert torch.equal(out[:, 1], 3 * vert[:, 1])

    def test_mismatch_names_level(self):
        fuse = WeightedFusion(4, level=2)
        with pytest.raises(ShapeError, match="level 2"):
            fuse(torch.zeros(1, 4, 4, 4), torch.zeros(1, 4, 4, 2))


class TestInit:
    def test_same_seed_same_parameters(self):
        a = ResidualDenseBlock(RdbSpec(8))
        b = ResidualDenseBlock(RdbSpec(8))
        init_parameters(a, seed=42)
        init_parameters(b, seed=42)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seed_different_parameters(self):
        a = ResidualDenseBlock(RdbSpec(8))
        b = ResidualDenseBlock(RdbSpec(8))
        init_parameters(a, seed=1)
        init_parameters(b, seed=2)
        assert not torch.equal(a.convs[0].weight, b.convs[0].weight)

    def test_bound_scales_with_fan_in(self):
        conv = nn.Conv2d(16, 8, 3, padding=1)
        init_parameters(conv, seed=3)
        bound = 1.0 / (16 * 9) ** 0.5
        assert conv.weight.abs().max().item() <= bound
        assert torch.equal(conv.bias, torch.zeros(8))
