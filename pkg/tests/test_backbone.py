"""Backbone assembly: config arithmetic, wiring, shapes, determinism,
reachability, and input validation."""

import pytest
import torch

from tnet_dehaze import ConfigError, ShapeError, TNetConfig, build_tnet

from conftest import random_feature


class TestConfig:
    def test_default_level_channels(self):
        assert TNetConfig().level_channels() == [16, 32, 64, 128, 256]

    def test_default_block_inventory(self):
        net = build_tnet(TNetConfig(), seed=0)
        assert len(net.down) == 4 and len(net.up) == 4
        assert len(net.lat) == 3
        assert len(net.fuse) == 4
        assert sum(len(stack) for stack in net.enc.values()) == 3
        assert sum(len(stack) for stack in net.dec.values()) == 3
        assert net.conv_in.in_channels == 6 and net.conv_out.out_channels == 3

    def test_smallest_grid_variant_builds(self):
        net = build_tnet(TNetConfig(scales=2, trunk_rdbs=1), seed=0)
        x = random_feature((1, 6, 16, 16), seed=0)
        assert net(x).shape == (1, 3, 16, 16)

    def test_trunk_rdbs_distribute_deepest_first(self):
        assert TNetConfig(scales=4, trunk_rdbs=3).trunk_rdb_counts() == {1: 1, 2: 1, 3: 1}
        assert TNetConfig(scales=4, trunk_rdbs=1).trunk_rdb_counts() == {1: 0, 2: 0, 3: 1}
        assert TNetConfig(scales=4, trunk_rdbs=2).trunk_rdb_counts() == {1: 0, 2: 1, 3: 1}
        assert TNetConfig(scales=3, trunk_rdbs=3).trunk_rdb_counts() == {1: 1, 2: 2}
        assert TNetConfig(scales=2, trunk_rdbs=3).trunk_rdb_counts() == {1: 3}

    def test_unplaceable_trunk_rdbs_rejected(self):
        with pytest.raises(ConfigError):
            TNetConfig(scales=1, trunk_rdbs=1)

    def test_invalid_fields_rejected(self):
        with pytest.raises(ConfigError):
            TNetConfig(scales=0)
        with pytest.raises(ConfigError):
            TNetConfig(base_channels=0)
        with pytest.raises(ConfigError):
            TNetConfig(trunk_rdbs=-1)


class TestDeterminism:
    def test_same_seed_identical_parameters(self):
        cfg = TNetConfig(scales=3, trunk_rdbs=2, base_channels=4)
        a = build_tnet(cfg, seed=5)
        b = build_tnet(cfg, seed=5)
        na, nb = dict(a.named_parameters()), dict(b.named_parameters())
        assert na.keys() == nb.keys()
        for name in na:
            assert torch.equal(na[name], nb[name]), name

    def test_parameter_count_stable_across_forward(self):
        net = build_tnet(TNetConfig(scales=2, trunk_rdbs=1, base_channels=4), seed=1)
        before = net.parameter_count()
        net(random_feature((1, 6, 8, 8), seed=1))
        assert net.parameter_count() == before


class TestForward:
    def test_default_shapes_and_bottleneck(self):
        net = build_tnet(TNetConfig(), seed=0)
        net.debug_shapes = True
        captured = {}
        net.attention.register_forward_hook(
            lambda mod, inp, out: captured.update(bottleneck=inp[0].shape)
        )
        x = random_feature((1, 6, 256, 256), seed=2)
        y = net(x)
        assert y.shape == (1, 3, 256, 256)
        assert tuple(captured["bottleneck"]) == (1, 256, 16, 16)

    def test_64_input_bottleneck(self):
        net = build_tnet(TNetConfig(), seed=0)
        captured = {}
        net.attention.register_forward_hook(
            lambda mod, inp, out: captured.update(bottleneck=inp[0].shape)
        )
        y = net(random_feature((1, 6, 64, 64), seed=3))
        assert y.shape == (1, 3, 64, 64)
        assert tuple(captured["bottleneck"]) == (1, 256, 4, 4)

    def test_indivisible_input_names_level(self):
        net = build_tnet(TNetConfig(), seed=0)
        with pytest.raises(ShapeError, match="level 3"):
            net(torch.zeros(1, 6, 100, 100))

    def test_wrong_channel_count_rejected(self):
        net = build_tnet(TNetConfig(), seed=0)
        with pytest.raises(ConfigError):
            net(torch.zeros(1, 3, 64, 64))

    def test_full_grid_shapes(self):
        for scales in (2, 3, 4):
            for trunk in (1, 2, 3):
                cfg = TNetConfig(scales=scales, trunk_rdbs=trunk, base_channels=4)
                net = build_tnet(cfg, seed=0)
                net.debug_shapes = True
                side = 2**scales * 4
                y = net(random_feature((1, 6, side, side), seed=4))
                assert y.shape == (1, 3, side, side), (scales, trunk)

    def test_zero_beta_cuts_everything_but_level0(self):
        # With every fusion beta zeroed, the output must depend only on the
        # conv_in -> identity skip -> conv_out path. Two nets that differ in
        # every deeper block but share that path must then agree exactly.
        cfg = TNetConfig(scales=3, trunk_rdbs=2, base_channels=4)
        a = build_tnet(cfg, seed=6)
        b = build_tnet(cfg, seed=99)
        with torch.no_grad():
            for net in (a, b):
                for fuse in net.fuse.values():
                    fuse.beta.zero_()
            for src, dst in ((a.conv_in, b.conv_in), (a.conv_out, b.conv_out)):
                dst.weight.copy_(src.weight)
                dst.bias.copy_(src.bias)
            b.fuse["0"].alpha.copy_(a.fuse["0"].alpha)
        x = random_feature((1, 6, 16, 16), seed=5)
        assert not torch.equal(
            dict(a.named_parameters())["lat.1.convs.0.weight"],
            dict(b.named_parameters())["lat.1.convs.0.weight"],
        )
        assert torch.equal(a(x), b(x))


class TestGradient:
    def test_micro_net_matches_finite_differences(self):
        from conftest import (
            finite_difference,
            finite_difference_at,
            grad_rel_err,
            sample_coords,
        )

        cfg = TNetConfig(scales=2, trunk_rdbs=1, base_channels=2)
        net = build_tnet(cfg, seed=7).double()
        x = random_feature((1, 6, 8, 8), seed=6, dtype=torch.float64)
        weights = random_feature((1, 3, 8, 8), seed=7, dtype=torch.float64)

        def loss_of(inp):
            return (net(inp) * weights).sum()

        xg = x.clone().requires_grad_(True)
        loss_of(xg).backward()
        numeric = finite_difference(loss_of, x.clone())
        assert grad_rel_err(xg.grad, numeric) < 1e-4

        # And against a sampled subset of every parameter tensor.
        net.zero_grad()
        loss_of(x).backward()
        for name, param in net.named_parameters():
            coords = sample_coords(param.shape, 4, seed=hash(name) % 2**32)
            numeric = finite_difference_at(lambda: loss_of(x), param, coords)
            analytic = param.grad.reshape(-1)[coords]
            assert grad_rel_err(analytic, numeric) < 1e-4, name
