"""Network construction, shapes, counts, gradients, checkpoints."""

import numpy as np
import pytest

from demoire import ConfigError, DataError, ShapeError
from demoire.network import (
    NetworkConfig,
    backward,
    build_network,
    forward,
    gradient_arrays,
    inspect_branches,
    layer_plan,
    load_checkpoint,
    param_count,
    restore_image,
    save_checkpoint,
    variant_config,
    with_parameters,
)
from reference_impls import check_grad

# frozen totals, derived layer by layer from the architecture tables
EXPECTED_COUNTS = {
    "default": 1_546_671,
    "v_concate": 1_599_779,
    "v_skip": 1_546_671,
    "v_c32": 483_823,
    "v_b123": 781_897,
    "v_b135": 1_028_041,
    "v_b15": 744_134,
}


def tiny_config(**kw):
    base = dict(branches=(1, 2), cascade_depth=1, cascade_channels=8)
    base.update(kw)
    return NetworkConfig(**base)


class TestConfig:
    def test_rejects_bad_branches(self):
        with pytest.raises(ConfigError):
            NetworkConfig(branches=())
        with pytest.raises(ConfigError):
            NetworkConfig(branches=(2, 3))
        with pytest.raises(ConfigError):
            NetworkConfig(branches=(1, 6))

    def test_rejects_bad_fusion_and_channels(self):
        with pytest.raises(ConfigError):
            NetworkConfig(fusion="mean")
        with pytest.raises(ConfigError):
            NetworkConfig(cascade_channels=7)
        with pytest.raises(ConfigError):
            NetworkConfig(input_channels=4)

    def test_variant_names(self):
        assert variant_config("default").fusion == "sum"
        assert variant_config("v_concate").fusion == "concatenate"
        assert variant_config("v_skip").skip_in_branch
        assert variant_config("v_c32").narrow_channels
        assert variant_config("v_b123").branches == (1, 2, 3)
        assert variant_config("v_b135").branches == (1, 3, 5)
        assert variant_config("v_b15").branches == (1, 5)
        assert variant_config("default", grayscale=True).input_channels == 1
        with pytest.raises(ConfigError):
            variant_config("v_b99")


class TestPlan:
    def test_default_matches_layer_tables(self):
        plan = {p.name: p for p in layer_plan(NetworkConfig())}
        # downsampling: scale 1 stays at 32, scale 2 widens to 64, rest stay 64
        assert (plan["down1a"].in_channels, plan["down1a"].out_channels) == (3, 32)
        assert plan["down1a"].stride == 1 and plan["down1b"].out_channels == 32
        assert plan["down2a"].stride == 2 and plan["down2a"].out_channels == 32
        assert plan["down2b"].out_channels == 64
        for s in (3, 4, 5):
            assert plan[f"down{s}a"].stride == 2
            assert plan[f"down{s}a"].in_channels == plan[f"down{s}a"].out_channels == 64
            assert plan[f"down{s}b"].out_channels == 64
        # branch 1 widens on its first cascade layer
        assert (plan["branch1.cascade1"].in_channels, plan["branch1.cascade1"].out_channels) == (32, 64)
        assert plan["branch1.cascade5"].in_channels == 64
        # branch i runs i-1 transposed convolutions, first wide then 32
        for b in (2, 3, 4, 5):
            ups = [p for name, p in plan.items() if name.startswith(f"branch{b}.up")]
            assert len(ups) == b - 1
            assert all(p.kind == "deconv" and p.ksize == 4 and p.stride == 2 for p in ups)
            assert ups[-1].out_channels == 32
            if b >= 3:
                assert ups[0].out_channels == 64
        # every branch ends in an unactivated 3-channel conv
        for b in (1, 2, 3, 4, 5):
            out = plan[f"branch{b}.out"]
            assert out.out_channels == 3 and not out.relu

    def test_sparse_branches_keep_pyramid(self):
        names = {p.name for p in layer_plan(NetworkConfig(branches=(1, 5)))}
        for s in (2, 3, 4):
            assert f"down{s}a" in names and f"down{s}b" in names
        assert not any(n.startswith("branch3.") for n in names)

    def test_every_interior_layer_has_relu(self):
        for p in layer_plan(variant_config("v_concate")):
            if p.name.endswith(".out") or p.name == "fuse.out":
                assert not p.relu
            else:
                assert p.relu


class TestParamCount:
    def test_first_layer_is_896(self):
        plan = layer_plan(NetworkConfig())
        assert plan[0].n_params == 3 * 32 * 9 + 32 == 896

    @pytest.mark.parametrize("variant,expected", sorted(EXPECTED_COUNTS.items()))
    def test_frozen_totals(self, variant, expected):
        assert param_count(variant_config(variant)) == expected

    @pytest.mark.parametrize(
        "variant,published",
        [("default", 15.44e5), ("v_concate", 16.14e5), ("v_b15", 7.42e5)],
    )
    def test_published_totals_within_two_percent(self, variant, published):
        count = param_count(variant_config(variant))
        assert abs(count - published) / published < 0.02

    def test_count_matches_built_network(self):
        for variant in ("default", "v_concate", "v_b15"):
            cfg = variant_config(variant, cascade_channels=8)
            net = build_network(cfg, seed=3, dtype=np.float32)
            assert net.n_parameters() == param_count(cfg)

    def test_seed_does_not_change_count(self):
        cfg = tiny_config()
        a = build_network(cfg, seed=1, dtype=np.float32)
        b = build_network(cfg, seed=2, dtype=np.float32)
        assert a.n_parameters() == b.n_parameters()

    def test_dropping_a_branch_drops_parameters(self):
        full = param_count(NetworkConfig())
        assert param_count(NetworkConfig(branches=(1, 2, 3, 4))) < full


class TestBuild:
    def test_seeds_change_values_not_shapes(self):
        a = build_network(tiny_config(), seed=1)
        b = build_network(tiny_config(), seed=2)
        for name in a.layers:
            assert a.layers[name].params.kernel.shape == b.layers[name].params.kernel.shape
            assert not np.array_equal(a.layers[name].params.kernel, b.layers[name].params.kernel)

    def test_same_seed_bitwise_identical(self):
        a = build_network(tiny_config(), seed=7)
        b = build_network(tiny_config(), seed=7)
        for name in a.layers:
            assert a.layers[name].params.kernel.tobytes() == b.layers[name].params.kernel.tobytes()

    def test_init_statistics(self):
        net = build_network(NetworkConfig(branches=(1, 2, 3)), seed=0)
        kernels = np.concatenate([l.params.kernel.ravel() for l in net.layers.values()])
        assert abs(kernels.std() - 0.01) < 0.001
        assert all(not l.params.bias.any() for l in net.layers.values())

    def test_he_init_scales_trunk_not_heads(self):
        net = build_network(NetworkConfig(branches=(1, 2, 3)), seed=0, init="he")
        for layer in net.layers.values():
            lp = layer.plan
            std = layer.params.kernel.std()
            if lp.relu:
                expected = (2.0 / (lp.in_channels * lp.ksize * lp.ksize)) ** 0.5
                assert abs(std - expected) / expected < 0.25
            else:
                assert abs(std - 0.01) < 0.005
            assert not layer.params.bias.any()

    def test_unknown_init_rejected(self):
        with pytest.raises(ConfigError):
            build_network(tiny_config(), seed=0, init="xavier")


class TestForward:
    def test_shapes_default(self):
        net = build_network(NetworkConfig(cascade_channels=4), seed=0, dtype=np.float32)
        x = np.random.default_rng(0).random((1, 3, 64, 80), dtype=np.float32)
        out = forward(net, x)
        assert out.fused.shape == (1, 3, 64, 80)
        for b in (1, 2, 3, 4, 5):
            assert out.branch_maps[b].shape == (1, 3, 64, 80)
            assert out.cascade_shapes[b] == (64 >> (b - 1), 80 >> (b - 1))

    def test_fused_is_exact_sum(self):
        net = build_network(NetworkConfig(cascade_channels=4), seed=1, dtype=np.float32)
        x = np.random.default_rng(1).random((2, 3, 32, 32), dtype=np.float32)
        out = forward(net, x)
        acc = out.branch_maps[1].copy()
        for b in (2, 3, 4, 5):
            acc += out.branch_maps[b]
        assert acc.tobytes() == out.fused.tobytes()

    def test_zeroed_network_outputs_zero(self):
        net = build_network(tiny_config(), seed=0)
        arrays = {k: np.zeros_like(v) for k, v in net.parameter_arrays().items()}
        net0 = with_parameters(net, arrays)
        out = forward(net0, np.random.default_rng(0).random((1, 3, 8, 8)))
        assert not out.fused.any()

    def test_indivisible_dims_rejected_with_advice(self):
        net = build_network(NetworkConfig(cascade_channels=4), seed=0, dtype=np.float32)
        with pytest.raises(ShapeError, match="divisible by 16"):
            forward(net, np.zeros((1, 3, 40, 64), dtype=np.float32))

    def test_channel_mismatch_names_axis(self):
        net = build_network(tiny_config(), seed=0)
        with pytest.raises(ShapeError, match="channel"):
            forward(net, np.zeros((1, 1, 8, 8)))

    def test_grayscale_shapes(self):
        net = build_network(tiny_config(input_channels=1), seed=0)
        out = forward(net, np.random.default_rng(0).random((1, 1, 8, 8)))
        assert out.fused.shape == (1, 1, 8, 8)
        assert out.branch_maps[2].shape == (1, 1, 8, 8)

    def test_concatenate_shapes(self):
        cfg = tiny_config(fusion="concatenate")
        net = build_network(cfg, seed=0)
        out = forward(net, np.random.default_rng(0).random((1, 3, 8, 8)))
        assert out.fused.shape == (1, 3, 8, 8)
        # pre-fusion maps carry the half width
        assert out.branch_maps[1].shape == (1, 4, 8, 8)

    def test_deterministic(self):
        net = build_network(tiny_config(), seed=5)
        x = np.random.default_rng(2).random((1, 3, 8, 8))
        assert forward(net, x).fused.tobytes() == forward(net, x).fused.tobytes()


def kink_safe_network(cfg, seed=0):
    """Build a net whose parameters sit far from every relu kink.

    Training-scale init leaves pre-activations clustered at zero, where a
    finite-difference step flips activation signs and corrupts the estimate.
    O(1) uniform draws push them well clear.
    """
    net = build_network(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    arrays = {
        k: rng.uniform(-0.3, 0.3, size=v.shape) for k, v in net.parameter_arrays().items()
    }
    return with_parameters(net, arrays)


def _network_fd_check(cfg, x, rel_tol=1e-5, samples_per_block=4, seed=0):
    """Finite-difference a random subset of every parameter block."""
    net = kink_safe_network(cfg, seed=seed)
    proj = np.random.default_rng(99).standard_normal(forward(net, x).fused.shape)

    out = forward(net, x, want_tape=True)
    grads = gradient_arrays(backward(net, out, proj))

    arrays = net.parameter_arrays()
    rng = np.random.default_rng(7)
    eps = 1e-6
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        idx = rng.choice(flat.size, size=min(samples_per_block, flat.size), replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + eps
            hi = float((forward(with_parameters(net, arrays), x).fused * proj).sum())
            flat[i] = keep - eps
            lo = float((forward(with_parameters(net, arrays), x).fused * proj).sum())
            flat[i] = keep
            fd = (hi - lo) / (2 * eps)
            check_grad(
                np.array([grads[name].reshape(-1)[i]]), np.array([fd]), rel_tol, abs_floor=1e-8
            )


class TestBackward:
    def test_zero_grad_gives_zero_param_grads(self):
        net = build_network(tiny_config(), seed=0)
        x = np.random.default_rng(0).random((1, 3, 8, 8))
        out = forward(net, x, want_tape=True)
        grads = backward(net, out, np.zeros_like(out.fused))
        assert all(not gk.any() and not gb.any() for gk, gb in grads.values())
        assert set(grads) == set(net.layers)

    def test_needs_tape(self):
        net = build_network(tiny_config(), seed=0)
        out = forward(net, np.zeros((1, 3, 8, 8)))
        with pytest.raises(ConfigError):
            backward(net, out, np.zeros_like(out.fused))

    def test_finite_difference_sum(self):
        x = np.random.default_rng(3).random((1, 3, 8, 8))
        _network_fd_check(tiny_config(), x)

    def test_finite_difference_concatenate(self):
        x = np.random.default_rng(4).random((1, 3, 8, 8))
        _network_fd_check(tiny_config(fusion="concatenate"), x)
        # fusion conv gradients are live for random input
        net = build_network(tiny_config(fusion="concatenate"), seed=0)
        out = forward(net, x, want_tape=True)
        grads = backward(net, out, np.ones_like(out.fused))
        assert grads["fuse.conv1"][0].any() and grads["fuse.conv2"][0].any()

    def test_finite_difference_skip(self):
        x = np.random.default_rng(5).random((1, 3, 8, 8))
        _network_fd_check(tiny_config(skip_in_branch=True), x)

    def test_finite_difference_three_branches(self):
        x = np.random.default_rng(6).random((1, 3, 16, 16))
        _network_fd_check(NetworkConfig(branches=(1, 2, 3), cascade_depth=1, cascade_channels=4), x, samples_per_block=2)


class TestSkipVariant:
    def test_skip_changes_output_not_count(self):
        cfg = tiny_config()
        cfg_skip = tiny_config(skip_in_branch=True)
        assert param_count(cfg) == param_count(cfg_skip)
        x = np.random.default_rng(1).random((1, 3, 8, 8))
        a = forward(build_network(cfg, seed=3), x).fused
        b = forward(build_network(cfg_skip, seed=3), x).fused
        assert not np.array_equal(a, b)


class TestCheckpoint:
    def test_roundtrip_bitwise_forward(self, tmp_path):
        net = build_network(tiny_config(), seed=11, dtype=np.float32)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        loaded = load_checkpoint(path)
        x = np.random.default_rng(0).random((1, 3, 16, 16), dtype=np.float32)
        assert forward(net, x).fused.tobytes() == forward(loaded, x).fused.tobytes()
        assert loaded.config == net.config and loaded.seed == 11

    def test_header_is_selfdescribing_text(self, tmp_path):
        net = build_network(tiny_config(fusion="concatenate"), seed=2, dtype=np.float32)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        head = path.read_bytes().split(b"end-header\n")[0].decode("ascii")
        assert head.splitlines()[0] == "demoire-net 1"
        assert "seed 2" in head
        assert "fusion=concatenate" in head
        assert any(line.startswith("layer down1a conv") for line in head.splitlines())

    def test_truncated_file_rejected(self, tmp_path):
        net = build_network(tiny_config(), seed=0, dtype=np.float32)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataError, match="truncated"):
            load_checkpoint(path)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_save_load_save_idempotent(self, tmp_path):
        net = build_network(tiny_config(), seed=4, dtype=np.float32)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(net, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestInspect:
    def test_amplification_one_equals_raw(self):
        net = build_network(tiny_config(), seed=0)
        img = np.random.default_rng(0).random((8, 8, 3))
        report = inspect_branches(net, img, amplification=1.0)
        for b, maps in report.items():
            np.testing.assert_array_equal(maps["raw"], maps["amplified"])

    def test_zero_network_gives_midgray(self):
        net = build_network(tiny_config(), seed=0)
        net0 = with_parameters(net, {k: np.zeros_like(v) for k, v in net.parameter_arrays().items()})
        report = inspect_branches(net0, np.random.default_rng(0).random((8, 8, 3)))
        for maps in report.values():
            np.testing.assert_array_equal(maps["raw"], np.full((8, 8, 3), 0.5))

    def test_concatenate_mode_rejected(self):
        net = build_network(tiny_config(fusion="concatenate"), seed=0)
        with pytest.raises(ConfigError):
            inspect_branches(net, np.zeros((8, 8, 3)))


class TestRestoreImage:
    def test_output_clamped_and_shaped(self):
        net = build_network(tiny_config(), seed=0, dtype=np.float32)
        img = np.random.default_rng(0).random((16, 16, 3)).astype(np.float32)
        out = restore_image(net, img)
        assert out.shape == (16, 16, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0
