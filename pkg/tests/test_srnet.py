"""Network topology, gradients, variants, and checkpoint tests."""

import numpy as np
import pytest

from mfsr import imgproc, ops, srnet
from mfsr.srnet import NetworkConfig
from mfsr.tensor import InvariantError

from oracles import scalar_l1


def tiny_config(**kw):
    base = dict(n_blocks=2, channels=3, scale=8, variant="VT", skip_period=2)
    base.update(kw)
    return NetworkConfig(**base)


def zero_bias(params):
    for _name, layer in params:
        if layer.bias is not None:
            layer.bias.fill(0.0)


def make_gradcheck_target(i_sr, rng):
    """GT whose residuals have magnitude >= 0.5 and an unbalanced sign mix.

    Keeps the L1 loss locally linear under small perturbations and keeps
    whole-image sign sums bounded away from zero (no exact cancellation in
    output-layer bias gradients).
    """
    signs = np.where(rng.random(i_sr.shape) < 0.4, 1.0, -1.0)
    return i_sr + signs * rng.uniform(0.5, 1.5, size=i_sr.shape)


def run_full_gradcheck(config, seed=0):
    return max(srnet.network_gradcheck(config, seed=seed).values())


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------

def test_extract_thermal_preserves_patch_size():
    config = tiny_config()
    params = srnet.init_params(config, np.random.default_rng(0))
    t = np.random.default_rng(1).standard_normal((1, 1, 12, 12))
    f_t = srnet.extract_thermal(t, params)
    assert f_t.shape == (1, config.channels, 12, 12)


def test_extract_thermal_zero_input_zero_bias():
    config = tiny_config()
    params = srnet.init_params(config, np.random.default_rng(0))
    zero_bias(params)
    f_t = srnet.extract_thermal(np.zeros((1, 1, 6, 6)), params)
    assert not f_t.any()


def test_extract_thermal_rejects_multichannel():
    params = srnet.init_params(tiny_config(), np.random.default_rng(0))
    with pytest.raises(ValueError, match="single-channel"):
        srnet.extract_thermal(np.zeros((1, 2, 6, 6)), params)


def test_extract_thermal_equals_kernel_composition():
    config = tiny_config()
    rng = np.random.default_rng(2)
    params = srnet.init_params(config, rng)
    t = rng.standard_normal((2, 1, 5, 7))
    f_t = srnet.extract_thermal(t, params)
    x = t
    for i in (1, 2, 3):
        x = ops.relu(ops.conv2d(x, params[f"thermal.conv{i}"], 1, 1))
    np.testing.assert_array_equal(f_t, x)


def test_extract_visible_downscales_by_8():
    config = tiny_config()
    params = srnet.init_params(config, np.random.default_rng(0))
    v = np.random.default_rng(3).standard_normal((1, 1, 96, 96))
    f_v = srnet.extract_visible(v, params)
    assert f_v.shape == (1, config.channels, 12, 12)
    # minimal divisible case
    f1 = srnet.extract_visible(np.ones((1, 1, 8, 8)), params)
    assert f1.shape == (1, config.channels, 1, 1)


def test_extract_visible_rejects_indivisible():
    params = srnet.init_params(tiny_config(), np.random.default_rng(0))
    with pytest.raises(ValueError, match="divisible"):
        srnet.extract_visible(np.zeros((1, 1, 20, 24)), params)


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------

def test_fuse_zero_visible_degenerates_to_conv_of_thermal():
    config = tiny_config()
    rng = np.random.default_rng(4)
    params = srnet.init_params(config, rng)
    f_t = rng.standard_normal((1, config.channels, 4, 4))
    out = srnet.fuse(np.zeros_like(f_t), f_t, params)
    ref = ops.conv2d(f_t, params["fusion.conv"], 1, 0)
    np.testing.assert_array_equal(out, ref)


def test_fuse_identity_channel_matrix_gives_exact_sum():
    config = tiny_config()
    rng = np.random.default_rng(5)
    params = srnet.init_params(config, rng)
    c = config.channels
    params["fusion.conv"].weight[...] = np.eye(c).reshape(c, c, 1, 1)
    params["fusion.conv"].bias.fill(0.0)
    f_v = rng.standard_normal((1, c, 3, 3))
    f_t = rng.standard_normal((1, c, 3, 3))
    np.testing.assert_allclose(srnet.fuse(f_v, f_t, params), f_v + f_t,
                               rtol=0, atol=1e-15)


def test_fuse_shape_mismatch_raises():
    params = srnet.init_params(tiny_config(), np.random.default_rng(0))
    with pytest.raises(ValueError, match="shape"):
        srnet.fuse(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 5, 5)), params)


# ---------------------------------------------------------------------------
# residual trunk
# ---------------------------------------------------------------------------

def trunk_zero_branch_multiplier(n, sp):
    """Hand recurrence for the zero-branch wiring: blocks are identity."""
    coeff = [1.0]  # multiplier of f0 in A_i
    for i in range(1, n + 1):
        m = coeff[i - 1]
        if i % sp == 0 and i - sp >= 0:
            m += coeff[i - sp]
        coeff.append(m)
    return coeff[n] + 1.0  # global skip


def test_trunk_zero_branch_wiring_trace():
    for n, sp in [(16, 4), (8, 2), (5, 3)]:
        config = tiny_config(n_blocks=n, skip_period=sp)
        rng = np.random.default_rng(6)
        params = srnet.init_params(config, rng)
        for b in range(1, n + 1):
            params[f"block{b:02d}.conv1"].weight.fill(0.0)
            params[f"block{b:02d}.conv2"].weight.fill(0.0)
        f0 = rng.standard_normal((1, config.channels, 4, 4))
        out = srnet.residual_trunk(f0, params, mode="train")
        expected = trunk_zero_branch_multiplier(n, sp) * f0
        np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_trunk_empty_is_identity():
    config = tiny_config(n_blocks=0)
    params = srnet.init_params(config, np.random.default_rng(7))
    f0 = np.random.default_rng(8).standard_normal((1, config.channels, 4, 4))
    np.testing.assert_array_equal(srnet.residual_trunk(f0, params), f0)


def test_trunk_single_block_matches_explicit_composition():
    config = tiny_config(n_blocks=1, skip_period=4)
    rng = np.random.default_rng(9)
    params = srnet.init_params(config, rng)
    f0 = rng.standard_normal((2, config.channels, 4, 4))
    out = srnet.residual_trunk(f0, params, mode="train", update_stats=False)
    y = ops.conv2d(f0, params["block01.conv1"], 1, 1)
    y = ops.batchnorm(y, params["block01.bn1"], mode="train", update_stats=False)
    y = ops.relu(y)
    y = ops.conv2d(y, params["block01.conv2"], 1, 1)
    y = ops.batchnorm(y, params["block01.bn2"], mode="train", update_stats=False)
    expected = (f0 + y) + f0  # in-block identity, then global skip
    np.testing.assert_allclose(out, expected, rtol=1e-12)


# ---------------------------------------------------------------------------
# reconstruction
# ---------------------------------------------------------------------------

def test_reconstruct_upscales_by_8():
    config = tiny_config()
    rng = np.random.default_rng(10)
    params = srnet.init_params(config, rng)
    f_n = rng.standard_normal((1, config.channels, 12, 12))
    t = rng.standard_normal((1, 1, 12, 12))
    out = srnet.reconstruct(f_n, t, params)
    assert out.shape == (1, 1, 96, 96)


def test_reconstruct_zero_everything_zero_output():
    config = tiny_config()
    params = srnet.init_params(config, np.random.default_rng(11))
    zero_bias(params)
    out = srnet.reconstruct(np.zeros((1, config.channels, 4, 4)),
                            np.zeros((1, 1, 4, 4)), params)
    assert not out.any()


def test_reconstruct_spatial_mismatch_raises():
    params = srnet.init_params(tiny_config(), np.random.default_rng(12))
    with pytest.raises(ValueError, match="mismatch"):
        srnet.reconstruct(np.zeros((1, 3, 4, 4)), np.zeros((1, 1, 5, 5)),
                          params)


def test_reconstruct_bilinear_thermal_path_tracks_bicubic():
    """Zero features + bilinear-initialized thermal cascade ~ upsampled T."""
    config = tiny_config()
    rng = np.random.default_rng(13)
    params = srnet.init_params(config, rng)
    zero_bias(params)
    srnet.set_thermal_path_bilinear(params)
    yy, xx = np.meshgrid(np.linspace(0, 1, 12), np.linspace(0, 1, 12),
                         indexing="ij")
    t = (0.4 * np.sin(6 * xx) + 0.3 * yy + 0.3)[None, None]
    out = srnet.reconstruct(np.zeros((1, config.channels, 12, 12)), t, params)
    ref = imgproc.bicubic_resize(t, 96, 96)
    assert np.all(np.isfinite(out))
    corr = np.corrcoef(out.ravel(), ref.ravel())[0, 1]
    assert corr > 0.9


# ---------------------------------------------------------------------------
# full forward
# ---------------------------------------------------------------------------

def test_forward_patch_geometry():
    config = tiny_config()
    rng = np.random.default_rng(14)
    params = srnet.init_params(config, rng)
    v = rng.standard_normal((1, 1, 96, 96))
    t = rng.standard_normal((1, 1, 12, 12))
    out = srnet.forward(v, t, config, params)
    assert out.shape == (1, 1, 96, 96)


def test_forward_shape_contract_various_sizes():
    config = tiny_config()
    rng = np.random.default_rng(15)
    params = srnet.init_params(config, rng)
    for h, w in [(1, 1), (2, 5), (4, 3)]:
        v = rng.standard_normal((1, 1, 8 * h, 8 * w))
        t = rng.standard_normal((1, 1, h, w))
        assert srnet.forward(v, t, config, params).shape == (1, 1, 8 * h, 8 * w)


def test_tt_variant_equals_vt_on_upsampled_thermal():
    rng = np.random.default_rng(16)
    config_vt = tiny_config(variant="VT")
    config_tt = tiny_config(variant="TT")
    params = srnet.init_params(config_vt, rng)
    t = rng.standard_normal((1, 1, 6, 6))
    v_sub = imgproc.bicubic_resize(t, 48, 48)
    out_vt = srnet.forward(v_sub, t, config_vt, params)
    out_tt = srnet.forward(None, t, config_tt, params)
    np.testing.assert_array_equal(out_vt, out_tt)


def test_vt_tt_parameter_inventories_identical():
    inv_vt = srnet.layer_inventory(tiny_config(variant="VT"))
    inv_tt = srnet.layer_inventory(tiny_config(variant="TT"))
    assert inv_vt == inv_tt


def test_forward_deterministic_given_seed():
    config = tiny_config()

    def run():
        rng = np.random.default_rng(42)
        params = srnet.init_params(config, rng)
        v = rng.standard_normal((1, 1, 16, 16))
        t = rng.standard_normal((1, 1, 2, 2))
        return srnet.forward(v, t, config, params)

    assert np.array_equal(run(), run())


def test_default_inventory_matches_golden_list():
    names = [name for name, _, _ in srnet.layer_inventory(NetworkConfig())]
    assert names[:3] == ["visible.conv1", "visible.conv2", "visible.conv3"]
    assert names[3:6] == ["thermal.conv1", "thermal.conv2", "thermal.conv3"]
    assert names[6] == "fusion.conv"
    assert names[7:11] == ["block01.conv1", "block01.bn1", "block01.conv2",
                           "block01.bn2"]
    assert names[-7:] == ["upsample.deconv1", "upsample.deconv2",
                          "upsample.deconv3", "upsample.final_conv",
                          "thermal_up.deconv1", "thermal_up.deconv2",
                          "thermal_up.deconv3"]
    assert len(names) == 6 + 1 + 4 * 16 + 3 + 1 + 3


def test_default_param_count_and_model_size(tmp_path):
    params = srnet.init_params(NetworkConfig(), np.random.default_rng(0),
                               dtype="f32")
    ckpt = tmp_path / "default.ckpt"
    srnet.save_checkpoint(ckpt, params)
    size_mb = ckpt.stat().st_size / 2 ** 20
    assert size_mb < 7.0
    assert params.num_parameters() > 1_000_000


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def test_l1_loss_basics():
    a = np.random.default_rng(17).random((1, 1, 5, 5))
    assert srnet.l1_loss(a, a.copy()) == 0.0
    b = a + 0.25
    assert srnet.l1_loss(a, b) == pytest.approx(25 * 0.25, rel=1e-12)


def test_l1_loss_matches_scalar_loop():
    rng = np.random.default_rng(18)
    a = rng.standard_normal((2, 1, 7, 7))
    b = rng.standard_normal((2, 1, 7, 7))
    assert srnet.l1_loss(a, b) == pytest.approx(scalar_l1(a, b), abs=1e-12)


def test_l1_loss_backward_sign_convention():
    a = np.array([[[[1.0, -2.0, 3.0]]]])
    b = np.array([[[[1.0, 0.0, 5.0]]]])
    np.testing.assert_array_equal(srnet.l1_loss_backward(a, b),
                                  [[[[0.0, -1.0, -1.0]]]])


# ---------------------------------------------------------------------------
# end-to-end gradients
# ---------------------------------------------------------------------------

def test_full_gradcheck_tiny_vt():
    err = run_full_gradcheck(tiny_config(), seed=0)
    assert err < 1e-4


def test_full_gradcheck_tiny_tt():
    err = run_full_gradcheck(tiny_config(variant="TT"), seed=1)
    assert err < 1e-4


def test_full_gradcheck_final_conv_after_add():
    err = run_full_gradcheck(tiny_config(final_conv_after_add=True), seed=2)
    assert err < 1e-4


def test_gradcheck_detects_injected_fault():
    """Scaling one weight gradient x2 must trip the detector hard."""
    config = tiny_config()
    rng = np.random.default_rng(3)
    params = srnet.init_params(config, rng, dtype="f64")
    srnet.randomize_probe_point(params, rng)
    t = rng.standard_normal((1, 1, 2, 2))
    v = rng.standard_normal((1, 1, 16, 16))
    cache = {}
    i_sr = srnet.forward(v, t, config, params, mode="train",
                         update_stats=False, cache=cache)
    gt = make_gradcheck_target(i_sr, rng)

    def loss():
        return srnet.l1_loss(
            srnet.forward(v, t, config, params, mode="train",
                          update_stats=False), gt)

    params.zero_grads()
    srnet.backward(srnet.l1_loss_backward(i_sr, gt), cache, params)
    layer = params["fusion.conv"]
    layer.grad_weight *= 2.0
    err = ops.grad_check(loss, [layer.weight], [layer.grad_weight], h=1e-5)
    assert err > 0.3


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_bit_identical(tmp_path):
    config = tiny_config(n_blocks=3)
    rng = np.random.default_rng(19)
    params = srnet.init_params(config, rng, dtype="f32")
    # perturb running stats so they are not at init values
    v = rng.standard_normal((2, 1, 16, 16)).astype(np.float32)
    t = rng.standard_normal((2, 1, 2, 2)).astype(np.float32)
    out1 = srnet.forward(v, t, config, params, mode="train", update_stats=True)
    ckpt = tmp_path / "net.ckpt"
    srnet.save_checkpoint(ckpt, params)
    loaded = srnet.load_checkpoint(ckpt)
    assert loaded.config == config
    out2 = srnet.forward(v, t, config, loaded, mode="eval")
    out1b = srnet.forward(v, t, config, params, mode="eval")
    assert np.array_equal(out2, out1b)
    assert out1.shape == out2.shape


def test_checkpoint_inventory_validation(tmp_path):
    config = tiny_config()
    params = srnet.init_params(config, np.random.default_rng(20))
    ckpt = tmp_path / "net.ckpt"
    srnet.save_checkpoint(ckpt, params)
    raw = bytearray(ckpt.read_bytes())
    # corrupt a tensor record name so the inventory check fires
    idx = raw.find(b"fusion.conv.weight")
    raw[idx:idx + 6] = b"fusioX"
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    with pytest.raises(InvariantError, match="inventory"):
        srnet.load_checkpoint(bad)
