"""Convolutional stack: shapes, adjoints, Adam, checkpoint round-trip."""

import numpy as np
import pytest

from softlambert import net as network
from softlambert.net import (CHECKPOINT_MAGIC, HeadBundle, LayerSpec,
                             StaleCacheError, adam_step, backward, conv2d,
                             conv2d_grad_input, conv2d_grad_weight,
                             default_architecture, forward, init_net,
                             load_checkpoint, save_checkpoint,
                             transposed_conv2d)
from softlambert.tensor import LogDomainImage, PlaneTensor


def _image(rng, h=8, w=8, c=3):
    return LogDomainImage(PlaneTensor(rng.normal(0.0, 1.0, (h, w, c))), 1e-4)


class TestConvPrimitives:
    def test_conv_output_shape(self):
        x = np.zeros((8, 8, 3))
        w = np.zeros((3, 3, 3, 16))
        assert conv2d(x, w, stride=1, pad=1).shape == (8, 8, 16)
        assert conv2d(x, w, stride=2, pad=1).shape == (4, 4, 16)

    def test_transposed_conv_doubles_even_dims(self):
        x = np.zeros((4, 4, 8))
        w = np.zeros((4, 4, 16, 8))
        assert transposed_conv2d(x, w, stride=2, pad=1).shape == (8, 8, 16)

    def test_conv_known_values_identity_kernel(self):
        # 1x1 kernel copying channel 0.
        x = np.arange(16, dtype=np.float64).reshape(4, 4, 1)
        w = np.ones((1, 1, 1, 1))
        np.testing.assert_array_equal(conv2d(x, w, 1, 0), x)

    def test_conv_box_kernel_sums_window(self):
        x = np.ones((4, 4, 1))
        w = np.ones((3, 3, 1, 1))
        out = conv2d(x, w, 1, 1)
        assert out[1, 1, 0] == 9.0      # interior: full window
        assert out[0, 0, 0] == 4.0      # corner: zero padding

    def test_grad_input_is_adjoint_of_conv(self):
        # <conv(x), g> == <x, conv_grad_input(g)> for random tensors.
        rng = np.random.default_rng(0)
        for stride, pad, k in ((1, 1, 3), (2, 1, 3), (1, 0, 1)):
            x = rng.normal(size=(6, 6, 2))
            w = rng.normal(size=(k, k, 2, 4))
            y = conv2d(x, w, stride, pad)
            g = rng.normal(size=y.shape)
            lhs = float((y * g).sum())
            rhs = float((x * conv2d_grad_input(g, w, stride, pad, (6, 6))).sum())
            assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))

    def test_grad_weight_is_adjoint_in_weights(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(6, 6, 2))
        w = rng.normal(size=(3, 3, 2, 4))
        y = conv2d(x, w, 2, 1)
        g = rng.normal(size=y.shape)
        dw = conv2d_grad_weight(x, g, 2, 1, 3)
        lhs = float((y * g).sum())
        rhs = float((w * dw).sum())
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


class TestForward:
    def test_head_shapes(self):
        net = init_net(0)
        rng = np.random.default_rng(0)
        heads, _ = forward(net, _image(rng, 16, 12))
        assert heads.albedo_mean.shape == (16, 12, 3)
        assert heads.shading_mean.shape == (16, 12, 1)
        assert heads.log_var_albedo.shape == (16, 12, 1)
        assert heads.log_var_shading.shape == (16, 12, 1)
        assert heads.log_var_constraint.shape == (16, 12, 1)

    def test_rejects_indivisible_dims(self):
        net = init_net(0)
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            forward(net, _image(rng, 6, 8))

    def test_rejects_wrong_channel_count(self):
        net = init_net(0)
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            forward(net, _image(rng, 8, 8, c=1))

    def test_deterministic(self):
        net = init_net(3)
        rng = np.random.default_rng(5)
        img = _image(rng)
        h1, _ = forward(net, img)
        h2, _ = forward(net, img)
        np.testing.assert_array_equal(h1.as_map(), h2.as_map())

    def test_same_seed_same_init(self):
        a, b = init_net(11), init_net(11)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_different_seed_different_init(self):
        a, b = init_net(1), init_net(2)
        assert any(not np.array_equal(wa, wb)
                   for wa, wb in zip(a.weights, b.weights))

    def test_head_bundle_round_trip(self):
        rng = np.random.default_rng(0)
        full = rng.normal(size=(4, 4, 7))
        np.testing.assert_array_equal(HeadBundle.from_map(full).as_map(), full)


class TestBackward:
    def test_stale_cache_detected(self):
        net = init_net(0)
        rng = np.random.default_rng(0)
        img = _image(rng)
        heads, cache = forward(net, img)
        grads = backward(net, cache, HeadBundle.zeros_like(heads))
        stepped = adam_step(net, grads, lr=1e-3)
        with pytest.raises(StaleCacheError):
            backward(stepped, cache, HeadBundle.zeros_like(heads))

    def test_zero_head_grads_give_zero_weight_grads(self):
        net = init_net(0)
        rng = np.random.default_rng(0)
        heads, cache = forward(net, _image(rng))
        grads = backward(net, cache, HeadBundle.zeros_like(heads))
        assert all(np.all(g == 0.0) for g in grads)


class TestAdam:
    def test_single_step_from_zero_moments(self):
        # One parameter, gradient 1: bias-corrected m-hat = v-hat = 1,
        # so the update is -lr / (1 + eps) regardless of decay rates.
        layers = (LayerSpec("conv", 3, 7, 1, 1, 0),
                  LayerSpec("head_split", 7, 7, 1, 1, 0))
        net = init_net(0, layers)
        grads = [np.ones_like(w) for w in net.weights]
        stepped = adam_step(net, grads, lr=0.1)
        delta = stepped.weights[0] - net.weights[0]
        np.testing.assert_allclose(delta, -0.1, rtol=1e-7)
        assert stepped.step_count == 1

    def test_rejects_bad_lr_and_betas(self):
        net = init_net(0)
        grads = [np.zeros_like(w) for w in net.weights]
        with pytest.raises(ValueError):
            adam_step(net, grads, lr=0.0)
        with pytest.raises(ValueError):
            adam_step(net, grads, lr=0.1, beta1=1.0)

    def test_rejects_mismatched_grad_shapes(self):
        net = init_net(0)
        grads = [np.zeros_like(w) for w in net.weights]
        grads[0] = np.zeros((1, 1, 1, 1))
        with pytest.raises(ValueError):
            adam_step(net, grads, lr=0.1)

    def test_original_state_untouched(self):
        net = init_net(0)
        before = [w.copy() for w in net.weights]
        grads = [np.ones_like(w) for w in net.weights]
        adam_step(net, grads, lr=0.1)
        for w, b in zip(net.weights, before):
            np.testing.assert_array_equal(w, b)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        net = init_net(7)
        grads = [np.full_like(w, 0.25) for w in net.weights]
        net = adam_step(net, grads, lr=1e-3)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        loaded = load_checkpoint(path)
        assert loaded.step_count == net.step_count
        assert loaded.rng_seed == net.rng_seed
        assert loaded.layers == net.layers
        for a, b in zip(net.weights + net.adam_m + net.adam_v,
                        loaded.weights + loaded.adam_m + loaded.adam_v):
            np.testing.assert_array_equal(a, b)

    def test_file_starts_with_magic(self, tmp_path):
        net = init_net(0)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        assert path.read_bytes()[:8] == CHECKPOINT_MAGIC

    def test_save_deterministic(self, tmp_path):
        net = init_net(3)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(net, p1)
        save_checkpoint(net, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupt_magic_rejected(self, tmp_path):
        net = init_net(0)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        net = init_net(0)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestArchitecture:
    def test_default_architecture_channel_chain(self):
        layers = default_architecture()
        assert layers[0].in_channels == 3
        assert layers[-1].kind == "head_split"
        assert layers[-2].out_channels == 7
        convs = [l for l in layers if l.kind in ("conv", "transposed_conv")]
        for prev, nxt in zip(convs, convs[1:]):
            assert prev.out_channels == nxt.in_channels

    def test_layer_spec_validation(self):
        with pytest.raises(ValueError):
            LayerSpec("pool", 3, 3, 2, 2, 0)
        with pytest.raises(ValueError):
            LayerSpec("conv", 3, 3, 3, 3, 1)

    def test_parameter_count_is_modest(self):
        net = init_net(0)
        assert net.num_parameters() < 50_000
