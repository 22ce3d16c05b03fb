import numpy as np
import pytest

from specklebench import dae
from specklebench.dae import Checkpoint, LayerSpec, NetworkConfig, NetworkError, TrainConfig, build_network
from specklebench.imaging import phantom_image, resize_bilinear
from specklebench.metrics import mse_metric
from specklebench.noise import NoiseSpec, add_speckle
from _oracles import numeric_grad, rel_error


def small(use_skip=True, c=4, size=16):
    return NetworkConfig(use_skip=use_skip, base_channels=c, input_size=size)


def phantoms(n, size, seed=0):
    return [resize_bilinear(phantom_image(np.random.default_rng([seed, i]), "benign", 200), size, size)
            for i in range(n)]


class TestBuild:
    @pytest.mark.parametrize("use_skip", [True, False])
    def test_shape_contract_128(self, use_skip):
        net = build_network(NetworkConfig(use_skip=use_skip, base_channels=4), seed=0)
        x = np.random.default_rng(0).random((2, 1, 128, 128))
        out = net.forward(x)
        assert out.shape == (2, 1, 128, 128)
        assert out.dtype == np.float32

    def test_default_width_layer_table(self):
        table = NetworkConfig().layers()
        assert [l.kind for l in table].count("maxpool2x2") == 1
        assert (table[0].in_ch, table[0].out_ch, table[3].out_ch) == (1, 32, 64)

    def test_skip_widens_decoder(self):
        def decoder_conv_in(cfg):
            return [l for l in cfg.layers() if l.kind == "conv3x3"][-1].in_ch
        assert decoder_conv_in(NetworkConfig(use_skip=True)) > decoder_conv_in(NetworkConfig(use_skip=False))
        assert not any(l.kind == "concat_skip" for l in NetworkConfig(use_skip=False).layers())

    def test_same_seed_same_params(self):
        a, b = build_network(small(), 3), build_network(small(), 3)
        c = build_network(small(), 4)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k].value, b.params[k].value)
        assert any(np.any(a.params[k].value != c.params[k].value) for k in a.params)

    def test_he_uniform_bounds(self):
        net = build_network(small(c=8), 0)
        w = net.params["0.w"].value
        assert np.abs(w).max() <= np.sqrt(6 / 9)
        assert not net.params["0.b"].value.any()

    def test_layer_validation(self):
        good = small().layers()
        dae.validate_layers(good)
        two_pools = good[:3] + [LayerSpec("maxpool2x2", 4, 4)] + good[3:]
        with pytest.raises(NetworkError, match="exactly one"):
            dae.validate_layers(two_pools)
        bad = list(good)
        bad[3] = LayerSpec("conv3x3", 5, 8)
        with pytest.raises(NetworkError, match="input channels"):
            dae.validate_layers(bad)
        bad_concat = list(good)
        bad_concat[6] = LayerSpec("concat_skip", 4, 9, skip_source="enc1")
        with pytest.raises(NetworkError, match="concat"):
            dae.validate_layers(bad_concat)


class TestForward:
    @pytest.mark.parametrize("use_skip", [True, False])
    def test_untrained_output_in_open_interval(self, use_skip):
        net = build_network(small(use_skip), 1)
        out = net.forward(np.random.default_rng(1).random((3, 1, 16, 16)))
        assert np.all(np.isfinite(out)) and out.min() > 0 and out.max() < 1

    def test_zero_weights_give_half(self):
        net = build_network(small(), 0)
        for p in net.params.values():
            p.value[...] = 0
        np.testing.assert_array_equal(net.forward(np.random.default_rng(0).random((1, 1, 16, 16))), 0.5)

    @pytest.mark.parametrize("use_skip", [True, False])
    def test_batch_consistency(self, use_skip):
        net = build_network(small(use_skip, c=6), 2)
        x = np.random.default_rng(2).random((2, 1, 16, 16))
        both = net.forward(x)
        one = np.concatenate([net.forward(x[:1]), net.forward(x[1:])])
        np.testing.assert_allclose(both, one, atol=1e-6)

    def test_wrong_shape(self):
        net = build_network(small(), 0)
        with pytest.raises(NetworkError):
            net.forward(np.zeros((1, 1, 8, 8)))
        with pytest.raises(NetworkError):
            net.forward(np.zeros((1, 2, 16, 16)))


@pytest.mark.parametrize("use_skip", [True, False])
def test_whole_network_gradient(use_skip):
    net = build_network(NetworkConfig(use_skip=use_skip, base_channels=2, input_size=6), 5).astype(np.float64)
    rng = np.random.default_rng(9)
    # non-zero biases keep pre-activations off the ReLU kink at exactly 0
    for name, p in net.params.items():
        if name.endswith(".b"):
            p.value = rng.uniform(0.05, 0.3, p.value.shape)
    x, target = rng.random((2, 1, 6, 6)), rng.random((2, 1, 6, 6))
    net.zero_grad()
    net.forward_backward(x, target)
    for name in net.param_names():
        p = net.params[name]
        analytic = p.grad.copy()

        def loss(v, p=p):
            saved = p.value
            p.value = v
            out = net.forward(x)
            p.value = saved
            return float(np.mean((out - target) ** 2))

        assert rel_error(analytic, numeric_grad(loss, p.value)) < 1e-3, name


def test_skip_reaches_first_encoder_layer():
    net = build_network(small(True), 0)
    x = np.random.default_rng(0).random((1, 1, 16, 16))
    net.zero_grad()
    net.forward_backward(x, x)
    assert np.linalg.norm(net.params["0.w"].grad) > 0


class TestTrain:
    def test_one_step_reduces_loss(self):
        img = phantoms(1, 32)[0]
        net = build_network(small(True, c=4, size=32), 0)
        cfg = TrainConfig(epochs=1, batch_size=1, learning_rate=1e-3, seed=0)
        noisy = add_speckle(img, NoiseSpec(0.1, 123))[None, None]
        before = dae.T.mse_loss(net.forward(noisy), img[None, None].astype(np.float32))[0]
        dae.train_on_arrays(net, [img], [img], cfg)
        after = dae.T.mse_loss(net.forward(noisy), img[None, None].astype(np.float32))[0]
        assert after < before

    def test_zero_learning_rate(self):
        imgs = phantoms(3, 16)
        net = build_network(small(), 0)
        start = net.state_arrays()
        ckpt, hist = dae.train_on_arrays(net, imgs[:2], imgs[2:], TrainConfig(epochs=3, batch_size=2, learning_rate=0.0))
        for k, v in start.items():
            np.testing.assert_array_equal(net.params[k].value, v)
        assert len(set(hist.val_loss)) == 1

    @pytest.mark.parametrize("use_skip", [True, False])
    def test_deterministic(self, use_skip):
        imgs = phantoms(4, 16)
        runs = []
        for _ in range(2):
            net = build_network(small(use_skip), 7)
            ckpt, hist = dae.train_on_arrays(net, imgs[:3], imgs[3:], TrainConfig(epochs=3, batch_size=2, seed=7))
            runs.append((ckpt.to_bytes(), hist.to_csv()))
        assert runs[0] == runs[1]

    def test_history_and_best_checkpoint(self):
        imgs = phantoms(4, 16)
        net = build_network(small(), 1)
        ckpt, hist = dae.train_on_arrays(net, imgs[:3], imgs[3:], TrainConfig(epochs=4, batch_size=2, seed=1))
        assert hist.epochs == [1, 2, 3, 4]
        assert ckpt.best_val_loss == min(hist.val_loss)
        assert hist.val_loss[ckpt.epoch - 1] == ckpt.best_val_loss
        lines = hist.to_csv().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 5

    def test_patience_stops_early(self):
        imgs = phantoms(3, 16)
        net = build_network(small(), 0)
        _, hist = dae.train_on_arrays(net, imgs[:2], imgs[2:],
                                      TrainConfig(epochs=10, batch_size=2, learning_rate=0.0, patience=2))
        assert len(hist.epochs) == 3

    def test_divergence_reported(self):
        imgs = phantoms(2, 16)
        imgs[0] = imgs[0].copy()
        imgs[0][0, 0] = np.nan
        net = build_network(small(), 0)
        with pytest.raises(dae.TrainingDiverged) as err:
            dae.train_on_arrays(net, imgs[:1], imgs[1:], TrainConfig(epochs=2, batch_size=1))
        assert err.value.last_finite_epoch == 0

    def test_both_variants_reduce_loss(self):
        imgs = phantoms(5, 16)
        for use_skip in (True, False):
            net = build_network(small(use_skip, c=4), 3)
            _, hist = dae.train_on_arrays(net, imgs[:4], imgs[4:], TrainConfig(epochs=6, batch_size=1, seed=3))
            assert np.all(np.isfinite(hist.train_loss))
            assert hist.train_loss[-1] < hist.train_loss[0]

    def test_empty_sets(self):
        with pytest.raises(ValueError):
            dae.train_on_arrays(build_network(small(), 0), [], [np.zeros((16, 16))], TrainConfig(epochs=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(noise_variances=())
        assert TrainConfig().learning_rate == 1e-3
        assert dae.PAPER_LEARNING_RATE == 1e-10


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        net = build_network(small(True, c=3), 11)
        ckpt = Checkpoint(net.state_arrays(), net.config, 5, 0.0123, 11)
        ckpt.save(tmp_path / "c.ckpt")
        back = Checkpoint.load(tmp_path / "c.ckpt")
        assert back.config == ckpt.config and back.epoch == 5 and back.best_val_loss == 0.0123 and back.seed == 11
        x = np.random.default_rng(0).random((2, 1, 16, 16))
        np.testing.assert_array_equal(back.network().forward(x), net.forward(x))
        assert back.to_bytes() == ckpt.to_bytes()

    def test_header_layout(self):
        ckpt = Checkpoint(build_network(small(), 0).state_arrays(), small(), 1, 0.5, 0)
        data = ckpt.to_bytes()
        assert data.startswith(b"SPKDAE\n")
        assert b'"version": 1' in data

    def test_rejects_garbage(self):
        with pytest.raises(ValueError, match="magic"):
            Checkpoint.from_bytes(b"nope")
        data = Checkpoint(build_network(small(), 0).state_arrays(), small(), 1, 0.5, 0).to_bytes()
        with pytest.raises(ValueError):
            Checkpoint.from_bytes(data + b"\0")
        with pytest.raises(ValueError, match="version"):
            Checkpoint.from_bytes(data.replace(b'"version": 1', b'"version": 9'))


class TestDenoise:
    def test_deterministic_and_clamped(self):
        net = build_network(small(), 0)
        ckpt = Checkpoint(net.state_arrays(), net.config, 0, 1.0, 0)
        img = np.random.default_rng(0).random((16, 16))
        a, b = dae.denoise(ckpt, img), dae.denoise(ckpt, img)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0 and a.max() <= 1 and a.shape == (16, 16)

    def test_shape_mismatch(self):
        net = build_network(small(), 0)
        with pytest.raises(NetworkError):
            dae.denoise(Checkpoint(net.state_arrays(), net.config, 0, 1.0, 0), np.zeros((8, 8)))

    def test_trained_model_improves_held_out(self):
        imgs = phantoms(8, 32, seed=4)
        net = build_network(small(True, c=8, size=32), 0)
        ckpt, _ = dae.train_on_arrays(net, imgs[:6], imgs[6:7],
                                      TrainConfig(epochs=40, batch_size=2, learning_rate=2e-3, seed=0,
                                                  noise_variances=(0.1,)))
        clean = imgs[7]
        noisy = add_speckle(clean, NoiseSpec(0.1, 99))
        assert mse_metric(clean, dae.denoise(ckpt, noisy)) < mse_metric(clean, noisy)
