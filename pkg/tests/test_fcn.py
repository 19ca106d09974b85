import numpy as np
import pytest

from hummit.errors import CorruptFile, DegenerateBatch, NoFrames, ShapeMismatch
from hummit.fcn import (
    ArchSpec,
    TrainConfig,
    _minibatches,
    batchnorm_forward,
    conv1d_forward,
    forward,
    gap,
    gradients,
    init_params,
    load_model,
    predict_song,
    save_model,
    train_arrays,
)

from oracles import central_difference_grad, hand_correlate_same

TINY_FCN = ArchSpec("fcn", 3, 7, blocks=((3, 4), (4, 3)))
TINY_MLP = ArchSpec("mlp", 3, 6, hidden=(5, 4))


def rel_error(a, b):
    # floor keeps exactly-zero gradients (conv bias ahead of batch norm) finite
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)


@pytest.mark.parametrize("arch", [TINY_FCN, TINY_MLP], ids=["fcn", "mlp"])
def test_gradient_check(arch):
    rng = np.random.default_rng(11)
    model = init_params(arch, 5, np.float64)
    for k in model.params:
        model.params[k] += rng.normal(0, 0.1, model.params[k].shape)
    x = rng.normal(0, 1, (4, arch.input_len))
    y = np.array([0, 1, 2, 1])
    grads, _ = gradients(model, x, y)
    for name, p in model.params.items():
        fd = central_difference_grad(lambda: gradients(model, x, y)[1], p, 1e-5)
        assert rel_error(grads[name], fd).max() <= 1e-4, name


class TestConv:
    def test_odd_kernel(self):
        out = conv1d_forward(np.array([1.0, 2, 3, 4])[None, :, None],
                             np.array([1.0, 0, -1])[None, None, :], [0.0])
        np.testing.assert_allclose(out[0, :, 0], [-2, -2, -2, 3])

    @pytest.mark.parametrize("kernel", [1, 2, 3, 5, 8])
    def test_against_loop_oracle(self, kernel):
        rng = np.random.default_rng(kernel)
        x = rng.normal(size=11)
        k = rng.normal(size=kernel)
        out = conv1d_forward(x[None, :, None], k[None, None, :], [0.5])
        np.testing.assert_allclose(out[0, :, 0], np.array(hand_correlate_same(x, k)) + 0.5, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeMismatch):
            conv1d_forward(np.zeros((1, 5, 2)), np.zeros((3, 1, 3)), np.zeros(3))


class TestBatchNorm:
    def test_train_normalizes(self):
        x = np.array([[[1.0], [3.0]], [[5.0], [7.0]]])
        y, rm, rv = batchnorm_forward(x, [1.0], [0.0])
        np.testing.assert_allclose(y.ravel(), np.array([-3, -1, 1, 3]) / np.sqrt(5 + 1e-5))
        np.testing.assert_allclose(rm, [0.4])
        np.testing.assert_allclose(rv, [0.9 + 0.5])

    def test_infer_uses_running(self):
        y, _, _ = batchnorm_forward(np.array([[[2.0]]]), [2.0], [1.0], "infer", [1.0], [4.0])
        np.testing.assert_allclose(y.ravel(), [2 * 1 / np.sqrt(4 + 1e-5) + 1])

    def test_single_sample_train(self):
        with pytest.raises(DegenerateBatch):
            batchnorm_forward(np.zeros((1, 4, 2)), np.ones(2), np.zeros(2))


def test_gap():
    np.testing.assert_allclose(gap(np.arange(6.0).reshape(1, 3, 2)), [[2.0, 3.0]])


class TestShapes:
    def test_simplex(self):
        model = init_params(ArchSpec("fcn", 10, 500), 0)
        x = np.random.default_rng(0).normal(0, 3, (5, 500))
        p = forward(model, x)
        assert p.shape == (5, 10)
        assert np.all(p >= 0) and np.max(np.abs(p.sum(axis=1) - 1)) <= 1e-6

    def test_length_invariance(self):
        a = init_params(ArchSpec("fcn", 10, 300), 0)
        b = init_params(ArchSpec("fcn", 10, 500), 0)
        assert a.inventory() == b.inventory()
        # one model serves both lengths
        assert forward(b, np.zeros((2, 300))).shape == forward(b, np.zeros((2, 500))).shape

    def test_mlp_depends_on_length(self):
        a = init_params(ArchSpec("mlp", 10, 300), 0)
        b = init_params(ArchSpec("mlp", 10, 500), 0)
        assert a.inventory() != b.inventory()
        with pytest.raises(ShapeMismatch):
            forward(a, np.zeros((1, 500)))

    def test_mlp_layers(self):
        shapes = init_params(ArchSpec("mlp", 10, 250), 0).inventory()
        assert [shapes[f"fc{i}.weight"] for i in range(4)] == [(250, 300)] + [(300, 300)] * 3
        assert shapes["out.weight"] == (300, 10)

    def test_fcn_layers(self):
        shapes = init_params(ArchSpec("fcn", 10, 250), 0).inventory()
        assert shapes["conv0.weight"] == (128, 1, 8)
        assert shapes["conv1.weight"] == (256, 128, 5)
        assert shapes["conv2.weight"] == (128, 256, 3)
        assert shapes["out.weight"] == (128, 10)


class TestSchedule:
    def test_learning_rates(self):
        cfg = TrainConfig()
        assert cfg.lr_at(1) == cfg.lr_at(30) == 0.005
        assert cfg.lr_at(31) == pytest.approx(0.0035)
        assert cfg.lr_at(32) == pytest.approx(0.00245)

    @pytest.mark.parametrize("kwargs", [dict(decay_factor=1.0), dict(batch_size=0), dict(momentum=1.0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_minibatches_never_single(self):
        sizes = [b.size for b in _minibatches(np.arange(9), 4)]
        assert sizes == [4, 5]


def toy_data():
    x = np.array([np.sin(np.linspace(0, 3, 20)), np.cos(np.linspace(0, 3, 20)),
                  np.linspace(-1, 1, 20), -np.linspace(-1, 1, 20)])
    return x, np.array([0, 1, 0, 1])


class TestTraining:
    def test_overfit_toy(self):
        x, y = toy_data()
        arch = ArchSpec("fcn", 2, 20)
        # the decay phase would freeze the step size long before 500 epochs
        cfg = TrainConfig(max_epochs=500, batch_size=4, constant_epochs=500)
        _, history = train_arrays(x, y, x[:0], y[:0], None, arch, cfg)
        assert min(r["loss"] for r in history) < 0.01
        losses = np.array([r["loss"] for r in history])
        assert np.all(np.diff(losses[5:]) <= 1e-3)

    def test_deterministic(self):
        x, y = toy_data()
        arch = ArchSpec("fcn", 2, 20, blocks=((4, 3),))
        cfg = TrainConfig(max_epochs=5, batch_size=2, seed=3)
        a, ha = train_arrays(x, y, x, y, ["a", "b", "c", "d"], arch, cfg)
        b, hb = train_arrays(x, y, x, y, ["a", "b", "c", "d"], arch, cfg)
        assert save_model(a) == save_model(b) and ha == hb

    def test_records(self):
        x, y = toy_data()
        arch = ArchSpec("mlp", 2, 20, hidden=(8,))
        _, hist = train_arrays(x, y, x, y, list("abcd"), arch, TrainConfig(max_epochs=3))
        assert [r["epoch"] for r in hist] == [1, 2, 3]
        assert set(hist[0]) == {"epoch", "lr", "loss", "train_accuracy", "val_loss", "val_accuracy"}

    def test_single_frame_fcn(self):
        x, y = toy_data()
        with pytest.raises(DegenerateBatch):
            train_arrays(x[:1], y[:1], x[:0], y[:0], None, ArchSpec("fcn", 2, 20), TrainConfig(max_epochs=1))


class TestCheckpoint:
    def test_round_trip(self):
        model = init_params(ArchSpec("fcn", 3, 50, blocks=((4, 3),), class_names=("a", "b", "c")), 1)
        data = save_model(model)
        back = load_model(data)
        assert back.arch == model.arch
        assert save_model(back) == data
        x = np.random.default_rng(0).normal(size=(2, 50))
        np.testing.assert_array_equal(forward(back, x), forward(model, x))

    def test_corrupt(self):
        data = bytearray(save_model(init_params(ArchSpec("mlp", 2, 4, hidden=(3,)), 0)))
        data[30] ^= 0xFF
        with pytest.raises(CorruptFile):
            load_model(bytes(data))
        with pytest.raises(CorruptFile):
            load_model(b"XXXXXX" + bytes(data[6:]))

    def test_predict_song_ranks(self):
        model = init_params(ArchSpec("fcn", 3, 50, blocks=((4, 3),), class_names=("a", "b", "c")), 1)
        ranked = predict_song(model, np.random.default_rng(0).normal(size=(2, 50)))
        assert sorted(n for n, _ in ranked) == ["a", "b", "c"]
        assert ranked[0][1] >= ranked[1][1] >= ranked[2][1]
        with pytest.raises(NoFrames):
            predict_song(model, np.zeros((0, 50)))
