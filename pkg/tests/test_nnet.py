import numpy as np
import pytest
from hypothesis import given, strategies as st

from zrsub.bnf import PAPER_SPLICING
from zrsub.nnet import (DenseNetwork, FrameDataset, Layer, SequenceDataset, TrainConfig, TrainingError, _limit_change,
                        forward, gradients, init_layer, layerwise_pretrain, load_network,
                        recompute_batchnorm_stats, save_network, sgd_train, splice, splice_stack)

from oracles import gradient_check


def _net(rng, sizes, activation="tanh", batchnorm=False):
    return DenseNetwork([init_layer(a, b, rng, activation, batchnorm) for a, b in zip(sizes, sizes[1:])])


def test_identity_linear_layer(rng):
    net = DenseNetwork([Layer(np.eye(4), np.zeros(4), "linear")])
    x = rng.standard_normal((5, 4))
    assert np.array_equal(forward(net, x)[-1], x)


def test_relu_negative_preactivations(rng):
    net = DenseNetwork([Layer(np.eye(3), -10 * np.ones(3), "relu")])
    assert np.all(forward(net, rng.uniform(-1, 1, (4, 3)))[-1] == 0)


def test_forward_matches_reimplementation(rng):
    net = _net(rng, [4, 6, 3])
    net.layers[1].activation = "linear"
    x = rng.standard_normal((7, 4))
    out = np.zeros((7, 3))
    for n in range(7):
        h = [np.tanh(sum(x[n, i] * net.layers[0].W[i, j] for i in range(4)) + net.layers[0].b[j]) for j in range(6)]
        out[n] = [sum(h[i] * net.layers[1].W[i, j] for i in range(6)) + net.layers[1].b[j] for j in range(3)]
    np.testing.assert_allclose(forward(net, x)[-1], out, atol=1e-10)


def test_forward_errors(rng):
    net = _net(rng, [4, 3])
    with pytest.raises(ValueError):
        forward(net, np.zeros((2, 5)))
    with pytest.raises(KeyError):
        forward(net, np.zeros((2, 4)), head="xx")
    with pytest.raises(ValueError):
        DenseNetwork([init_layer(4, 3, rng), init_layer(2, 2, rng)])


def test_zero_error_gives_zero_gradients(rng):
    net = _net(rng, [3, 4, 2])
    x = rng.standard_normal((5, 3))
    _, grads, _ = gradients(net, x, forward(net, x, "train")[-1], "squared_error")
    assert all(np.all(g == 0) for g in grads.values())


@pytest.mark.parametrize("activation", ["tanh", "relu", "linear"])
def test_finite_differences_per_activation(activation):
    rng = np.random.default_rng(7)
    net = _net(rng, [4, 5, 3], activation)
    x = rng.standard_normal((6, 4))
    if activation == "relu":  # keep pre-activations away from the kink
        for layer in net.layers:
            layer.b += 0.05
    errs = gradient_check(net, x, rng.standard_normal((6, 3)), "squared_error")
    assert sum(v.size for v in net.parameters().values()) <= 200
    assert max(errs.values()) < 1e-4, errs


def test_finite_differences_batchnorm():
    rng = np.random.default_rng(8)
    net = DenseNetwork([init_layer(3, 5, rng, "tanh", batchnorm=True), init_layer(5, 2, rng, "linear")])
    x = rng.standard_normal((8, 3))
    errs = gradient_check(net, x, rng.standard_normal((8, 2)), "squared_error")
    assert max(errs.values()) < 1e-4, errs


def test_finite_differences_heads_and_splicing():
    rng = np.random.default_rng(9)
    trunk = [init_layer(2, 4, rng, "tanh", splice=(-1, 0, 1)), init_layer(4, 3, rng, "tanh", batchnorm=True)]
    heads = {"a": [init_layer(3, 4, rng, "linear")], "b": [init_layer(3, 2, rng, "linear")]}
    net = DenseNetwork(trunk, heads, tap=1)
    x = rng.standard_normal((7, 2))
    errs = gradient_check(net, x, rng.integers(0, 4, 7), "cross_entropy", head="a", lengths=[4, 3])
    assert max(errs.values()) < 1e-4, errs
    _, grads, _ = gradients(net, x, rng.integers(0, 4, 7), "cross_entropy", "a", [4, 3])
    assert all(np.all(grads[k] == 0) for k in grads if k.startswith("heads.b."))


def test_linear_net_closed_form(rng):
    net = _net(rng, [3, 2], "linear")
    x, y = rng.standard_normal((10, 3)), rng.standard_normal((10, 2))
    _, grads, _ = gradients(net, x, y, "squared_error")
    r = x @ net.layers[0].W + net.layers[0].b - y
    np.testing.assert_allclose(grads["layers.0.W"], x.T @ r / 10, atol=1e-12)
    np.testing.assert_allclose(grads["layers.0.b"], r.mean(axis=0), atol=1e-12)


def test_zero_learning_rate_leaves_parameters(rng):
    net = _net(rng, [3, 4, 2])
    before = {k: v.copy() for k, v in net.parameters().items()}
    sgd_train(net, FrameDataset(rng.standard_normal((20, 3)), rng.standard_normal((20, 2))),
              TrainConfig(0.0, 0.0, epochs=2, batch_size=8))
    assert all(np.array_equal(before[k], v) for k, v in net.parameters().items())


def test_separable_two_class_problem(rng):
    x = np.r_[rng.normal(-2, 0.5, (100, 2)), rng.normal(2, 0.5, (100, 2))]
    y = np.r_[np.zeros(100, int), np.ones(100, int)]
    net = DenseNetwork([init_layer(2, 8, rng)], {"l": [init_layer(8, 2, rng, "linear")]})
    sgd_train(net, FrameDataset(x, y, head="l"), TrainConfig(0.1, 0.01, epochs=50, batch_size=20,
                                                             loss="cross_entropy"))
    acc = (forward(net, x, head="l")[-1].argmax(axis=1) == y).mean()
    assert acc >= 0.99


def test_training_is_deterministic(rng):
    x, y = rng.standard_normal((50, 3)), rng.standard_normal((50, 2))
    nets = []
    for _ in range(2):
        net = _net(np.random.default_rng(0), [3, 5, 2])
        traces = []
        sgd_train(net, FrameDataset(x, y), TrainConfig(0.05, 0.01, epochs=3, batch_size=7, momentum=0.5),
                  callback=lambda step, b, g: traces.append(g["layers.0.W"].copy()))
        nets.append((net, traces))
    (a, ta), (b, tb) = nets
    assert all(np.array_equal(p, q) for p, q in zip(ta, tb))
    assert all(np.array_equal(a.parameters()[k], b.parameters()[k]) for k in a.parameters())


def test_learning_rate_schedule():
    cfg = TrainConfig(1e-3, 1e-4)
    assert cfg.learning_rate(0, 11) == pytest.approx(1e-3)
    assert cfg.learning_rate(10, 11) == pytest.approx(1e-4)
    assert cfg.learning_rate(5, 11) == pytest.approx(np.sqrt(1e-7))
    for bad in (dict(lr_initial=1e-4, lr_final=1e-3), dict(epochs=0), dict(loss="hinge"), dict(max_change=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_nan_loss_aborts(rng):
    x = rng.standard_normal((10, 2))
    x[3, 0] = np.nan
    with pytest.raises(TrainingError, match="non-finite"):
        sgd_train(_net(rng, [2, 2]), FrameDataset(x, np.zeros((10, 2))), TrainConfig(0.1, 0.01))


def test_limit_change_caps_layer_norm(rng):
    steps = {"layers.0.W": rng.standard_normal((4, 4)) * 10, "layers.0.b": rng.standard_normal(4),
             "layers.1.W": np.full((2, 2), 1e-3), "layers.1.b": np.zeros(2)}
    small = steps["layers.1.W"].copy()
    _limit_change(steps, 0.5)
    assert np.sqrt(np.sum(steps["layers.0.W"] ** 2) + np.sum(steps["layers.0.b"] ** 2)) == pytest.approx(0.5)
    assert np.array_equal(steps["layers.1.W"], small)


def test_batchnorm_modes(rng):
    net = DenseNetwork([init_layer(3, 4, rng, "tanh", batchnorm=True)])
    x = rng.standard_normal((50, 3))
    out = forward(net, x, "train")[-1]
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
    # fresh running stats are (0, 1): infer mode then only rescales by the epsilon term
    np.testing.assert_allclose(forward(net, x, "infer")[-1], np.tanh(x @ net.layers[0].W) / np.sqrt(1 + 1e-5))
    recompute_batchnorm_stats(net, FrameDataset(x, x), batch_size=50)
    a = np.tanh(x @ net.layers[0].W)
    np.testing.assert_allclose(net.layers[0].running_mean, a.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(forward(net, x, "infer")[-1], out, atol=1e-12)


# ---------------------------------------------------------------- pretraining


def test_single_layer_pretraining_is_an_autoencoder(rng):
    data = rng.standard_normal((40, 5))
    cfg = TrainConfig(0.01, 0.001, epochs=5, batch_size=8, seed=3)
    net = layerwise_pretrain([3], data, cfg)
    r = np.random.default_rng(3)
    ae = DenseNetwork([init_layer(5, 3, r), init_layer(3, 5, r, "linear")])
    sgd_train(ae, FrameDataset(data, data), cfg)
    assert len(net.layers) == 1
    assert np.array_equal(net.layers[0].W, ae.layers[0].W)


def test_paper_stack_shape(rng):
    net = layerwise_pretrain([100] * 8 + [39], rng.standard_normal((64, 39)), TrainConfig(0.01, 0.001, batch_size=64))
    assert [l.n_out for l in net.layers] == [100] * 8 + [39]
    assert net.input_dim == 39 and len(net.history) == 9


def test_pretraining_rejects_empty():
    with pytest.raises(ValueError):
        layerwise_pretrain([3], np.zeros((0, 2)), TrainConfig())


# ---------------------------------------------------------------- splicing


def test_splice_identity_and_edge_clamp(rng):
    x = rng.standard_normal((5, 2))
    assert np.array_equal(splice(x, [0]), x)
    one = rng.standard_normal((1, 3))
    assert np.array_equal(splice(one, [-1, 0, 1]), np.tile(one, 3))
    with pytest.raises(ValueError):
        splice(np.zeros((0, 2)), [0])


def test_splice_respects_sequence_boundaries():
    x = np.arange(5.0)[:, None]
    out = splice(x, [-1, 1], lengths=[2, 3])
    assert out.tolist() == [[0, 1], [0, 1], [2, 3], [2, 4], [3, 4]]


def test_paper_splicing_receptive_field():
    rng = np.random.default_rng(0)
    T, s = 60, 30
    layers, width = [], 1
    for offs in PAPER_SPLICING:
        layers.append(init_layer(width, 3, rng, "tanh", splice=offs))
        width = 3
    net = DenseNetwork(layers)
    x = rng.standard_normal((T, 1))
    base = forward(net, x)[-1]
    x[s] += 1.0
    changed = np.flatnonzero(np.any(np.abs(forward(net, x)[-1] - base) > 0, axis=1))
    left = -sum(min(o) for o in PAPER_SPLICING)
    right = sum(max(o) for o in PAPER_SPLICING)
    assert (left, right) == (15, 9)
    # output t sees inputs t-15 .. t+9, so input s reaches outputs s-9 .. s+15
    assert changed.tolist() == list(range(s - right, s + left + 1))
    assert len(splice_stack(np.zeros((4, 1)), PAPER_SPLICING)) == len(PAPER_SPLICING) + 1


@given(st.lists(st.integers(1, 6), min_size=1, max_size=4), st.integers(1, 50))
def test_sequence_dataset_covers_every_frame(lengths, chunk):
    seqs = [np.arange(n, dtype=float)[:, None] for n in lengths]
    ds = SequenceDataset(seqs, [np.zeros(n, int) for n in lengths], chunk=chunk)
    got = sum(len(b.inputs) for b in ds.batches(np.random.default_rng(0), 4))
    assert got == sum(lengths) == len(ds)


# ---------------------------------------------------------------- io


def test_network_round_trip(tmp_path, rng):
    trunk = [init_layer(2, 4, rng, "relu", batchnorm=True, splice=(-1, 0, 1)), init_layer(4, 3, rng, "linear")]
    net = DenseNetwork(trunk, {"x": [init_layer(3, 5, rng, "linear")]}, tap=1,
                       input_shift=rng.standard_normal(2), input_scale=rng.random(2) + 0.5)
    net.layers[0].running_mean = rng.standard_normal(4)
    save_network(net, tmp_path / "n.bin")
    back = load_network(tmp_path / "n.bin")
    x = rng.standard_normal((6, 2))
    for head in (None, "x"):
        assert np.array_equal(forward(net, x, head=head)[-1], forward(back, x, head=head)[-1])
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + (tmp_path / "n.bin").read_bytes()[4:])
    with pytest.raises(ValueError):
        load_network(tmp_path / "bad.bin")
