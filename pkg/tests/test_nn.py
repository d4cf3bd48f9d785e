"""Hybrid model tests: layers vs oracles, loss, Adam, end-to-end training."""

import math

import numpy as np
import pytest

from qccnn.data import Dataset, generate_synthetic, SyntheticSpec
from qccnn.nn import (
    AdamState,
    ClassicalConvLayer,
    DenseLayer,
    HybridModel,
    QuantumConvLayer,
    adam_step,
    evaluate,
    fit,
    make_model,
    softmax_cross_entropy,
)
from qccnn.circuits import build_ansatz

from oracles import finite_difference_gradient


# ---------------------------------------------------------------------------
# quantum conv layer
# ---------------------------------------------------------------------------


def test_quantum_conv_shapes_pooling_family():
    layer = QuantumConvLayer(build_ansatz("mod-a"), stride=2, rng=np.random.default_rng(0))
    assert layer.num_kernels == 4
    maps = layer.forward(np.zeros((2, 6, 6)))
    assert maps.shape == (2, 4, 3, 3)


def test_quantum_conv_shapes_single_patch():
    layer = QuantumConvLayer(build_ansatz("conv"), stride=2, rng=np.random.default_rng(0))
    assert layer.num_kernels == 1  # four readouts make the four maps
    maps = layer.forward(np.zeros((1, 2, 2)))
    assert maps.shape == (1, 4, 1, 1)


def test_quantum_conv_28x28_patch_arithmetic():
    layer = QuantumConvLayer(build_ansatz("select-tanh"), stride=2, rng=np.random.default_rng(0))
    maps = layer.forward(np.zeros((1, 28, 28)))
    assert maps.shape == (1, 4, 14, 14)  # 196 patches


def test_quantum_conv_zero_everything_conv_family():
    layer = QuantumConvLayer(build_ansatz("conv"), stride=2, rng=np.random.default_rng(0))
    layer.params[...] = 0.0
    maps = layer.forward(np.zeros((1, 4, 4)))
    np.testing.assert_allclose(maps, np.zeros((1, 4, 2, 2)), atol=1e-14)


def test_quantum_conv_rejects_small_image():
    layer = QuantumConvLayer(build_ansatz("conv"), stride=2, rng=np.random.default_rng(0))
    with pytest.raises(ValueError, match="smaller"):
        layer.forward(np.zeros((1, 1, 1)))


# ---------------------------------------------------------------------------
# classical conv layer
# ---------------------------------------------------------------------------


def test_classical_conv_top_left_filter():
    layer = ClassicalConvLayer(stride=2, rng=np.random.default_rng(0))
    layer.filters[...] = 0.0
    layer.filters[0] = [[1.0, 0.0], [0.0, 0.0]]
    image = np.arange(16, dtype=float).reshape(1, 4, 4) / 16.0
    maps = layer.forward(image)
    np.testing.assert_allclose(maps[0, 0], image[0, ::2, ::2], atol=1e-15)


def test_classical_conv_zero_filters_constant_bias():
    layer = ClassicalConvLayer(stride=1, rng=np.random.default_rng(0))
    layer.filters[...] = 0.0
    layer.bias[:] = [0.1, -0.2, 0.3, 0.0]
    maps = layer.forward(np.random.default_rng(1).normal(size=(1, 5, 5)))
    for f in range(4):
        np.testing.assert_allclose(maps[0, f], np.full((4, 4), layer.bias[f]), atol=1e-15)


def test_classical_conv_matches_nested_loop_oracle():
    rng = np.random.default_rng(2)
    layer = ClassicalConvLayer(stride=1, rng=rng)
    image = rng.normal(size=(4, 4))
    maps = layer.forward(image[None])
    for f in range(4):
        for i in range(3):
            for j in range(3):
                want = (image[i : i + 2, j : j + 2] * layer.filters[f]).sum() + layer.bias[f]
                assert abs(maps[0, f, i, j] - want) < 1e-12


# ---------------------------------------------------------------------------
# dense head and loss
# ---------------------------------------------------------------------------


def test_dense_zero_weights_returns_bias():
    layer = DenseLayer(4)
    layer.weights[...] = 0.0
    layer.bias[:] = [0.3, -0.7]
    np.testing.assert_allclose(layer.forward(np.ones((1, 4))), [[0.3, -0.7]])


def test_dense_matches_matmul_oracle():
    rng = np.random.default_rng(3)
    layer = DenseLayer(6, rng=rng)
    feats = rng.normal(size=(5, 6))
    np.testing.assert_allclose(
        layer.forward(feats), feats @ layer.weights.T + layer.bias, atol=1e-12
    )


def test_softmax_cross_entropy_symmetric_case():
    losses, grads = softmax_cross_entropy([0.0, 0.0], 0)
    assert abs(losses[0] - math.log(2)) < 1e-12
    np.testing.assert_allclose(grads[0], [-0.5, 0.5], atol=1e-12)


def test_softmax_cross_entropy_confident_case():
    losses, _ = softmax_cross_entropy([10.0, -10.0], 0)
    assert abs(losses[0] - math.log1p(math.exp(-20))) < 1e-15
    assert 2.0e-9 < losses[0] < 2.1e-9


def test_softmax_cross_entropy_gradient_vs_finite_difference():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=2)
    _, grads = softmax_cross_entropy(logits, 1)
    fd = finite_difference_gradient(
        lambda l: softmax_cross_entropy(l, 1)[0][0], logits, h=1e-6
    )
    np.testing.assert_allclose(grads[0], fd, atol=1e-8)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_first_step_is_signed_learning_rate():
    params = {"w": np.array([1.0, -2.0])}
    grads = {"w": np.array([0.3, -0.7])}
    adam_step(params, grads, AdamState(lr=0.001))
    np.testing.assert_allclose(params["w"], [1.0 - 0.001, -2.0 + 0.001], atol=1e-6)


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([0.5])}
    adam_step(params, {"w": np.array([0.0])}, AdamState())
    np.testing.assert_allclose(params["w"], [0.5], atol=1e-15)


def test_adam_three_step_trace_matches_hand_rolled():
    # scalar quadratic f(x) = x^2, gradient 2x, plain-Python reference
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    x_ref, m, v = 1.0, 0.0, 0.0
    trace = []
    for t in range(1, 4):
        g = 2.0 * x_ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        x_ref -= lr * m_hat / (math.sqrt(v_hat) + eps)
        trace.append(x_ref)

    params = {"x": np.array([1.0])}
    state = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
    for t in range(3):
        adam_step(params, {"x": 2.0 * params["x"]}, state)
        assert abs(params["x"][0] - trace[t]) < 1e-10


# ---------------------------------------------------------------------------
# end-to-end model
# ---------------------------------------------------------------------------


def _toy_dataset(n=8, size=4, seed=5):
    rng = np.random.default_rng(seed)
    images = rng.uniform(-1, 1, (n, size, size))
    labels = rng.integers(0, 2, n)
    return Dataset(images, labels, "train")


@pytest.mark.parametrize("front", ["classical", "conv", "midcircuit-ry", "select-tanh", "mod-a"])
def test_end_to_end_gradient_check(front):
    data = _toy_dataset(n=2)
    model = make_model(front, (4, 4), stride=2, seed=0)
    loss, _, grads = model.loss_and_grads(data.images, data.labels)

    def loss_at(flat, name):
        params = model.parameters()
        saved = params[name].copy()
        params[name][...] = flat.reshape(params[name].shape)
        value = model.loss_and_grads(data.images, data.labels)[0]
        params[name][...] = saved
        return value

    for name, grad in grads.items():
        fd = finite_difference_gradient(
            lambda f: loss_at(f, name), model.parameters()[name].ravel()
        ).reshape(grad.shape)
        scale = np.maximum(np.abs(fd), 1e-6)
        rel = np.abs(grad - fd) / scale
        assert rel.max() < 1e-4, f"{front}/{name}: worst rel err {rel.max():.2e}"


def test_feature_map_shape_identity_across_fronts():
    shapes = set()
    for front in ("classical", "conv", "mod-b"):
        model = make_model(front, (6, 6), stride=2, seed=0)
        maps = model.front.forward(np.zeros((1, 6, 6)))
        shapes.add(maps.shape)
    assert shapes == {(1, 4, 3, 3)}


def test_evaluation_independent_of_batch_partitioning():
    data = _toy_dataset(n=10)
    model = make_model("classical", (4, 4), seed=1)
    acc_a, loss_a = evaluate(model, data, batch_size=3)
    acc_b, loss_b = evaluate(model, data, batch_size=10)
    assert acc_a == acc_b
    assert abs(loss_a - loss_b) < 1e-12


def test_fit_deterministic_given_seed():
    train, val = generate_synthetic(SyntheticSpec(train_n=20, val_n=10))
    results = []
    for _ in range(2):
        model = make_model("classical", train.image_shape, seed=3)
        results.append(fit(model, train, val, epochs=3, batch_size=4, seed=3))
    assert results[0].train_loss == results[1].train_loss
    assert results[0].val_acc == results[1].val_acc


def test_fit_epoch_metrics_length():
    train, val = generate_synthetic(SyntheticSpec(train_n=12, val_n=6))
    model = make_model("classical", train.image_shape, seed=0)
    result = fit(model, train, val, epochs=4, batch_size=4, seed=0)
    assert result.epochs_run == 4
    assert len(result.val_loss) == 4


def test_fit_rejects_empty_dataset():
    train, val = generate_synthetic(SyntheticSpec(train_n=4, val_n=2))
    empty = Dataset(np.zeros((0, 8, 8)), np.zeros(0, dtype=int), "train")
    model = make_model("classical", (8, 8), seed=0)
    with pytest.raises(ValueError, match="empty"):
        fit(model, empty, val, epochs=1)


def test_checkpoint_round_trip():
    model = make_model("mod-a", (4, 4), seed=7)
    state = model.state_dict()
    clone = make_model("mod-a", (4, 4), seed=8)
    clone.load_state_dict(state)
    image = np.random.default_rng(9).uniform(-1, 1, (1, 4, 4))
    np.testing.assert_array_equal(model.forward(image), clone.forward(image))
