import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from breakwater_design.tensor_nn import (
    AdamState,
    Conv2D,
    MaxPool2,
    Network,
    NetworkSpec,
    Upsample2,
    adam_step,
    binary_cross_entropy_with_logits,
    load_checkpoint,
    neighbourhood,
    lr_schedule,
    pixel_cross_entropy,
    save_checkpoint,
    weighted_mae,
)
from helpers import GRADCHECK_SPECS, gradient_check


def test_identity_convolution():
    conv = Conv2D(1, 1, 3, activation="none")
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    conv.params["W"] = w
    x = np.random.default_rng(0).standard_normal((2, 1, 5, 7))
    np.testing.assert_allclose(conv.forward(x), x)


def test_maxpool_small():
    out = MaxPool2().forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    np.testing.assert_array_equal(out, [[[[4.0]]]])


@settings(max_examples=100)
@given(arrays(np.float64, (2, 3, 4, 6), elements=st.floats(-10, 10)))
def test_upsample_then_maxpool_is_identity(x):
    np.testing.assert_array_equal(MaxPool2().forward(Upsample2().forward(x)), x)


@pytest.mark.parametrize("name", sorted(GRADCHECK_SPECS))
def test_gradients_match_finite_differences(name):
    assert gradient_check(GRADCHECK_SPECS[name]) < 1e-3


def test_zero_upstream_gradient_gives_zero_gradients():
    spec = GRADCHECK_SPECS["conv3_relu+maxpool2+upsample2+skip_concat+conv1"]
    net = Network(spec, seed=1, dtype=np.float64)
    out = net.forward(np.random.default_rng(1).standard_normal((2, 2, 8, 8)))["out"]
    grads = net.backward({"out": np.zeros_like(out)})
    assert all(not g.any() for g in grads.values())


def test_bias_gradient_counts_cells():
    spec = NetworkSpec((1, 8, 8), [{"id": "c", "type": "conv", "in": 1, "out": 2, "act": "none"}])
    net = Network(spec, dtype=np.float64)
    out = net.forward(np.ones((3, 1, 8, 8)))["out"]
    grads = net.backward({"out": np.ones_like(out)})
    np.testing.assert_array_equal(grads["c.b"], [3 * 64, 3 * 64])


def test_backward_without_forward():
    net = Network(GRADCHECK_SPECS["maxpool2+dense_relu+dense"])
    with pytest.raises(RuntimeError):
        net.backward({"out": np.zeros((1, 1))})


def test_adam_first_step():
    params = {"p": np.array([1.0])}
    adam_step(params, {"p": np.array([0.5])}, AdamState(), lr=0.01)
    assert params["p"][0] == pytest.approx(1.0 - 0.01, abs=1e-6)


def test_adam_zero_gradient_and_direction():
    params = {"p": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(params, {"p": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_array_equal(params["p"], [1.0, -2.0])
    params = {"p": np.array([0.0])}
    state = AdamState()
    trail = []
    for _ in range(2):
        adam_step(params, {"p": np.array([-3.0])}, state, lr=0.1)
        trail.append(params["p"][0])
    assert 0 < trail[0] < trail[1]


def test_lr_schedule():
    assert lr_schedule(0) == pytest.approx(0.001)
    assert lr_schedule(5) == pytest.approx(0.00095)
    assert lr_schedule(12) == pytest.approx(0.001 * 0.95**2)
    with pytest.raises(ValueError):
        lr_schedule(-1)


def test_cross_entropy_cases():
    classes = np.array([[[0, 1]]])
    logits = np.zeros((1, 2, 1, 2))
    logits[0, 0, 0, 0] = 20.0
    logits[0, 1, 0, 1] = 20.0
    assert pixel_cross_entropy(logits, classes)[0] < 1e-6
    assert pixel_cross_entropy(np.zeros((1, 2, 1, 2)), classes)[0] == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        pixel_cross_entropy(np.zeros((1, 2, 1, 2)), np.array([[[0, 2]]]))


def test_mae_and_bce():
    t = np.array([[1.0, 2.0]])
    assert weighted_mae(t, t)[0] == 0.0
    loss, _ = binary_cross_entropy_with_logits(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    assert loss == pytest.approx(math.log(2))


def test_no_nan_after_training(tmp_path):
    spec = GRADCHECK_SPECS["conv3_linear+global_avg_pool+dense"]
    net = Network(spec, seed=3)
    rng = np.random.default_rng(3)
    state = AdamState()
    for _ in range(100):
        x = rng.standard_normal((4, 2, 8, 8)).astype(np.float32)
        out = net.forward(x)["out"]
        adam_step(net.params, net.backward({"out": 2 * out}), state, lr=1e-3)
    assert all(np.isfinite(v).all() for v in net.params.values())
    save_checkpoint(tmp_path / "n.npz", net, {"k": 1})
    other, meta, _ = load_checkpoint(tmp_path / "n.npz")
    assert meta == {"k": 1}
    x = rng.standard_normal((1, 2, 8, 8)).astype(np.float32)
    np.testing.assert_array_equal(other.forward(x)["out"], net.forward(x)["out"])


def test_deterministic_training():
    def run():
        net = Network(GRADCHECK_SPECS["maxpool2+dense_relu+dense"], seed=4)
        rng = np.random.default_rng(4)
        state = AdamState()
        for _ in range(10):
            out = net.forward(rng.standard_normal((3, 1, 8, 8)))["out"]
            adam_step(net.params, net.backward({"out": out}), state, lr=1e-2)
        return net.params

    a, b = run(), run()
    assert all(np.array_equal(a[k], b[k]) for k in a)


@pytest.mark.parametrize("k", [1, 3])
def test_conv_inference_paths_match_forward(k):
    rng = np.random.default_rng(k)
    conv = Conv2D(3, 4, k=k, activation="relu")
    conv.init(rng, np.float64)
    x = rng.standard_normal((2, 3, 6, 5))
    full = conv.forward(x)
    np.testing.assert_allclose(conv.infer(x), full, rtol=1e-12, atol=1e-12)
    # scratch buffers are reused on the next call
    x2 = rng.standard_normal((2, 3, 6, 5))
    np.testing.assert_allclose(conv.infer(x2), conv.forward(x2), rtol=1e-12, atol=1e-12)

    ys, xs = np.array([0, 5, 2, 5, 0]), np.array([0, 4, 3, 0, 4])
    ny, nx = neighbourhood(ys, xs, k)
    inside = (ny >= 0) & (ny < 6) & (nx >= 0) & (nx < 5)
    windows = x2[:, :, np.where(inside, ny, 0), np.where(inside, nx, 0)] * inside
    np.testing.assert_allclose(conv.forward_windows(windows), conv.forward(x2)[:, :, ys, xs], rtol=1e-12, atol=1e-12)
