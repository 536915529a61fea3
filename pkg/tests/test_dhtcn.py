import numpy as np
import pytest

from stgcn_kit.dhtcn import DhtcnParams, dhtcn_backward, dhtcn_forward, dhtcn_forward_cached, dhtcn_init, receptive_field
from stgcn_kit.tensor import ParameterStore, RunningStats, ShapeError, grad_check

from conftest import measured_dependency_window


@pytest.mark.parametrize("layers", [1, 2, 3])
@pytest.mark.parametrize("mode", ["train", "eval"])
def test_zero_weights_give_identity(rng, layers, mode):
    params = dhtcn_init(4, layers, 9, seed=0)
    for layer in params.layers:
        layer.kernel[...] = 0.0
        layer.gamma[...] = rng.normal(size=4)
        layer.beta[...] = 0.0
    x = rng.normal(size=(4, 3, 30))
    np.testing.assert_array_equal(dhtcn_forward(x, params, mode), x)


def test_dilation_schedule():
    assert dhtcn_init(3, 4, 3).dilations == [1, 2, 4, 8]


def test_bad_dilation_rejected():
    params = dhtcn_init(3, 2, 3)
    params.layers[1].dilation = 3
    with pytest.raises(ValueError):
        DhtcnParams(params.layers)


@pytest.mark.parametrize("layers, window, expected", [(1, 9, 9), (2, 9, 25), (3, 9, 57), (1, 3, 3), (2, 3, 7)])
def test_receptive_field_values(layers, window, expected):
    assert receptive_field(layers, window) == expected


def test_receptive_field_rejects_even_window():
    with pytest.raises(ValueError):
        receptive_field(2, 8)


@pytest.mark.parametrize("layers", [1, 2])
@pytest.mark.parametrize("window", [3, 9])
def test_measured_window_matches(layers, window):
    assert measured_dependency_window(layers, window) == receptive_field(layers, window)


def test_distance_13_leaves_output_unchanged(rng):
    params = dhtcn_init(2, 2, 9, seed=0)
    x = rng.normal(size=(2, 1, 60))
    t0 = 30
    base = dhtcn_forward(x, params, "train")
    x2 = x.copy()
    x2[:, 0, t0 + 13] += 1.0
    # train-mode BN statistics are global, so compare in eval mode
    a, b = dhtcn_forward(x, params, "eval"), dhtcn_forward(x2, params, "eval")
    assert a[:, 0, t0].tolist() == b[:, 0, t0].tolist()
    assert base.shape == x.shape


def test_delta_kernel_doubles_nonnegative_input(rng):
    params = dhtcn_init(3, 1, 3, seed=0)
    layer = params.layers[0]
    layer.kernel[...] = 0.0
    for c in range(3):
        layer.kernel[c, 1, c] = 1.0
    layer.running = RunningStats(np.zeros(3), np.ones(3) - 1e-5)  # var + eps == 1 exactly
    x = rng.uniform(0, 2, size=(3, 4, 10))
    np.testing.assert_allclose(dhtcn_forward(x, params, "eval"), 2 * x, rtol=1e-15)


def test_joint_independence(rng):
    params = dhtcn_init(3, 2, 3, seed=4)
    x = rng.normal(size=(3, 5, 16))
    x2 = x.copy()
    x2[:, 2] += rng.normal(size=(3, 16))
    a, b = dhtcn_forward(x, params, "eval"), dhtcn_forward(x2, params, "eval")
    for j in (0, 1, 3, 4):
        np.testing.assert_array_equal(a[:, j], b[:, j])


@pytest.mark.parametrize("shape", [(2, 3, 1), (2, 1, 1, 1), (4, 2, 5, 7)])
def test_shape_preserved(shape):
    params = dhtcn_init(shape[-3], 3, 5)
    assert dhtcn_forward(np.ones(shape), params, "eval").shape == shape


def test_channel_mismatch():
    with pytest.raises(ShapeError):
        dhtcn_forward(np.zeros((3, 2, 5)), dhtcn_init(4, 1, 3))


@pytest.mark.parametrize("mode", ["train", "eval"])
@pytest.mark.parametrize("bias", [False, True])
def test_backward_finite_differences(rng, mode, bias):
    params = dhtcn_init(3, 2, 3, seed=1, bias=bias)
    store = ParameterStore()
    store.add("x", rng.normal(size=(2, 3, 2, 9)))
    for n, layer in enumerate(params.layers):
        layer.kernel = store.add(f"{n}.kernel", layer.kernel)
        layer.gamma = store.add(f"{n}.gamma", rng.uniform(0.5, 1.5, size=3))
        layer.beta = store.add(f"{n}.beta", rng.normal(size=3))
        layer.running = RunningStats(rng.normal(size=3) * 0.1, rng.uniform(0.5, 1.5, size=3))
        if bias:
            layer.bias = store.add(f"{n}.bias", rng.normal(size=3))
    frozen = [layer.running.copy() for layer in params.layers]
    up = rng.normal(size=(2, 3, 2, 9))

    def loss(store, backward):
        for layer, rs in zip(params.layers, frozen):
            layer.running = rs.copy()
        out, cache = dhtcn_forward_cached(store["x"], params, mode)
        if backward:
            for layer, rs in zip(params.layers, frozen):
                layer.running = rs.copy()
            gx, grads = dhtcn_backward(cache, params, up, mode)
            store.accumulate("x", gx)
            for n, g in enumerate(grads):
                for key, value in g.items():
                    store.accumulate(f"{n}.{key}", value)
        return float((out * up).sum())

    assert grad_check(loss, store) < 1e-4
