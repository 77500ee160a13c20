import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repproj import numcore as nc
from repproj.errors import ConfigError, DimensionError, NumericError
from repproj.numcore import ParamSlot


def slot(name, arr, frozen=False):
    with nc.precision(np.float64):
        return ParamSlot.from_array(name, arr, frozen=frozen)


def numeric_grad(f, arr, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g


def test_sum_gradient_is_ones():
    x = slot("x", [1.0, 2.0, 3.0])
    loss, grads = nc.forward_backward(lambda: nc.sum(x.value), [x])
    assert loss == 6.0
    np.testing.assert_array_equal(grads["x"], [1.0, 1.0, 1.0])


def test_mse_at_minimum_is_zero_with_zero_grads():
    a = slot("a", [0.5, -1.0, 2.0])
    b = slot("b", [0.5, -1.0, 2.0])
    loss, grads = nc.forward_backward(lambda: nc.mean(nc.square(a.value - b.value)), [a, b])
    assert loss == 0.0
    assert not grads["a"].any() and not grads["b"].any()


def test_frozen_slot_gets_zero_grad():
    a = slot("a", [1.0, 2.0])
    b = slot("b", [3.0, 4.0], frozen=True)
    _, grads = nc.forward_backward(lambda: nc.sum(a.value * b.value), [a, b])
    np.testing.assert_array_equal(grads["a"], [3.0, 4.0])
    np.testing.assert_array_equal(grads["b"], [0.0, 0.0])


def test_unreached_slot_gets_zero_grad():
    a, b = slot("a", [1.0]), slot("b", [2.0])
    _, grads = nc.forward_backward(lambda: nc.sum(a.value), [a, b])
    np.testing.assert_array_equal(grads["b"], [0.0])


def test_random_three_layer_graph_matches_finite_differences():
    rng = np.random.default_rng(3)
    W1 = slot("W1", rng.normal(size=(5, 4)))
    W2 = slot("W2", rng.normal(size=(4, 3)))
    b2 = slot("b2", rng.normal(size=3))
    W3 = slot("W3", rng.normal(size=(3, 1)))
    x = rng.normal(size=(6, 5))
    with nc.precision(np.float64):
        xt = nc.tensor(x)

    def graph():
        h1 = nc.tanh(xt @ W1.value)
        h2 = nc.sigmoid(h1 @ W2.value + b2.value)
        return nc.sum(nc.square(h2 @ W3.value))

    with nc.precision(np.float64):
        _, grads = nc.forward_backward(graph, [W1, W2, b2, W3])
        for s in (W1, W2, b2, W3):
            num = numeric_grad(lambda: float(graph().data), s.value.data, eps=1e-5)
            rel = np.abs(grads[s.name] - num) / np.maximum(np.maximum(abs(num), abs(grads[s.name])), 1e-8)
            assert rel.max() < 1e-4, s.name


@pytest.mark.parametrize(
    "build",
    [
        lambda t: nc.sum(nc.exp(t) / (1.0 + nc.square(t))),
        lambda t: nc.sum(nc.log(nc.clip(nc.sigmoid(t), 0.01, 0.99))),
        lambda t: nc.sum(nc.concat([t[:, :2], nc.tanh(t[:, 1:])], axis=1) * 3.0),
        lambda t: nc.mean(nc.reshape(nc.transpose(nc.reshape(t, (2, 3, 2)), (1, 0, 2)), (6, 2)) @ t[:2, :3]),
        lambda t: nc.sum(nc.sum(t, axis=0) * nc.sum(t, axis=1, keepdims=True)),
    ],
)
def test_elementary_ops_match_finite_differences(build):
    rng = np.random.default_rng(0)
    t = slot("t", rng.normal(size=(3, 4)) * 0.7)
    with nc.precision(np.float64):
        _, grads = nc.forward_backward(lambda: build(t.value), [t])
        num = numeric_grad(lambda: float(build(t.value).data), t.value.data)
    np.testing.assert_allclose(grads["t"], num, rtol=1e-6, atol=1e-8)


def test_embedding_gradient_scatters_repeated_rows():
    table = slot("E", np.arange(12.0).reshape(4, 3))
    ids = np.array([[0, 2], [2, 2]])
    _, grads = nc.forward_backward(lambda: nc.sum(nc.embedding(table.value, ids)), [table])
    np.testing.assert_array_equal(grads["E"][:, 0], [1, 0, 3, 0])


def test_shape_mismatch_raises_dimension_error():
    a, b = slot("a", np.ones((2, 3))), slot("b", np.ones((2, 3)))
    with pytest.raises(DimensionError):
        nc.forward_backward(lambda: nc.sum(a.value @ b.value), [a, b])
    with pytest.raises(DimensionError):
        nc.add(np.ones(3), np.ones(4))


def test_non_finite_aborts():
    a = slot("a", [1000.0])
    with pytest.raises(NumericError):
        nc.forward_backward(lambda: nc.sum(nc.exp(a.value)), [a])
    with pytest.raises(NumericError):
        nc.log(nc.tensor([0.0]))


# ------------------------------------------------------------------ rmsprop


def test_rmsprop_hand_evaluated_update():
    s = slot("w", [0.0])
    s.grad = np.array([1.0])
    nc.rmsprop_step([s], lr=0.001, decay=0.9, eps=1e-8)
    assert s.rms_cache[0] == pytest.approx(0.1)
    assert s.data[0] == pytest.approx(-0.001 / (np.sqrt(0.1) + 1e-8), rel=1e-12)


def test_rmsprop_zero_grad_is_fixed_point():
    s = slot("w", [1.5, -2.0])
    before = s.data.copy()
    s.grad = np.zeros(2)
    nc.rmsprop_step([s])
    np.testing.assert_array_equal(s.data, before)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=5))
def test_rmsprop_frozen_slot_is_bit_identical(g):
    s = slot("w", np.linspace(-1, 1, len(g)), frozen=True)
    before = s.data.tobytes()
    s.grad = np.array(g)
    nc.rmsprop_step([s], lr=0.5)
    assert s.data.tobytes() == before


def test_rmsprop_rejects_bad_lr():
    with pytest.raises(ConfigError):
        nc.rmsprop_step([], lr=0.0)


# ------------------------------------------------------------------ dropout


def test_dropout_inference_is_identity():
    x = nc.tensor(np.arange(6.0))
    assert nc.dropout(x, 0.5, False, np.random.default_rng(0)) is x


def test_dropout_zero_rate_is_identity():
    x = nc.tensor(np.arange(6.0))
    np.testing.assert_array_equal(nc.dropout(x, 0.0, True, np.random.default_rng(0)).data, x.data)


def test_dropout_preserves_expectation():
    x = nc.tensor(np.ones((200, 200)))
    out = nc.dropout(x, 0.5, True, np.random.default_rng(0)).data
    assert abs(out.mean() - 1.0) < 0.05
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_rejects_rate_one():
    with pytest.raises(ConfigError):
        nc.dropout(nc.tensor([1.0]), 1.0, True, np.random.default_rng(0))


def test_dropout_deterministic_given_seed():
    x = nc.tensor(np.ones((10, 10)))
    a = nc.dropout(x, 0.3, True, np.random.default_rng(5)).data
    b = nc.dropout(x, 0.3, True, np.random.default_rng(5)).data
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------- gradient check


def test_gradient_check_quadratic_is_tight():
    a = slot("a", [0.3, -1.2, 2.0])
    c = np.array([1.0, 2.0, 3.0])
    report = nc.gradient_check(lambda: nc.sum(nc.square(a.value - c)) * 0.5, [a], tolerance=1e-7)
    assert report.passed, str(report)


def test_gradient_check_restores_dtype_and_values():
    with nc.precision(np.float32):
        s = ParamSlot.from_array("s", [0.25, 0.5])
    before = s.data.copy()
    nc.gradient_check(lambda: nc.sum(nc.tanh(s.value)), [s])
    assert s.data.dtype == np.float32
    np.testing.assert_array_equal(s.data, before)


def test_gradient_check_reports_wrong_gradient():
    a = slot("a", [0.5, 1.5])

    def bad_square(x):
        return nc._make(x.data**2, (x,), lambda g: (3.0 * g * x.data,), "bad")

    report = nc.gradient_check(lambda: nc.sum(bad_square(a.value)), [a])
    assert not report.passed
    assert report.errors["a"] > 0.1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_forward_is_deterministic(seed):
    rng = np.random.default_rng(seed)
    W = slot("W", rng.normal(size=(3, 3)))

    def run():
        r = np.random.default_rng(seed)
        return nc.dropout(nc.tanh(nc.tensor(np.ones((4, 3))) @ W.value), 0.5, True, r).data.tobytes()

    assert run() == run()
