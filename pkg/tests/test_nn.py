import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from felrl.errors import CheckpointMismatchError, ContractViolation, TrainingDivergence
from felrl.nn import (
    AdamState,
    DenseNet,
    adam_step,
    forward,
    gradient,
    init_dense,
    load_checkpoint,
    param_count,
    save_checkpoint,
    soft_update,
)

ARCHITECTURES = [(3, 1), (2, 5, 3), (3, 64, 64, 7), (5, 20, 20, 6), (4, 8, 1)]


def numeric_gradient(net: DenseNet, loss, h: float = 1e-5) -> np.ndarray:
    grads = np.empty(net.param_count)
    base = net.params.copy()
    for i in range(net.param_count):
        up, down = base.copy(), base.copy()
        up[i] += h
        down[i] -= h
        grads[i] = (loss(net.with_params(up)) - loss(net.with_params(down))) / (2 * h)
    return grads


def test_param_count_matches_layout():
    assert param_count((3, 4, 2)) == 3 * 4 + 4 + 4 * 2 + 2
    net = init_dense((3, 4, 2), np.random.default_rng(0))
    assert net.params.size == net.param_count == 26


def test_zero_params_give_zero_output():
    net = DenseNet((3, 4, 2), ("tanh", "linear"), np.zeros(param_count((3, 4, 2))))
    assert np.array_equal(net(np.array([0.3, -1.0, 2.0])), np.zeros(2))


def test_identity_linear_layer():
    params = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
    net = DenseNet((3, 3), ("linear",), params)
    x = np.array([0.5, -2.0, 7.0])
    assert np.array_equal(forward(net, x), x)


def test_forward_matches_matrix_oracle():
    rng = np.random.default_rng(7)
    net = init_dense((4, 6, 2), rng)
    x = rng.normal(size=4)
    W1 = net.params[:24].reshape(4, 6)
    b1 = net.params[24:30]
    W2 = net.params[30:42].reshape(6, 2)
    b2 = net.params[42:44]
    expected = np.tanh(x @ W1 + b1) @ W2 + b2
    np.testing.assert_allclose(net(x), expected, rtol=1e-12)


def test_output_layer_must_be_linear():
    with pytest.raises(ContractViolation):
        DenseNet((2, 2), ("tanh",), np.zeros(6))


def test_input_dimension_is_checked():
    net = init_dense((3, 2), np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        net(np.zeros(4))


def test_constant_loss_has_zero_gradient():
    net = init_dense((3, 5, 2), np.random.default_rng(1))
    grads = gradient(net, np.ones(3), lambda out: (1.0, np.zeros_like(out)))
    assert np.array_equal(grads, np.zeros(net.param_count))


def test_linear_half_squared_error_gradient():
    rng = np.random.default_rng(2)
    net = init_dense((3, 2), rng)
    x, y = rng.normal(size=3), rng.normal(size=2)
    grads = gradient(net, x, lambda out: (0.5 * np.sum((out - y) ** 2), out - y))
    err = net(x) - y
    np.testing.assert_allclose(grads[:6], np.outer(x, err).ravel(), rtol=1e-12)
    np.testing.assert_allclose(grads[6:], err, rtol=1e-12)


@pytest.mark.parametrize("sizes", ARCHITECTURES)
@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_central_differences(sizes, seed):
    rng = np.random.default_rng(seed)
    net = init_dense(sizes, rng)
    x = rng.normal(size=(3, sizes[0]))
    y = rng.normal(size=(3, sizes[-1]))

    def loss(candidate: DenseNet) -> float:
        return float(np.sum((candidate(x) - y) ** 2))

    analytic = gradient(net, x, lambda out: (None, 2.0 * (out - y)))
    numeric = numeric_gradient(net, loss)
    scale = np.maximum(np.abs(numeric), 1e-3)
    assert np.max(np.abs(analytic - numeric) / scale) < 1e-4


def test_input_gradient_matches_central_differences():
    rng = np.random.default_rng(3)
    net = init_dense((4, 8, 2), rng)
    x = rng.normal(size=4)
    _, tape = net.forward_tape(x)
    _, grad_in = net.backward(tape, np.array([1.0, -2.0]))
    h = 1e-6
    for i in range(4):
        dx = np.zeros(4)
        dx[i] = h
        f = lambda z: float(net(z) @ np.array([1.0, -2.0]))
        assert grad_in[i] == pytest.approx((f(x + dx) - f(x - dx)) / (2 * h), rel=1e-5, abs=1e-8)


def test_adam_zero_gradient_keeps_params():
    net = init_dense((2, 3, 1), np.random.default_rng(4))
    state = AdamState.zeros(net.param_count)
    new_net, new_state = adam_step(net, np.zeros(net.param_count), state)
    assert np.array_equal(new_net.params, net.params)
    assert new_state.step_count == 1


def test_adam_first_step_is_sign_of_gradient():
    net = init_dense((2, 3, 1), np.random.default_rng(5))
    g = np.random.default_rng(6).normal(size=net.param_count)
    new_net, _ = adam_step(net, g, AdamState.zeros(net.param_count, lr=0.01))
    np.testing.assert_allclose(new_net.params - net.params, -0.01 * np.sign(g), rtol=1e-4)


def test_adam_descends_quadratic_bowl():
    rng = np.random.default_rng(8)
    params = 3.0 + rng.uniform(size=10)
    state = AdamState.zeros(10, lr=0.01)
    net = DenseNet((1, 5), ("linear",), params)
    losses = []
    for _ in range(100):
        losses.append(float(np.sum(net.params ** 2)))
        net, state = adam_step(net, 2.0 * net.params, state)
    tail = losses[10:]
    assert all(b < a for a, b in zip(tail, tail[1:]))


def test_adam_rejects_non_finite_gradient():
    net = init_dense((2, 1), np.random.default_rng(0))
    g = np.zeros(net.param_count)
    g[0] = np.nan
    with pytest.raises(TrainingDivergence):
        adam_step(net, g, AdamState.zeros(net.param_count))


def test_soft_update_edges():
    online = DenseNet((1, 1), ("linear",), np.ones(2))
    target = DenseNet((1, 1), ("linear",), np.zeros(2))
    assert np.array_equal(soft_update(target, online, 1.0).params, online.params)
    assert np.array_equal(soft_update(target, online, 0.0).params, target.params)
    np.testing.assert_allclose(soft_update(target, online, 0.005).params, np.full(2, 0.005))


def test_soft_update_rejects_other_architecture():
    with pytest.raises(ContractViolation):
        soft_update(init_dense((2, 1), np.random.default_rng(0)), init_dense((3, 1), np.random.default_rng(0)), 0.5)


@settings(max_examples=30, deadline=None)
@given(tau=st.floats(0.0, 1.0), seed=st.integers(0, 2 ** 16))
def test_soft_update_stays_between_endpoints(tau, seed):
    rng = np.random.default_rng(seed)
    a, b = init_dense((2, 3, 1), rng), init_dense((2, 3, 1), rng)
    mixed = soft_update(a, b, tau).params
    lo, hi = np.minimum(a.params, b.params), np.maximum(a.params, b.params)
    assert np.all(mixed >= lo - 1e-12) and np.all(mixed <= hi + 1e-12)


def test_params_are_read_only():
    net = init_dense((2, 2), np.random.default_rng(0))
    with pytest.raises(ValueError):
        net.params[0] = 1.0


def test_checkpoint_round_trip_with_optimiser(tmp_path):
    rng = np.random.default_rng(9)
    net = init_dense((3, 4, 2), rng)
    net, opt = adam_step(net, rng.normal(size=net.param_count), AdamState.zeros(net.param_count))
    path = tmp_path / "net.npz"
    save_checkpoint(path, net, opt, note="hello")
    loaded, loaded_opt, extra = load_checkpoint(path)
    assert loaded.layer_sizes == net.layer_sizes
    assert np.array_equal(loaded.params, net.params)
    assert loaded_opt.step_count == 1
    assert np.array_equal(loaded_opt.m, opt.m)
    assert str(extra["note"]) == "hello"


def test_checkpoint_version_is_checked(tmp_path):
    path = tmp_path / "bad.npz"
    np.savez(path, format_version=np.asarray(99))
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(path)
