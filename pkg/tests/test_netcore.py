import numpy as np
import pytest

from heartfields import netcore
from heartfields.netcore import (
    OptimizerState,
    ResidualMlp,
    adam_step,
    backward,
    finite_diff_check,
    forward,
    init_params,
    param_count,
)


def small_net(input_dim=8, output_dim=5, hidden=16, blocks=2, seed=3):
    net = ResidualMlp(input_dim, output_dim, hidden_dim=hidden, num_blocks=blocks)
    return init_params(net, seed)


@pytest.mark.parametrize(
    "dims", [(3, 5, 128, 8), (4, 3, 128, 8), (8, 5, 16, 2), (1, 1, 4, 0), (7, 2, 9, 3)]
)
def test_param_count_formula(dims):
    d_in, d_out, h, nb = dims
    net = ResidualMlp(d_in, d_out, hidden_dim=h, num_blocks=nb)
    assert net.parameters.size == param_count(d_in, d_out, h, nb)
    # the layout slicing must consume exactly the whole vector
    net.views()


def test_zero_parameters_give_zero_output():
    net = ResidualMlp(3, 5, hidden_dim=16, num_blocks=2)
    x = np.random.default_rng(0).standard_normal((10, 3))
    assert np.all(forward(net, x) == 0.0)


def test_zeroed_block_is_identity_skip():
    net = small_net(input_dim=4, output_dim=4, hidden=8, blocks=1)
    w_in, b_in, blocks, _, _ = net.views()
    for arr in blocks[0]:
        arr[:] = 0.0
    x = np.random.default_rng(1).standard_normal((6, 4))
    # with the block zeroed, output = (x W_in + b_in) W_out + b_out
    _, _, _, w_out, b_out = net.views()
    expected = (x @ w_in + b_in) @ w_out + b_out
    np.testing.assert_array_equal(forward(net, x), expected)


def test_forward_deterministic():
    net = small_net()
    x = np.random.default_rng(2).standard_normal((17, 8))
    y1 = forward(net, x)
    y2 = forward(net, x)
    assert np.array_equal(y1, y2)


def test_forward_shape_errors():
    net = small_net()
    with pytest.raises(ValueError):
        forward(net, np.zeros((4, 7)))
    with pytest.raises(ValueError):
        forward(net, np.array([[1.0, np.nan] + [0.0] * 6]))


def test_bad_parameter_vector_rejected():
    n = param_count(3, 2, 4, 1)
    with pytest.raises(ValueError):
        ResidualMlp(3, 2, 4, 1, np.zeros(n + 1))
    bad = np.zeros(n)
    bad[0] = np.inf
    with pytest.raises(ValueError):
        ResidualMlp(3, 2, 4, 1, bad)


def test_backward_zero_upstream():
    net = small_net()
    x = np.random.default_rng(4).standard_normal((5, 8))
    g = backward(net, x, np.zeros((5, 5)))
    assert np.all(g.param_grads == 0.0)
    assert np.all(g.input_grads == 0.0)


def test_backward_linear_net_input_grad_is_w_transpose():
    # 0 blocks: y = (x W_in + b_in) W_out + b_out, so dx = g (W_in W_out)^T
    net = ResidualMlp(3, 2, hidden_dim=4, num_blocks=0)
    init_params(net, 7)
    w_in, _, _, w_out, _ = net.views()
    x = np.random.default_rng(5).standard_normal((1, 3))
    g = np.array([[0.3, -1.2]])
    grads = backward(net, x, g)
    np.testing.assert_allclose(grads.input_grads, g @ (w_in @ w_out).T, atol=1e-12)


def test_backward_shape_errors():
    net = small_net()
    x = np.zeros((3, 8))
    with pytest.raises(ValueError):
        backward(net, x, np.zeros((2, 5)))
    up = np.zeros((3, 5))
    up[0, 0] = np.nan
    with pytest.raises(ValueError):
        backward(net, x, up)


def test_gradients_match_finite_differences():
    net = small_net(input_dim=8, output_dim=5, hidden=16, blocks=2, seed=11)
    x = np.random.default_rng(12).standard_normal((4, 8))
    assert finite_diff_check(net, x) < 1e-4


def test_finite_diff_check_zero_net():
    # weight gradients are 0/0 and report 0; the output-bias gradient is
    # exactly linear so FD agrees to rounding error
    net = ResidualMlp(3, 2, hidden_dim=4, num_blocks=1)
    assert finite_diff_check(net, np.zeros((2, 3))) < 1e-12


def test_finite_diff_check_catches_corruption(monkeypatch):
    # flip the sign of one weight-gradient block and the check must blow up
    net = small_net(input_dim=6, output_dim=3, hidden=8, blocks=1, seed=13)
    x = np.random.default_rng(14).standard_normal((3, 6))
    true_backward = netcore.backward

    def corrupted(net, inputs, upstream_grads, cache=None):
        g = true_backward(net, inputs, upstream_grads, cache)
        g.param_grads[: net.input_dim * net.hidden_dim] *= -1.0
        return g

    monkeypatch.setattr(netcore, "backward", corrupted)
    assert finite_diff_check(net, x) > 1e-1


def test_adam_zero_grad_keeps_params():
    params = np.array([1.0, -2.0, 3.0])
    state = OptimizerState.for_params(params, lr=0.1)
    adam_step(params, np.zeros(3), state)
    np.testing.assert_array_equal(params, [1.0, -2.0, 3.0])
    assert state.step_count == 1


def test_adam_first_step_magnitude_is_lr():
    # scalar param, grad 1: bias correction gives m_hat/sqrt(v_hat) = 1
    params = np.array([0.0])
    state = OptimizerState.for_params(params, lr=1e-2)
    adam_step(params, np.array([1.0]), state)
    np.testing.assert_allclose(params, [-1e-2], rtol=1e-6)


def test_adam_constant_grad_descends():
    params = np.array([0.5])
    state = OptimizerState.for_params(params, lr=1e-3)
    prev = params[0]
    for _ in range(10):
        adam_step(params, np.array([2.0]), state)
        assert params[0] < prev
        prev = params[0]


def test_adam_rejects_nonfinite_grad():
    params = np.zeros(4)
    state = OptimizerState.for_params(params)
    g = np.zeros(4)
    g[2] = np.inf
    with pytest.raises(ValueError, match="index 2"):
        adam_step(params, g, state)


def test_init_deterministic():
    a = init_params(ResidualMlp(5, 2, 8, 1), 42).parameters
    b = init_params(ResidualMlp(5, 2, 8, 1), 42).parameters
    assert np.array_equal(a, b)
