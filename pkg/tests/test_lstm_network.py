import numpy as np
import pytest
import torch
from src.exceptions import NonFiniteActivation, ShapeMismatch
from src.lstm_network import LstmNetwork, LstmParams, init_params, lstm_step, predict_seconds


def zero_params(feature_count = 1, hidden_units = 1):
    params = init_params(feature_count, hidden_units, seed = 0)
    return params.zeros_like()


def torch_forward(params, windows, output_peephole):
    """
    Reference forward pass written with torch autograd in float64.
    """
    p = {name : torch.tensor(value, dtype = torch.float64, requires_grad = True) for name, value in params.to_dict().items()}
    x = torch.tensor(windows, dtype = torch.float64)
    h = torch.zeros(x.shape[0], params.hidden_units, dtype = torch.float64)
    c = torch.zeros_like(h)
    for t in range(x.shape[1]):
        x_t   = x[:, t]
        i     = torch.sigmoid(x_t @ p['w_xi'] + h @ p['w_hi'] + c * p['w_ci'] + p['b_i'])
        f     = torch.sigmoid(x_t @ p['w_xf'] + h @ p['w_hf'] + c * p['w_cf'] + p['b_f'])
        g     = torch.tanh(x_t @ p['w_xc'] + h @ p['w_hc'] + p['b_c'])
        c_new = f * c + i * g
        peep  = c if output_peephole == 'previous' else c_new
        o     = torch.sigmoid(x_t @ p['w_xo'] + h @ p['w_ho'] + peep * p['w_co'] + p['b_o'])
        h, c  = o * torch.tanh(c_new), c_new
    dense = torch.relu(h @ p['w_dense'] + p['b_dense'])
    return dense @ p['w_head'] + p['b_head'], p


def test_initialization_is_seeded():
    a, b = init_params(5, 7, seed = 3), init_params(5, 7, seed = 3)
    for name in LstmParams.names():
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.w_xi, init_params(5, 7, seed = 4).w_xi)
    np.testing.assert_array_equal(a.b_f, np.ones(7))
    np.testing.assert_array_equal(a.b_i, np.zeros(7))
    assert a.w_ci.shape == (7,) and a.w_head.shape == (7, 6)


def test_parameter_count():
    network = LstmNetwork.initialize(1, 1, seed = 0)
    assert len([n for n in LstmParams.names() if not n.endswith(('dense', 'head'))]) == 15
    assert network.parameter_count() == LstmNetwork.expected_parameter_count(1, 1) == 29
    assert LstmNetwork.initialize(20, 12, seed = 0).parameter_count() == LstmNetwork.expected_parameter_count(20, 12)


def test_zero_weights_cell():
    h, c, cache = lstm_step(np.zeros(1), np.zeros(1), np.ones(1), zero_params())
    assert cache.i[0] == pytest.approx(0.5) and cache.f[0] == pytest.approx(0.5) and cache.o[0] == pytest.approx(0.5)
    assert c[0] == pytest.approx(0.5)
    assert h[0] == pytest.approx(0.231059, abs = 1e-6)


def test_unit_input_gate():
    params      = zero_params()
    params.w_xi = np.ones((1, 1))
    _, _, cache = lstm_step(np.ones(1), np.zeros(1), np.zeros(1), params)
    assert cache.i[0] == pytest.approx(0.731, abs = 1e-3)


def test_zero_head_returns_the_bias():
    params        = init_params(3, 4, seed = 1)
    params.w_head = np.zeros((4, 6))
    params.b_head = np.arange(6) / 10.0
    network       = LstmNetwork(params)
    windows       = np.random.default_rng(0).random((5, 8, 3))
    np.testing.assert_allclose(network.predict(windows), np.tile(params.b_head, (5, 1)))


def test_single_window_and_batch_agree():
    network = LstmNetwork.initialize(3, 4, seed = 2)
    windows = np.random.default_rng(1).random((2, 6, 3))
    np.testing.assert_allclose(network.predict(windows[1]), network.predict(windows)[1])


@pytest.mark.parametrize('output_peephole', ['previous', 'current'])
def test_matches_autograd(output_peephole):
    rng      = np.random.default_rng(5)
    network  = LstmNetwork.initialize(3, 4, seed = 9, output_peephole = output_peephole)
    windows  = rng.random((3, 7, 3))
    upstream = rng.normal(size = (3, 6))

    prediction, cache = network.forward(windows)
    grads             = network.backward(cache, upstream)
    reference, tensors = torch_forward(network.params, windows, output_peephole)
    (reference * torch.tensor(upstream)).sum().backward()

    np.testing.assert_allclose(prediction, reference.detach().numpy(), rtol = 1e-10, atol = 1e-12)
    for name in LstmParams.names():
        np.testing.assert_allclose(getattr(grads, name), tensors[name].grad.numpy(), rtol = 1e-7, atol = 1e-10,
                                   err_msg = name)


def test_matches_finite_differences():
    rng      = np.random.default_rng(8)
    network  = LstmNetwork.initialize(2, 3, seed = 4)
    windows  = rng.random((2, 5, 2))
    upstream = rng.normal(size = (2, 6))
    _, cache = network.forward(windows)
    grads    = network.backward(cache, upstream)
    eps      = 1e-6

    for name in LstmParams.names():
        values  = getattr(network.params, name)
        flat    = values.reshape(-1)
        for k in range(min(flat.size, 4)):
            saved   = flat[k]
            flat[k] = saved + eps
            up      = float(np.sum(network.predict(windows) * upstream))
            flat[k] = saved - eps
            down    = float(np.sum(network.predict(windows) * upstream))
            flat[k] = saved
            numeric = (up - down) / (2 * eps)
            assert getattr(grads, name).reshape(-1)[k] == pytest.approx(numeric, rel = 1e-4, abs = 1e-6), name


def test_zero_upstream_gives_zero_gradients():
    network  = LstmNetwork.initialize(3, 4, seed = 1)
    _, cache = network.forward(np.random.default_rng(2).random((2, 5, 3)))
    grads    = network.backward(cache, np.zeros((2, 6)))
    for name in LstmParams.names():
        assert not np.any(getattr(grads, name)), name


def test_first_step_peepholes_get_no_gradient():
    network  = LstmNetwork.initialize(3, 4, seed = 1)
    _, cache = network.forward(np.random.default_rng(2).random((2, 1, 3)))
    grads    = network.backward(cache, np.ones((2, 6)))
    assert not np.any(grads.w_ci) and not np.any(grads.w_cf) and not np.any(grads.w_co)


def test_shape_and_finiteness_checks():
    network = LstmNetwork.initialize(3, 4, seed = 1)
    with pytest.raises(ShapeMismatch):
        network.predict(np.zeros((2, 5, 4)))
    network.params.b_head = np.full(6, np.nan)
    with pytest.raises(NonFiniteActivation):
        network.predict(np.zeros((2, 5, 3)))
    with pytest.raises(ValueError):
        LstmNetwork(network.params, output_peephole = 'next')


def test_predicted_seconds():
    np.testing.assert_array_equal(predict_seconds(np.array([0.25, 1.3, 0.2525, -0.1, 0.0])), [50, 200, 51, 0, 0])


def test_halves_round_up_and_just_below_rounds_down():
    np.testing.assert_array_equal(predict_seconds(np.array([0.0025, 0.9975, 0.25249, 0.7475])), [1, 200, 50, 150])


def test_checkpoint_round_trip(tmp_path):
    network = LstmNetwork.initialize(3, 4, seed = 6, output_peephole = 'current')
    first   = tmp_path / 'first.ckpt'
    network.save(str(first), manifest_hash = 'abc', loss = 'tdse', epoch = 2, validation_loss = 0.5)

    loaded, header = LstmNetwork.load(str(first))
    assert header['manifest_hash'] == 'abc' and header['loss'] == 'tdse' and header['epoch'] == 2
    assert loaded.output_peephole == 'current'
    second = tmp_path / 'second.ckpt'
    loaded.save(str(second), manifest_hash = 'abc', loss = 'tdse', epoch = 2, validation_loss = 0.5)
    assert first.read_bytes() == second.read_bytes()


@pytest.mark.slow
def test_autograd_agreement_over_many_draws():
    rng = np.random.default_rng(0)
    for draw in range(100):
        features, units, steps = (int(v) for v in rng.integers(1, 6, size = 3))
        network  = LstmNetwork.initialize(features, units, seed = draw,
                                          output_peephole = 'previous' if draw % 2 else 'current')
        windows  = rng.normal(size = (2, steps, features))
        upstream = rng.normal(size = (2, 6))
        _, cache = network.forward(windows)
        grads    = network.backward(cache, upstream)
        reference, tensors = torch_forward(network.params, windows, network.output_peephole)
        (reference * torch.tensor(upstream)).sum().backward()
        for name in LstmParams.names():
            np.testing.assert_allclose(getattr(grads, name), tensors[name].grad.numpy(), rtol = 1e-6, atol = 1e-9)


@pytest.mark.slow
def test_finite_differences_over_many_draws():
    eps = 1e-5
    for draw in range(100):
        rng      = np.random.default_rng(draw)
        network  = LstmNetwork.initialize(10, 6, seed = draw)
        windows  = rng.random((1, 20, 10))
        upstream = rng.normal(size = (1, 6))
        _, cache = network.forward(windows)
        grads    = network.backward(cache, upstream)
        for name in LstmParams.names():
            flat     = getattr(network.params, name).reshape(-1)
            analytic = getattr(grads, name).reshape(-1)
            for k in range(flat.size):
                saved   = flat[k]
                flat[k] = saved + eps
                up      = float(np.sum(network.predict(windows) * upstream))
                flat[k] = saved - eps
                down    = float(np.sum(network.predict(windows) * upstream))
                flat[k] = saved
                numeric = (up - down) / (2 * eps)
                assert analytic[k] == pytest.approx(numeric, rel = 1e-4, abs = 1e-8), (draw, name, k)
