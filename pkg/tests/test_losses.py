import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from src.losses import LossKind, compute_loss, loss_terms
from src.exceptions import NoValidEntries


unit = st.floats(0.0, 1.0, allow_nan = False)


@pytest.mark.parametrize('kind', list(LossKind))
def test_perfect_prediction_costs_nothing(kind):
    true      = np.array([[0.1, 0.5, 1.0, 0.0, 0.3, 0.7]])
    loss, grd = compute_loss(kind, true.copy(), true, np.ones_like(true, dtype = bool))
    assert loss == 0.0
    assert not np.any(grd)


def test_discounted_error_vanishes_at_the_horizon():
    loss, _ = compute_loss(LossKind.TDSE, np.array([0.2]), np.array([1.0]), np.array([True]))
    assert loss == 0.0


def test_discounted_error_value():
    loss, grad = compute_loss(LossKind.TDSE, np.array([0.5]), np.array([0.25]), np.array([True]))
    assert loss == pytest.approx(0.03515625)
    assert grad[0] == pytest.approx(2 * 0.25 * 0.5625)


def test_reference_losses():
    pred, true, mask = np.array([0.3, 0.0]), np.array([0.1, 0.0]), np.array([True, True])
    assert compute_loss('mse', pred, true, mask)[0] == pytest.approx(0.02)
    assert compute_loss('mae', pred, true, mask)[0] == pytest.approx(0.1)
    # a zero target is divided by the floor instead
    assert compute_loss('mape', np.array([0.01]), np.array([0.0]), np.array([True]))[0] == pytest.approx(200.0)
    assert compute_loss('mape', pred[:1], true[:1], mask[:1])[0] == pytest.approx(200.0)


def test_masked_entries_are_ignored():
    pred = np.array([0.5, 0.9])
    mask = np.array([True, False])
    for kind in LossKind:
        first, grad_a  = compute_loss(kind, pred, np.array([0.2, -1.0]), mask)
        second, grad_b = compute_loss(kind, pred, np.array([0.2, np.nan]), mask)
        assert first == second
        assert grad_a[1] == 0.0 and grad_b[1] == 0.0


def test_mean_over_valid_entries():
    pred = np.array([[0.5, 0.5], [0.5, 0.5]])
    true = np.zeros((2, 2))
    mask = np.array([[True, False], [False, False]])
    loss, grad = compute_loss('mse', pred, true, mask)
    assert loss == pytest.approx(0.25)
    assert grad[0, 0] == pytest.approx(1.0)


def test_no_valid_entry():
    with pytest.raises(NoValidEntries):
        compute_loss('mse', np.zeros(3), np.zeros(3), np.zeros(3, dtype = bool))


@settings(max_examples = 100, deadline = None)
@given(arrays(np.float64, 8, elements = st.floats(-0.5, 1.5, allow_nan = False)), arrays(np.float64, 8, elements = unit))
def test_discounted_error_never_exceeds_squared_error(pred, true):
    mask        = np.ones(8, dtype = bool)
    tdse, _     = loss_terms('tdse', pred, true, mask)
    mse, _      = loss_terms('mse', pred, true, mask)
    assert np.all(tdse <= mse + 1e-15)


def test_discounted_error_on_the_full_grid():
    p, y = np.meshgrid(np.linspace(0, 1, 101), np.linspace(0, 1, 101))
    mask = np.ones_like(p, dtype = bool)
    tdse, _ = loss_terms('tdse', p, y, mask)
    mse, _  = loss_terms('mse', p, y, mask)
    assert np.all(tdse <= mse)
    np.testing.assert_array_equal(tdse[0], mse[0])
    assert not np.any(tdse[-1])


@pytest.mark.parametrize('kind', list(LossKind))
def test_gradients_match_finite_differences(kind):
    rng  = np.random.default_rng(4)
    true = rng.uniform(0.05, 1.0, size = (4, 6))
    pred = true + rng.choice([-1, 1], size = true.shape) * rng.uniform(0.05, 0.3, size = true.shape)
    mask = rng.random(true.shape) < 0.8
    _, grad = compute_loss(kind, pred, true, mask)
    eps     = 1e-7
    for index in np.ndindex(pred.shape):
        up, down        = pred.copy(), pred.copy()
        up[index]      += eps
        down[index]    -= eps
        numeric         = (compute_loss(kind, up, true, mask)[0] - compute_loss(kind, down, true, mask)[0]) / (2 * eps)
        assert grad[index] == pytest.approx(numeric, abs = 1e-6 * max(1.0, abs(numeric)))
