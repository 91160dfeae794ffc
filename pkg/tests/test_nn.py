import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvfusion.core import InputError
from mvfusion.nn import (
    TrainConfig,
    cross_entropy,
    finite_difference_grads,
    holdout_split,
    max_relative_error,
    sgd_fit,
    softmax,
    softmax_xent_grad,
)


@given(arrays(np.float64, (8, 5), elements=st.floats(-700, 700)))
def test_softmax_normalized_under_extreme_logits(logits):
    p = softmax(logits)
    assert np.all(np.isfinite(p))
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_shift_invariant():
    z = np.array([[1.0, 2.0, 3.0]])
    assert np.allclose(softmax(z), softmax(z + 1000.0))


def test_cross_entropy_values():
    assert cross_entropy(np.full((3, 4), 0.25), np.array([0, 1, 3])) == pytest.approx(math.log(4))
    assert cross_entropy(np.array([[1.0, 0.0]]), np.array([0])) == 0.0


def test_xent_gradient_against_differences():
    r = np.random.default_rng(0)
    z = r.normal(size=(4, 3))
    y = np.array([0, 2, 1, 1])
    numeric = finite_difference_grads([z], lambda p: cross_entropy(softmax(p[0]), y))[0]
    assert np.allclose(softmax_xent_grad(softmax(z), y), numeric, atol=1e-9)


def test_relative_error_uses_floor():
    assert max_relative_error([np.array([1e-12])], [np.array([0.0])]) == pytest.approx(1e-4)
    assert max_relative_error([np.array([2.0])], [np.array([1.0])]) == pytest.approx(0.5)


@pytest.mark.parametrize("n, frac, hold", [(100, 0.1, 10), (1, 0.1, 0), (5, 0.1, 1)])
def test_holdout_sizes(n, frac, hold):
    fit, held = holdout_split(n, frac, np.random.default_rng(0))
    assert len(held) == hold and len(fit) == n - hold
    assert sorted(np.concatenate([fit, held]).tolist()) == list(range(n))


def test_config_validation():
    with pytest.raises(InputError):
        TrainConfig(learning_rate=0)
    with pytest.raises(InputError):
        TrainConfig(early_stop_fraction=0.5)
    with pytest.raises(InputError):
        TrainConfig(batch_size=0)


def quadratic(target):
    def loss(p, X, y):
        return float(np.sum((p[0] - target) ** 2))

    def loss_grad(p, X, y):
        return loss(p, X, y), [2 * (p[0] - target)]
    return loss, loss_grad


def test_sgd_converges_and_stops_when_stuck():
    loss, lg = quadratic(np.array([3.0, -1.0]))
    X, y = np.zeros((40, 1)), np.zeros(40, dtype=int)
    params, hist = sgd_fit([np.zeros(2)], lg, loss, X, y, TrainConfig(learning_rate=0.1, max_epochs=200))
    assert np.allclose(params[0], [3.0, -1.0], atol=1e-6)
    assert len(hist) < 200  # validation loss stops improving once it hits the floor


def test_sgd_restores_best_weights():
    # Learning rate above 1 on a quadratic diverges: best is the starting point.
    loss, lg = quadratic(np.array([1.0]))
    X, y = np.zeros((20, 1)), np.zeros(20, dtype=int)
    cfg = TrainConfig(learning_rate=1.5, max_epochs=50, early_stop_patience=3, batch_size=20)
    params, hist = sgd_fit([np.zeros(1)], lg, loss, X, y, cfg)
    assert params[0].tolist() == [0.0]
    assert len(hist) == 3
