import numpy as np
import pytest

from selar.autodiff import Tensor, parameters
from selar.errors import ContractError, ModeError, ShapeError
from selar.weighting import HIDDEN, combine_with_hint, embedding_width, init_weight_net, make_embedding, weight, weights


def test_embedding_layout():
    xi = make_embedding(3, 0.7, 1.0, n_aux=5)
    assert xi.shape == (embedding_width(5, False),) == (7,)
    np.testing.assert_array_equal(xi, [0.7, 0, 0, 1, 0, 0, 1.0])
    # the primary task is the all-zero code
    np.testing.assert_array_equal(make_embedding(0, 0.7, 1.0, 5), [0.7, 0, 0, 0, 0, 0, 1.0])


def test_hint_embedding_width():
    xi = make_embedding(2, 0.5, 0.0, 5, hint_loss=0.4, hint=True)
    assert xi.shape == (8,) == (embedding_width(5, True),)
    np.testing.assert_array_equal(xi, [0.5, 0.4, 0, 1, 0, 0, 0, 0.0])


def test_embedding_errors():
    with pytest.raises(ModeError):
        make_embedding(6, 0.1, 1, 5)
    with pytest.raises(ModeError):
        make_embedding(1, 0.1, 1, 5, hint_loss=0.2)
    with pytest.raises(ModeError):
        make_embedding(1, 0.1, 1, 5, hint=True)


def test_zero_theta_gives_half():
    params = {k: Tensor(np.zeros_like(v)) for k, v in init_weight_net(np.random.default_rng(0), 7).items()}
    xi = np.random.default_rng(1).normal(size=(20, 7)) * 10
    assert np.all(weights(xi, params).data == 0.5)


def test_neutral_init_gives_half():
    params = parameters(init_weight_net(np.random.default_rng(0), 7, neutral=True))
    xi = np.random.default_rng(1).normal(size=(20, 7))
    assert np.all(weights(xi, params).data == 0.5)


def test_weights_in_open_interval_and_shape_error():
    arrays = init_weight_net(np.random.default_rng(0), 4)
    assert arrays["theta.W1"].shape == (4, HIDDEN)
    params = parameters(arrays)
    v = weights(np.random.default_rng(2).normal(size=(50, 4)) * 3, params).data
    assert np.all((v > 0) & (v < 1))
    assert weight(np.zeros(4), params).shape == ()
    with pytest.raises(ShapeError):
        weights(np.zeros((2, 5)), params)


def test_combine_examples():
    assert combine_with_hint(0.2, 0.8, 1.0) == 0.2
    assert combine_with_hint(0.2, 0.8, 0.0) == 0.8
    assert combine_with_hint(0.2, 0.8, 0.5) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ContractError):
        combine_with_hint(np.zeros(3), np.zeros((3, 2)), 0.5)
    with pytest.raises(ContractError):
        combine_with_hint(0.2, 0.8, 1.5)


def test_combine_class_probabilities():
    a = np.array([[0.7, 0.3], [0.1, 0.9]])
    b = np.array([[0.2, 0.8], [0.5, 0.5]])
    out = combine_with_hint(a, b, np.array([1.0, 0.25]))
    np.testing.assert_allclose(out, [[0.7, 0.3], [0.4, 0.6]])
