import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hierattn.estimator import FullVideoAttention, WindowedVideoAttention
from hierattn.latent import random_latent


def test_params_round_trip():
    est = WindowedVideoAttention(K=4, n_layers=3, r=1)
    params = est.get_params()
    assert params["K"] == 4 and params["n_layers"] == 3
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(r=2)
    assert est.r == 2


def test_fit_transform_shape_and_determinism():
    X = random_latent((1, 2, 8, 8, 8), 0)
    a = WindowedVideoAttention(K=2, n_layers=2).fit_transform(X)
    b = WindowedVideoAttention(K=2, n_layers=2, threads=3).fit(X).transform(X)
    assert a.shape == X.shape and np.array_equal(a, b)
    assert not np.array_equal(a, WindowedVideoAttention(K=2, n_layers=2, random_state=1).fit_transform(X))


def test_not_fitted():
    with pytest.raises(NotFittedError):
        WindowedVideoAttention().transform(random_latent((1, 1, 8, 8, 8), 0))


def test_channel_mismatch_after_fit():
    est = WindowedVideoAttention().fit(random_latent((1, 1, 8, 8, 8), 0))
    with pytest.raises(ValueError):
        est.transform(random_latent((1, 1, 8, 8, 4), 0))


def test_invalid_input():
    with pytest.raises(ValueError):
        WindowedVideoAttention().fit(np.zeros((8, 8, 8)))
    with pytest.raises(ValueError):
        WindowedVideoAttention(K=2).fit(random_latent((1, 1, 6, 8, 8), 0))


def test_degenerate_windowed_equals_full():
    X = random_latent((1, 2, 4, 4, 8), 0)
    full = FullVideoAttention(K=1, n_layers=2).fit_transform(X)
    win = WindowedVideoAttention(K=1, n_layers=2)
    win.fit(X)
    assert win.configs_[0].K == 1 and win.n_features_in_ == 8
    # same base weights, but K=1 alone still compresses the hierarchical path by 2
    assert full.shape == win.transform(X).shape
