"""scikit-learn style wrappers.

``fit`` only reads the input shape (to size the weights) and initialises
parameters deterministically from ``random_state``; ``transform`` runs the
stacked blocks. Both estimators accept (B, T, H, W, D) arrays.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_latent
from .block import init_model, layer_configs, model_forward
from .oracle import MAX_ORACLE_TOKENS, full_attention_block


class _VideoAttentionBase(TransformerMixin, BaseEstimator):
    def _init_params(self, X):
        X = check_latent(X, "X")
        self.n_features_in_ = X.shape[-1]
        self.configs_ = layer_configs(
            self.n_layers, K=self.K, D=X.shape[-1], r=self.r, d_ff=self.d_ff, heads=self.heads,
        )
        self.params_ = init_model(self.configs_, self.random_state)
        return X

    def _check_X(self, X):
        check_is_fitted(self, "params_")
        X = check_latent(X, "X")
        if X.shape[-1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[-1]} channels, estimator was fitted with {self.n_features_in_}")
        return X


class WindowedVideoAttention(_VideoAttentionBase):
    """Stack of global/local windowed attention blocks.

    Parameters
    ----------
    K : int
        Local windows per spatial axis on even layers (K + 1 on odd layers).
        Must be even. H and W must be divisible by 2K.
    n_layers : int
    r : int
        Rank of the global and hierarchical low-rank residuals.
    d_ff : int or None
        FFN hidden width, ``2 * D`` when None.
    heads : int
    timestep : float
        Diffusion timestep fed to the fusion gates by ``transform``.
    positional : bool
        Add a sinusoidal (t, h, w) code to the input before the first block.
    threads : int
        Worker threads for independent windows. Results do not depend on it.
    random_state : int
    """

    def __init__(self, K=2, n_layers=2, r=2, d_ff=None, heads=1, timestep=500.0,
                 positional=False, threads=1, random_state=0):
        self.K = K
        self.n_layers = n_layers
        self.r = r
        self.d_ff = d_ff
        self.heads = heads
        self.timestep = timestep
        self.positional = positional
        self.threads = threads
        self.random_state = random_state

    def fit(self, X, y=None):
        X = self._init_params(X)
        self.configs_[0].check_input(X)
        return self

    def transform(self, X):
        X = self._check_X(X)
        return model_forward(X, self.timestep, self.configs_, self.params_,
                             threads=self.threads, positional=self.positional)


class FullVideoAttention(_VideoAttentionBase):
    """Reference stack: every layer attends over all T*H*W sites.

    Uses the same initialisation stream as :class:`WindowedVideoAttention`,
    so with equal hyper-parameters both estimators hold identical base
    weights and normalisation parameters.
    """

    def __init__(self, K=2, n_layers=2, r=2, d_ff=None, heads=1, timestep=500.0,
                 max_tokens=MAX_ORACLE_TOKENS, random_state=0):
        self.K = K
        self.n_layers = n_layers
        self.r = r
        self.d_ff = d_ff
        self.heads = heads
        self.timestep = timestep
        self.max_tokens = max_tokens
        self.random_state = random_state

    def fit(self, X, y=None):
        self._init_params(X)
        return self

    def transform(self, X):
        X = self._check_X(X)
        for p in self.params_:
            X = full_attention_block(X, self.timestep, p, max_tokens=self.max_tokens)
        return np.asarray(X)
