"""Scikit-learn style estimators wrapping the multi-chain trainer.

Both estimators follow the (n_samples, n_features) convention on input and
expose the usual fit / transform / get_params surface, so they compose with
pipelines and model-selection utilities.  Internally counts are feature-major
(V x J).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .mbn import mbn_gibbs_sweep, mbn_predictive
from .pgbn import pgbn_gibbs_sweep, pgbn_predictive
from .state import MBN, PGBN, CountMatrix, NetworkConfig, init_from_prior
from .streams import RandomStream
from .trainer import run_chains, simple_plan


def _as_count_matrix(X) -> CountMatrix:
    X = check_array(X, dtype=None, ensure_2d=True)
    if not np.issubdtype(np.asarray(X).dtype, np.integer):
        if not np.all(X == np.round(X)):
            raise ValueError("X must contain integer counts")
        X = np.asarray(X).astype(np.int64)
    if X.min() < 0:
        raise ValueError("X must contain non-negative counts")
    return CountMatrix(np.ascontiguousarray(X.T))


class _BeliefNetwork(TransformerMixin, BaseEstimator):
    """Shared fit/transform machinery; subclasses pin the network kind."""

    _kind = None

    def __init__(self, layer_widths=(30,), gamma0=1.0, e0=1.0, f0=1.0,
                 eta=0.05, c0=1.0, eta_hyperprior=None, fixed_topics=None,
                 chains=4, burn_in=500, collect=50, thin=5,
                 transform_burn_in=200, transform_collect=50,
                 random_state=0, n_jobs=None):
        self.layer_widths = layer_widths
        self.gamma0 = gamma0
        self.e0 = e0
        self.f0 = f0
        self.eta = eta
        self.c0 = c0
        self.eta_hyperprior = eta_hyperprior
        self.fixed_topics = fixed_topics
        self.chains = chains
        self.burn_in = burn_in
        self.collect = collect
        self.thin = thin
        self.transform_burn_in = transform_burn_in
        self.transform_collect = transform_collect
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self) -> NetworkConfig:
        return NetworkConfig(kind=self._kind, layer_widths=tuple(self.layer_widths),
                             gamma0=self.gamma0, e0=self.e0, f0=self.f0,
                             eta=self.eta, c0=self.c0,
                             eta_hyperprior=self.eta_hyperprior)

    def fit(self, X, y=None):
        """Run the Gibbs chains on a count matrix of shape (n_samples, n_features)."""
        data = _as_count_matrix(X)
        config = self._config()
        fixed_phi = None
        if self.fixed_topics is not None:
            # sklearn components orientation: (n_topics, n_features)
            fixed_phi = {0: np.asarray(self.fixed_topics, float).T}
        plan = simple_plan(self.burn_in, self.collect, self.thin,
                           self.chains, int(self.random_state))
        result = run_chains(plan, config, data, n_jobs=self.n_jobs,
                            fixed_phi=fixed_phi)
        if not result.surviving:
            raise RuntimeError("all chains failed:\n" + result.chains[0].error)
        self.result_ = result
        self.config_ = result.config
        self.samples_ = [c.samples for c in result.chains]
        self.loglik_traces_ = [c.loglik for c in result.chains]
        pooled = result.pooled_samples()
        self.components_ = np.mean([s.phi[0] for s in pooled], axis=0).T
        self.c_mean_ = np.mean([s.c for s in pooled], axis=0)
        self.r_mean_ = np.mean([s.r for s in pooled], axis=0)
        self.phi_mean_ = [np.mean([s.phi[i] for s in pooled], axis=0)
                          for i in range(self.config_.T)]
        self.n_features_in_ = data.V
        self._train_p = self._predictive(pooled)
        return self

    def _predictive(self, samples):
        return mbn_predictive(samples) if self._kind == MBN else pgbn_predictive(samples)

    def predictive_distribution(self) -> np.ndarray:
        """Posterior predictive feature probabilities for the fitted samples,
        shape (n_samples, n_features); rows sum to 1."""
        check_is_fitted(self, "components_")
        return self._train_p.T

    def transform(self, X) -> np.ndarray:
        """Infer bottom-layer topic weights for new samples.

        Topic weights, concentrations, and the top-level activation are frozen
        at their posterior means; a short conditional Gibbs run resamples the
        hidden units for the new data.  Returns (n_samples, K_1).
        """
        check_is_fitted(self, "components_")
        data = _as_count_matrix(X)
        if data.V != self.n_features_in_:
            raise ValueError("feature count differs from fit")
        config = self.config_
        stream = RandomStream(int(self.random_state)).child(10_000)
        state = init_from_prior(config, data.J, data, stream)
        for i in range(config.T):
            state.phi[i] = self.phi_mean_[i].copy()
        state.c = np.array(self.c_mean_, copy=True)
        state.r = np.array(self.r_mean_, copy=True)
        state.refresh_top_activation()
        for i in range(config.T - 1, -1, -1):
            state.refresh_activation(i)
        sweep = mbn_gibbs_sweep if self._kind == MBN else pgbn_gibbs_sweep
        opts = dict(fixed_phi_layers=tuple(range(config.T)),
                    update_c=False, update_r=False)
        for _ in range(self.transform_burn_in):
            sweep(state, stream=stream, **opts)
        acc = np.zeros_like(state.theta[0])
        for _ in range(self.transform_collect):
            sweep(state, stream=stream, **opts)
            acc += state.theta[0]
        return (acc / self.transform_collect).T


class MultinomialBeliefNetwork(_BeliefNetwork):
    """Deep multinomial belief network fit by collapsed Gibbs sampling.

    Samples are rows of non-negative counts with a fixed per-row total
    (conditioned on).  Hidden units are Dirichlet distributed, so every
    inferred weight column is a probability distribution.

    Parameters mirror the generative model: layer_widths are the topic counts
    per layer (bottom first); gamma0 controls how many top-level units are
    active; e0, f0 parameterize the gamma prior of the per-layer
    concentrations; eta is the topic smoothing prior (scalar or per layer);
    eta_hyperprior=(a, b, eta0) switches on inference of eta.  c0 is unused
    for this kind.  fixed_topics (n_topics, n_features) pins the bottom-layer
    topics, turning fit into pure attribution of samples onto known topics.
    """

    _kind = MBN


class PoissonGammaBeliefNetwork(_BeliefNetwork):
    """Deep Poisson-gamma belief network fit by collapsed Gibbs sampling.

    Observed counts are Poisson distributed given the bottom activation;
    hidden units are gamma distributed with per-sample, per-layer scales.
    c0 is the rate of the top-level gamma prior.
    """

    _kind = PGBN
