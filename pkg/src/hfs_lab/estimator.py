"""scikit-learn style estimator around the beta-VAE + HFS training objective."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from hfs_lab import autodiff as ad
from hfs_lab.exceptions import ConfigurationError, NonFiniteError
from hfs_lab.hfs import HfsConfig, PairSet, hfs_metric, objective
from hfs_lab.models import SaeModel


class HFSAutoencoder(TransformerMixin, BaseEstimator):
    """Stochastic autoencoder trained with ``gamma * HFS + SAE + beta * KL``.

    ``gamma=0`` is a plain beta-VAE, ``beta=0`` the plain HFS objective.
    ``transform`` returns the encoder means.

    Parameters
    ----------
    latent_dim : int
    hidden : tuple of int
        Hidden widths of the encoder (mirrored in the decoder).
    beta, gamma : float
        Weights of the KL term and of the Hausdorff term.
    hfs_variant : str
        One of ``pairwise``, ``averaged``, ``subsampled``, ``softmin``,
        ``soft``, ``single-pair``.
    n_pairs : int
        Number of latent pairs used by the pairwise estimators.
    resample_pairs : bool
        Draw a fresh pair subset every step instead of once per fit.
    n_steps, batch_size, learning_rate :
        Adam minibatch optimization settings.
    random_state : int
        Seeds weights, minibatches, reparameterization noise and pairs.
    """

    def __init__(self, latent_dim=10, hidden=(64, 64), beta=1.0, gamma=0.0,
                 hfs_variant="pairwise", n_pairs=25, hfs_distance="squared_euclidean",
                 tau=1.0, tau1=1.0, tau2=1.0, subsample_count=1000, resample_pairs=False,
                 scale_reg=None, scale_weight=0.0, min_log_variance=-6.0, learning_rate=1e-3,
                 adam_betas=(0.9, 0.999), adam_eps=1e-8, batch_size=64, n_steps=5000,
                 log_every=100, random_state=0):
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.beta = beta
        self.gamma = gamma
        self.hfs_variant = hfs_variant
        self.n_pairs = n_pairs
        self.hfs_distance = hfs_distance
        self.tau = tau
        self.tau1 = tau1
        self.tau2 = tau2
        self.subsample_count = subsample_count
        self.resample_pairs = resample_pairs
        self.scale_reg = scale_reg
        self.scale_weight = scale_weight
        self.min_log_variance = min_log_variance
        self.learning_rate = learning_rate
        self.adam_betas = adam_betas
        self.adam_eps = adam_eps
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.log_every = log_every
        self.random_state = random_state

    def hfs_config(self):
        n_pairs = self.n_pairs
        total = self.latent_dim * (self.latent_dim - 1) // 2
        if self.hfs_variant != "single-pair" and n_pairs > total:
            n_pairs = total
        return HfsConfig(variant=self.hfs_variant, gamma=self.gamma, pairs=max(n_pairs, 1),
                         subsample_count=self.subsample_count, tau=self.tau, tau1=self.tau1,
                         tau2=self.tau2, distance=self.hfs_distance,
                         pair_seed=self.random_state, resample_pairs=self.resample_pairs,
                         scale_reg=self.scale_reg, scale_weight=self.scale_weight)

    def _draw_pairs(self, config, seed):
        n = config.n_pairs_for(self.latent_dim)
        return PairSet.sample(self.latent_dim, n, seed)

    def fit(self, X, y=None, callback=None):
        """Train on observations ``X``.

        ``callback(step, averaged_parts)`` is invoked every ``log_every`` steps.
        On non-finite losses or gradients training stops, parameters keep the
        last finite state and :class:`NonFiniteError` is raised.
        """
        X = check_array(X, dtype=np.float64)
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if self.n_steps < 1:
            raise ConfigurationError("n_steps must be >= 1")
        if self.beta < 0:
            raise ConfigurationError("beta must be >= 0")
        config = self.hfs_config()
        seeds = np.random.SeedSequence(self.random_state)
        model_seed, batch_seed, noise_seed, pair_seed = seeds.spawn(4)
        self.n_features_in_ = X.shape[1]
        self.model_ = SaeModel(X.shape[1], self.latent_dim, self.hidden, self.min_log_variance,
                               seed=model_seed)
        beta1, beta2 = self.adam_betas
        self.optimizer_ = ad.Adam(self.model_.parameters(), self.learning_rate, beta1, beta2,
                                  self.adam_eps)
        pair_rng = np.random.default_rng(pair_seed)
        use_pairs = self.gamma > 0 and self.latent_dim >= 2
        self.pairs_ = self._draw_pairs(config, int(pair_rng.integers(2**63))) if use_pairs else PairSet()
        batch_rng = np.random.default_rng(batch_seed)
        noise_rng = np.random.default_rng(noise_seed)
        self.history_ = []
        self.failed_ = False
        window = {}
        bs = min(self.batch_size, len(X))
        for step in range(1, self.n_steps + 1):
            idx = batch_rng.choice(len(X), bs, replace=False)
            pairs = self.pairs_
            if use_pairs and self.resample_pairs:
                pairs = self._draw_pairs(config, int(pair_rng.integers(2**63)))
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    total, parts, _ = objective(self.model_, X[idx], config, self.beta, noise_rng,
                                                pairs, step_seed=int(noise_rng.integers(2**63)))
                    ad.backward(total)
                if not np.isfinite(parts["total"]) or not all(
                        np.all(np.isfinite(p.grad)) for p in self.optimizer_.params
                        if p.grad is not None):
                    raise NonFiniteError(f"non-finite loss or gradient at step {step}")
            except NonFiniteError:
                # the update that would use these values is skipped
                self.failed_ = True
                self.failed_step_ = step
                raise
            self.optimizer_.step()
            for key, value in parts.items():
                window.setdefault(key, []).append(value)
            if step % self.log_every == 0 or step == self.n_steps:
                averaged = {key: float(np.mean(v)) for key, v in window.items()}
                averaged["step"] = step
                self.history_.append(averaged)
                window = {}
                if callback is not None:
                    callback(step, averaged)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.encode_means(check_array(X, dtype=np.float64))

    def reconstruct(self, X):
        """Decode the encoder means."""
        check_is_fitted(self, "model_")
        Z = self.transform(X)
        return self.model_.decode(ad.Tensor(Z)).data

    def score(self, X, y=None):
        """Negative mean squared reconstruction error of the posterior means."""
        X = check_array(X, dtype=np.float64)
        return -float(np.mean(np.sum((self.reconstruct(X) - X) ** 2, axis=1)))

    def hfs_score(self, X, batch_size=64, n_batches=None, seed=0):
        """Dataset-level pairwise HFS of the representation of ``X`` (all pairs)."""
        return hfs_metric(self.transform(X), batch_size, n_batches, seed)
