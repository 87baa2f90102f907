"""Dense stochastic autoencoder used as the backbone for HFS and beta-VAE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hfs_lab import autodiff as ad
from hfs_lab.exceptions import ConfigurationError, NonFiniteError


class Dense:
    def __init__(self, n_in, n_out, rng, name):
        bound = np.sqrt(6.0 / (n_in + n_out))
        self.weight = ad.Parameter(rng.uniform(-bound, bound, size=(n_in, n_out)), f"{name}.weight")
        self.bias = ad.Parameter(np.zeros(n_out), f"{name}.bias")

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class MLP:
    """ReLU hidden layers, linear output."""

    def __init__(self, sizes, rng, name):
        self.layers = [Dense(a, b, rng, f"{name}.{i}") for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]

    def __call__(self, x):
        for layer in self.layers[:-1]:
            x = ad.relu(layer(x))
        return self.layers[-1](x)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass
class LatentBatch:
    means: ad.Tensor
    log_variances: ad.Tensor
    samples: ad.Tensor
    noise: np.ndarray


class SaeModel:
    """Gaussian encoder q(z|x) = N(f(x), diag(exp(logvar))) and deterministic decoder.

    The log-variance head is clamped from below at ``min_log_variance``.
    """

    def __init__(self, observation_dim, latent_dim=10, hidden=(64, 64), min_log_variance=-6.0,
                 seed=0):
        if latent_dim < 1 or observation_dim < 1:
            raise ConfigurationError("dimensions must be positive")
        self.observation_dim = observation_dim
        self.latent_dim = latent_dim
        self.hidden = tuple(hidden)
        self.min_log_variance = float(min_log_variance)
        rng = np.random.default_rng(seed)
        self.encoder = MLP([observation_dim, *self.hidden, 2 * latent_dim], rng, "encoder")
        self.decoder = MLP([latent_dim, *reversed(self.hidden), observation_dim], rng, "decoder")

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()

    def encode_means(self, X):
        """Deterministic representations as a plain array (no graph recorded)."""
        h = np.asarray(X, dtype=np.float64)
        layers = self.encoder.layers
        for layer in layers[:-1]:
            h = np.maximum(h @ layer.weight.data + layer.bias.data, 0.0)
        last = layers[-1]
        return h @ last.weight.data[:, :self.latent_dim] + last.bias.data[:self.latent_dim]

    def encode(self, X, rng):
        X = ad.as_tensor(X)
        out = self.encoder(X)
        k = self.latent_dim
        means = ad.columns(out, np.arange(k))
        raw = ad.columns(out, np.arange(k, 2 * k))
        floor = self.min_log_variance
        log_var = ad.add(ad.relu(ad.sub(raw, floor)), floor)
        if not (np.all(np.isfinite(means.data)) and np.all(np.isfinite(log_var.data))):
            raise NonFiniteError("non-finite encoder activations")
        eps = np.random.default_rng(rng).standard_normal(means.shape)
        samples = ad.add(means, ad.mul(ad.exp(ad.mul(log_var, 0.5)), eps))
        return LatentBatch(means, log_var, samples, eps)

    def decode(self, z):
        return self.decoder(z)


def sae_loss(model, X, latents):
    """Batch mean of the squared reconstruction error from one posterior sample."""
    recon = model.decode(latents.samples)
    return reconstruction_error(recon, X)


def reconstruction_error(recon, X):
    err = ad.square(ad.sub(recon, ad.as_tensor(X)))
    return ad.mean(ad.sum(err, axis=1))


def kl_term(latents):
    """Closed-form KL(N(mu, sigma^2) || N(0, 1)), summed over dims, mean over batch."""
    mu, lv = latents.means, latents.log_variances
    per = ad.sub(ad.add(ad.square(mu), ad.exp(lv)), ad.add(lv, 1.0))
    return ad.mul(ad.mean(ad.sum(per, axis=1)), 0.5)


def beta_vae_loss(model, X, latents, beta):
    sae = sae_loss(model, X, latents)
    if beta == 0:
        return sae
    return ad.add(sae, ad.mul(kl_term(latents), beta))
