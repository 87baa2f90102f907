import numpy as np
import pytest

from hfs_lab import autodiff as ad
from hfs_lab.exceptions import NonFiniteError
from hfs_lab.models import (LatentBatch, SaeModel, beta_vae_loss, kl_term, reconstruction_error,
                            sae_loss)

from conftest import kink_free, numeric_grad, rel_err


def _zero_encoder(floor=-6.0):
    model = SaeModel(5, latent_dim=3, hidden=(4,), min_log_variance=floor)
    for p in model.encoder.parameters():
        p.data[...] = 0.0
    # log-variance head pushed below the floor
    model.encoder.layers[-1].bias.data[3:] = -100.0
    return model


def test_zero_weight_encoder_means_zero_logvar_at_floor():
    latents = _zero_encoder().encode(np.ones((4, 5)), 0)
    np.testing.assert_array_equal(latents.means.data, 0.0)
    np.testing.assert_array_equal(latents.log_variances.data, -6.0)


def test_same_noise_seed_same_samples(rng):
    model = SaeModel(5, 3, (8,), seed=1)
    X = rng.normal(size=(6, 5))
    a, b = model.encode(X, 7), model.encode(X, 7)
    assert a.samples.data.tobytes() == b.samples.data.tobytes()
    np.testing.assert_allclose(a.samples.data, a.means.data + np.exp(a.log_variances.data / 2) * a.noise)


def test_floor_bounds_sample_std():
    model = _zero_encoder()
    latents = model.encode(np.zeros((20_000, 5)), 3)
    std = latents.samples.data.std(axis=0)
    assert np.exp(-3.0) == pytest.approx(0.0498, abs=1e-4)
    assert np.all(std >= np.exp(-3.0) * 0.98)
    assert np.all(np.exp(latents.log_variances.data / 2) >= np.exp(-3.0))


def test_non_finite_activations_abort():
    model = SaeModel(3, 2, (4,))
    with pytest.raises(NonFiniteError):
        model.encode(np.array([[np.inf, 0.0, 0.0]]), 0)


def test_decoder_output_matches_observation_shape(rng):
    model = SaeModel(7, 3, (5, 6))
    latents = model.encode(rng.normal(size=(4, 7)), 0)
    assert model.decode(latents.samples).shape == (4, 7)
    assert latents.means.shape == latents.log_variances.shape == latents.samples.shape == (4, 3)


def test_reconstruction_error_cases(rng):
    X = rng.normal(size=(5, 6))
    assert reconstruction_error(ad.Tensor(X), X).item() == 0.0
    assert reconstruction_error(ad.Tensor(X + 1.0), X).item() == pytest.approx(6.0, abs=1e-12)


def _latents(mu, lv):
    mu, lv = ad.Tensor(np.asarray(mu, float)), ad.Tensor(np.asarray(lv, float))
    return LatentBatch(mu, lv, mu, np.zeros(mu.shape))


def test_kl_hand_values():
    assert kl_term(_latents(np.zeros((3, 4)), np.zeros((3, 4)))).item() == 0.0
    assert kl_term(_latents([[1.0]], [[0.0]])).item() == 0.5


@pytest.mark.parametrize("seed", range(5))
def test_kl_nonnegative_random_batches(seed):
    r = np.random.default_rng(seed)
    assert kl_term(_latents(r.normal(size=(8, 4)), r.normal(size=(8, 4)))).item() >= 0.0


def test_kl_closed_form_matches_monte_carlo():
    r = np.random.default_rng(0)
    mu, sigma = r.normal(size=3), r.uniform(0.3, 2.0, size=3)
    closed = kl_term(_latents(mu[None], np.log(sigma ** 2)[None])).item()
    z = mu + sigma * r.standard_normal((100_000, 3))
    log_q = -0.5 * (((z - mu) / sigma) ** 2 + np.log(2 * np.pi * sigma ** 2))
    log_p = -0.5 * (z ** 2 + np.log(2 * np.pi))
    mc = float(np.mean(np.sum(log_q - log_p, axis=1)))
    assert abs(mc - closed) / closed < 0.02


@pytest.mark.parametrize("seed", range(20))
def test_sae_and_kl_gradients_match_finite_differences(seed):
    r = np.random.default_rng(seed)
    model = kink_free(SaeModel(4, 3, (5,), min_log_variance=-20.0, seed=seed), r)
    X = r.normal(size=(6, 4))
    params = model.parameters()

    def loss():
        latents = model.encode(X, 11)
        return beta_vae_loss(model, X, latents, 0.7)

    ad.backward(loss())
    analytic = [p.grad.copy() for p in params]
    numeric = numeric_grad(lambda: loss().item(), [p.data for p in params])
    for a, n in zip(analytic, numeric):
        assert rel_err(a, n) < 1e-4
    enc = params[:len(model.encoder.parameters())]
    assert any(np.abs(p.grad).sum() > 0 for p in enc)


def test_beta_zero_is_sae_loss(rng):
    model = SaeModel(4, 2, (3,))
    X = rng.normal(size=(5, 4))
    latents = model.encode(X, 1)
    assert beta_vae_loss(model, X, latents, 0.0).item() == sae_loss(model, X, latents).item()


def test_identity_capable_model_drives_loss_down():
    from hfs_lab.factor_world import FactorSpec, FactorWorld, CorrelationSpec
    world = FactorWorld(FactorSpec((3, 3)), observation_dim=4, mixing_depth=0, noise_scale=0.0,
                        identity=True)
    X = world.render(world.spec.grid())
    model = SaeModel(4, 2, (16,), min_log_variance=-12.0, seed=0)
    opt = ad.Adam(model.parameters(), lr=3e-3)
    losses = []
    for step in range(1500):
        loss = sae_loss(model, X, model.encode(X, step))
        ad.backward(loss)
        opt.step()
        losses.append(loss.item())
    windows = np.array(losses).reshape(5, -1).mean(axis=1)
    assert np.all(np.diff(windows) < 0)
    assert windows[-1] < 0.02 * windows[0]
