"""Disentanglement scores: DCI, MIG, Modularity, SAP, BetaVAE and FactorVAE."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.linear_model import LogisticRegression

from hfs_lab.exceptions import ConfigurationError, DegenerateMetricError
from hfs_lab.factor_world import joint_probabilities
from hfs_lab.metrics.information import discretize, factor_entropies, mi_matrix


def _row_entropy(p, base):
    terms = [-v * math.log(v) for v in p if v > 0]
    return math.fsum(terms) / math.log(base) if base > 1 else 0.0


@dataclass
class DciScores:
    disentanglement: float
    completeness: float
    informativeness: float
    per_dim: np.ndarray
    per_factor: np.ndarray


def dci(R, errors=None):
    """DCI scores from an importance matrix R (d x k) and optional per-factor NRMSE."""
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or np.any(R < 0):
        raise ConfigurationError("R must be a non-negative (d, k) matrix")
    total = R.sum()
    if not total > 0:
        raise DegenerateMetricError("DCI-D is undefined for an all-zero importance matrix")
    d, k = R.shape
    row_mass = R.sum(axis=1)
    col_mass = R.sum(axis=0)
    per_dim = np.zeros(d)
    for i in range(d):
        if row_mass[i] > 0:
            per_dim[i] = 1.0 - _row_entropy(R[i] / row_mass[i], k)
    per_factor = np.zeros(k)
    for j in range(k):
        if col_mass[j] > 0:
            per_factor[j] = 1.0 - _row_entropy(R[:, j] / col_mass[j], d)
    D = math.fsum(per_dim * row_mass) / float(total)
    C = math.fsum(per_factor * col_mass) / float(total)
    I = float("nan") if errors is None else 1.0 - float(np.mean(errors))
    return DciScores(D, C, I, per_dim, per_factor)


def dci_disentanglement(R):
    return dci(R).disentanglement


def nrmse(y_true, y_pred):
    """Per-column RMSE divided by the column's standard deviation."""
    y_true = np.asarray(y_true, dtype=np.float64).reshape(len(y_true), -1)
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(len(y_pred), -1)
    rmse = np.sqrt(np.mean((y_true - y_pred) ** 2, axis=0))
    std = y_true.std(axis=0)
    return np.where(std > 0, rmse / np.where(std > 0, std, 1.0), 0.0)


@dataclass
class MigResult:
    score: float
    m: np.ndarray
    entropies: np.ndarray
    per_factor: np.ndarray


def mig_from_matrix(m, entropies):
    m = np.asarray(m, dtype=np.float64)
    if m.shape[0] < 2:
        raise ConfigurationError("MIG needs at least 2 latent dimensions")
    top = np.sort(m, axis=0)[::-1]
    gaps = np.full(m.shape[1], np.nan)
    keep = entropies > 0
    if not keep.all():
        warnings.warn(f"excluding {int((~keep).sum())} zero-entropy factor(s) from MIG")
    gaps[keep] = (top[0, keep] - top[1, keep]) / entropies[keep]
    score = float(np.mean(gaps[keep])) if keep.any() else float("nan")
    return MigResult(score, m, entropies, gaps)


def mig(Z, factors, bins=20, n_samples=10000, seed=0):
    """Mutual information gap on up to ``n_samples`` rows, ``bins`` equal-frequency bins."""
    Z = np.asarray(Z, dtype=np.float64)
    factors = np.asarray(factors)
    if n_samples > len(Z):
        raise ConfigurationError(f"n_samples={n_samples} exceeds the {len(Z)} available rows")
    idx = np.random.default_rng(seed).choice(len(Z), n_samples, replace=False)
    codes = discretize(Z[idx], bins)
    m = mi_matrix(codes, factors[idx])
    return mig_from_matrix(m, factor_entropies(factors[idx]))


def modularity(m):
    """Mean over latent dims of 1 - (sum of squared non-max MI) / (max MI^2 (k - 1)).

    Dims that carry no information about any factor score 1.
    """
    m = np.asarray(m, dtype=np.float64)
    d, k = m.shape
    if k < 2:
        raise ConfigurationError("modularity needs at least 2 factors")
    per_dim = np.ones(d)
    for i in range(d):
        top = int(np.argmax(m[i]))
        peak = m[i, top]
        if peak <= 0:
            continue
        rest = np.delete(m[i], top)
        per_dim[i] = 1.0 - float(np.sum((rest / peak) ** 2)) / (k - 1)
    return float(np.mean(per_dim))


def _r2_1d(x_train, y_train, x_test, y_test):
    vx = x_train.var()
    if vx == 0 or y_test.var() == 0:
        return 0.0
    slope = np.mean((x_train - x_train.mean()) * (y_train - y_train.mean())) / vx
    intercept = y_train.mean() - slope * x_train.mean()
    resid = y_test - (slope * x_test + intercept)
    return float(np.clip(1.0 - resid.var() / y_test.var() - (resid.mean() ** 2) / y_test.var(), 0.0, 1.0))


def sap(Z, factors, seed=0, test_fraction=0.33):
    """Mean over factors of the gap between the two best single-dim R^2 scores.

    ``factors`` should be normalized factor values. Scores are fit on a train
    split and evaluated on a held-out split.
    """
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(factors, dtype=np.float64)
    if Z.shape[1] < 2:
        raise ConfigurationError("SAP needs at least 2 latent dimensions")
    order = np.random.default_rng(seed).permutation(len(Z))
    n_test = max(1, int(round(test_fraction * len(Z))))
    te, tr = order[:n_test], order[n_test:]
    scores = np.zeros((Z.shape[1], Y.shape[1]))
    for i in range(Z.shape[1]):
        for j in range(Y.shape[1]):
            scores[i, j] = _r2_1d(Z[tr, i], Y[tr, j], Z[te, i], Y[te, j])
    top = np.sort(scores, axis=0)[::-1]
    return float(np.mean(top[0] - top[1])), scores


# ---------------------------------------------------------------- intervention scores

def sample_conditional(spec, corr, factor, values, seed, probs=None):
    """One factor tuple per entry of ``values`` drawn from p(z | z[factor] = value)."""
    rng = np.random.default_rng(seed)
    if probs is None:
        probs = joint_probabilities(spec, corr)
    probs = probs.reshape(spec.cardinalities)
    values = np.asarray(values)
    rest_shape = tuple(c for a, c in enumerate(spec.cardinalities) if a != factor)
    out = np.empty((len(values), spec.k), dtype=np.int64)
    for v in np.unique(values):
        rows = np.flatnonzero(values == v)
        cond = np.take(probs, v, axis=factor).reshape(-1)
        cdf = np.cumsum(cond / cond.sum())
        cdf[-1] = 1.0
        flat = np.searchsorted(cdf, rng.random(len(rows)), side="right")
        rest = np.stack(np.unravel_index(flat, rest_shape), axis=1)
        out[rows] = np.insert(rest, factor, v, axis=1)
    return out


def _sample_joint(spec, probs, n, rng):
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    flat = np.searchsorted(cdf, rng.random(n), side="right")
    return np.stack(np.unravel_index(flat, spec.cardinalities), axis=1).astype(np.int64)


def _encode(encoder, world, factors, rng):
    obs = world.render(factors, rng.integers(2**63))
    return np.asarray(encoder(obs), dtype=np.float64)


def _betavae_points(world, probs, encoder, n, batch_size, rng, chunk=256):
    spec = world.spec
    feats, labels = [], []
    for lo in range(0, n, chunk):
        m = min(chunk, n - lo)
        fixed = rng.integers(spec.k, size=m)
        first = _sample_joint(spec, probs, m * batch_size, rng)
        second = np.empty_like(first)
        per_row = np.repeat(fixed, batch_size)
        for f in np.unique(fixed):
            rows = np.flatnonzero(per_row == f)
            second[rows] = sample_conditional(spec, None, int(f), first[rows, f],
                                              rng.integers(2**63), probs)
        z1 = _encode(encoder, world, first, rng).reshape(m, batch_size, -1)
        z2 = _encode(encoder, world, second, rng).reshape(m, batch_size, -1)
        feats.append(np.mean(np.abs(z1 - z2), axis=1))
        labels.append(fixed)
    return np.concatenate(feats), np.concatenate(labels)


def betavae_score(world, corr, encoder, n_train=10000, n_test=5000, batch_size=64, seed=0):
    """Held-out accuracy of a logistic classifier predicting which factor was fixed.

    Each point is the mean absolute latent difference over ``batch_size`` pairs
    of observations sharing the value of one factor.
    """
    if world.spec.k < 2:
        raise ConfigurationError("BetaVAE score needs at least 2 factors")
    rng = np.random.default_rng(seed)
    probs = joint_probabilities(world.spec, corr)
    Xtr, ytr = _betavae_points(world, probs, encoder, n_train, batch_size, rng)
    Xte, yte = _betavae_points(world, probs, encoder, n_test, batch_size, rng)
    if np.ptp(Xtr, axis=0).max() == 0:
        # constant features: only the majority class can be predicted
        major = np.bincount(ytr, minlength=world.spec.k).argmax()
        return float(np.mean(yte == major))
    clf = LogisticRegression(max_iter=2000).fit(Xtr, ytr)
    return float(clf.score(Xte, yte))


def _factorvae_votes(world, probs, encoder, n, batch_size, scale, active, rng, chunk=256):
    spec = world.spec
    votes = np.zeros((len(scale), spec.k), dtype=np.int64)
    for lo in range(0, n, chunk):
        m = min(chunk, n - lo)
        fixed = rng.integers(spec.k, size=m)
        value = np.array([rng.integers(spec.cardinalities[f]) for f in fixed])
        factors = np.empty((m * batch_size, spec.k), dtype=np.int64)
        per_row = np.repeat(fixed, batch_size)
        per_val = np.repeat(value, batch_size)
        for f in np.unique(fixed):
            rows = np.flatnonzero(per_row == f)
            factors[rows] = sample_conditional(spec, None, int(f), per_val[rows],
                                               rng.integers(2**63), probs)
        z = _encode(encoder, world, factors, rng).reshape(m, batch_size, -1)
        local = np.var(z, axis=1, ddof=1) / scale
        if active.any():
            local = np.where(active, local, np.inf)
        np.add.at(votes, (np.argmin(local, axis=1), fixed), 1)
    return votes


def factorvae_score(world, corr, encoder, n_train=10000, n_test=5000, batch_size=64, seed=0,
                    n_variance=10000, variance_threshold=0.05):
    """Majority-vote accuracy on the argmin normalized-variance latent dimension.

    Dims whose global variance falls below ``variance_threshold`` are pruned;
    if every dim is pruned the votes fall back to all dims (chance accuracy).
    """
    if world.spec.k < 2:
        raise ConfigurationError("FactorVAE score needs at least 2 factors")
    rng = np.random.default_rng(seed)
    probs = joint_probabilities(world.spec, corr)
    ref = _sample_joint(world.spec, probs, n_variance, rng)
    global_var = np.var(_encode(encoder, world, ref, rng), axis=0, ddof=1)
    active = global_var >= variance_threshold
    scale = np.where(active, global_var, 1.0)
    train = _factorvae_votes(world, probs, encoder, n_train, batch_size, scale, active, rng)
    test = _factorvae_votes(world, probs, encoder, n_test, batch_size, scale, active, rng)
    classifier = np.argmax(train, axis=1)
    return float(test[np.arange(len(classifier)), classifier].sum() / test.sum())
