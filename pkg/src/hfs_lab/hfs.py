"""Hausdorff factorized-support estimators, the training objective and the HFS metric.

All estimators measure how far the batch ``Z`` (rows = samples) is from the
cartesian product of its column supports. The pairwise family works on 2-D
slices ``Z[:, (i, j)]``: for every product tuple ``(Z[a, i], Z[c, j])`` the
distance to the nearest batch row is computed, then reduced over tuples.

Product tuples of a pair are enumerated as ``m = c * b + a``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields

import numpy as np

from hfs_lab import autodiff as ad
from hfs_lab import models
from hfs_lab._kernels import max_min_select, max_min_select_full, min_select_all
from hfs_lab.exceptions import ConfigurationError, ContractError

VARIANTS = ("pairwise", "averaged", "subsampled", "softmin", "soft", "single-pair")
DISTANCES = ("squared_euclidean", "euclidean")

# reference grids for large-scale studies
GAMMA_GRID = (20, 40, 80, 100, 200, 400, 800, 1000, 2000, 4000)
BETA_VAE_HFS_GAMMA_GRID = (30, 60, 100, 300, 600, 1000, 3000, 6000)
BETA_GRID = (1, 2, 3, 4, 6, 8, 10, 12, 16)


@dataclass
class HfsConfig:
    variant: str = "pairwise"
    gamma: float = 0.0
    pairs: int = 25
    subsample_count: int = 1000
    tau: float = 1.0
    tau1: float = 1.0
    tau2: float = 1.0
    distance: str = "squared_euclidean"
    pair_seed: int = 0
    resample_pairs: bool = False
    scale_reg: str = None
    scale_weight: float = 0.0
    scale_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown HFS variant {self.variant!r}")
        if self.distance not in DISTANCES:
            raise ConfigurationError(f"unknown distance {self.distance!r}")
        if self.gamma < 0:
            raise ConfigurationError("gamma must be >= 0")
        if self.pairs < 1:
            raise ConfigurationError("pairs must be >= 1")
        if self.variant == "softmin" and not self.tau > 0:
            raise ConfigurationError("softmin needs tau > 0")
        if self.variant == "soft" and not (self.tau1 > 0 and self.tau2 > 0):
            raise ConfigurationError("soft variant needs tau1, tau2 > 0")
        if self.scale_reg not in (None, "variance", "range"):
            raise ConfigurationError(f"unknown scale regularizer {self.scale_reg!r}")
        self.scale_range = tuple(self.scale_range)

    def n_pairs_for(self, latent_dim):
        total = latent_dim * (latent_dim - 1) // 2
        if self.variant == "single-pair":
            return 1
        if self.pairs > total:
            raise ConfigurationError(
                f"{self.pairs} pairs requested but latent_dim={latent_dim} only has {total}")
        return self.pairs

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["scale_range"] = list(self.scale_range)
        return d

    @classmethod
    def from_dict(cls, d):
        """Accepts plain field names or the ``hfs.<key>`` config spelling."""
        out = {}
        for key, value in d.items():
            key = key[4:] if key.startswith("hfs.") else key
            out[key] = value
        return cls(**out)


@dataclass(frozen=True)
class PairSet:
    pairs: tuple = field(default_factory=tuple)

    def __post_init__(self):
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        if any(i >= j for i, j in pairs) or len(set(pairs)) != len(pairs):
            raise ConfigurationError("pairs must be unique with i < j")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)

    def as_array(self):
        return np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    @classmethod
    def all(cls, latent_dim):
        return cls(tuple(itertools.combinations(range(latent_dim), 2)))

    @classmethod
    def sample(cls, latent_dim, n, seed):
        """Draw ``n`` distinct pairs out of all ``C(latent_dim, 2)`` combinations."""
        everything = np.array(list(itertools.combinations(range(latent_dim), 2)))
        if n > len(everything):
            raise ConfigurationError(f"cannot draw {n} pairs from {len(everything)}")
        rng = np.random.default_rng(seed)
        chosen = everything[rng.choice(len(everything), n, replace=False)]
        return cls(tuple(map(tuple, chosen)))


def _pair_array(pairs, k):
    arr = pairs.as_array() if isinstance(pairs, PairSet) else np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= k):
        raise ConfigurationError(f"pair index out of range for latent_dim={k}")
    return arr


def _check_batch(Z):
    Z = ad.as_tensor(Z)
    if Z.ndim != 2:
        raise ContractError(f"Z must be 2-D, got shape {Z.shape}")
    if Z.shape[0] < 2:
        raise ContractError("HFS needs a batch of at least 2 rows")
    return Z


def _finish(d, distance):
    return ad.sqrt(d) if distance == "euclidean" else d


def _selected_distance(Z, pairs, a, c, r):
    """Squared 2-D distance between tuple (Z[a,i], Z[c,j]) and row Z[r,(i,j)], per pair."""
    k = Z.shape[1]
    i, j = pairs[:, 0], pairs[:, 1]
    if a.ndim == 2:
        i, j = i[:, None], j[:, None]
    di = ad.sub(ad.take(Z, a * k + i), ad.take(Z, r * k + i))
    dj = ad.sub(ad.take(Z, c * k + j), ad.take(Z, r * k + j))
    return ad.add(ad.square(di), ad.square(dj))


def hfs_pairwise(Z, pairs, distance="squared_euclidean"):
    """Sum over pairs of the max over product tuples of the min distance to batch rows."""
    Z = _check_batch(Z)
    p = _pair_array(pairs, Z.shape[1])
    sel = max_min_select(np.ascontiguousarray(Z.data), p)
    d = _selected_distance(Z, p, sel[:, 0], sel[:, 1], sel[:, 2])
    return ad.sum(_finish(d, distance))


def hfs_averaged(Z, pairs, distance="squared_euclidean"):
    """Like :func:`hfs_pairwise` with the max over tuples replaced by a mean."""
    Z = _check_batch(Z)
    p = _pair_array(pairs, Z.shape[1])
    b = Z.shape[0]
    r = min_select_all(np.ascontiguousarray(Z.data), p)
    m = np.arange(b * b)
    a = np.broadcast_to(m % b, r.shape)
    c = np.broadcast_to(m // b, r.shape)
    d = _finish(_selected_distance(Z, p, a, c, r), distance)
    return ad.sum(ad.mean(d, axis=1))


def pair_distance_tensor(Z, pairs, distance="squared_euclidean"):
    """Full distance tensor D[p, c*b + a, r] on the graph, shape (P, b*b, b)."""
    Z = _check_batch(Z)
    p = _pair_array(pairs, Z.shape[1])
    b, k = Z.shape
    P = len(p)
    rows = np.arange(b)
    # per-column squared differences A[p, a, r] = (Z[a, i] - Z[r, i])**2
    def table(col):
        left = rows[None, :, None] * k + col[:, None, None]
        right = rows[None, None, :] * k + col[:, None, None]
        ones = np.ones((P, b, b), dtype=np.intp)
        return ad.square(ad.sub(ad.take(Z, left * ones), ad.take(Z, right * ones)))

    A, B = table(p[:, 0]), table(p[:, 1])
    m = np.arange(b * b)
    base = np.arange(P)[:, None, None] * (b * b)
    ia = base + (m % b)[None, :, None] * b + rows[None, None, :]
    ic = base + (m // b)[None, :, None] * b + rows[None, None, :]
    D = ad.add(ad.take(A, ia), ad.take(B, ic))
    return _finish(D, distance)


def hfs_pairwise_dense(Z, pairs, distance="squared_euclidean"):
    """Reference construction of :func:`hfs_pairwise` through graph min/max ops."""
    D = pair_distance_tensor(Z, pairs, distance)
    return ad.sum(ad.max(ad.min(D, axis=2), axis=1))


def _expand_last(x, n):
    """(..., m) -> (..., m, n) by repeating each entry ``n`` times."""
    idx = np.repeat(np.arange(x.size), n).reshape(*x.shape, n)
    return ad.take(x, idx)


def _softmax_weights(scores, axis_len):
    """Softmax over the last axis of ``scores`` (shape (..., axis_len))."""
    shift = ad.Tensor(np.max(scores.data, axis=-1, keepdims=True) * np.ones(scores.shape))
    e = ad.exp(ad.sub(scores, shift))
    total = ad.sum(e, axis=-1)
    return ad.div(e, _expand_last(total, axis_len))


def _soft_inner(D, tau):
    """Expected distance under the softmin distribution over batch rows."""
    b = D.shape[-1]
    w = _softmax_weights(ad.mul(D, -1.0 / tau), b)
    return ad.sum(ad.mul(w, D), axis=2)


def softmin_weights(D, tau):
    return _softmax_weights(ad.mul(ad.as_tensor(D), -1.0 / tau), D.shape[-1])


def hfs_softmin(Z, pairs, tau, distance="squared_euclidean"):
    """Inner min replaced by the softmin expectation at temperature ``tau``."""
    if not tau > 0:
        raise ConfigurationError("tau must be > 0")
    inner = _soft_inner(pair_distance_tensor(Z, pairs, distance), tau)
    return ad.sum(ad.max(inner, axis=1))


def hfs_soft(Z, pairs, tau1, tau2, distance="squared_euclidean"):
    """Softmin (tau1) inside, softmax-weighted average (tau2) over product tuples outside."""
    if not (tau1 > 0 and tau2 > 0):
        raise ConfigurationError("tau1 and tau2 must be > 0")
    inner = _soft_inner(pair_distance_tensor(Z, pairs, distance), tau1)
    w = _softmax_weights(ad.mul(inner, 1.0 / tau2), inner.shape[1])
    return ad.sum(ad.sum(ad.mul(w, inner), axis=1))


def hfs_soft_averaged(Z, pairs, tau1, distance="squared_euclidean"):
    """Mean over product tuples of the softmin distances (the tau2 -> inf limit of hfs_soft)."""
    inner = _soft_inner(pair_distance_tensor(Z, pairs, distance), tau1)
    return ad.sum(ad.mean(inner, axis=1))


def subsample_rows(b, k, count, seed):
    """Row indices for stitching ``count`` product tuples, one row draw per column."""
    return np.random.default_rng(seed).integers(0, b, size=(count, k))


def hfs_subsampled(Z, subsample_count, distance="squared_euclidean", seed=0, rows=None):
    """Max over randomly stitched full-dimensional product tuples of the min distance to Z."""
    Z = _check_batch(Z)
    b, k = Z.shape
    if k < 2:
        raise ContractError("subsampled HFS needs at least 2 latent dims")
    if rows is None:
        rows = subsample_rows(b, k, subsample_count, seed)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.arange(k)
    T = Z.data[rows, cols[None, :]]
    s, r = max_min_select_full(np.ascontiguousarray(T), np.ascontiguousarray(Z.data))
    diff = ad.sub(ad.take(Z, rows[s] * k + cols), ad.take(Z, r * k + cols))
    return _finish(ad.sum(ad.square(diff)), distance)


def scale_regularizer(Z, mode="variance", a=-1.0, b=1.0):
    """Hinge penalties keeping each column's spread above a minimum.

    ``variance``: sum_i max(0, 1 - std(Z[:, i])); ``range``: sum_i
    max(0, b - max Z[:, i]) + max(0, min Z[:, i] - a).
    """
    Z = ad.as_tensor(Z)
    if mode == "variance":
        centred = ad.sub(Z, ad.mean(Z, axis=0))
        std = ad.sqrt(ad.mean(ad.square(centred), axis=0))
        return ad.sum(ad.relu(ad.sub(1.0, std)))
    if mode == "range":
        upper = ad.relu(ad.sub(b, ad.max(Z, axis=0)))
        lower = ad.relu(ad.sub(ad.min(Z, axis=0), a))
        return ad.add(ad.sum(upper), ad.sum(lower))
    raise ConfigurationError(f"unknown scale regularizer mode {mode!r}")


def hfs_value(Z, config, pairs, seed=0):
    """Dispatch to the estimator selected by ``config.variant``."""
    v = config.variant
    if v in ("pairwise", "single-pair"):
        return hfs_pairwise(Z, pairs, config.distance)
    if v == "averaged":
        return hfs_averaged(Z, pairs, config.distance)
    if v == "softmin":
        return hfs_softmin(Z, pairs, config.tau, config.distance)
    if v == "soft":
        return hfs_soft(Z, pairs, config.tau1, config.tau2, config.distance)
    if v == "subsampled":
        return hfs_subsampled(Z, config.subsample_count, config.distance, seed)
    raise ConfigurationError(f"unknown HFS variant {v!r}")


def objective(model, X, config, beta, rng=None, pairs=None, step_seed=0):
    """beta-VAE loss plus ``gamma`` times the HFS estimate on the encoder means.

    Returns ``(total, parts, latents)`` where ``parts`` maps component names to
    float values. Terms with zero weight are not added, so ``gamma == 0``
    gives exactly the beta-VAE loss and ``beta == gamma == 0`` the SAE loss.
    """
    if beta < 0 or config.gamma < 0:
        raise ConfigurationError("beta and gamma must be >= 0")
    latents = model.encode(X, rng)
    sae = models.sae_loss(model, X, latents)
    kl = models.kl_term(latents)
    total = sae if beta == 0 else ad.add(sae, ad.mul(kl, beta))
    parts = {"sae": sae.item(), "kl": kl.item()}
    if config.gamma > 0:
        if pairs is None:
            pairs = PairSet.sample(model.latent_dim, config.n_pairs_for(model.latent_dim),
                                   config.pair_seed)
        h = hfs_value(latents.means, config, pairs, step_seed)
        total = ad.add(total, ad.mul(h, config.gamma))
        parts["hfs"] = h.item()
    if config.scale_reg and config.scale_weight > 0:
        s = scale_regularizer(latents.means, config.scale_reg, *config.scale_range)
        total = ad.add(total, ad.mul(s, config.scale_weight))
        parts["scale"] = s.item()
    parts["total"] = total.item()
    return total, parts, latents


def hfs_pairwise_value(Z, pairs=None, distance="squared_euclidean"):
    """Float-valued :func:`hfs_pairwise` on a plain array; all pairs by default."""
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    if pairs is None:
        pairs = PairSet.all(Z.shape[1])
    return hfs_pairwise(ad.Tensor(Z), pairs, distance).item()


def hfs_metric(representations, batch_size=64, n_batches=None, seed=0, pairs=None,
               distance="squared_euclidean"):
    """Mean pairwise HFS over disjoint shuffled batches of a representation table.

    ``representations`` is an (N, d) array of encoder means. Batches come from
    one seeded permutation; at most ``n_batches`` full batches are used.
    """
    Z = np.asarray(representations, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise ContractError("need an (N, d) representation table with N >= 2")
    batch_size = min(batch_size, Z.shape[0])
    if pairs is None:
        pairs = PairSet.all(Z.shape[1])
    order = np.random.default_rng(seed).permutation(Z.shape[0])
    available = Z.shape[0] // batch_size
    n = available if n_batches is None else min(n_batches, available)
    values = [hfs_pairwise_value(Z[order[t * batch_size:(t + 1) * batch_size]], pairs, distance)
              for t in range(n)]
    return float(np.mean(values))

