"""Discretization and plug-in discrete entropy / mutual information (nats)."""
import numpy as np


def discretize(Z, bins=20):
    """Equal-frequency binning of each column into at most ``bins`` codes.

    Bin edges are column quantiles, so identical values always share a code.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    codes = np.empty(Z.shape, dtype=np.int64)
    q = np.linspace(0.0, 1.0, bins + 1)[1:-1]
    for j in range(Z.shape[1]):
        edges = np.quantile(Z[:, j], q)
        codes[:, j] = np.searchsorted(edges, Z[:, j], side="right")
    return codes


def _counts(labels):
    _, inverse = np.unique(labels, return_inverse=True)
    return np.bincount(inverse.reshape(-1)).astype(np.float64), inverse.reshape(-1)


def _entropy_from_counts(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def entropy(labels):
    counts, _ = _counts(np.asarray(labels))
    return _entropy_from_counts(counts)


def mutual_information(x, y):
    """Plug-in MI of two discrete label vectors, computed as H(x) + H(y) - H(x, y)."""
    x, y = np.asarray(x), np.asarray(y)
    cx, ix = _counts(x)
    cy, iy = _counts(y)
    # sorted counts keep the float sums independent of argument order
    hxy = _entropy_from_counts(np.sort(np.bincount(ix * len(cy) + iy).astype(np.float64)))
    hx, hy = _entropy_from_counts(np.sort(cx)), _entropy_from_counts(np.sort(cy))
    lo, hi = (hx, hy) if hx <= hy else (hy, hx)
    mi = (lo + hi) - hxy
    return max(mi, 0.0)


def mi_matrix(codes, factors):
    """m[i, j] = MI(latent code column i, factor column j)."""
    codes = np.asarray(codes)
    factors = np.asarray(factors)
    m = np.zeros((codes.shape[1], factors.shape[1]))
    for i in range(codes.shape[1]):
        for j in range(factors.shape[1]):
            m[i, j] = mutual_information(codes[:, i], factors[:, j])
    return m


def factor_entropies(factors):
    factors = np.asarray(factors)
    return np.array([entropy(factors[:, j]) for j in range(factors.shape[1])])
