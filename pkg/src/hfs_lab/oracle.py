"""Brute-force reference implementations of the HFS estimators.

Plain Python loops over product tuples and batch rows, sharing no code with
the vectorized estimators in :mod:`hfs_lab.hfs`. Used for cross-checks in the
test suite and by the ``oracle hfs`` CLI command.
"""
import itertools
import math


def _rows(Z):
    return [[float(v) for v in row] for row in Z]


def _dist(u, v, distance):
    s = 0.0
    for x, y in zip(u, v):
        s += (x - y) * (x - y)
    return math.sqrt(s) if distance == "euclidean" else s


def _pair_tuple_distances(rows, i, j, distance):
    """List over product tuples (m = c*b + a) of lists over rows of distances."""
    b = len(rows)
    out = []
    for c in range(b):
        zj = rows[c][j]
        for a in range(b):
            zi = rows[a][i]
            dists = []
            for r in range(b):
                d = (zi - rows[r][i]) ** 2 + (zj - rows[r][j]) ** 2
                dists.append(math.sqrt(d) if distance == "euclidean" else d)
            out.append(dists)
    return out


def tables(Z, pairs, distance="squared_euclidean"):
    """Per-pair tuple distance tables, reusable across the variants below."""
    rows = _rows(Z)
    return [_pair_tuple_distances(rows, i, j, distance) for i, j in pairs]


def _tables(Z, pairs, distance, precomputed):
    return precomputed if precomputed is not None else tables(Z, pairs, distance)


def pairwise(Z, pairs, distance="squared_euclidean", precomputed=None):
    total = 0.0
    for table in _tables(Z, pairs, distance, precomputed):
        worst = -math.inf
        for dists in table:
            nearest = math.inf
            for d in dists:
                if d < nearest:
                    nearest = d
            if nearest > worst:
                worst = nearest
        total += worst
    return total


def averaged(Z, pairs, distance="squared_euclidean", precomputed=None):
    total = 0.0
    for table in _tables(Z, pairs, distance, precomputed):
        s = 0.0
        for dists in table:
            s += min(dists)
        total += s / len(table)
    return total


def _softmin_expectation(dists, tau):
    lo = min(dists)
    weights = [math.exp(-(d - lo) / tau) for d in dists]
    norm = math.fsum(weights)
    return math.fsum(w * d for w, d in zip(weights, dists)) / norm


def softmin(Z, pairs, tau, distance="squared_euclidean", precomputed=None):
    total = 0.0
    for table in _tables(Z, pairs, distance, precomputed):
        total += max(_softmin_expectation(d, tau) for d in table)
    return total


def soft(Z, pairs, tau1, tau2, distance="squared_euclidean", precomputed=None):
    total = 0.0
    for table in _tables(Z, pairs, distance, precomputed):
        inner = [_softmin_expectation(d, tau1) for d in table]
        hi = max(inner)
        weights = [math.exp((v - hi) / tau2) for v in inner]
        norm = math.fsum(weights)
        total += math.fsum(w * v for w, v in zip(weights, inner)) / norm
    return total


def soft_averaged(Z, pairs, tau1, distance="squared_euclidean", precomputed=None):
    total = 0.0
    for table in _tables(Z, pairs, distance, precomputed):
        inner = [_softmin_expectation(d, tau1) for d in table]
        total += math.fsum(inner) / len(inner)
    return total


def subsampled(Z, rows_drawn, distance="squared_euclidean"):
    """Max over stitched tuples (tuple s takes column j from row rows_drawn[s][j])."""
    rows = _rows(Z)
    k = len(rows[0])
    worst = -math.inf
    for draw in rows_drawn:
        z = [rows[int(draw[j])][j] for j in range(k)]
        nearest = min(_dist(z, row, distance) for row in rows)
        worst = max(worst, nearest)
    return worst


def full_product(Z, distance="squared_euclidean"):
    """Exact Hausdorff distance from the full product of column sets to the rows."""
    rows = _rows(Z)
    k = len(rows[0])
    column_sets = [sorted({row[j] for row in rows}) for j in range(k)]
    worst = 0.0
    for z in itertools.product(*column_sets):
        worst = max(worst, min(_dist(z, row, distance) for row in rows))
    return worst


def all_pairs(k):
    return list(itertools.combinations(range(k), 2))
