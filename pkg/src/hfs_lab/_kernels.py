"""Compiled selection kernels for the hard HFS estimators.

These only locate indices; values and gradients are rebuilt on the autodiff
graph from the selected entries. Distances are always compared squared, which
selects the same elements as the Euclidean distance since sqrt is monotone.
Product tuples are enumerated as ``m = c * b + a`` (value of column i from row
a, value of column j from row c), ties resolve to the lowest index.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def _pair_tables(Z, i, j, A, B):
    b = Z.shape[0]
    for a in range(b):
        for r in range(b):
            da = Z[a, i] - Z[r, i]
            dc = Z[a, j] - Z[r, j]
            A[a, r] = da * da
            B[a, r] = dc * dc


@numba.njit(cache=True)
def max_min_select(Z, pairs):
    """For each pair return (a, c, r) of the max over tuples of the min over rows."""
    b = Z.shape[0]
    P = pairs.shape[0]
    out = np.zeros((P, 3), np.int64)
    A = np.empty((b, b))
    B = np.empty((b, b))
    for p in range(P):
        _pair_tables(Z, pairs[p, 0], pairs[p, 1], A, B)
        best = -1.0
        ba = 0
        bc = 0
        br = 0
        for c in range(b):
            for a in range(b):
                # rows a and c supply one coordinate each, so they bound the min cheaply
                if B[c, a] <= best or A[a, c] <= best:
                    continue
                m = np.inf
                mr = 0
                pruned = False
                for r in range(b):
                    v = A[a, r] + B[c, r]
                    if v <= best:
                        # this tuple's min cannot exceed the running max
                        pruned = True
                        break
                    if v < m:
                        m = v
                        mr = r
                if not pruned and m > best:
                    best = m
                    ba = a
                    bc = c
                    br = mr
        out[p, 0] = ba
        out[p, 1] = bc
        out[p, 2] = br
    return out


@numba.njit(cache=True)
def min_select_all(Z, pairs):
    """Row index of the nearest batch row for every product tuple, shape (P, b*b)."""
    b = Z.shape[0]
    P = pairs.shape[0]
    out = np.zeros((P, b * b), np.int64)
    A = np.empty((b, b))
    B = np.empty((b, b))
    for p in range(P):
        _pair_tables(Z, pairs[p, 0], pairs[p, 1], A, B)
        for c in range(b):
            for a in range(b):
                m = np.inf
                mr = 0
                for r in range(b):
                    v = A[a, r] + B[c, r]
                    if v < m:
                        m = v
                        mr = r
                out[p, c * b + a] = mr
    return out


@numba.njit(cache=True)
def max_min_select_full(T, Z):
    """Max over rows of T of the min squared distance to rows of Z; returns (s, r)."""
    S = T.shape[0]
    b, k = Z.shape
    best = -1.0
    bs = 0
    br = 0
    for s in range(S):
        m = np.inf
        mr = 0
        pruned = False
        for r in range(b):
            v = 0.0
            for j in range(k):
                d = T[s, j] - Z[r, j]
                v += d * d
            if v <= best:
                pruned = True
                break
            if v < m:
                m = v
                mr = r
        if not pruned and m > best:
            best = m
            bs = s
            br = mr
    return bs, br
