"""Hausdorff factorized support (HFS) for disentanglement under correlated factors."""
__version__ = "0.1.0"
