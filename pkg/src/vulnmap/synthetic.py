"""Synthetic generators with known ground truth, used by tests and the toy dataset."""

from __future__ import annotations

import numpy as np

from .autoencoder import OrdinalSchema


def one_factor_ordinal(n: int, schema: OrdinalSchema, seed=0, noise: float = 0.6,
                       latent: np.ndarray | None = None):
    """Ordinal codes driven monotonically by a single standard-normal factor.

    Each variable thresholds ``latent + noise * eps`` at evenly spaced normal
    quantiles, so every code is nondecreasing in the latent in expectation.
    Returns ``(values, latent)`` with ``values`` of shape (n, I).
    """
    rng = np.random.default_rng(seed)
    if latent is None:
        latent = rng.standard_normal(n)
    latent = np.asarray(latent, dtype=float)
    scale = np.sqrt(1.0 + noise ** 2)
    values = np.empty((len(latent), schema.n_variables), dtype=int)
    for i, k in enumerate(schema.K):
        # thresholds at the (j / K) quantiles of the noisy signal's marginal
        cuts = scale * _normal_quantiles(np.arange(1, k) / k)
        signal = latent + noise * rng.standard_normal(len(latent))
        values[:, i] = 1 + np.searchsorted(cuts, signal)
    return values, latent


def _normal_quantiles(p):
    from scipy.special import ndtri
    return ndtri(p)


def gaussian_copula_pair(n: int, rho: float, seed=0):
    """Two standard-normal columns with correlation ``rho``."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(n)
    b = rho * a + np.sqrt(1.0 - rho ** 2) * rng.standard_normal(n)
    return a, b
