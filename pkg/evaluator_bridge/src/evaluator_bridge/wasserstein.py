"""Closed-form 2-Wasserstein distance between Gaussian fits.

For Gaussians the squared 2-Wasserstein distance is

    W2^2 = |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_b^1/2 S_a S_b^1/2)^1/2)

which is also the quantity the usual feature-statistics image metrics
report.  The bridge fits a Gaussian to each sample cloud (empirical mean
and covariance) and scores the pair with this formula, so the metric is
cheap, deterministic, and has a known optimum.
"""

from __future__ import annotations

import numpy as np


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root, clipping tiny negative eigenvalues to zero."""
    sym = (mat + mat.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def gaussian_w2_squared(
    mean_a: np.ndarray,
    cov_a: np.ndarray,
    mean_b: np.ndarray,
    cov_b: np.ndarray,
) -> float:
    mean_a = np.asarray(mean_a, dtype=np.float64)
    mean_b = np.asarray(mean_b, dtype=np.float64)
    cov_a = np.asarray(cov_a, dtype=np.float64)
    cov_b = np.asarray(cov_b, dtype=np.float64)
    root_b = _psd_sqrt(cov_b)
    cross = _psd_sqrt(root_b @ cov_a @ root_b)
    delta = mean_a - mean_b
    value = float(delta @ delta + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    # the formula is nonnegative; rounding can leave a tiny negative residue
    return max(value, 0.0)


def empirical_stats(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance (ddof=1) of an (n, d) sample cloud, n >= 2."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValueError(f"need an (n, d) array with n >= 2, got shape {samples.shape}")
    mean = samples.mean(axis=0)
    cov = np.cov(samples, rowvar=False)
    return mean, np.atleast_2d(cov)


def sample_distance_squared(a: np.ndarray, b: np.ndarray) -> float:
    """Squared 2-Wasserstein distance between the Gaussian fits of two clouds."""
    mean_a, cov_a = empirical_stats(a)
    mean_b, cov_b = empirical_stats(b)
    return gaussian_w2_squared(mean_a, cov_a, mean_b, cov_b)
