"""Frechet-distance evaluation between sample sets with a pluggable embedder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F


@dataclass
class FeatureStats:
    mu: np.ndarray     # (d,)
    sigma: np.ndarray  # (d, d)
    n: int


def gaussian_stats(features: np.ndarray) -> FeatureStats:
    """Sample mean and unbiased sample covariance of (n, d) features."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples for covariance")
    mu = features.mean(axis=0)
    centered = features - mu
    sigma = centered.T @ centered / (n - 1)
    return FeatureStats(mu=mu, sigma=sigma, n=n)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), clamped at 0.

    The cross term uses the symmetric route Tr[(S_a^{1/2} S_b S_a^{1/2})^{1/2}]
    so all eigenvalues stay real.
    """
    if a.mu.shape != b.mu.shape:
        raise ValueError("feature dimensions differ")
    if not (np.isfinite(a.mu).all() and np.isfinite(b.mu).all()
            and np.isfinite(a.sigma).all() and np.isfinite(b.sigma).all()):
        raise ValueError("non-finite statistics")
    diff = a.mu - b.mu
    sa_half = _psd_sqrt(a.sigma)
    inner = sa_half @ b.sigma @ sa_half
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    cross = 2.0 * np.sqrt(np.clip(vals, 0.0, None)).sum()
    d2 = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - cross)
    return max(d2, 0.0)


def pixel_embedder(images: torch.Tensor, size: int = 8) -> np.ndarray:
    """Default feature map: images downsampled to size x size, flattened."""
    pooled = F.adaptive_avg_pool2d(images.double(), size)
    return pooled.reshape(pooled.shape[0], -1).numpy()


def evaluate_fid(samples: torch.Tensor, reference: torch.Tensor,
                 embedder=pixel_embedder) -> float:
    """Frechet distance between Gaussian fits of embedded sample and reference sets."""
    if samples.shape[0] == 0 or reference.shape[0] == 0:
        raise ValueError("both sample sets must be non-empty")
    return frechet_distance(gaussian_stats(embedder(samples)),
                            gaussian_stats(embedder(reference)))
