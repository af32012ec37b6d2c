"""Scikit-learn style facade: a generative estimator with fit / sample / score."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .evaluation import evaluate_fid
from .training import RunConfig, Trainer


class DiffusionImageGenerator(BaseEstimator):
    """Generative image model: fit on an array of images, then sample new ones.

    Parameters mirror RunConfig; X is (n, channels, resolution, resolution)
    with values in [-1, 1].
    """

    def __init__(self, resolution=32, channels=1, base_width=16, state_dim=8,
                 T=1000, total_steps=500, batch_size=8, lr=1e-4, seed=0,
                 regen=True, sampler="ddpm", ddim_steps=50, eta=0.0,
                 dtype="float32"):
        self.resolution = resolution
        self.channels = channels
        self.base_width = base_width
        self.state_dim = state_dim
        self.T = T
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.regen = regen
        self.sampler = sampler
        self.ddim_steps = ddim_steps
        self.eta = eta
        self.dtype = dtype

    def _run_config(self) -> RunConfig:
        return RunConfig(
            resolution=self.resolution, channels=self.channels,
            base_width=self.base_width, state_dim=self.state_dim, T=self.T,
            total_steps=self.total_steps, batch_size=self.batch_size, lr=self.lr,
            seed=self.seed, regen=self.regen, sampler=self.sampler,
            ddim_steps=self.ddim_steps, eta=self.eta, dtype=self.dtype)

    def _validate_X(self, X) -> torch.Tensor:
        X = torch.as_tensor(np.asarray(X))
        if X.ndim != 4 or X.shape[1] != self.channels \
                or X.shape[2] != self.resolution or X.shape[3] != self.resolution:
            raise ValueError(
                f"X must have shape (n, {self.channels}, {self.resolution}, "
                f"{self.resolution}), got {tuple(X.shape)}")
        if X.abs().max() > 1.0 + 1e-6:
            raise ValueError("X values must lie in [-1, 1]")
        return X

    def fit(self, X, y=None):
        X = self._validate_X(X)
        config = self._run_config()
        from .data import DatasetHandle
        trainer = Trainer(config, dataset=DatasetHandle(
            items=X, resolution=self.resolution, source="array"))
        batches = trainer._batches()
        self.loss_history_ = []
        for _ in range(self.total_steps):
            self.loss_history_.append(trainer.train_step(next(batches)))
        self.trainer_ = trainer
        return self

    def sample(self, n_samples=16, seed=None):
        """Draw new images; returns a (n, channels, R, R) numpy array in [-1, 1]."""
        check_is_fitted(self, "trainer_")
        seed = self.seed + 1_000_000 if seed is None else seed
        return self.trainer_.sample_images(n_samples, seed=seed).numpy()

    def score(self, X, y=None):
        """Negative pixel-embedder Frechet distance of fresh samples against X
        (higher is better, 0 is perfect)."""
        check_is_fitted(self, "trainer_")
        X = self._validate_X(X)
        samples = torch.as_tensor(self.sample(max(len(X), 2)))
        return -evaluate_fid(samples, X)
