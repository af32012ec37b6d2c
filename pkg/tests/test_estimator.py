import numpy as np
import pytest
import torch

from ssmdiff.data import synth_toy_dataset
from ssmdiff.estimator import DiffusionImageGenerator


def tiny_estimator(**overrides):
    kwargs = dict(resolution=32, channels=1, base_width=4, state_dim=2, T=20,
                  total_steps=2, batch_size=4, seed=0, sampler="ddim",
                  ddim_steps=5)
    kwargs.update(overrides)
    return DiffusionImageGenerator(**kwargs)


def toy_X(n=8, resolution=32):
    return synth_toy_dataset("rings", n, resolution, seed=3).items.numpy()


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        est = tiny_estimator()
        params = est.get_params()
        assert params["base_width"] == 4 and params["T"] == 20
        est.set_params(lr=3e-4, seed=7)
        assert est.get_params()["lr"] == 3e-4
        assert est.get_params()["seed"] == 7

    def test_clone_compatible(self):
        from sklearn.base import clone
        est = clone(tiny_estimator(seed=5))
        assert est.get_params()["seed"] == 5

    def test_unfitted_sample_raises(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            tiny_estimator().sample(2)


class TestFitSampleScore:
    def test_fit_sample_smoke(self):
        est = tiny_estimator()
        est.fit(toy_X())
        assert len(est.loss_history_) == 2
        assert all(np.isfinite(est.loss_history_))
        samples = est.sample(3, seed=1)
        assert samples.shape == (3, 1, 32, 32)
        assert np.abs(samples).max() <= 1.0

    def test_sample_seeded_determinism(self):
        est = tiny_estimator()
        est.fit(toy_X())
        a = est.sample(2, seed=9)
        b = est.sample(2, seed=9)
        c = est.sample(2, seed=10)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_score_is_negative_fid(self):
        est = tiny_estimator()
        X = toy_X()
        est.fit(X)
        assert est.score(X) <= 0.0

    def test_bad_input_shape(self):
        est = tiny_estimator()
        with pytest.raises(ValueError):
            est.fit(np.zeros((4, 1, 16, 16)))
        with pytest.raises(ValueError):
            est.fit(np.zeros((4, 3, 32, 32)))

    def test_out_of_range_values(self):
        est = tiny_estimator()
        with pytest.raises(ValueError):
            est.fit(np.full((4, 1, 32, 32), 2.0))
