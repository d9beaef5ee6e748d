import numpy as np
import pytest

from dais import BlrModel


@pytest.fixture
def toy_model():
    """Conjugate model small enough to integrate by hand: d=1, one data point."""
    return BlrModel(X=[[1.0]], y=[1.0], sigma2=1.0, mu_p=[0.0], Lambda_p=[[1.0]])


def central_difference(f, x, h=1e-5):
    """Independent gradient oracle: central differences coordinate by coordinate."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (f(x + step) - f(x - step)) / (2 * h)
    return grad


def random_spd(rng, d, scale=1.0):
    a = rng.standard_normal((d, d))
    return scale * (a @ a.T / d + np.eye(d))


def random_model(rng, n, d):
    return BlrModel(
        X=rng.standard_normal((n, d)) * 0.3,
        y=rng.standard_normal(n),
        sigma2=0.5 + rng.uniform(),
        mu_p=rng.standard_normal(d) * 0.5,
        Lambda_p=random_spd(rng, d),
    )
