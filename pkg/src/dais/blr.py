"""Closed-form Bayesian linear regression.

Gaussian prior N(mu_p, Lambda_p^{-1}) on the weights, Gaussian observation
noise with variance sigma2.  Every annealed density along the geometric
bridge is Gaussian with precision Lambda_p + beta * X^T X / sigma2, so the
log marginal likelihood, annealed posteriors, the affine form of a leapfrog
step, and mini-batch gradients all have closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .targets import Gaussian, GeometricTarget, geometric_target


@dataclass(frozen=True)
class BlrModel:
    """Design matrix X (n x d), targets y (n,), observation variance, prior."""

    X: np.ndarray
    y: np.ndarray
    sigma2: float
    mu_p: np.ndarray
    Lambda_p: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        mu_p = np.atleast_1d(np.asarray(self.mu_p, dtype=float))
        Lambda_p = np.atleast_2d(np.asarray(self.Lambda_p, dtype=float))
        d = X.shape[1] if X.size else mu_p.size
        if X.shape[0] != y.size:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if mu_p.shape != (d,) or Lambda_p.shape != (d, d):
            raise ValueError("prior dimensions do not match the design matrix")
        if self.sigma2 <= 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not np.allclose(Lambda_p, Lambda_p.T, atol=1e-10):
            raise ValueError("Lambda_p must be symmetric")
        np.linalg.cholesky(Lambda_p)  # raises if not positive definite
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "mu_p", mu_p)
        object.__setattr__(self, "Lambda_p", 0.5 * (Lambda_p + Lambda_p.T))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        # cached derived quantities; X^T y / sigma2 equals Lambda_lld mu_*,
        # which stays well defined even when X^T X is singular
        object.__setattr__(self, "_Lambda_lld", X.T @ X / self.sigma2)
        object.__setattr__(self, "_Xty_over_s2", X.T @ y / self.sigma2)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.mu_p.size

    @property
    def Lambda_lld(self) -> np.ndarray:
        return self._Lambda_lld


@dataclass(frozen=True)
class AnnealedGaussian:
    """Gaussian N(mu, Lambda^{-1}) along the bridge at inverse temperature beta."""

    beta: float
    mu: np.ndarray
    Lambda: np.ndarray


def annealed_posterior(model: BlrModel, beta: float) -> AnnealedGaussian:
    """Exact annealed posterior: Lambda = Lambda_p + beta * Lambda_lld.

    The mean solves Lambda mu = Lambda_p mu_p + beta X^T y / sigma2; the
    least-squares point is never materialized, so singular X^T X is fine.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    Lambda = model.Lambda_p + beta * model.Lambda_lld
    mu = np.linalg.solve(Lambda, model.Lambda_p @ model.mu_p + beta * model._Xty_over_s2)
    return AnnealedGaussian(beta=float(beta), mu=mu, Lambda=Lambda)


def derive_posterior(model: BlrModel) -> AnnealedGaussian:
    """Posterior at beta = 1."""
    return annealed_posterior(model, 1.0)


def _chol_logdet(mat: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(np.linalg.cholesky(mat)))))


def exact_log_ml(model: BlrModel) -> float:
    """Closed-form log marginal likelihood.

    log Z = -(n/2) log(2 pi sigma2) + (1/2) log(|Sigma_pos| / |Sigma_p|)
            + (1/2) mu_pos^T Lambda_pos mu_pos - y^T y / (2 sigma2)
            - (1/2) mu_p^T Lambda_p mu_p
    with log-determinants taken through Cholesky factors.
    """
    post = derive_posterior(model)
    logdet_ratio = _chol_logdet(model.Lambda_p) - _chol_logdet(post.Lambda)
    return float(
        -0.5 * model.n * np.log(2 * np.pi * model.sigma2)
        + 0.5 * logdet_ratio
        + 0.5 * post.mu @ post.Lambda @ post.mu
        - 0.5 * model.y @ model.y / model.sigma2
        - 0.5 * model.mu_p @ model.Lambda_p @ model.mu_p
    )


def blr_grad(model: BlrModel, beta: float, theta: np.ndarray) -> np.ndarray:
    """Annealed log-density gradient -Lambda_p (theta - mu_p) + (beta/sigma2) X^T (y - X theta)."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    theta = np.asarray(theta, dtype=float)
    grad = -(theta - model.mu_p) @ model.Lambda_p
    if beta != 0.0 and model.n:
        grad = grad + (beta / model.sigma2) * (model.y - theta @ model.X.T) @ model.X
    return grad


def blr_minibatch_grad(model, beta, theta, batch_indices=None, batch_size=None, rng=None):
    """Unbiased mini-batch estimate of `blr_grad`.

    The likelihood part averages single-row estimators, each scaled by n:
    (beta n / (sigma2 b)) * sum_{i in batch} x_i (y_i - x_i^T theta).  Either
    pass explicit ``batch_indices`` or a ``batch_size`` plus ``rng`` to draw
    a batch uniformly with replacement.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if batch_indices is None:
        if batch_size is None or rng is None:
            raise ValueError("need batch_indices, or batch_size and rng")
        batch_indices = rng.integers(0, model.n, size=batch_size)
    idx = np.asarray(batch_indices)
    if idx.size == 0:
        raise ValueError("batch must be non-empty")
    if idx.min() < 0 or idx.max() >= model.n:
        raise ValueError(f"batch index out of range [0, {model.n})")
    theta = np.asarray(theta, dtype=float)
    grad = -(theta - model.mu_p) @ model.Lambda_p
    if beta != 0.0:
        Xb = model.X[idx]
        resid = model.y[idx] - theta @ Xb.T
        grad = grad + (beta * model.n / (model.sigma2 * idx.size)) * resid @ Xb
    return grad


@dataclass(frozen=True)
class UpdateMatrices:
    """Affine form of one leapfrog step on a Gaussian annealed density.

    theta_k = A theta_{k-1} + B v_{k-1} + c_vec
    v_hat_k = C theta_{k-1} + D v_{k-1} + e_vec
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    c_vec: np.ndarray
    e_vec: np.ndarray


def update_matrices(model: BlrModel, beta: float, eta: float) -> UpdateMatrices:
    """Matrices of the affine leapfrog map at (beta, eta), identity mass."""
    ann = annealed_posterior(model, beta)
    d = model.d
    eye = np.eye(d)
    A = eye - 0.5 * eta**2 * ann.Lambda
    B = eta * eye - 0.25 * eta**3 * ann.Lambda
    C = -eta * ann.Lambda
    lam_mu = ann.Lambda @ ann.mu
    return UpdateMatrices(A=A, B=B, C=C, D=A.copy(), c_vec=0.5 * eta**2 * lam_mu, e_vec=eta * lam_mu)


def blr_target(model: BlrModel) -> GeometricTarget:
    """Annealed-target view of the model for the generic samplers.

    The likelihood keeps its normalization constant so that the weight at
    beta = 1 estimates the marginal likelihood itself.
    """
    prior = Gaussian(model.mu_p, precision=model.Lambda_p)
    if model.n == 0:
        return geometric_target(prior, None, None)
    const = -0.5 * model.n * np.log(2 * np.pi * model.sigma2)

    def log_lik(theta):
        resid = model.y - np.asarray(theta, float) @ model.X.T
        return const - 0.5 * np.sum(resid * resid, axis=-1) / model.sigma2

    def grad_log_lik(theta):
        resid = model.y - np.asarray(theta, float) @ model.X.T
        return resid @ model.X / model.sigma2

    return geometric_target(prior, log_lik, grad_log_lik)


def additive_noise_cov(model: BlrModel, batch_size: int) -> np.ndarray:
    """Additive part of the mini-batch gradient noise, as a covariance.

    Single-row likelihood-gradient estimators g_i = (n/sigma2) x_i r_i are
    evaluated at the least-squares point (residuals r = y - X mu_*), where
    the state-dependent part of the noise vanishes; the returned covariance
    is their population covariance divided by the batch size, i.e. the noise
    of a size-b batch drawn with replacement at the end of the bridge.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if model.n == 0:
        raise ValueError("additive noise is undefined for empty data")
    mu_star = np.linalg.lstsq(model.X, model.y, rcond=None)[0]
    resid = model.y - model.X @ mu_star
    contrib = (model.n / model.sigma2) * model.X * resid[:, None]
    centered = contrib - contrib.mean(axis=0)
    return (centered.T @ centered) / (model.n * batch_size)
