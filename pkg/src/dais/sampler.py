"""Annealed importance sampling chains without accept/reject corrections.

A chain starts at an exact sample from the base distribution, applies one
leapfrog step plus a partial momentum refreshment per annealing level, and
accumulates a log importance weight L whose exponential is an unbiased
estimate of the normalizing-constant ratio: E[exp(L)] = Z for any number of
levels.  By Jensen, E[L] <= log Z, so averages of L are stochastic lower
bounds.  An accept/reject-corrected baseline (`ais_mh_chain`) is included
for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import substreams
from .schedules import AnnealingSchedule, StepSizeScheme
from .targets import AnnealedTarget


class NumericalFailure(ArithmeticError):
    """Non-finite value produced by a chain; never silently clipped.

    Carries the failing step index, the chain index for multi-chain runs,
    and the position midpoint when a gradient blew up.
    """

    def __init__(self, message, step=None, chain=None, midpoint=None):
        super().__init__(message)
        self.step = step
        self.chain = chain
        self.midpoint = midpoint


@dataclass(frozen=True)
class TransitionConfig:
    """Transition parameters: momentum damping gamma and diagonal mass.

    gamma = 0 refreshes the momentum completely each step; gamma = 1 never
    refreshes.  ``mass`` holds the diagonal of M (None means identity).
    """

    gamma: float = 0.0
    mass: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.mass is not None:
            mass = np.atleast_1d(np.asarray(self.mass, dtype=float))
            if np.any(mass <= 0):
                raise ValueError("mass entries must be positive")
            object.__setattr__(self, "mass", mass)

    def mass_diag(self, dim: int) -> np.ndarray:
        if self.mass is None:
            return np.ones(dim)
        if self.mass.size == 1:
            return np.full(dim, self.mass[0])
        if self.mass.size != dim:
            raise ValueError(f"mass has size {self.mass.size}, expected {dim}")
        return self.mass


@dataclass
class ChainState:
    """Position, momentum, step index, and the running bound accumulator."""

    theta: np.ndarray
    v: np.ndarray
    k: int
    bound_acc: float


def _quad(v, inv_mass):
    """v^T M^{-1} v along the last axis."""
    return np.sum(v * v * inv_mass, axis=-1)


def leapfrog(theta, v, eta, beta, target: AnnealedTarget, config: TransitionConfig):
    """One volume-preserving, time-reversible integrator step.

    Half position update, full momentum kick with the annealed gradient at
    the midpoint, half position update.  Returns (theta_new, v_hat).
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    inv_mass = 1.0 / config.mass_diag(target.dim)
    half = theta + (0.5 * eta) * (inv_mass * v)
    grad = target.grad_log_f(beta, half)
    if not np.all(np.isfinite(grad)):
        chain = None
        mid = half
        if np.ndim(grad) > 1:
            bad = np.nonzero(~np.isfinite(grad).all(axis=-1))[0]
            chain = int(bad[0])
            mid = half[chain]
        raise NumericalFailure("non-finite gradient in leapfrog", chain=chain, midpoint=mid)
    v_hat = v + eta * grad
    theta_new = half + (0.5 * eta) * (inv_mass * v_hat)
    return theta_new, v_hat


def _refresh_with_noise(v_hat, gamma, z, sqrt_mass):
    """v = gamma * v_hat + sqrt(1 - gamma^2) * sqrt(M) z for pre-drawn z."""
    return gamma * v_hat + np.sqrt(1.0 - gamma * gamma) * (sqrt_mass * z)


def refresh(v_hat, gamma, rng: np.random.Generator, config: TransitionConfig):
    """Partial momentum refreshment; leaves N(0, M) invariant for any gamma."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    dim = np.shape(v_hat)[-1]
    sqrt_mass = np.sqrt(config.mass_diag(dim))
    z = rng.standard_normal(np.shape(v_hat))
    return _refresh_with_noise(v_hat, gamma, z, sqrt_mass)


def initial_state(target: AnnealedTarget, config: TransitionConfig, rng: np.random.Generator) -> ChainState:
    """Draw theta_0 from the base distribution, then v_0 from N(0, M)."""
    theta0 = target.sample_p0(rng)
    v0 = np.sqrt(config.mass_diag(target.dim)) * rng.standard_normal(target.dim)
    return ChainState(theta0, v0, 0, float(-target.log_p0(theta0)))


def _run_chains(target, schedule, steps, config, theta, v, eps):
    """Shared chain core over a batch: theta/v (..., d), eps (..., K, d).

    Returns (theta_K, v_K, L) with L accumulated as
    -log p_0(theta_0) + sum_k [log pi(v_hat_k) - log pi(v_{k-1})] + log f_1(theta_K).
    """
    betas = schedule.betas
    etas = steps.per_step
    if steps.K != schedule.K:
        raise ValueError(f"step scheme has K={steps.K}, schedule has K={schedule.K}")
    mass = config.mass_diag(target.dim)
    inv_mass = 1.0 / mass
    sqrt_mass = np.sqrt(mass)
    gamma = config.gamma
    L = -target.log_p0(theta)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, schedule.K + 1):
            theta, v_hat = leapfrog(theta, v, etas[k - 1], betas[k], target, config)
            L = L + 0.5 * (_quad(v, inv_mass) - _quad(v_hat, inv_mass))
            v = _refresh_with_noise(v_hat, gamma, eps[..., k - 1, :], sqrt_mass)
            if not np.all(np.isfinite(L)):
                chain = None
                if np.ndim(L) > 0:
                    chain = int(np.nonzero(~np.isfinite(L))[0][0])
                raise NumericalFailure("non-finite bound accumulator", step=k, chain=chain)
        L = L + target.log_f(1.0, theta)
    if not np.all(np.isfinite(L)):
        chain = int(np.nonzero(~np.isfinite(L))[0][0]) if np.ndim(L) > 0 else None
        raise NumericalFailure("non-finite bound accumulator", step=schedule.K, chain=chain)
    return theta, v, L


def dais_chain(
    target: AnnealedTarget,
    schedule: AnnealingSchedule,
    steps: StepSizeScheme,
    config: TransitionConfig,
    rng: np.random.Generator | None = None,
    *,
    theta0=None,
    v0=None,
    refresh_noise=None,
):
    """Run one chain; returns (final ChainState, L).

    exp(L) is a single-sample unbiased estimate of the normalizing-constant
    ratio between the beta=1 and beta=0 densities.  ``theta0``, ``v0`` and
    ``refresh_noise`` (a (K, dim) array of standard normal draws, pre mass
    scaling) may be supplied to pin the randomness; anything missing is
    drawn from ``rng`` in the order theta_0, v_0, refresh noise.
    """
    d = target.dim
    if theta0 is None or v0 is None or refresh_noise is None:
        if rng is None:
            raise ValueError("rng is required unless theta0, v0 and refresh_noise are given")
    if theta0 is None:
        theta0 = target.sample_p0(rng)
    if v0 is None:
        v0 = np.sqrt(config.mass_diag(d)) * rng.standard_normal(d)
    if refresh_noise is None:
        refresh_noise = rng.standard_normal((schedule.K, d))
    refresh_noise = np.asarray(refresh_noise, dtype=float)
    if refresh_noise.shape != (schedule.K, d):
        raise ValueError(f"refresh_noise must have shape ({schedule.K}, {d})")
    theta, v, L = _run_chains(
        target, schedule, steps, config, np.asarray(theta0, float), np.asarray(v0, float), refresh_noise
    )
    return ChainState(theta, v, schedule.K, float(L)), float(L)


def sample_chains(target, schedule, steps, config, n_chains, rng):
    """Run ``n_chains`` independent chains on per-chain substreams.

    Returns (theta_K, v_K, L) with leading axis ``n_chains``.  Per-chain
    streams draw theta_0, then v_0, then the refresh noise, so results do
    not depend on how chains are scheduled.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    d = target.dim
    K = schedule.K
    sqrt_mass = np.sqrt(config.mass_diag(d))
    theta = np.empty((n_chains, d))
    v = np.empty((n_chains, d))
    eps = np.empty((n_chains, K, d))
    for i, g in enumerate(substreams(rng, n_chains)):
        theta[i] = target.sample_p0(g)
        v[i] = sqrt_mass * g.standard_normal(d)
        eps[i] = g.standard_normal((K, d))
    return _run_chains(target, schedule, steps, config, theta, v, eps)


def dais_bound_mc(target, schedule, steps, config, n_chains, rng):
    """Mean and standard error of L over independent chains."""
    if n_chains < 2:
        raise ValueError("n_chains must be >= 2 for a standard error")
    _, _, L = sample_chains(target, schedule, steps, config, n_chains, rng)
    return float(L.mean()), float(L.std(ddof=1) / np.sqrt(n_chains))


def ais_mh_chain(target, schedule, steps, config, rng, n_leapfrog: int = 1):
    """Accept/reject-corrected annealed importance sampling baseline.

    The weight accumulates sum_k [log f_{beta_k}(theta_{k-1}) -
    log f_{beta_{k-1}}(theta_{k-1})]; each transition refreshes the momentum,
    proposes ``n_leapfrog`` leapfrog steps at the current level, and applies
    a Metropolis-Hastings test on the extended Hamiltonian, negating the
    momentum on rejection.  Returns (theta_K, log_weight, accept_rate).
    """
    if n_leapfrog < 1:
        raise ValueError("n_leapfrog must be >= 1")
    if steps.K != schedule.K:
        raise ValueError(f"step scheme has K={steps.K}, schedule has K={schedule.K}")
    d = target.dim
    inv_mass = 1.0 / config.mass_diag(d)
    betas = schedule.betas
    theta = target.sample_p0(rng)
    v = np.sqrt(config.mass_diag(d)) * rng.standard_normal(d)
    log_weight = 0.0
    accepts = 0
    log_f_prev = float(target.log_f(betas[0], theta))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, schedule.K + 1):
            beta = betas[k]
            log_f_here = float(target.log_f(beta, theta))
            log_weight += log_f_here - log_f_prev
            if not np.isfinite(log_weight):
                raise NumericalFailure("non-finite importance weight", step=k)
            v = refresh(v, config.gamma, rng, config)
            h0 = -log_f_here + 0.5 * _quad(v, inv_mass)
            theta_prop, v_prop = theta, v
            for _ in range(n_leapfrog):
                theta_prop, v_prop = leapfrog(theta_prop, v_prop, steps.per_step[k - 1], beta, target, config)
            log_f_prop = float(target.log_f(beta, theta_prop))
            h1 = -log_f_prop + 0.5 * _quad(v_prop, inv_mass)
            if np.log(rng.uniform()) < h0 - h1:
                theta, v = theta_prop, v_prop
                log_f_prev = log_f_prop
                accepts += 1
            else:
                v = -v
                log_f_prev = log_f_here
    return theta, float(log_weight), accepts / schedule.K


def iw_combine(log_weights) -> float:
    """log of the average of exp(log_weights), computed with a max shift."""
    w = np.asarray(log_weights, dtype=float)
    if w.size == 0:
        raise ValueError("iw_combine needs at least one log weight")
    if not np.all(np.isfinite(w)):
        raise ValueError("iw_combine requires finite log weights")
    m = w.max()
    return float(m + np.log(np.mean(np.exp(w - m))))
