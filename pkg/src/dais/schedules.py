"""Annealing schedules and step-size schemes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AnnealingSchedule:
    """Inverse-temperature grid 0 = beta_0 <= ... <= beta_K = 1."""

    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=float)
        object.__setattr__(self, "betas", betas)
        if betas.ndim != 1 or betas.size < 2:
            raise ValueError("schedule needs at least two inverse temperatures")
        if betas[0] != 0.0 or betas[-1] != 1.0:
            raise ValueError("schedule must start at 0 and end at 1")
        if np.any(np.diff(betas) < 0):
            raise ValueError("schedule must be non-decreasing")

    @property
    def K(self) -> int:
        return self.betas.size - 1


def make_linear_schedule(K: int) -> AnnealingSchedule:
    """Equally spaced schedule beta_k = k/K."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    return AnnealingSchedule(np.arange(K + 1) / K)


@dataclass(frozen=True)
class StepSizeScheme:
    """Per-step leapfrog step sizes eta_1..eta_K.

    The constant scheme eta_k = base * K**(-exponent) is the one used
    throughout; ``per_step`` is kept explicit so degenerate (eta = 0) test
    chains and future non-constant schemes share the same carrier.
    """

    base: float
    exponent: float
    K: int
    per_step: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("step count must be non-negative")
        per_step = self.per_step
        if per_step is None:
            per_step = np.full(self.K, self.base * self.K ** (-self.exponent) if self.K else 0.0)
        per_step = np.asarray(per_step, dtype=float)
        object.__setattr__(self, "per_step", per_step)
        if per_step.shape != (self.K,):
            raise ValueError("per_step length must equal K")
        if np.any(per_step < 0) or not np.all(np.isfinite(per_step)):
            raise ValueError("step sizes must be finite and non-negative")


def make_stepsize_scheme(a: float, c: float, K: int) -> StepSizeScheme:
    """Constant scheme eta_k = a * K**(-c)."""
    if a <= 0:
        raise ValueError(f"base step size must be positive, got {a}")
    if c < 0:
        raise ValueError(f"exponent must be non-negative, got {c}")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    return StepSizeScheme(base=a, exponent=c, K=K)


def tuned_stepsize_scheme(K: int) -> StepSizeScheme:
    """Scheme eta = 0.08 * (K/10)**(-1/4): grid-tuned at K = 10, then scaled
    with the optimal-rate exponent."""
    return make_stepsize_scheme(0.08 * 10 ** 0.25, 0.25, K)


def constant_steps(eta: float, K: int) -> StepSizeScheme:
    """Constant eta for all steps; eta = 0 is allowed (degenerate chain)."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    return StepSizeScheme(base=eta, exponent=0.0, K=K, per_step=np.full(K, float(eta)))
