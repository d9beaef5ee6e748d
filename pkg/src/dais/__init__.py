"""Differentiable annealed importance sampling.

Chains of leapfrog steps with partial momentum refreshment turn an exact
base-distribution sample into an unbiased, pathwise-differentiable estimate
of a normalizing constant.  The package bundles the generic sampler, an
exact Bayesian linear regression engine (closed-form bounds, gaps, and
moment recursions, with and without gradient noise), a bit-exact reversible
chain implementation, and a sweep harness with a small CLI.
"""

from .blr import (
    AnnealedGaussian,
    BlrModel,
    UpdateMatrices,
    additive_noise_cov,
    annealed_posterior,
    blr_grad,
    blr_minibatch_grad,
    blr_target,
    derive_posterior,
    exact_log_ml,
    update_matrices,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    InsufficientData,
    ResultRow,
    fit_loglog_slope,
    gen_blr_data,
    run_sweep,
    tune_stepsize_base,
    write_csv,
)
from .moments import (
    GapBreakdown,
    JointMoments,
    expected_bound,
    expected_kinetic_sum,
    gap_breakdown,
    propagate_moments,
    rate_prediction_valid,
    stochastic_penalty,
    theory_slope,
)
from .reversible import (
    BufferCorruption,
    BufferOverflow,
    FixedPointState,
    ForwardResult,
    InfoBuffer,
    MemoryReport,
    backward_seed,
    fixed_to_float,
    float_to_fixed,
    forward_seed,
    memory_report,
    quantize_gamma,
    reversible_backward,
    reversible_forward,
    seed_noise,
)
from .rng import generator, keyed_generator, substreams
from .sampler import (
    ChainState,
    NumericalFailure,
    TransitionConfig,
    ais_mh_chain,
    dais_bound_mc,
    dais_chain,
    initial_state,
    iw_combine,
    leapfrog,
    refresh,
    sample_chains,
)
from .schedules import (
    AnnealingSchedule,
    StepSizeScheme,
    constant_steps,
    make_linear_schedule,
    make_stepsize_scheme,
    tuned_stepsize_scheme,
)
from .targets import (
    AnnealedTarget,
    Gaussian,
    GeometricTarget,
    GradientNoiseSpec,
    geometric_target,
    noisy_gradient,
)

__version__ = "0.1.0"
