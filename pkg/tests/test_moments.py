import numpy as np
import pytest

from dais import (
    GapBreakdown,
    NumericalFailure,
    TransitionConfig,
    annealed_posterior,
    blr_target,
    constant_steps,
    exact_log_ml,
    expected_bound,
    expected_kinetic_sum,
    gap_breakdown,
    gen_blr_data,
    generator,
    leapfrog,
    make_linear_schedule,
    make_stepsize_scheme,
    propagate_moments,
    rate_prediction_valid,
    stochastic_penalty,
    theory_slope,
)

from conftest import random_model


CFG0 = TransitionConfig(gamma=0.0)


def closed_recursions(model, schedule, eta):
    """Independent oracle: the full-refreshment (gamma=0) scalar recursions.

    mu_k   = (I - eta^2/2 L) mu_{k-1} + eta^2/2 L m
    Sigma_k = (I - eta^2/2 L)(Sigma_{k-1} - S)(I - eta^2/2 L) + S
              - eta^4/4 L + eta^6/16 L^2
    mu^v_k  = eta L (m - mu_{k-1})
    Sigma^v_k = (I - eta^2/2 L)^2 + eta^2 L Sigma_{k-1} L
    with L, m, S the annealed precision, mean, and covariance at beta_k.
    """
    d = model.d
    eye = np.eye(d)
    mu = model.mu_p.copy()
    Sigma = np.linalg.inv(model.Lambda_p)
    mus, Sigmas, mu_vs, Sigma_vs = [mu.copy()], [Sigma.copy()], [None], [None]
    for k in range(1, schedule.K + 1):
        ann = annealed_posterior(model, schedule.betas[k])
        L = ann.Lambda
        S = np.linalg.inv(L)
        A = eye - 0.5 * eta**2 * L
        mu_v = eta * L @ (ann.mu - mu)
        Sigma_v = A @ A + eta**2 * L @ Sigma @ L
        mu = A @ mu + 0.5 * eta**2 * L @ ann.mu
        Sigma = A @ (Sigma - S) @ A + S - 0.25 * eta**4 * L + eta**6 / 16 * L @ L
        mus.append(mu.copy())
        Sigmas.append(Sigma.copy())
        mu_vs.append(mu_v)
        Sigma_vs.append(Sigma_v)
    return mus, Sigmas, mu_vs, Sigma_vs


# ------------------------------------------------------------- propagation

def test_initial_moments_only():
    model = gen_blr_data(20, 3, 0)
    moments = propagate_moments(model)
    assert len(moments) == 1
    m0 = moments[0]
    assert np.allclose(m0.mu_theta, model.mu_p)
    assert np.allclose(m0.mu_v, 0.0)
    assert np.allclose(m0.Sigma_theta, np.linalg.inv(model.Lambda_p))
    assert np.allclose(m0.Sigma_v, np.eye(3))
    assert np.allclose(m0.Sigma[:3, 3:], 0.0)


def test_full_refresh_matches_closed_recursions():
    rng = generator(4)
    model = random_model(rng, n=30, d=3)
    K, eta = 32, 0.12
    schedule = make_linear_schedule(K)
    moments = propagate_moments(model, schedule, constant_steps(eta, K), gamma=0.0)
    mus, Sigmas, mu_vs, Sigma_vs = closed_recursions(model, schedule, eta)
    for k in range(K + 1):
        assert np.allclose(moments[k].mu_theta, mus[k], atol=1e-10)
        assert np.allclose(moments[k].Sigma_theta, Sigmas[k], atol=1e-10)
        if k:
            assert np.allclose(moments[k].mu_vhat, mu_vs[k], atol=1e-10)
            assert np.allclose(moments[k].Sigma_vhat, Sigma_vs[k], atol=1e-10)
            # full refreshment kills cross-covariance and resets momentum
            assert np.allclose(moments[k].Sigma[:3, 3:], 0.0, atol=1e-12)
            assert np.allclose(moments[k].Sigma_v, np.eye(3), atol=1e-12)


def test_partial_refresh_matches_sampled_chains():
    # MC oracle: empirical moments of many sampled chains, gamma = 0.9
    model = gen_blr_data(50, 2, 9)
    K, eta, gamma = 32, 0.15, 0.9
    schedule = make_linear_schedule(K)
    steps = constant_steps(eta, K)
    moments = propagate_moments(model, schedule, steps, gamma=gamma)
    from dais import sample_chains

    n = 100000
    theta, v, _ = sample_chains(blr_target(model), schedule, steps,
                                TransitionConfig(gamma=gamma), n, generator(10))
    last = moments[-1]
    se_mu = theta.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(theta.mean(axis=0) - last.mu_theta) <= 3 * se_mu)
    emp_cov = np.cov(theta.T)
    S = last.Sigma_theta
    se_cov = np.sqrt((np.outer(np.diag(S), np.diag(S)) + S**2) / n)
    assert np.all(np.abs(emp_cov - S) <= 3.5 * se_cov)
    se_mv = v.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(v.mean(axis=0) - last.mu_v) <= 3 * se_mv)


def test_propagation_rejects_mismatched_steps():
    model = gen_blr_data(10, 2, 1)
    with pytest.raises(ValueError):
        propagate_moments(model, make_linear_schedule(4), constant_steps(0.1, 5), 0.0)


def test_propagation_psd_guard_raises():
    model = gen_blr_data(100, 2, 2)
    schedule = make_linear_schedule(200)
    steps = constant_steps(5.0, 200)  # unstable: covariance explodes
    with pytest.raises(NumericalFailure):
        propagate_moments(model, schedule, steps, 0.0)


# ------------------------------------------------------------ kinetic sum

def test_kinetic_sum_zero_step():
    model = gen_blr_data(20, 2, 3)
    K = 8
    schedule = make_linear_schedule(K)
    moments = propagate_moments(model, schedule, constant_steps(0.0, K), gamma=0.0)
    assert expected_kinetic_sum(moments) == pytest.approx(0.0, abs=1e-14)


def test_kinetic_sum_stationary_prior_target():
    # f_1 = p_0 and eta = 0: chain sits at stationarity, every term vanishes
    from dais import BlrModel

    empty = BlrModel(
        X=np.zeros((0, 2)), y=np.zeros(0), sigma2=1.0, mu_p=np.zeros(2), Lambda_p=np.eye(2)
    )
    K = 16
    schedule = make_linear_schedule(K)
    moments = propagate_moments(empty, schedule, constant_steps(0.0, K), gamma=0.0)
    assert expected_kinetic_sum(moments) == pytest.approx(0.0, abs=1e-10)


def test_kinetic_sum_matches_chain_average():
    # MC oracle: average per-chain sum of log pi(v_hat) - log pi(v) over
    # sampled chains
    model = gen_blr_data(300, 10, 11)
    target = blr_target(model)
    K, eta = 64, 0.25
    schedule = make_linear_schedule(K)
    steps = constant_steps(eta, K)
    moments = propagate_moments(model, schedule, steps, gamma=0.0)
    predicted = expected_kinetic_sum(moments)

    n = 10000
    rng = generator(13)
    theta = np.stack([target.sample_p0(g) for g in rng.spawn(n)])
    v = generator(14).standard_normal((n, 10))
    eps = generator(15).standard_normal((n, K, 10))
    kin = np.zeros(n)
    cfg = TransitionConfig(gamma=0.0)
    for k in range(1, K + 1):
        theta, v_hat = leapfrog(theta, v, eta, schedule.betas[k], target, cfg)
        kin += 0.5 * (np.sum(v * v, axis=-1) - np.sum(v_hat * v_hat, axis=-1))
        v = 0.0 * v_hat + eps[:, k - 1, :]
    se = kin.std(ddof=1) / np.sqrt(n)
    assert abs(kin.mean() - predicted) <= 3 * se


def test_kinetic_sum_requires_prerefresh_moments():
    model = gen_blr_data(10, 2, 5)
    moments = propagate_moments(model, make_linear_schedule(2), constant_steps(0.1, 2), 0.0)
    broken = [moments[0], type(moments[1])(
        mu_theta=moments[1].mu_theta, mu_v=moments[1].mu_v, Sigma=moments[1].Sigma
    )]
    with pytest.raises(ValueError):
        expected_kinetic_sum(broken + [moments[2]])


# ---------------------------------------------------------- expected bound

def test_expected_bound_zero_step_is_prior_elbo(toy_model):
    # eta = 0: theta_K ~ p_0 exactly, so E[L] = log Z - gap(eta=0)
    K = 4
    schedule = make_linear_schedule(K)
    moments = propagate_moments(toy_model, schedule, constant_steps(0.0, K), 0.0)
    bound = expected_bound(toy_model, moments, schedule)
    gap = gap_breakdown(toy_model, moments, schedule)
    assert bound == pytest.approx(exact_log_ml(toy_model) - gap.total, abs=1e-12)
    # and the zero-step gap has the hand-computed value
    assert gap.term1 == pytest.approx(0.25, abs=1e-12)
    assert gap.term2 == pytest.approx(0.5, abs=1e-12)
    assert gap.term3 == pytest.approx(-0.5 * np.log(2.0), abs=1e-12)
    assert gap.total == pytest.approx(0.403426, abs=5e-7)


def test_bound_and_gap_vanish_for_prior_target():
    from dais import BlrModel

    empty = BlrModel(
        X=np.zeros((0, 2)), y=np.zeros(0), sigma2=1.0, mu_p=np.zeros(2), Lambda_p=np.eye(2)
    )
    K = 8
    schedule = make_linear_schedule(K)
    moments = propagate_moments(empty, schedule, constant_steps(0.0, K), 0.0)
    assert expected_bound(empty, moments, schedule) == pytest.approx(0.0, abs=1e-12)
    gap = gap_breakdown(empty, moments, schedule)
    for term in (gap.term1, gap.term2, gap.term3, gap.total):
        assert term == pytest.approx(0.0, abs=1e-12)


def test_expected_bound_matches_mc():
    from dais import dais_bound_mc

    model = gen_blr_data(40, 2, 21)
    target = blr_target(model)
    K = 16
    schedule = make_linear_schedule(K)
    steps = make_stepsize_scheme(0.25, 0.25, K)
    for gamma in (0.0, 0.9):
        moments = propagate_moments(model, schedule, steps, gamma)
        want = expected_bound(model, moments, schedule)
        mean, se = dais_bound_mc(target, schedule, steps, TransitionConfig(gamma=gamma),
                                 10000, generator((22, int(gamma * 10))))
        assert abs(mean - want) <= 3 * se


def test_expected_bound_dimension_mismatch(toy_model):
    other = gen_blr_data(10, 3, 0)
    schedule = make_linear_schedule(2)
    moments = propagate_moments(other, schedule, constant_steps(0.1, 2), 0.0)
    with pytest.raises(ValueError):
        expected_bound(toy_model, moments, schedule)


# ------------------------------------------------------------ gap identity

def test_gap_identity_random_models():
    rng = generator(31)
    for _ in range(20):
        model = random_model(rng, n=15, d=5)
        K = int(rng.integers(1, 40))
        eta = float(rng.uniform(0.0, 0.25))
        gamma = float(rng.uniform())
        schedule = make_linear_schedule(K)
        steps = constant_steps(eta, K)
        moments = propagate_moments(model, schedule, steps, gamma)
        gap = gap_breakdown(model, moments, schedule)
        identity = exact_log_ml(model) - expected_bound(model, moments, schedule)
        assert gap.total == pytest.approx(identity, abs=1e-8)
        assert gap.total == pytest.approx(gap.term1 + gap.term2 + gap.term3, abs=1e-12)
        assert gap.term1 >= 0.0


# ------------------------------------------------------------- noise model

def test_noisy_moments_dominate_clean():
    # covariance ordering under gradient noise, every step
    model = gen_blr_data(60, 3, 41)
    K = 32
    schedule = make_linear_schedule(K)
    steps = constant_steps(0.2, K)
    sigma_eps = 4.0 * np.eye(3)
    clean = propagate_moments(model, schedule, steps, 0.0)
    noisy = propagate_moments(model, schedule, steps, 0.0, noise=sigma_eps)
    for mc, mn in zip(clean[1:], noisy[1:]):
        diff = mn.Sigma_theta - mc.Sigma_theta
        assert np.linalg.eigvalsh(diff).min() >= -1e-10
        dv = mn.Sigma_vhat - mc.Sigma_vhat
        assert np.linalg.eigvalsh(dv).min() >= -1e-10
        assert np.allclose(mn.mu_theta, mc.mu_theta, atol=1e-12)


def test_noisy_vhat_trace_inflation_structure():
    # Tr(noisy Sigma_vhat) = Tr(recursion on noisy theta-cov) + eta^2 Tr(S)
    model = gen_blr_data(30, 2, 42)
    K, eta = 8, 0.2
    schedule = make_linear_schedule(K)
    steps = constant_steps(eta, K)
    sigma_eps = np.diag([1.0, 2.5])
    noisy = propagate_moments(model, schedule, steps, 0.0, noise=sigma_eps)
    eye = np.eye(2)
    for k in range(1, K + 1):
        L = annealed_posterior(model, schedule.betas[k]).Lambda
        A = eye - 0.5 * eta**2 * L
        base = A @ A + eta**2 * L @ noisy[k - 1].Sigma_theta @ L
        want = np.trace(base) + eta**2 * np.trace(sigma_eps)
        assert np.trace(noisy[k].Sigma_vhat) == pytest.approx(want, abs=1e-10)


def test_gap_inflation_at_least_penalty():
    model = gen_blr_data(60, 3, 43)
    sigma_eps = np.diag([2.0, 1.0, 3.0])
    for K in (8, 64):
        schedule = make_linear_schedule(K)
        steps = make_stepsize_scheme(0.5, 0.25, K)
        clean = gap_breakdown(model, propagate_moments(model, schedule, steps, 0.0), schedule)
        noisy = gap_breakdown(
            model, propagate_moments(model, schedule, steps, 0.0, noise=sigma_eps), schedule
        )
        penalty = stochastic_penalty(steps, sigma_eps)
        assert noisy.total - clean.total >= penalty - 1e-8


def test_stochastic_penalty_values():
    steps = constant_steps(0.1, 10)
    assert stochastic_penalty(steps, np.zeros((2, 2))) == 0.0
    # constant eta = a / sqrt(K): penalty = a^2 t / 2 independent of K
    for K in (4, 400):
        a, t = 0.3, 5.0
        sk = make_stepsize_scheme(a, 0.5, K)
        assert stochastic_penalty(sk, np.diag([2.0, 3.0])) == pytest.approx(0.5 * a**2 * t)
    with pytest.raises(ValueError):
        stochastic_penalty(steps, np.float64(1.0))


# ------------------------------------------------------------ rate formula

def test_theory_slope_values():
    assert theory_slope(0.25) == pytest.approx(-0.5)
    assert theory_slope(0.5) == pytest.approx(0.0)
    assert theory_slope(1 / 3) == pytest.approx(-1 / 3)


def test_rate_prediction_validity_flag():
    assert rate_prediction_valid(0.25)
    assert rate_prediction_valid(0.4)
    assert not rate_prediction_valid(0.5)
    assert not rate_prediction_valid(0.2)


def test_gap_breakdown_total_field():
    gb = GapBreakdown(term1=1.0, term2=2.0, term3=-0.5)
    assert gb.total == pytest.approx(2.5)
