import numpy as np
import pytest
from scipy import stats

from gp_experts.core.errors import InvalidParameterError, NumericFailureError
from gp_experts.core.gp_expert import build_cache
from gp_experts.core.hyper_sampler import (
    StepSizeAdapter,
    alpha_log_constant,
    alpha_peak,
    beta_log_constant,
    build_envelope,
    conditional_log_mass,
    gamma_log_prior_grad,
    hmc_sample,
    hmc_sample_unit_cube,
    hmc_transition,
    leapfrog,
    log_transformed,
    r_log_posterior_grad_ksbp,
    rejection_sample_alpha,
    rejection_sample_beta,
    sample_expert_hypers,
)
from gp_experts.core.ksbp_gating import h_log_posterior_grad
from gp_experts.core.models import ExpertHyper, ExpertState, HmcConfig, PriorTable, StickIndicators


def gamma_target(shape, scale):
    return lambda theta: gamma_log_prior_grad(theta, shape, scale)


def batch_means_se(draws, batches=50):
    means = np.array([chunk.mean() for chunk in np.array_split(np.asarray(draws), batches)])
    return means.std(ddof=1) / np.sqrt(batches)


def brute_force_pmf(other, v_list, p, upper=400, flip=False):
    """Normalized conditional pmf of the integer parameter from the beta and geometric densities."""
    v = np.asarray(v_list)
    k = np.arange(1, upper + 1)
    if flip:
        log_lik = np.array([stats.beta.logpdf(v, other, kk).sum() for kk in k])
    else:
        log_lik = np.array([stats.beta.logpdf(v, kk, other).sum() for kk in k])
    log_p = log_lik + stats.geom.logpmf(k, p)
    probs = np.exp(log_p - log_p.max())
    return probs / probs.sum()


def empirical_pmf(draws, upper):
    counts = np.bincount(draws, minlength=upper + 1)[1:upper + 1]
    return counts / len(draws)


def test_hmc_config_rejects_zero_leapfrog_steps():
    with pytest.raises(InvalidParameterError):
        HmcConfig(leapfrog_steps=0)


def test_hmc_config_defaults():
    config = HmcConfig()
    assert (config.leapfrog_steps, config.step_cap, config.target_accept) == (5, 0.05, 0.8)


def test_log_transform_at_zero_keeps_density():
    target = gamma_target(2.0, 0.5)
    log_density, _ = log_transformed(target)(np.zeros(1))
    assert log_density == target(np.ones(1))[0]


def test_leapfrog_is_reversible(rng):
    def target(q):
        return -0.5 * q @ q / 0.3, -q / 0.3

    q0 = rng.standard_normal(3)
    p0 = rng.standard_normal(3)
    q1, p1, _ = leapfrog(q0, p0, target, 0.05, 20)
    q2, p2, _ = leapfrog(q1, -p1, target, 0.05, 20)
    np.testing.assert_allclose(q2, q0, atol=1e-8)
    np.testing.assert_allclose(-p2, p0, atol=1e-8)


def test_hmc_transition_needs_finite_start(rng):
    with pytest.raises(NumericFailureError):
        hmc_transition(lambda q: (-np.inf, np.zeros(1)), np.zeros(1), 0.01, 5, rng)


def test_hmc_rejects_nonfinite_proposals(rng):
    def target(q):
        if q[0] > 0.0:
            return -np.inf, np.full(1, np.nan)
        return -0.5 * q[0] ** 2, -q

    for _ in range(20):
        value, accepted, accept_prob = hmc_transition(target, np.array([-1e-9]), 0.5, 5, rng)
        assert value[0] <= 0.0
        if not accepted:
            assert value[0] == -1e-9


def test_hmc_sample_rejects_non_positive_values(rng):
    with pytest.raises(InvalidParameterError):
        hmc_sample(gamma_target(2.0, 0.5), [-1.0], HmcConfig(), rng)


def test_adaptation_reaches_acceptance_window(rng):
    # sd 0.01 on the log scale, so the capped step is too large and must shrink
    target = gamma_target(10000.0, 1e-4)
    config = HmcConfig(adaptation_iterations=2000)
    adapter = StepSizeAdapter(config)
    value = np.ones(1)
    for _ in range(2000):
        value = hmc_sample(target, value, config, rng, adapter, adapt=True).value
    attempts, accepts = adapter.attempts, adapter.accepts
    for _ in range(3000):
        value = hmc_sample(target, value, config, rng, adapter, adapt=False).value
    rate = (adapter.accepts - accepts) / (adapter.attempts - attempts)
    assert adapter.frozen
    assert adapter.step_size <= 0.05
    assert 0.6 <= rate <= 0.95


def test_step_size_never_exceeds_cap():
    config = HmcConfig(initial_step=1.0)
    adapter = StepSizeAdapter(config)
    assert adapter.step_size == 0.05
    adapter.update(1.0)
    assert adapter.step_size == 0.05
    for _ in range(50):
        adapter.update(1.0)
        assert adapter.step_size <= 0.05


def test_frozen_adapter_ignores_updates():
    adapter = StepSizeAdapter(HmcConfig())
    adapter.update(0.2)
    adapter.freeze()
    step = adapter.step_size
    adapter.update(0.0)
    assert adapter.step_size == step


def _gamma_chain(draws, rng):
    target = gamma_target(2.0, 0.5)
    config = HmcConfig(adaptation_iterations=2000)
    adapter = StepSizeAdapter(config)
    value = np.ones(1)
    for _ in range(2000):
        value = hmc_sample(target, value, config, rng, adapter, adapt=True).value
    samples = np.empty(draws)
    for t in range(draws):
        value = hmc_sample(target, value, config, rng, adapter).value
        samples[t] = value[0]
    return samples


def test_hmc_gamma_mean_short_chain(rng):
    samples = _gamma_chain(10000, rng)
    assert abs(samples.mean() - 1.0) < 4 * batch_means_se(samples)


@pytest.mark.slow
def test_hmc_gamma_mean_long_chain(rng):
    samples = _gamma_chain(50000, rng)
    assert abs(samples.mean() - 1.0) < 3 * batch_means_se(samples, batches=100)


def test_unit_cube_hmc_stays_inside(rng):
    def flat(h):
        return 0.0, np.zeros_like(h)

    config = HmcConfig(initial_step=0.05)
    h = np.array([0.01, 0.99])
    for _ in range(200):
        h = hmc_sample_unit_cube(flat, h, config, rng).value
        assert np.all((h >= 0) & (h <= 1))


def flat_target(q):
    return 0.0, np.zeros_like(q)


@pytest.mark.parametrize(
    "start, momentum, step, expected_q, expected_p",
    [
        (0.5, 1.0, 10.3, 0.8, 1.0),
        (0.5, -1.0, 1.2, 0.7, 1.0),
        (0.5, -1.0, 1.7, 0.8, -1.0),
        (0.5, 1.0, 1.5e6 + 0.25, 0.75, 1.0),
    ],
)
def test_reflection_folds_far_positions(start, momentum, step, expected_q, expected_p):
    q, p, log_density = leapfrog(np.array([start]), np.array([momentum]), flat_target, step, 1, reflect_unit=True)
    assert q[0] == pytest.approx(expected_q, abs=1e-6)
    assert p[0] == expected_p
    assert log_density == 0.0


def test_steep_stick_location_target_is_rejected_not_fatal(rng):
    target = lambda h: h_log_posterior_grad(h, [0], [[0.5]], 0.05)
    h = np.array([0.500001])
    assert np.isfinite(target(h)[0])
    assert abs(target(h)[1][0]) > 1e6
    for _ in range(50):
        h = hmc_sample_unit_cube(target, h, HmcConfig(), rng).value
        assert 0.0 <= h[0] <= 1.0


def test_gamma_log_prior_derivative():
    assert gamma_log_prior_grad(2.7, 1.0, 4.0)[1] == pytest.approx(-0.25)
    assert gamma_log_prior_grad(3.0 * 0.5, 4.0, 0.5)[1] == pytest.approx(0.0, abs=1e-12)


def test_gamma_log_prior_matches_finite_differences(central_difference):
    theta = np.array([0.3, 1.7, 4.2])
    grad = gamma_log_prior_grad(theta, 2.5, 0.8)[1]
    numeric = central_difference(lambda t: gamma_log_prior_grad(t, 2.5, 0.8)[0], theta)
    np.testing.assert_allclose(grad, numeric, rtol=1e-6)


def _random_indicators(rng, X, sticks):
    indicators, h_list = [], []
    for _ in range(sticks):
        members = np.sort(rng.choice(len(X), size=6, replace=False))
        B = rng.integers(0, 2, size=6)
        indicators.append(StickIndicators(members, np.ones(6, dtype=int), B))
        h_list.append(rng.uniform(size=X.shape[1]))
    return indicators, h_list


def test_r_gradient_matches_finite_differences(rng, central_difference):
    X = rng.uniform(size=(15, 2))
    indicators, h_list = _random_indicators(rng, X, 3)
    prior = (2.0, 0.5)
    for r in (0.3, 0.8, 1.6):
        grad = r_log_posterior_grad_ksbp(r, indicators, h_list, X, prior)[1]
        numeric = central_difference(
            lambda x: r_log_posterior_grad_ksbp(x[0], indicators, h_list, X, prior)[0], [r]
        )[0]
        assert grad == pytest.approx(numeric, rel=1e-4, abs=1e-6)


def test_r_gradient_positive_for_single_hit():
    X = np.array([[0.2, 0.2]])
    indicators = [StickIndicators(np.array([0]), np.array([1]), np.array([1]))]
    flat_prior = (1.0, 1e12)
    assert r_log_posterior_grad_ksbp(0.4, indicators, [np.array([0.6, 0.5])], X, flat_prior)[1] > 0


def test_r_posterior_without_indicators_is_prior():
    empty = [StickIndicators(np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0, dtype=int))]
    log_density, derivative = r_log_posterior_grad_ksbp(0.7, empty, [np.zeros(2)], np.zeros((3, 2)), (2.0, 0.5))
    assert derivative == pytest.approx(1.0 / 0.7 - 2.0)
    assert log_density == pytest.approx(np.log(0.7) - 1.4)


def test_alpha_peak_small_case():
    # (1 + 1/1) * 0.3 < 1 already at k = 1
    assert alpha_peak(1, 1, 0.6, 0.5) == 1


def test_alpha_peak_is_brute_force_argmax():
    # (1 - p_alpha) * prod_v = 0.9
    peak = alpha_peak(5, 3, 0.9 / 0.95, 0.05)
    k = np.arange(1, 5001)
    assert peak == int(k[np.argmax(conditional_log_mass(k, 5, 3, np.log(0.9)))])
    assert peak == build_envelope(5, 3, np.log(0.9)).peak


@pytest.mark.parametrize("seed", range(5))
def test_alpha_peak_matches_argmax_on_random_states(seed):
    rng = np.random.default_rng(seed)
    v_list = rng.uniform(0.05, 0.95, size=rng.integers(1, 6))
    beta_param = int(rng.integers(1, 8))
    prod_v = float(np.prod(v_list))
    k = np.arange(1, 20001)
    log_c = alpha_log_constant(v_list, 0.5)
    expected = int(k[np.argmax(conditional_log_mass(k, beta_param, len(v_list), log_c))])
    assert alpha_peak(beta_param, len(v_list), prod_v, 0.5) == expected


def test_alpha_peak_checks_inputs():
    with pytest.raises(InvalidParameterError):
        alpha_peak(1, 1, 1.0, 0.5)
    with pytest.raises(InvalidParameterError):
        alpha_peak(1, 0, 0.5, 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_envelope_dominates_target(seed):
    rng = np.random.default_rng(100 + seed)
    v_list = rng.uniform(0.05, 0.95, size=rng.integers(1, 5))
    other = int(rng.integers(1, 10))
    log_c = alpha_log_constant(v_list, 0.5)
    envelope = build_envelope(other, len(v_list), log_c)
    k = np.arange(1, 10001)
    assert np.all(envelope.log_height(k) >= conditional_log_mass(k, other, len(v_list), log_c) - 1e-9)


def test_rejection_sampler_alpha_matches_pmf(rng):
    draws = np.array([rejection_sample_alpha(1, [0.5], 0.5, rng) for _ in range(50000)])
    assert draws.min() >= 1
    upper = 60
    pmf = brute_force_pmf(1, [0.5], 0.5, upper)
    assert 0.5 * np.abs(empirical_pmf(draws, upper) - pmf).sum() < 0.02


def test_rejection_sampler_beta_matches_pmf(rng):
    v_list = [0.3, 0.6]
    draws = np.array([rejection_sample_beta(2, v_list, 0.5, rng) for _ in range(50000)])
    assert draws.min() >= 1
    upper = 100
    pmf = brute_force_pmf(2, v_list, 0.5, upper, flip=True)
    assert 0.5 * np.abs(empirical_pmf(draws, upper) - pmf).sum() < 0.02


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
def test_rejection_samplers_on_random_states(seed):
    rng = np.random.default_rng(seed)
    v_list = rng.uniform(0.05, 0.95, size=rng.integers(1, 5))
    other = int(rng.integers(1, 6))
    upper = 400
    alpha_draws = np.array([rejection_sample_alpha(other, v_list, 0.5, rng) for _ in range(200000)])
    beta_draws = np.array([rejection_sample_beta(other, v_list, 0.5, rng) for _ in range(200000)])
    alpha_pmf = brute_force_pmf(other, v_list, 0.5, upper)
    beta_pmf = brute_force_pmf(other, v_list, 0.5, upper, flip=True)
    assert 0.5 * np.abs(empirical_pmf(alpha_draws, upper) - alpha_pmf).sum() < 0.02
    assert 0.5 * np.abs(empirical_pmf(beta_draws, upper) - beta_pmf).sum() < 0.02


def test_alpha_and_beta_conditionals_are_mirror_images():
    v_list = np.array([0.2, 0.7, 0.4])
    assert alpha_log_constant(v_list, 0.5) == pytest.approx(beta_log_constant(1.0 - v_list, 0.5))
    np.testing.assert_allclose(
        brute_force_pmf(3, v_list, 0.5), brute_force_pmf(3, 1.0 - v_list, 0.5, flip=True), atol=1e-12
    )


def test_rejection_samplers_need_sticks(rng):
    with pytest.raises(InvalidParameterError):
        rejection_sample_alpha(1, [], 0.5, rng)
    with pytest.raises(InvalidParameterError):
        rejection_sample_beta(1, [], 0.5, rng)


def test_empty_expert_draws_from_prior(rng, priors):
    expert = ExpertState(priors.mean_hyper(2))
    assert sample_expert_hypers(expert, np.zeros((0, 2)), np.zeros(0), priors, HmcConfig(), rng) is None
    assert expert.size == 0
    assert expert.hyper.dim == 2


def test_expert_hyper_move_refreshes_cache(rng, priors, toy_data):
    X, y = toy_data
    indices = list(range(len(y)))
    hyper = priors.mean_hyper(2)
    expert = ExpertState(hyper, build_cache(X, hyper, indices))
    config = HmcConfig()
    for _ in range(20):
        sample_expert_hypers(expert, X, y, priors, config, rng)
    direct = build_cache(X, expert.hyper, indices)
    np.testing.assert_allclose(expert.cache.cov_inverse, direct.cov_inverse, atol=1e-8)


def test_fixed_noise_is_kept(rng, toy_data):
    X, y = toy_data
    priors = PriorTable(fixed_noise_var=1e-3)
    hyper = ExpertHyper(1.0, [0.5, 0.5], 1e-3)
    expert = ExpertState(hyper, build_cache(X, hyper, list(range(len(y)))))
    for _ in range(10):
        sample_expert_hypers(expert, X, y, priors, HmcConfig(), rng)
    assert expert.hyper.noise_var == 1e-3
