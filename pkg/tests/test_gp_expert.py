import numpy as np
import pytest
from scipy import stats

from gp_experts.core.errors import InvalidParameterError, NumericFailureError
from gp_experts.core.gp_expert import (
    add_point,
    build_cache,
    cached_predictive,
    conditional_predictive,
    covariance_entry,
    covariance_matrix,
    lml_gradient,
    log_marginal_likelihood,
    loo_predictive,
    rank1_downdate,
    rank1_update,
    remove_point,
    se_correlation,
)
from gp_experts.core.models import ExpertHyper, ExpertPosteriorCache, ExpertState


def test_se_correlation_identity_and_unit_distance():
    assert se_correlation([0.3, 0.9], [0.3, 0.9], [0.1, 5.0]) == 1.0
    assert se_correlation([0.0], [0.7], [0.7]) == pytest.approx(np.exp(-1.0), rel=1e-12)


def test_se_correlation_two_dimensional_formula():
    value = se_correlation([0.1, 0.2], [0.4, 0.6], [0.5, 0.5])
    # squared scaled distance 0.36 + 0.64
    assert value == pytest.approx(np.exp(-1.0), rel=1e-12)
    assert value == se_correlation([0.4, 0.6], [0.1, 0.2], [0.5, 0.5])


def test_se_correlation_rejects_bad_length_scale():
    with pytest.raises(InvalidParameterError):
        se_correlation([0.0], [1.0], [0.0])
    with pytest.raises(InvalidParameterError):
        se_correlation([0.0, 1.0], [1.0], [1.0])


def test_covariance_entry_kronecker_noise(hyper):
    x = np.array([0.2, 0.5])
    assert covariance_entry(x, x, hyper, same_index=True) == pytest.approx(1.3 + 0.05)
    assert covariance_entry(x, x, hyper, same_index=False) == pytest.approx(1.3)


def test_lml_single_point_is_univariate_normal(hyper):
    y = np.array([0.8])
    expected = stats.norm.logpdf(0.8, 0.0, np.sqrt(1.3 + 0.05))
    assert log_marginal_likelihood(np.array([[0.1, 0.2]]), y, hyper) == pytest.approx(expected, abs=1e-6)


def test_lml_matches_dense_gaussian(toy_data, hyper):
    X, y = toy_data
    K = covariance_matrix(X, hyper)
    expected = stats.multivariate_normal(mean=np.zeros(len(y)), cov=K).logpdf(y)
    assert log_marginal_likelihood(X, y, hyper) == pytest.approx(expected, abs=1e-8)


def test_lml_invariant_under_joint_permutation(toy_data, hyper, rng):
    X, y = toy_data
    order = rng.permutation(len(y))
    assert log_marginal_likelihood(X[order], y[order], hyper) == pytest.approx(
        log_marginal_likelihood(X, y, hyper), abs=1e-10
    )


def test_lml_gradient_single_point(hyper):
    y = np.array([1.4])
    total = 1.3 + 0.05
    expected = 0.5 * (y[0] ** 2 / total ** 2 - 1 / total)
    grad = lml_gradient(np.array([[0.5, 0.5]]), y, hyper)
    assert grad[0] == pytest.approx(expected, rel=1e-6)
    assert grad[-1] == pytest.approx(expected, rel=1e-6)
    assert np.all(grad[1:-1] == 0.0)


@pytest.mark.parametrize("n_points, dim", [(1, 1), (5, 3), (10, 2), (15, 8)])
def test_lml_gradient_matches_finite_differences(n_points, dim, central_difference):
    rng = np.random.default_rng(n_points * 31 + dim)
    X = rng.uniform(size=(n_points, dim))
    y = rng.standard_normal(n_points)
    theta = np.concatenate([[rng.gamma(2, 1)], rng.gamma(2, 0.5, size=dim), [rng.gamma(2, 0.1)]])

    def f(vector):
        return log_marginal_likelihood(X, y, ExpertHyper.from_vector(vector))

    analytic = lml_gradient(X, y, ExpertHyper.from_vector(theta))
    np.testing.assert_allclose(analytic, central_difference(f, theta), rtol=1e-4, atol=1e-6)


def test_length_gradient_vanishes_for_constant_dimension(rng, hyper):
    X = np.column_stack([rng.uniform(size=6), np.full(6, 0.4)])
    y = rng.standard_normal(6)
    assert lml_gradient(X, y, hyper)[2] == 0.0


def test_conditional_predictive_empty_expert(hyper):
    assert conditional_predictive([0.1, 0.1], np.zeros((0, 2)), np.zeros(0), hyper) == (0.0, pytest.approx(1.35))


def test_conditional_predictive_interpolates_with_tiny_noise():
    hyper = ExpertHyper(1.0, [0.5], 1e-12)
    mean, variance = conditional_predictive([0.3], np.array([[0.3]]), np.array([0.7]), hyper)
    assert mean == pytest.approx(0.7, abs=1e-6)
    assert 1e-12 <= variance < 1e-6


def test_conditional_predictive_matches_dense_solve(toy_data, hyper):
    X, y = toy_data
    x_star = np.array([0.45, 0.55])
    K = covariance_matrix(X, hyper)
    k = np.array([covariance_entry(x_star, x, hyper, same_index=False) for x in X])
    mean, variance = conditional_predictive(x_star, X, y, hyper)
    assert mean == pytest.approx(k @ np.linalg.solve(K, y), abs=1e-9)
    assert variance == pytest.approx(1.35 - k @ np.linalg.solve(K, k), abs=1e-9)
    assert variance >= hyper.noise_var - 1e-10


def test_rank1_update_from_empty_cache():
    cache = rank1_update(ExpertPosteriorCache.empty(), 4, np.zeros(0), 2.5)
    assert cache.assigned_indices == [4]
    np.testing.assert_allclose(cache.cov_inverse, [[0.4]])


def test_rank1_downdate_of_two_points_is_scalar_formula():
    Q = np.array([[2.0, -0.5], [-0.5, 1.5]])
    cache = ExpertPosteriorCache([3, 8], Q)
    reduced = rank1_downdate(cache, 3)
    assert reduced.assigned_indices == [8]
    assert reduced.cov_inverse[0, 0] == pytest.approx(1.5 - 0.25 / 2.0)


def test_rank1_downdate_of_last_point_empties_cache():
    cache = rank1_update(ExpertPosteriorCache.empty(), 0, np.zeros(0), 1.0)
    assert len(rank1_downdate(cache, 0)) == 0


@pytest.mark.parametrize("size", [5, 20, 30])
def test_rank1_operations_agree_with_direct_inversion(size):
    rng = np.random.default_rng(size)
    X = rng.uniform(size=(size, 3))
    hyper = ExpertHyper(1.0, [0.6, 0.8, 1.1], 0.05)
    indices = list(range(size))

    partial = build_cache(X, hyper, indices[:-1])
    K = covariance_matrix(X, hyper)
    grown = rank1_update(partial, indices[-1], K[-1, :-1], K[-1, -1])
    direct = build_cache(X, hyper, indices)
    np.testing.assert_allclose(grown.cov_inverse, direct.cov_inverse, atol=1e-8)
    assert grown.log_det == pytest.approx(direct.log_det, abs=1e-8)

    shrunk = rank1_downdate(direct, 2)
    np.testing.assert_allclose(
        shrunk.cov_inverse, build_cache(X, hyper, [i for i in indices if i != 2]).cov_inverse, atol=1e-8
    )


def test_update_then_downdate_restores_cache(toy_data, hyper):
    X, _ = toy_data
    cache = build_cache(X, hyper, list(range(8)))
    K = covariance_matrix(X, hyper)
    restored = rank1_downdate(rank1_update(cache, 8, K[8, :8], K[8, 8]), 8)
    assert restored.assigned_indices == cache.assigned_indices
    np.testing.assert_allclose(restored.cov_inverse, cache.cov_inverse, atol=1e-9)


def test_degenerate_schur_complement_falls_back_to_rebuild():
    cache = ExpertPosteriorCache([0], np.array([[1.0]]))
    with pytest.raises(NumericFailureError):
        rank1_update(cache, 1, np.array([1.0]), 1.0)

    calls = []

    def rebuild(indices):
        calls.append(indices)
        return ExpertPosteriorCache(indices, np.eye(len(indices)))

    rebuilt = rank1_update(cache, 1, np.array([1.0]), 1.0, rebuild=rebuild)
    assert calls == [[0, 1]]
    assert rebuilt.fallbacks == 1


def test_degenerate_downdate_pivot_falls_back_to_rebuild():
    cache = ExpertPosteriorCache([0, 1], np.array([[0.0, 0.0], [0.0, 1.0]]))
    rebuilt = rank1_downdate(cache, 0, rebuild=lambda indices: ExpertPosteriorCache(indices, np.eye(1)))
    assert rebuilt.assigned_indices == [1]
    assert rebuilt.fallbacks == 1


def test_loo_predictive_matches_conditional_on_the_rest(toy_data, hyper):
    X, y = toy_data
    expert = ExpertState(hyper, build_cache(X, hyper, list(range(len(y)))))
    others = np.arange(1, len(y))
    mean, variance = loo_predictive(0, y, expert)
    ref_mean, ref_variance = conditional_predictive(X[0], X[others], y[others], hyper)
    assert mean == pytest.approx(ref_mean, abs=1e-6)
    assert variance == pytest.approx(ref_variance, abs=1e-6)


def test_cached_predictive_for_unassigned_point(toy_data, hyper):
    X, y = toy_data
    expert = ExpertState(hyper, build_cache(X, hyper, [1, 3, 5, 7]))
    mean, variance = cached_predictive(X[0], X, y, expert)
    ref_mean, ref_variance = conditional_predictive(X[0], X[[1, 3, 5, 7]], y[[1, 3, 5, 7]], hyper)
    assert mean == pytest.approx(ref_mean, abs=1e-6)
    assert variance == pytest.approx(ref_variance, abs=1e-6)


def test_add_and_remove_points_track_direct_cache(toy_data, hyper):
    X, _ = toy_data
    expert = ExpertState(hyper)
    for n in [4, 0, 9, 2, 7]:
        add_point(expert, n, X)
    remove_point(expert, 9, X)
    direct = build_cache(X, hyper, expert.cache.assigned_indices)
    assert expert.cache.assigned_indices == [4, 0, 2, 7]
    np.testing.assert_allclose(expert.cache.cov_inverse, direct.cov_inverse, atol=1e-8)
