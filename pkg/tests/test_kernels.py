import numpy as np
import pytest

from kgflow.errors import DimensionError, EmptyEnsembleError, SingularCovarianceError
from kgflow.family import (
    GaussianVariationalParams,
    gaussian_family_jacobian,
    gaussian_family_map,
    inverse_pushforward,
    pushforward,
)
from kgflow.kernels import (
    ContextSource,
    KernelContext,
    apply_kernel_operator,
    context_from_params,
    context_from_particles,
    finite_difference_jacobian,
    gaussian_ntk_kernel,
    median_heuristic_bandwidth,
    ntk_gram,
    pullback_kernel,
    rbf_gradient,
    rbf_kernel,
)
from kgflow.targets import make_gaussian
from oracles import central_gradient, random_well_conditioned, rel_err


def _random_params(rng, d, lo=0.5, hi=2.0):
    return GaussianVariationalParams(rng.standard_normal(d), random_well_conditioned(rng, d, lo, hi))


def stein_residual(n, rng, reps, query=np.array([0.3, -0.2])):
    """RMS over replicates of |(1/n) sum_j k(x, y_j) score_q(y_j) + grad_y k(x, y_j)| for q = N(0, I)."""
    kernel = rbf_kernel()
    q = make_gaussian(np.zeros(2), np.eye(2))
    out = []
    for _ in range(reps):
        ys = rng.standard_normal((n, 2))
        drift = apply_kernel_operator(kernel, None, ys, q.score, query)
        repulsion = kernel.grad_y(query[None, :], ys)[0].mean(axis=0)
        out.append(np.sum((drift + repulsion) ** 2))
    return np.sqrt(np.mean(out))


class TestRBF:
    def test_identity_on_diagonal(self):
        np.testing.assert_array_equal(rbf_kernel()([1.0, 2.0], [1.0, 2.0]), np.eye(2))

    def test_half_at_log2(self):
        y = np.array([np.sqrt(np.log(2.0)), 0.0])
        np.testing.assert_allclose(rbf_kernel()(np.zeros(2), y), 0.5 * np.eye(2), rtol=1e-14)

    def test_symmetry(self, rng):
        k = rbf_kernel()
        for _ in range(10):
            x, y = rng.standard_normal((2, 3))
            assert np.max(np.abs(k(x, y) - k(y, x).T)) < 1e-12

    def test_gradient_examples(self):
        np.testing.assert_array_equal(rbf_gradient([0.4, 1.0], [0.4, 1.0]), [0.0, 0.0])
        assert rbf_gradient([0.0], [1.0])[0] == pytest.approx(-2 * np.exp(-1.0), rel=1e-15)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(10):
            x, y = rng.standard_normal((2, 2))
            fd = central_gradient(lambda yy: np.exp(-np.sum((x - yy) ** 2)), y)
            assert rel_err(rbf_gradient(x, y), fd) < 1e-6

    def test_vectorized_gradient_matches_pointwise(self, rng):
        xs, ys = rng.standard_normal((3, 2)), rng.standard_normal((4, 2))
        g = rbf_kernel().grad_y(xs, ys)
        for i in range(3):
            for j in range(4):
                np.testing.assert_allclose(g[i, j], rbf_gradient(xs[i], ys[j]), rtol=1e-14)

    def test_median_bandwidth(self):
        pts = np.array([[0.0], [1.0], [3.0]])
        # squared distances 1, 9, 4 -> median 4, divided by log 3
        assert median_heuristic_bandwidth(pts) == pytest.approx(4.0 / np.log(3.0))


class TestNTK:
    def test_gaussian_ntk_at_origin(self):
        p = GaussianVariationalParams([0.3, -0.1], [[2.0, 0.5], [0.0, 1.0]])
        theta = ntk_gram(lambda e: gaussian_family_jacobian(p, e), np.zeros(2), np.zeros(2))
        np.testing.assert_array_equal(theta, np.eye(2))

    def test_gaussian_ntk_value(self):
        p = GaussianVariationalParams([0.3, -0.1], [[2.0, 0.5], [0.0, 1.0]])
        theta = ntk_gram(lambda e: gaussian_family_jacobian(p, e), np.array([1.0, 0.0]), np.array([2.0, 0.0]))
        np.testing.assert_array_equal(theta, 3 * np.eye(2))

    def test_transpose_symmetry(self, rng):
        jac = lambda e: np.outer(np.tanh(e), e).T @ rng_fixed  # generic (p, d) Jacobian
        rng_fixed = rng.standard_normal((3, 5))
        for _ in range(10):
            e, w = rng.standard_normal((2, 3))
            np.testing.assert_allclose(ntk_gram(jac, e, w), ntk_gram(jac, w, e).T, atol=1e-12)

    def test_shape_mismatch(self):
        shapes = iter([(4, 2), (5, 2)])
        with pytest.raises(DimensionError):
            ntk_gram(lambda e: np.ones(next(shapes)), np.zeros(2), np.zeros(2))

    def test_closed_form_kernel_examples(self):
        p = GaussianVariationalParams([0.5, -1.0], [[1.5, 0.2], [-0.3, 0.8]])
        np.testing.assert_allclose(gaussian_ntk_kernel(p)(p.mu, p.mu), np.eye(2), atol=1e-15)
        q = GaussianVariationalParams([0.0], [[1.0]])
        np.testing.assert_array_equal(gaussian_ntk_kernel(q)([1.0], [2.0]), [[3.0]])

    def test_closed_form_equals_pullback(self, rng):
        for d in (1, 2, 4):
            p = _random_params(rng, d)
            pull = pullback_kernel(
                lambda e, w: ntk_gram(lambda z: gaussian_family_jacobian(p, z), e, w),
                lambda x: inverse_pushforward(p, x),
            )
            k = gaussian_ntk_kernel(p)
            for _ in range(20):
                x, y = p.mu + 2 * rng.standard_normal((2, d))
                assert np.max(np.abs(k(x, y) - pull(x, y))) < 1e-10

    def test_context_override(self, rng):
        p = _random_params(rng, 2)
        other = _random_params(rng, 2)
        k = gaussian_ntk_kernel(p)
        x, y = rng.standard_normal((2, 2))
        np.testing.assert_array_equal(k(x, y, context_from_params(other)), gaussian_ntk_kernel(other)(x, y))

    def test_singular_context(self):
        p = GaussianVariationalParams([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(SingularCovarianceError):
            gaussian_ntk_kernel(p)

    def test_ill_conditioned_a_rejected(self):
        p = GaussianVariationalParams([0.0, 0.0], np.diag([1.0, 1e-9]))
        with pytest.raises(SingularCovarianceError):
            inverse_pushforward(p, [1.0, 1.0])


class TestFiniteDifferenceJacobian:
    def test_linear_map(self):
        eps = 0.7
        jac = finite_difference_jacobian(lambda phi, e: np.array([phi[0] + phi[1] * e]), np.array([0.3, 2.0]), eps)
        np.testing.assert_allclose(jac, [[1.0], [eps]], atol=1e-9)

    def test_gaussian_family(self, rng):
        p = _random_params(rng, 3)
        eps = rng.standard_normal(3)
        fd = finite_difference_jacobian(gaussian_family_map, p.flatten(), eps)
        # d f_i / d mu_l = delta_il ; d f_i / d A_lm = delta_il eps_m
        expected = np.zeros((12, 3))
        expected[:3] = np.eye(3)
        for l in range(3):
            for m in range(3):
                expected[3 + 3 * l + m, l] = eps[m]
        np.testing.assert_allclose(fd, expected, atol=1e-8)
        np.testing.assert_array_equal(gaussian_family_jacobian(p, eps), expected)

    def test_constant_map(self):
        jac = finite_difference_jacobian(lambda phi, e: np.array([4.0, 5.0]), np.ones(3), None)
        np.testing.assert_array_equal(jac, np.zeros((3, 2)))


class TestPullback:
    def test_identity_map(self, rng):
        theta = lambda e, w: (1 + e @ w) * np.eye(e.size)
        k = pullback_kernel(theta, lambda x: x)
        x, y = rng.standard_normal((2, 2))
        np.testing.assert_array_equal(k(x, y), theta(x, y))

    def test_round_trip(self, rng):
        p = _random_params(rng, 3)
        for x in rng.standard_normal((10, 3)):
            assert np.max(np.abs(pushforward(p, inverse_pushforward(p, x)) - x)) < 1e-10


def test_ntk_consistency_certificate(rng):
    """FD Jacobian -> NTK -> pullback agrees with the closed-form kernel (cond(A) < 1e3)."""
    for _ in range(4):
        p = _random_params(rng, 2, lo=0.05, hi=20.0)
        assert np.linalg.cond(p.a_matrix) < 1e3
        jac = lambda e: finite_difference_jacobian(gaussian_family_map, p.flatten(), e)
        pull = pullback_kernel(lambda e, w: ntk_gram(jac, e, w), lambda x: inverse_pushforward(p, x))
        k = gaussian_ntk_kernel(p)
        for _ in range(20):
            x, y = p.mu + rng.standard_normal((2, 2))
            assert np.max(np.abs(pull(x, y) - k(x, y))) < 1e-6


@pytest.mark.parametrize("name", ["rbf", "gaussian-ntk", "pullback"])
def test_gram_psd_and_exchange_symmetry(rng, name):
    p = _random_params(rng, 2)
    if name == "rbf":
        k = rbf_kernel()
    elif name == "gaussian-ntk":
        k = gaussian_ntk_kernel(p)
    else:
        k = pullback_kernel(lambda e, w: ntk_gram(lambda z: gaussian_family_jacobian(p, z), e, w),
                            lambda x: inverse_pushforward(p, x))
    pts = p.mu + rng.standard_normal((10, 2))
    gram = k.gram(pts)
    assert gram.shape == (20, 20)
    assert np.max(np.abs(gram - gram.T)) < 1e-12
    assert np.linalg.eigvalsh(0.5 * (gram + gram.T)).min() > -1e-8


class TestKernelOperator:
    def test_zero_field(self, rng):
        ys = rng.standard_normal((5, 2))
        out = apply_kernel_operator(rbf_kernel(), None, ys, lambda y: np.zeros_like(y), np.zeros(2))
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_single_sample(self):
        v = np.array([0.3, -1.7])
        x = np.array([1.0, 2.0])
        out = apply_kernel_operator(rbf_kernel(), None, x[None, :], lambda y: np.tile(v, (len(y), 1)), x)
        np.testing.assert_array_equal(out, v)

    def test_empty_samples(self):
        with pytest.raises(EmptyEnsembleError):
            apply_kernel_operator(rbf_kernel(), None, np.zeros((0, 2)), lambda y: y, np.zeros(2))

    def test_matrix_kernel_path_matches_scalar_path(self, rng):
        p = _random_params(rng, 2)
        scalar = gaussian_ntk_kernel(p)
        generic = pullback_kernel(lambda e, w: (1 + e @ w) * np.eye(2), lambda x: inverse_pushforward(p, x))
        ys = pushforward(p, rng.standard_normal((30, 2)))
        field = lambda y: np.sin(y)
        x = rng.standard_normal(2)
        np.testing.assert_allclose(apply_kernel_operator(generic, None, ys, field, x),
                                   apply_kernel_operator(scalar, None, ys, field, x), atol=1e-12)

    def test_stein_residual_decays_like_root_n(self):
        rng = np.random.default_rng(5)
        ns = np.array([1_000, 10_000, 100_000])
        res = np.array([stein_residual(n, rng, reps=30) for n in ns])
        slope = np.polyfit(np.log(ns), np.log(res), 1)[0]
        assert -0.65 <= slope <= -0.35


def test_context_from_particles(rng):
    xs = rng.standard_normal((50, 2))
    ctx = context_from_particles(xs)
    assert ctx.source is ContextSource.FROM_PARTICLES
    np.testing.assert_allclose(ctx.covariance_estimate, np.cov(xs.T), rtol=1e-12)


def test_singular_context_is_rescued_by_jitter():
    # rank-one particle covariance: plain Cholesky fails, the 1e-10 jitter succeeds
    ctx = KernelContext(np.zeros(2), np.ones((2, 2)), ContextSource.FROM_PARTICLES)
    prec = ctx.precision
    assert np.all(np.isfinite(prec))
    np.testing.assert_allclose(ctx.cholesky @ ctx.cholesky.T, np.ones((2, 2)) + 1e-10 * np.eye(2), atol=1e-12)


def test_indefinite_context_rejected():
    ctx = KernelContext(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), ContextSource.FROM_PARTICLES)
    with pytest.raises(SingularCovarianceError):
        ctx.cholesky
