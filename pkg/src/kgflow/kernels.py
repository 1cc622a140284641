"""Matrix-valued kernels, the NTK construction, pullback kernels and T_q.

Scalar kernels are represented as ``scalar * I``. A kernel may depend on the
current distribution through a :class:`KernelContext` (mean and covariance
estimates of q).
"""

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import pdist

from . import _linalg
from .errors import ConstructionError, DimensionError, EmptyEnsembleError, NumericalError
from .targets import as_points


class ContextSource(enum.Enum):
    FROM_PARAMETERS = "FromParameters"
    FROM_PARTICLES = "FromParticles"


@dataclass(frozen=True, eq=False)
class KernelContext:
    mean_estimate: np.ndarray
    covariance_estimate: np.ndarray
    source: ContextSource

    @cached_property
    def cholesky(self):
        return _linalg.spd_cholesky(self.covariance_estimate, name="context covariance")

    @cached_property
    def precision(self):
        return _linalg.chol_inverse(self.cholesky)

    @property
    def dim(self):
        return self.mean_estimate.shape[0]

    def gaussian_score(self, x):
        """Score of the Gaussian fit N(mean_estimate, covariance_estimate)."""
        pts, single = as_points(x, self.dim)
        out = -_linalg.chol_solve(self.cholesky, (pts - self.mean_estimate).T).T
        return out[0] if single else out


def context_from_params(params):
    ctx = KernelContext(np.array(params.mu), params.sigma, ContextSource.FROM_PARAMETERS)
    # reuse the parameter-side factorization so both views share one Sigma^{-1}
    ctx.__dict__["cholesky"] = params.sigma_cholesky
    return ctx


def context_from_particles(positions):
    """Mean and unbiased covariance of an (n, d) particle array (n >= 2)."""
    from .metrics import moment_summary

    mean, cov = moment_summary(positions)
    ctx = KernelContext(mean, cov, ContextSource.FROM_PARTICLES)
    ctx.cholesky  # validate eagerly (SPD check with jitter policy)
    return ctx


@dataclass(frozen=True, eq=False)
class MatrixKernel:
    """A d x d matrix-valued kernel k(x, y) (possibly context dependent).

    ``eval`` works on single points. ``scalar_gram`` (for scalar * I kernels)
    and ``grad_y`` give vectorized fast paths; ``grad_y`` returns
    ``grad_y k(x_i, y_j)`` of the scalar part with shape (n, m, d).
    """

    name: str
    eval: Callable
    requires_context: bool = False
    scalar_gram: Optional[Callable] = None
    grad_y: Optional[Callable] = None
    default_context: Optional[KernelContext] = None

    @property
    def is_scalar(self):
        return self.scalar_gram is not None

    def _ctx(self, ctx):
        ctx = ctx if ctx is not None else self.default_context
        if self.requires_context and ctx is None:
            raise ConstructionError(f"kernel {self.name!r} needs a KernelContext")
        return ctx

    def __call__(self, x, y, ctx=None):
        return self.eval(x, y, self._ctx(ctx))

    def blocks(self, xs, ys, ctx=None):
        """All kernel blocks, shape (n, m, d, d)."""
        ctx = self._ctx(ctx)
        xs = np.atleast_2d(xs)
        ys = np.atleast_2d(ys)
        d = xs.shape[1]
        if self.is_scalar:
            k = self.scalar_gram(xs, ys, ctx)
            return k[:, :, None, None] * np.eye(d)
        out = np.empty((xs.shape[0], ys.shape[0], d, d))
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                out[i, j] = self.eval(x, y, ctx)
        return out

    def gram(self, xs, ctx=None):
        """Block Gram matrix of shape (n d, n d)."""
        b = self.blocks(xs, xs, ctx)
        n, _, d, _ = b.shape
        return b.transpose(0, 2, 1, 3).reshape(n * d, n * d)

    def apply(self, xs, ys, values, ctx=None):
        """(1/m) sum_j k(x_i, y_j) values_j for every query x_i; shape (n, d)."""
        ctx = self._ctx(ctx)
        ys = np.atleast_2d(ys)
        if ys.shape[0] == 0:
            raise EmptyEnsembleError("kernel operator needs at least one sample")
        values = np.asarray(values, dtype=float).reshape(ys.shape)
        if self.is_scalar:
            return self.scalar_gram(np.atleast_2d(xs), ys, ctx) @ values / ys.shape[0]
        b = self.blocks(xs, ys, ctx)
        return np.einsum("nmij,mj->ni", b, values) / ys.shape[0]


def _sq_dists(xs, ys):
    diff = xs[:, None, :] - ys[None, :, :]
    return np.einsum("nmd,nmd->nm", diff, diff)


def rbf_gradient(x, y, bandwidth=1.0):
    """grad_y exp(-|x - y|^2 / bandwidth) = 2 (x - y) / bandwidth * k(x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = x - y
    return 2.0 * diff / bandwidth * np.exp(-np.dot(diff, diff) / bandwidth)


def rbf_kernel(bandwidth=1.0):
    """k(x, y) = exp(-|x - y|^2 / bandwidth) I. The default bandwidth 1 is the plain e^{-|x-y|^2}."""
    if not bandwidth > 0:
        raise ConstructionError("bandwidth must be positive")
    h = float(bandwidth)

    def scalar_gram(xs, ys, ctx=None):
        return np.exp(-_sq_dists(xs, ys) / h)

    def grad_y(xs, ys, ctx=None):
        diff = xs[:, None, :] - ys[None, :, :]
        k = np.exp(-np.einsum("nmd,nmd->nm", diff, diff) / h)
        return (2.0 / h) * diff * k[:, :, None]

    def eval_(x, y, ctx=None):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        diff = x - y
        return np.exp(-np.dot(diff, diff) / h) * np.eye(x.shape[0])

    return MatrixKernel(name="rbf", eval=eval_, scalar_gram=scalar_gram, grad_y=grad_y)


def median_heuristic_bandwidth(positions):
    """med(|x_i - x_j|^2) / log(n), the usual SVGD bandwidth choice (1.0 for n < 2)."""
    positions = np.atleast_2d(positions)
    n = positions.shape[0]
    if n < 2:
        return 1.0
    med = np.median(pdist(positions, "sqeuclidean"))
    h = med / np.log(n) if n > 2 else med
    return float(h) if h > 0 else 1.0


def gaussian_ntk_kernel(params=None):
    """k(x, y) = (1 + (x - mu)^T Sigma^{-1} (y - mu)) I with mu, Sigma from the context.

    When ``params`` is given its (mu, A A^T) serve as the default context.
    """
    default = None
    if params is not None:
        default = context_from_params(params)

    def scalar_gram(xs, ys, ctx):
        u = np.atleast_2d(xs) - ctx.mean_estimate
        v = np.atleast_2d(ys) - ctx.mean_estimate
        pv = _linalg.chol_solve(ctx.cholesky, v.T)  # (d, m)
        return 1.0 + u @ pv

    def eval_(x, y, ctx):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        val = scalar_gram(x[None, :], np.atleast_1d(y)[None, :], ctx)[0, 0]
        return val * np.eye(x.shape[0])

    return MatrixKernel(
        name="gaussian-ntk",
        eval=eval_,
        requires_context=True,
        scalar_gram=scalar_gram,
        default_context=default,
    )


def ntk_gram(jacobian_at, eps, w):
    """Theta(eps, w) = J(eps)^T J(w) where J is the (p, d) parameter Jacobian of f_phi."""
    j1 = np.asarray(jacobian_at(eps), dtype=float)
    j2 = np.asarray(jacobian_at(w), dtype=float)
    if j1.ndim != 2 or j1.shape != j2.shape:
        raise DimensionError(f"Jacobian shapes disagree: {j1.shape} vs {j2.shape}")
    return j1.T @ j2


def finite_difference_jacobian(f, params, base_point):
    """Central-difference Jacobian of ``f(params, base_point)`` w.r.t. ``params``, shape (p, d).

    Step per parameter is 1e-6 * max(1, |phi_i|).
    """
    phi = np.asarray(params, dtype=float).ravel()
    steps = 1e-6 * np.maximum(1.0, np.abs(phi))
    rows = []
    for i, h in enumerate(steps):
        up = phi.copy()
        dn = phi.copy()
        up[i] += h
        dn[i] -= h
        fu = np.atleast_1d(np.asarray(f(up, base_point), dtype=float))
        fd = np.atleast_1d(np.asarray(f(dn, base_point), dtype=float))
        if not (np.all(np.isfinite(fu)) and np.all(np.isfinite(fd))):
            raise NumericalError(f"non-finite evaluation while differentiating parameter {i}")
        rows.append((fu - fd) / ((phi[i] + h) - (phi[i] - h)))
    return np.array(rows)


def pullback_kernel(ntk, inverse_map, name="pullback"):
    """k(x, y) = Theta(f^{-1}(x), f^{-1}(y)) for a tangent kernel ``ntk(eps, w)``."""

    def eval_(x, y, ctx=None):
        return ntk(inverse_map(x), inverse_map(y))

    return MatrixKernel(name=name, eval=eval_)


def apply_kernel_operator(kernel, ctx, samples, field, x):
    """Monte Carlo T_q: (1/n) sum_j k(x, y_j) field(y_j) over ``samples`` y_j ~ q.

    ``field`` maps an (n, d) batch to an (n, d) array. ``x`` is one point or
    a batch of query points.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] == 0:
        raise EmptyEnsembleError("kernel operator needs at least one sample")
    values = np.asarray(field(samples), dtype=float).reshape(samples.shape)
    xs, single = as_points(x, samples.shape[1])
    out = kernel.apply(xs, samples, values, ctx)
    return out[0] if single else out
