"""The reparameterized Gaussian family x = mu + A eps, eps ~ N(0, I)."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from . import _linalg
from .errors import DimensionError, EmptyEnsembleError
from .targets import LOG_2PI, TargetDensity, as_points


@dataclass(frozen=True, eq=False)
class GaussianVariationalParams:
    """Variational parameters phi = (mu, A) with Sigma = A A^T.

    A is a full (not necessarily triangular) matrix; only Sigma matters for
    the distribution. Conditioning of A is checked lazily, by the operations
    that need an inverse.
    """

    mu: np.ndarray
    a_matrix: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float)).copy()
        if mu.ndim != 1:
            raise DimensionError("mu must be a vector")
        a = _linalg.as_square(self.a_matrix, mu.shape[0], name="a_matrix").copy()
        mu.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "a_matrix", a)

    @property
    def dim(self):
        return self.mu.shape[0]

    @property
    def num_params(self):
        return self.dim + self.dim**2

    @cached_property
    def sigma(self):
        s = self.a_matrix @ self.a_matrix.T
        return 0.5 * (s + s.T)

    @cached_property
    def sigma_cholesky(self):
        _linalg.check_condition(self.a_matrix, name="A")
        return _linalg.spd_cholesky(self.sigma, name="Sigma")

    @cached_property
    def sigma_inverse(self):
        return _linalg.chol_inverse(self.sigma_cholesky)

    def flatten(self):
        """Parameters as one vector: mu followed by A in row-major order."""
        return np.concatenate([self.mu, self.a_matrix.ravel()])

    @classmethod
    def from_flat(cls, phi, dim):
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (dim + dim * dim,):
            raise DimensionError(f"flat parameter vector must have length {dim + dim * dim}")
        return cls(phi[:dim], phi[dim:].reshape(dim, dim))

    @classmethod
    def standard(cls, dim):
        return cls(np.zeros(dim), np.eye(dim))

    def __eq__(self, other):
        if not isinstance(other, GaussianVariationalParams):
            return NotImplemented
        return np.array_equal(self.mu, other.mu) and np.array_equal(self.a_matrix, other.a_matrix)

    __hash__ = None

    def __repr__(self):
        return f"GaussianVariationalParams(mu={self.mu.tolist()}, a_matrix={self.a_matrix.tolist()})"


@dataclass(frozen=True, eq=False)
class BaseSampleBatch:
    """Standard-normal base draws eps ~ N(0, I), regenerable from ``seed``."""

    draws: np.ndarray
    seed: int

    @classmethod
    def draw(cls, n, dim, seed):
        if n < 1:
            raise EmptyEnsembleError("a base sample batch needs at least one draw")
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((n, dim)), int(seed))

    def __len__(self):
        return self.draws.shape[0]

    @property
    def dim(self):
        return self.draws.shape[1]


def step_seed(seed, step):
    """Deterministic per-step seed for fresh-batch mode."""
    return int(np.random.SeedSequence([int(seed), int(step)]).generate_state(1, np.uint64)[0])


def pushforward(params, eps):
    """x = mu + A eps for a single eps (d,) or a batch (n, d)."""
    pts, single = as_points(eps, params.dim)
    out = params.mu + pts @ params.a_matrix.T
    return out[0] if single else out


def inverse_pushforward(params, x):
    """eps = A^{-1} (x - mu)."""
    _linalg.check_condition(params.a_matrix, name="A")
    pts, single = as_points(x, params.dim)
    out = linalg.solve(params.a_matrix, (pts - params.mu).T).T
    return out[0] if single else out


def log_q(params, x):
    """Exact log N(x; mu, A A^T)."""
    pts, single = as_points(x, params.dim)
    chol = params.sigma_cholesky
    diff = pts - params.mu
    white = linalg.solve_triangular(chol, diff.T, lower=True)
    quad = np.sum(white**2, axis=0)
    out = -0.5 * params.dim * LOG_2PI - 0.5 * _linalg.chol_logdet(chol) - 0.5 * quad
    return out[0] if single else out


def score_q(params, x):
    """grad_x log q = -Sigma^{-1} (x - mu)."""
    pts, single = as_points(x, params.dim)
    out = -_linalg.chol_solve(params.sigma_cholesky, (pts - params.mu).T).T
    return out[0] if single else out


def gaussian_family_map(phi, eps):
    """f_phi(eps) with phi given as a flat (mu, row-major A) vector."""
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    d = eps.shape[0]
    return pushforward(GaussianVariationalParams.from_flat(phi, d), eps)


def gaussian_family_jacobian(params, eps):
    """Analytic Jacobian of f_phi(eps) w.r.t. the flat parameters, shape (d + d^2, d).

    Row layout follows :meth:`GaussianVariationalParams.flatten`:
    d(f_i)/d(mu_l) = delta_il and d(f_i)/d(A_lm) = delta_il eps_m.
    """
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    d = params.dim
    if eps.shape != (d,):
        raise DimensionError(f"eps must have shape ({d},)")
    eye = np.eye(d)
    a_rows = np.einsum("li,m->lmi", eye, eps).reshape(d * d, d)
    return np.vstack([eye, a_rows])


def as_target(params):
    """The normalized density q_phi as a :class:`TargetDensity`."""
    return TargetDensity(
        dim=params.dim,
        log_density_unnormalized=lambda x: log_q(params, x),
        score=lambda x: score_q(params, x),
        log_normalizer=0.0,
        family="gaussian",
        params={"mean": np.array(params.mu), "covariance": params.sigma},
    )
