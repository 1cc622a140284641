"""Target densities with analytic log-densities and scores.

Every callable on a :class:`TargetDensity` accepts either a single point of
shape ``(d,)`` or a batch of shape ``(n, d)`` and returns a scalar / ``(n,)``
log-density or a ``(d,)`` / ``(n, d)`` score.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from . import _linalg
from .errors import ConstructionError, DimensionError

LOG_2PI = np.log(2.0 * np.pi)


def as_points(x, dim):
    """Return ``(batch, single)`` where batch is an ``(n, dim)`` float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0 and dim == 1:
        arr = arr.reshape(1)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise DimensionError(f"expected a point of dimension {dim}, got {arr.shape[0]}")
        return arr[None, :], True
    if arr.ndim == 2 and arr.shape[1] == dim:
        return arr, False
    raise DimensionError(f"expected shape ({dim},) or (n, {dim}), got {arr.shape}")


@dataclass(frozen=True)
class TargetDensity:
    """Unnormalized log-density ``log p~`` with its score ``grad log p~``.

    ``log_normalizer`` is ``log Z`` with ``Z = int exp(log p~)``, i.e. the log
    evidence for a posterior. ``None`` means unknown, which is not the same as 0.
    """

    dim: int
    log_density_unnormalized: Callable
    score: Callable
    log_normalizer: Optional[float] = None
    family: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConstructionError(f"dim must be a positive integer, got {self.dim!r}")

    @property
    def is_normalized(self):
        return self.log_normalizer is not None

    def log_density(self, x):
        """Normalized log-density; needs a known normalizer."""
        if self.log_normalizer is None:
            raise ConstructionError("log-density requested but the normalizer is unknown")
        return self.log_density_unnormalized(x) - self.log_normalizer

    def shifted(self, log_offset):
        """Same distribution with ``log p~`` raised by ``log_offset`` (score unchanged)."""
        base = self.log_density_unnormalized
        lz = None if self.log_normalizer is None else self.log_normalizer + log_offset
        return replace(
            self,
            log_density_unnormalized=lambda x: base(x) + log_offset,
            log_normalizer=lz,
        )


@dataclass(frozen=True)
class GaussianMixtureSpec:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if w.size == 0:
            raise ConstructionError("mixture needs at least one component")
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        covs = np.asarray(self.covariances, dtype=float)
        if covs.ndim == 1:
            covs = covs[:, None, None]
        if means.shape[0] != w.size or covs.shape[0] != w.size:
            raise DimensionError("weights, means and covariances must have the same length")
        d = means.shape[1]
        if covs.shape[1:] != (d, d):
            raise DimensionError(f"covariances must be {d}x{d}")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConstructionError("weights must be positive and sum to 1")
        for cov in covs:
            _linalg.spd_cholesky(cov, name="mixture covariance")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)

    @property
    def dim(self):
        return self.means.shape[1]


def gaussian_log_constant(covariance):
    """``-(d/2) log 2pi - 1/2 log det Sigma``, the constant of the normal log-density."""
    chol = _linalg.spd_cholesky(covariance)
    return -0.5 * chol.shape[0] * LOG_2PI - 0.5 * _linalg.chol_logdet(chol)


def _gaussian_terms(x, mean, chol):
    """Log-density (n,) and score (n, d) of N(mean, chol chol^T) at a batch."""
    diff = x - mean
    prec_diff = _linalg.chol_solve(chol, diff.T).T
    quad = np.einsum("ij,ij->i", diff, prec_diff)
    d = mean.shape[0]
    logc = -0.5 * d * LOG_2PI - 0.5 * _linalg.chol_logdet(chol)
    return logc - 0.5 * quad, -prec_diff


def make_gaussian(mean, covariance):
    """Normalized multivariate normal target N(mean, covariance)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if mean.ndim != 1:
        raise DimensionError("mean must be a vector")
    d = mean.shape[0]
    cov = _linalg.as_square(covariance, name="covariance")
    if cov.shape[0] != d:
        raise DimensionError(f"covariance is {cov.shape} but mean has dimension {d}")
    try:
        chol = _linalg.spd_cholesky(cov)
    except ValueError as exc:
        raise ConstructionError(f"covariance is not SPD: {exc}") from exc

    def log_density(x):
        pts, single = as_points(x, d)
        out = _gaussian_terms(pts, mean, chol)[0]
        return out[0] if single else out

    def score(x):
        pts, single = as_points(x, d)
        out = _gaussian_terms(pts, mean, chol)[1]
        return out[0] if single else out

    return TargetDensity(
        dim=d,
        log_density_unnormalized=log_density,
        score=score,
        log_normalizer=0.0,
        family="gaussian",
        params={"mean": mean.copy(), "covariance": cov.copy()},
    )


def make_mixture(spec):
    """Normalized Gaussian mixture; the score uses log-sum-exp responsibilities."""
    if not isinstance(spec, GaussianMixtureSpec):
        spec = GaussianMixtureSpec(**spec)
    d = spec.dim
    log_w = np.log(spec.weights)
    chols = [_linalg.spd_cholesky(c) for c in spec.covariances]

    def _terms(pts):
        parts = [_gaussian_terms(pts, m, c) for m, c in zip(spec.means, chols)]
        logs = np.stack([p[0] for p in parts], axis=1) + log_w  # (n, K)
        scores = np.stack([p[1] for p in parts], axis=1)  # (n, K, d)
        total = logsumexp(logs, axis=1)
        resp = np.exp(logs - total[:, None])
        return total, np.einsum("nk,nkd->nd", resp, scores)

    def log_density(x):
        pts, single = as_points(x, d)
        out = _terms(pts)[0]
        return out[0] if single else out

    def score(x):
        pts, single = as_points(x, d)
        out = _terms(pts)[1]
        return out[0] if single else out

    return TargetDensity(
        dim=d,
        log_density_unnormalized=log_density,
        score=score,
        log_normalizer=0.0,
        family="mixture",
        params={"weights": spec.weights, "means": spec.means, "covariances": spec.covariances},
    )


def posterior_from_prior_likelihood(prior, log_likelihood, score_likelihood, dim=None):
    """Unnormalized posterior ``prior * likelihood``; the evidence is left unknown.

    ``log_likelihood`` and ``score_likelihood`` must accept the same point or
    batch shapes as the prior's callables.
    """
    if dim is not None and dim != prior.dim:
        raise DimensionError(f"likelihood dimension {dim} != prior dimension {prior.dim}")
    d = prior.dim
    probe = np.zeros(d)
    s = np.asarray(score_likelihood(probe), dtype=float)
    if s.shape != (d,):
        raise DimensionError(f"likelihood score has shape {s.shape}, expected ({d},)")

    def log_density(x):
        return prior.log_density_unnormalized(x) + log_likelihood(x)

    def score(x):
        return prior.score(x) + score_likelihood(x)

    return TargetDensity(
        dim=d,
        log_density_unnormalized=log_density,
        score=score,
        log_normalizer=None,
        family="posterior",
        params={"prior": prior.family},
    )


def conjugate_gaussian_posterior(prior_mean, prior_cov, observation, noise_cov):
    """Posterior of x under prior N(m0, S0) and one observation z ~ N(x, R).

    Returns ``(target, post_mean, post_cov)``. The target is built through
    :func:`posterior_from_prior_likelihood` and then given its analytic
    evidence ``log N(z; m0, S0 + R)`` as ``log_normalizer``.
    """
    prior = make_gaussian(prior_mean, prior_cov)
    d = prior.dim
    z = np.atleast_1d(np.asarray(observation, dtype=float))
    noise = _linalg.as_square(noise_cov, d, name="noise_cov")
    lik = make_gaussian(np.zeros(d), noise)

    def log_likelihood(x):
        return lik.log_density_unnormalized(z - np.asarray(x, dtype=float))

    def score_likelihood(x):
        return -lik.score(z - np.asarray(x, dtype=float))

    post = posterior_from_prior_likelihood(prior, log_likelihood, score_likelihood)
    m0 = prior.params["mean"]
    s0 = prior.params["covariance"]
    gain = s0 @ np.linalg.inv(s0 + noise)
    post_mean = m0 + gain @ (z - m0)
    post_cov = s0 - gain @ s0
    post_cov = 0.5 * (post_cov + post_cov.T)
    evidence = make_gaussian(m0, s0 + noise).log_density_unnormalized(z)
    target = replace(
        post,
        log_normalizer=float(evidence),
        family="conjugate",
        params={"prior_mean": m0, "prior_cov": s0, "observation": z, "noise_cov": noise,
                "mean": post_mean, "covariance": post_cov},
    )
    return target, post_mean, post_cov
