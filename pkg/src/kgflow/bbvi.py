"""BBVI over the reparameterized Gaussian family.

The parameter gradient is the pathwise "sticking the landing" form
E_w[grad_phi f(w) . (score_p - score_q)(f(w))], and sample dynamics are
available both through the chain rule and through the Gaussian NTK kernel.
"""

import itertools
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, EmptyEnsembleError, KGFlowError, NumericalError, annotate_step
from .family import (
    BaseSampleBatch,
    GaussianVariationalParams,
    gaussian_family_jacobian,
    gaussian_family_map,
    inverse_pushforward,
    log_q,
    pushforward,
    score_q,
    step_seed,
)
from .kernels import context_from_params, gaussian_ntk_kernel
from .metrics import FlowTrajectory
from .targets import LOG_2PI

__all__ = [
    "BaseSampleBatch",
    "GaussianVariationalParams",
    "ParamGradient",
    "bbvi_param_step",
    "bbvi_particle_velocity_chainrule",
    "bbvi_particle_velocity_kernel",
    "elbo_estimate",
    "gaussian_elbo_closed_form",
    "gaussian_entropy",
    "gaussian_expectation",
    "gaussian_family_jacobian",
    "gaussian_family_map",
    "inverse_pushforward",
    "log_q",
    "pathwise_gradient",
    "pushforward",
    "run_bbvi",
    "run_parameter_flow",
    "score_q",
    "stl_gradient",
]


class ParamGradient(NamedTuple):
    mu: np.ndarray
    a_matrix: np.ndarray

    def flatten(self):
        return np.concatenate([self.mu, self.a_matrix.ravel()])


def _check_batch(params, batch):
    if len(batch) == 0:
        raise EmptyEnsembleError("empty base sample batch")
    if batch.dim != params.dim:
        raise DimensionError(f"batch dimension {batch.dim} != parameter dimension {params.dim}")


def elbo_estimate(params, target, batch):
    """(1/n) sum_j [log p~(x_j) - log q(x_j)] with x_j = mu + A eps_j.

    The target's log-normalizer is not added: the ELBO is taken against the
    unnormalized density, so its optimum equals log Z.
    """
    _check_batch(params, batch)
    xs = pushforward(params, batch.draws)
    return float(np.mean(target.log_density_unnormalized(xs) - log_q(params, xs)))


def pathwise_gradient(params, batch, field):
    """Batch mean of grad_phi f(eps_j) . field(y_j), y_j = f(eps_j).

    For the Gaussian family the mu part is mean_j g_j and the A part is
    mean_j g_j eps_j^T.
    """
    _check_batch(params, batch)
    ys = pushforward(params, batch.draws)
    g = np.asarray(field(ys), dtype=float).reshape(ys.shape)
    n = ys.shape[0]
    grad = ParamGradient(g.mean(axis=0), g.T @ batch.draws / n)
    if not (np.all(np.isfinite(grad.mu)) and np.all(np.isfinite(grad.a_matrix))):
        raise NumericalError("non-finite parameter gradient")
    return grad


def kl_ascent_field(params, target):
    """g(y) = score_p(y) - score_q(y), the ascent direction for the ELBO."""
    return lambda ys: target.score(ys) - score_q(params, ys)


def stl_gradient(params, target, batch):
    """Sticking-the-landing ELBO gradient w.r.t. (mu, A); exactly zero when q = p."""
    return pathwise_gradient(params, batch, kl_ascent_field(params, target))


def apply_gradient(params, grad, step_size):
    return GaussianVariationalParams(params.mu + step_size * grad.mu,
                                     params.a_matrix + step_size * grad.a_matrix)


def bbvi_param_step(params, target, batch, step_size):
    """One gradient-ascent step phi += h * stl_gradient."""
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    return apply_gradient(params, stl_gradient(params, target, batch), step_size)


def bbvi_particle_velocity_chainrule(params, target, batch, eps):
    """dx/dt = (grad_phi f(eps))^T dphi/dt = grad_mu + grad_A eps."""
    grad = stl_gradient(params, target, batch)
    eps = np.asarray(eps, dtype=float)
    return grad.mu + eps @ grad.a_matrix.T


def bbvi_particle_velocity_kernel(params, target, batch, x):
    """dx/dt = (1/n) sum_j k_phi(x, y_j) (score_p - score_q)(y_j) with the Gaussian NTK kernel."""
    _check_batch(params, batch)
    ctx = context_from_params(params)
    kernel = gaussian_ntk_kernel(params)
    ys = pushforward(params, batch.draws)
    g = kl_ascent_field(params, target)(ys)
    xs = np.asarray(x, dtype=float)
    single = xs.ndim == 1
    out = kernel.apply(np.atleast_2d(xs), ys, g, ctx)
    return out[0] if single else out


def gaussian_expectation(params, fn, order=5):
    """E_q[fn(x)] by tensor Gauss-Hermite quadrature; exact for polynomials of degree < 2*order."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    weights = weights / np.sqrt(2.0 * np.pi)
    d = params.dim
    grid = np.array(list(itertools.product(nodes, repeat=d)))
    w = np.prod(np.array(list(itertools.product(weights, repeat=d))), axis=1)
    return float(w @ np.asarray(fn(pushforward(params, grid)), dtype=float))


def gaussian_entropy(params):
    return 0.5 * params.dim * (1.0 + LOG_2PI) + float(np.sum(np.log(np.diag(params.sigma_cholesky))))


def gaussian_elbo_closed_form(params, target):
    """E_q[log p~] + H(q), exact when log p~ is a quadratic (Gaussian or conjugate target).

    Test/oracle utility; the flows use :func:`elbo_estimate`.
    """
    return gaussian_expectation(params, target.log_density_unnormalized) + gaussian_entropy(params)


def run_parameter_flow(initial, ascent_field, config, diagnostics=None):
    """Explicit-Euler flow phi += h * pathwise_gradient(phi, batch, ascent_field(phi)).

    ``ascent_field(params)`` returns the map y -> sample-space ascent direction.
    Uses a fixed base batch (common random numbers) unless
    ``config.fresh_batches`` is set. ``diagnostics(params, batch)`` feeds the
    per-record diagnostics map.
    """
    d = initial.dim
    n = config.num_particles
    fixed = None if config.fresh_batches else BaseSampleBatch.draw(n, d, config.seed)

    def batch_for(step):
        return fixed if fixed is not None else BaseSampleBatch.draw(n, d, step_seed(config.seed, step))

    traj = FlowTrajectory(config.step_size)
    params = initial
    traj.append(0, 0.0, params, diagnostics(params, batch_for(0)) if diagnostics else None)
    for step in range(1, config.num_steps + 1):
        try:
            batch = batch_for(step)
            grad = pathwise_gradient(params, batch, ascent_field(params))
            params = apply_gradient(params, grad, config.step_size)
            if not (np.all(np.isfinite(params.mu)) and np.all(np.isfinite(params.a_matrix))):
                raise NumericalError("non-finite parameters")
            if config.is_recorded(step):
                traj.append(step, step * config.step_size, params,
                            diagnostics(params, batch) if diagnostics else None)
        except KGFlowError as exc:
            exc.partial_trajectory = traj
            raise annotate_step(exc, step)
    return traj


def run_bbvi(initial, target, config, diagnostics=None):
    """BBVI gradient ascent on the ELBO with the sticking-the-landing estimator."""
    if diagnostics is None:
        def diagnostics(params, batch):
            return {"elbo": elbo_estimate(params, target, batch)}

    return run_parameter_flow(initial, lambda p: kl_ascent_field(p, target), config, diagnostics)
