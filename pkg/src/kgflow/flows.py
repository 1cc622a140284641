"""Kernel gradient flows driven by a functional derivative, and the minimax-GAN toy.

A flow moves generated points by dx/dt = -E_y[k(x, y) grad Psi_q(y)]. With
Psi_q = log q - log p this is BBVI / mean-field SVGD; with the first variation
of the Jensen-Shannon divergence it is the idealized minimax-GAN generator
flow (optimal discriminator at every step).
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .bbvi import run_parameter_flow
from .errors import ConstructionError, UnsupportedDimensionError
from .family import as_target


@dataclass(frozen=True)
class FunctionalDerivative:
    """Psi_q and its gradient; both take ``(x, q)`` with q a normalized density."""

    name: str
    evaluate: Callable
    gradient: Callable


def kl_functional_derivative(target):
    """Psi_q = log q - log p for J(q) = KL(q || p); p may be unnormalized."""

    def evaluate(x, q):
        return q.log_density_unnormalized(x) - target.log_density_unnormalized(x)

    def gradient(x, q):
        return q.score(x) - target.score(x)

    return FunctionalDerivative("kl", evaluate, gradient)


def _require_normalized(density, what):
    if not density.is_normalized:
        raise ConstructionError(f"{what} must have a known normalizer")


def js_functional_derivative(p_data):
    """Psi_q = 1/2 log(q / m), m = (p_data + q) / 2: the first variation of D_JS(p_data, q).

    Its gradient is 1/2 * p/(p + q) * (score_q - score_p).
    """
    _require_normalized(p_data, "p_data")

    def _logs(x, q):
        _require_normalized(q, "q")
        return p_data.log_density(x), q.log_density(x)

    def evaluate(x, q):
        lp, lq = _logs(x, q)
        log_m = np.logaddexp(lp, lq) - np.log(2.0)
        return 0.5 * (lq - log_m)

    def gradient(x, q):
        lp, lq = _logs(x, q)
        w_p = expit(np.asarray(lp - lq))
        diff = q.score(x) - p_data.score(x)
        return 0.5 * np.asarray(w_p)[..., None] * diff

    return FunctionalDerivative("js", evaluate, gradient)


def gan_flow_velocity(particles, psi, kernel, ctx, q_density):
    """Row i: -(1/n) sum_j k(x_i, x_j, ctx) grad Psi_q(x_j)."""
    xs = particles.positions
    return -kernel.apply(xs, xs, psi.gradient(xs, q_density), ctx)


def run_kernel_gradient_flow(initial, psi, config, diagnostics=None):
    """Parameter-space flow dphi/dt = -E_w[grad_phi f(w) . grad Psi_q(f(w))] with q = q_phi.

    Shares its driver with :func:`kgflow.bbvi.run_bbvi`; with
    ``psi = kl_functional_derivative(p)`` the two produce identical trajectories.
    """

    def descent_field(params):
        q = as_target(params)
        return lambda ys: -psi.gradient(ys, q)

    return run_parameter_flow(initial, descent_field, config, diagnostics)


def _box(densities, width):
    lo, hi = [], []
    for dens in densities:
        p = dens.params
        if "means" in p:
            means, covs = np.asarray(p["means"]), np.asarray(p["covariances"])
        elif "mean" in p:
            means, covs = np.asarray(p["mean"])[None], np.asarray(p["covariance"])[None]
        else:
            raise ConstructionError("quadrature needs Gaussian or mixture densities")
        sd = np.sqrt(np.diagonal(covs, axis1=1, axis2=2))
        lo.append((means - width * sd).min(axis=0))
        hi.append((means + width * sd).max(axis=0))
    return np.min(lo, axis=0), np.max(hi, axis=0)


def quadrature_grid(densities, num=2048, width=8.0):
    """Tensor grid covering +-width standard deviations of every density (d <= 2).

    Returns ``(points, cell_weight, axes)``.
    """
    lo, hi = _box(densities, width)
    d = lo.shape[0]
    if d > 2:
        raise UnsupportedDimensionError("grid quadrature supports d <= 2 only")
    axes = [np.linspace(lo[i], hi[i], num) for i in range(d)]
    cell = np.prod([ax[1] - ax[0] for ax in axes])
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    return points, cell, axes


def js_divergence(p, q, num=2048, width=8.0):
    """D_JS(p, q) = 1/2 KL(p || m) + 1/2 KL(q || m) by grid quadrature (natural log)."""
    _require_normalized(p, "p")
    _require_normalized(q, "q")
    points, cell, _ = quadrature_grid([p, q], num, width)
    lp = p.log_density(points)
    lq = q.log_density(points)
    log_m = np.logaddexp(lp, lq) - np.log(2.0)
    integrand = 0.5 * (np.exp(lp) * (lp - log_m) + np.exp(lq) * (lq - log_m))
    return float(integrand.sum() * cell)


def run_gan_flow(initial, p_data, config, quadrature_points=2048):
    """Minimax-GAN generator flow toward ``p_data`` with the analytic optimal discriminator.

    Records the quadrature JS divergence (d <= 2) at each recorded step.
    """
    psi = js_functional_derivative(p_data)
    if p_data.dim > 2:
        raise UnsupportedDimensionError("JS diagnostics need d <= 2")

    def diagnostics(params, batch):
        return {"js_divergence": js_divergence(p_data, as_target(params), quadrature_points)}

    return run_kernel_gradient_flow(initial, psi, config, diagnostics)
