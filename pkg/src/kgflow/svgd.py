"""SVGD particle dynamics: the Stein form, the mean-field form, and the flow driver."""

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConstructionError,
    DimensionError,
    EmptyEnsembleError,
    KGFlowError,
    NumericalError,
    UnsupportedKernelError,
    annotate_step,
)
from .kernels import (
    ContextSource,
    context_from_params,
    context_from_particles,
    median_heuristic_bandwidth,
    rbf_kernel,
)
from .metrics import FlowTrajectory

INTEGRATORS = ("euler", "rk4")


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """n particles in d dimensions at a given flow time."""

    positions: np.ndarray
    time: float = 0.0
    step_index: int = 0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[0] < 1 or pos.shape[1] < 1:
            raise DimensionError(f"positions must be (n, d) with n, d >= 1, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise NumericalError("particle positions are not finite", self.step_index)
        if self.time < 0 or self.step_index < 0:
            raise ConstructionError("time and step_index must be nonnegative")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]


@dataclass(frozen=True)
class FlowConfig:
    step_size: float = 0.05
    num_steps: int = 2000
    num_particles: int = 200
    seed: int = 0
    record_every: int = 100
    integrator: str = "euler"
    fresh_batches: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.step_size) and self.step_size > 0):
            raise ConstructionError("step_size must be positive")
        if int(self.num_steps) != self.num_steps or self.num_steps < 0:
            raise ConstructionError("num_steps must be a nonnegative integer")
        if int(self.num_particles) != self.num_particles or self.num_particles < 1:
            raise ConstructionError("num_particles must be a positive integer")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ConstructionError("record_every must be a positive integer")
        if self.num_steps > 0 and self.record_every > self.num_steps:
            raise ConstructionError("record_every must not exceed num_steps")
        if self.integrator not in INTEGRATORS:
            raise ConstructionError(f"integrator must be one of {INTEGRATORS}")
        if not 0 <= self.seed < 2**64:
            raise ConstructionError("seed must be a 64-bit unsigned integer")

    def is_recorded(self, step):
        return step % self.record_every == 0 or step == self.num_steps


def initial_ensemble(num_particles, dim, seed, mean=None, scale=None):
    """Seeded draw of mean + scale @ N(0, I) particles."""
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((num_particles, dim))
    mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=float)
    scale = np.eye(dim) if scale is None else np.asarray(scale, dtype=float)
    return ParticleEnsemble(mean + eps @ scale.T)


def svgd_velocity(ensemble, target, kernel, ctx=None, query=None):
    """Row i: (1/n) sum_j [k(x_i, x_j) score(x_j) + grad_y k(x_i, y)|_{y=x_j}].

    ``query`` evaluates the same field at other points (default: the particles).
    Only scalar kernels with an analytic ``grad_y`` are supported here;
    matrix-valued kernels go through :func:`svgd_meanfield_velocity`.
    """
    if kernel.grad_y is None or not kernel.is_scalar:
        raise UnsupportedKernelError(
            f"kernel {kernel.name!r} has no analytic y-gradient; use the mean-field form"
        )
    xs = ensemble.positions
    qs = xs if query is None else np.atleast_2d(query)
    ctx = kernel._ctx(ctx)
    drift = kernel.scalar_gram(qs, xs, ctx) @ target.score(xs)
    repulsion = kernel.grad_y(qs, xs, ctx).sum(axis=1)
    return (drift + repulsion) / xs.shape[0]


def svgd_meanfield_velocity(ensemble, target, kernel, ctx, log_q_score, query=None):
    """Row i: (1/n) sum_j k(x_i, x_j, ctx) (score_p(x_j) - score_q(x_j)); any matrix kernel."""
    xs = ensemble.positions
    qs = xs if query is None else np.atleast_2d(query)
    diff = target.score(xs) - log_q_score(xs)
    return kernel.apply(qs, xs, diff, ctx)


def euler_step(ensemble, velocity, step_size):
    velocity = np.asarray(velocity, dtype=float)
    if velocity.shape != ensemble.positions.shape:
        raise DimensionError(f"velocity shape {velocity.shape} != positions {ensemble.positions.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        new = ensemble.positions + step_size * velocity
    step = ensemble.step_index + 1
    if not np.all(np.isfinite(new)):
        raise NumericalError("non-finite particle positions", step)
    return ParticleEnsemble(new, ensemble.time + step_size, step)


def rk4_step(ensemble, velocity_fn, step_size):
    """Classical fourth-order Runge-Kutta step; ``velocity_fn`` maps positions to velocities."""
    x = ensemble.positions
    k1 = velocity_fn(x)
    k2 = velocity_fn(x + 0.5 * step_size * k1)
    k3 = velocity_fn(x + 0.5 * step_size * k2)
    k4 = velocity_fn(x + step_size * k3)
    return euler_step(ensemble, (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0, step_size)


def run_svgd(
    initial,
    target,
    kernel,
    config,
    context_source=ContextSource.FROM_PARTICLES,
    context_params=None,
    form="stein",
    q_score=None,
    bandwidth_heuristic="none",
    diagnostics=None,
):
    """Integrate the SVGD particle flow and record every ``config.record_every`` steps.

    form="stein" uses :func:`svgd_velocity`; form="meanfield" uses
    :func:`svgd_meanfield_velocity` with ``q_score(x, ctx)``, defaulting to the
    score of the Gaussian fitted to the current particles.
    Context-dependent kernels get a fresh :class:`KernelContext` each step,
    from the particles or from ``context_params``.
    """
    if form not in ("stein", "meanfield"):
        raise ConstructionError(f"unknown SVGD form {form!r}")
    if bandwidth_heuristic not in ("none", "median"):
        raise ConstructionError("bandwidth_heuristic must be 'none' or 'median'")
    if initial.dim != target.dim:
        raise DimensionError("initial ensemble and target dimensions differ")

    def make_ctx(positions):
        if context_source == ContextSource.FROM_PARAMETERS:
            if context_params is None:
                raise ConstructionError("FromParameters context needs context_params")
            return context_from_params(context_params)
        if kernel.requires_context or form == "meanfield":
            if positions.shape[0] < 2:
                raise EmptyEnsembleError("a particle-estimated context needs at least two particles")
            return context_from_particles(positions)
        return None

    def velocity(positions):
        k = kernel
        if bandwidth_heuristic == "median":
            k = rbf_kernel(median_heuristic_bandwidth(positions))
        ens = ParticleEnsemble(positions)
        ctx = make_ctx(positions)
        if form == "stein":
            return svgd_velocity(ens, target, k, ctx)
        score = (lambda x: q_score(x, ctx)) if q_score is not None else ctx.gaussian_score
        return svgd_meanfield_velocity(ens, target, k, ctx, score)

    traj = FlowTrajectory(config.step_size)
    ens = initial
    traj.append(ens.step_index, ens.time, ens, diagnostics(ens) if diagnostics else None)
    for step in range(1, config.num_steps + 1):
        try:
            if config.integrator == "rk4":
                ens = rk4_step(ens, velocity, config.step_size)
            else:
                ens = euler_step(ens, velocity(ens.positions), config.step_size)
            # keep time exactly step * h rather than an accumulated sum
            ens = ParticleEnsemble(ens.positions, step * config.step_size, step)
            if config.is_recorded(step):
                traj.append(step, ens.time, ens, diagnostics(ens) if diagnostics else None)
        except KGFlowError as exc:
            exc.partial_trajectory = traj
            raise annotate_step(exc, step)
    return traj
