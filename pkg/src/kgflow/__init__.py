"""Stein variational gradient descent, BBVI and their common kernel-gradient-flow form."""

from .bbvi import (
    bbvi_param_step,
    bbvi_particle_velocity_chainrule,
    bbvi_particle_velocity_kernel,
    elbo_estimate,
    run_bbvi,
    stl_gradient,
)
from .errors import (
    ConfigError,
    ConstructionError,
    DimensionError,
    EmptyEnsembleError,
    KGFlowError,
    NumericalError,
    SingularCovarianceError,
    UnsupportedDimensionError,
    UnsupportedKernelError,
)
from .family import BaseSampleBatch, GaussianVariationalParams, inverse_pushforward, log_q, pushforward, score_q
from .flows import (
    gan_flow_velocity,
    js_divergence,
    js_functional_derivative,
    kl_functional_derivative,
    run_gan_flow,
    run_kernel_gradient_flow,
)
from .kernels import (
    ContextSource,
    KernelContext,
    MatrixKernel,
    apply_kernel_operator,
    gaussian_ntk_kernel,
    ntk_gram,
    pullback_kernel,
    rbf_kernel,
)
from .metrics import FlowTrajectory, energy_distance, gaussian_kl, moment_summary
from .svgd import FlowConfig, ParticleEnsemble, run_svgd, svgd_meanfield_velocity, svgd_velocity
from .targets import GaussianMixtureSpec, TargetDensity, make_gaussian, make_mixture

__version__ = "0.1.0"
