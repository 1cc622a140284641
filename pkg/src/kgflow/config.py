"""TOML experiment configuration: parsing, defaults and validation.

Every field is checked before any flow runs. Errors are :class:`ConfigError`
and name the offending key (``section.key``) or the parse location.
"""

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, KGFlowError
from .family import GaussianVariationalParams
from .svgd import FlowConfig, INTEGRATORS
from .targets import GaussianMixtureSpec, conjugate_gaussian_posterior, make_gaussian, make_mixture

SUBCOMMANDS = ("svgd", "bbvi", "compare", "ganflow")
KERNELS = ("rbf", "gaussian-ntk")
BANDWIDTH_HEURISTICS = ("none", "median")
TARGET_FAMILIES = ("gaussian", "mixture", "conjugate")

DEFAULTS = {
    "flow": {
        "step_size": 0.05,
        "num_steps": 2000,
        "num_particles": 200,
        "record_every": 100,
        "integrator": "euler",
        "fresh_batches": False,
    },
    "seed": 0,
}

_TOP_KEYS = {"subcommand", "seed", "emit_plot", "output_dir", "target", "kernel", "flow", "init"}
_SECTION_KEYS = {
    "kernel": {"name", "bandwidth_heuristic"},
    "flow": set(DEFAULTS["flow"]),
    "init": {"mu", "a_matrix"},
}
_TARGET_KEYS = {
    "gaussian": {"family", "mean", "covariance"},
    "mixture": {"family", "weights", "means", "covariances"},
    "conjugate": {"family", "prior_mean", "prior_cov", "observation", "noise_cov"},
}


@dataclass
class ExperimentConfig:
    subcommand: str
    target_spec: dict
    kernel: str
    bandwidth_heuristic: str
    flow: FlowConfig
    init_mu: np.ndarray
    init_a: np.ndarray
    output_dir: Optional[Path] = None
    emit_plot: bool = False
    raw: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.flow.seed

    @property
    def dim(self):
        return self.init_mu.shape[0]

    def build_target(self):
        return build_target(self.target_spec)

    def initial_params(self):
        return GaussianVariationalParams(self.init_mu, self.init_a)

    def with_seed(self, seed):
        return replace(self, flow=replace(self.flow, seed=seed))

    def echo(self):
        """Fully resolved configuration as plain JSON-able data."""
        return {
            "subcommand": self.subcommand,
            "seed": self.flow.seed,
            "emit_plot": self.emit_plot,
            "target": _jsonable(self.target_spec),
            "kernel": {"name": self.kernel, "bandwidth_heuristic": self.bandwidth_heuristic},
            "flow": {
                "step_size": self.flow.step_size,
                "num_steps": self.flow.num_steps,
                "num_particles": self.flow.num_particles,
                "record_every": self.flow.record_every,
                "integrator": self.flow.integrator,
                "fresh_batches": self.flow.fresh_batches,
            },
            "init": {"mu": self.init_mu.tolist(), "a_matrix": self.init_a.tolist()},
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def build_target(spec):
    family = spec["family"]
    if family == "gaussian":
        return make_gaussian(spec["mean"], spec["covariance"])
    if family == "mixture":
        return make_mixture(GaussianMixtureSpec(spec["weights"], spec["means"], spec["covariances"]))
    target, _, _ = conjugate_gaussian_posterior(
        spec["prior_mean"], spec["prior_cov"], spec["observation"], spec["noise_cov"]
    )
    return target


def _array(value, key, ndim):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a numeric array") from None
    if ndim == 1:
        arr = np.atleast_1d(arr)
    elif ndim == 2:
        arr = np.atleast_2d(arr)
    if arr.ndim != ndim:
        raise ConfigError(f"{key}: expected a {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{key}: entries must be finite")
    return arr


def _check_keys(section, allowed, where):
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")


def _parse_target(raw):
    if not isinstance(raw, dict):
        raise ConfigError("target: expected a table")
    family = raw.get("family", "gaussian")
    if family not in TARGET_FAMILIES:
        raise ConfigError(f"target.family: unknown family {family!r}; valid options: {', '.join(TARGET_FAMILIES)}")
    _check_keys(raw, _TARGET_KEYS[family], "target")
    spec = {"family": family}
    if family == "gaussian":
        spec["mean"] = _array(raw.get("mean", [0.0]), "target.mean", 1)
        d = spec["mean"].shape[0]
        spec["covariance"] = _array(raw.get("covariance", np.eye(d)), "target.covariance", 2)
    elif family == "mixture":
        for key in ("weights", "means", "covariances"):
            if key not in raw:
                raise ConfigError(f"target.{key}: required for the mixture family")
        spec["weights"] = _array(raw["weights"], "target.weights", 1)
        spec["means"] = _array(raw["means"], "target.means", 2)
        spec["covariances"] = _array(raw["covariances"], "target.covariances", 3)
    else:
        spec["prior_mean"] = _array(raw.get("prior_mean", [0.0]), "target.prior_mean", 1)
        d = spec["prior_mean"].shape[0]
        spec["prior_cov"] = _array(raw.get("prior_cov", np.eye(d)), "target.prior_cov", 2)
        if "observation" not in raw:
            raise ConfigError("target.observation: required for the conjugate family")
        spec["observation"] = _array(raw["observation"], "target.observation", 1)
        spec["noise_cov"] = _array(raw.get("noise_cov", np.eye(d)), "target.noise_cov", 2)
    try:
        target = build_target(spec)
    except KGFlowError as exc:
        raise ConfigError(f"target: {exc}") from None
    return spec, target


def _int(value, key, minimum):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}, got {value}")
    return value


def parse_config(text, subcommand=None, seed=None, emit_plot=None, output_dir=None):
    """Parse and validate a TOML config document.

    Command-line overrides (``subcommand``, ``seed``, ``emit_plot``,
    ``output_dir``) take precedence over the document; a ``subcommand`` key in
    the document must agree with the one given on the command line.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    _check_keys(raw, _TOP_KEYS, "config")

    doc_sub = raw.get("subcommand")
    if doc_sub is not None and subcommand is not None and doc_sub != subcommand:
        raise ConfigError(f"subcommand: config says {doc_sub!r} but {subcommand!r} was requested")
    sub = subcommand or doc_sub
    if sub not in SUBCOMMANDS:
        raise ConfigError(f"subcommand: {sub!r} is not one of {', '.join(SUBCOMMANDS)}")

    spec, target = _parse_target(raw.get("target", {}))
    d = target.dim

    kernel_raw = raw.get("kernel", {})
    _check_keys(kernel_raw, _SECTION_KEYS["kernel"], "kernel")
    kernel = kernel_raw.get("name", "gaussian-ntk" if sub == "compare" else "rbf")
    if kernel not in KERNELS:
        raise ConfigError(f"kernel.name: unknown kernel {kernel!r}; valid options: {', '.join(KERNELS)}")
    if sub == "compare" and kernel != "gaussian-ntk":
        raise ConfigError("kernel.name: compare runs SVGD with the gaussian-ntk kernel only")
    heuristic = kernel_raw.get("bandwidth_heuristic", "none")
    if heuristic not in BANDWIDTH_HEURISTICS:
        raise ConfigError(
            f"kernel.bandwidth_heuristic: unknown value {heuristic!r}; valid options: {', '.join(BANDWIDTH_HEURISTICS)}"
        )
    if heuristic != "none" and kernel != "rbf":
        raise ConfigError("kernel.bandwidth_heuristic: only the rbf kernel has a bandwidth")

    flow_raw = raw.get("flow", {})
    _check_keys(flow_raw, _SECTION_KEYS["flow"], "flow")
    flow = dict(DEFAULTS["flow"])
    flow.update(flow_raw)
    step_size = flow["step_size"]
    if isinstance(step_size, bool) or not isinstance(step_size, (int, float)):
        raise ConfigError(f"flow.step_size: expected a number, got {step_size!r}")
    if not (np.isfinite(step_size) and step_size > 0):
        raise ConfigError(f"flow.step_size: must be positive, got {step_size}")
    num_steps = _int(flow["num_steps"], "flow.num_steps", 0)
    num_particles = _int(flow["num_particles"], "flow.num_particles", 2)
    if "record_every" in flow_raw:
        record_every = _int(flow["record_every"], "flow.record_every", 1)
        if num_steps > 0 and record_every > num_steps:
            raise ConfigError(f"flow.record_every: must not exceed num_steps ({num_steps})")
    else:
        record_every = max(1, min(DEFAULTS["flow"]["record_every"], num_steps))
    if flow["integrator"] not in INTEGRATORS:
        raise ConfigError(f"flow.integrator: unknown integrator {flow['integrator']!r}; valid options: {', '.join(INTEGRATORS)}")
    if sub in ("bbvi", "compare", "ganflow") and flow["integrator"] != "euler":
        raise ConfigError("flow.integrator: parameter flows use the euler integrator only")
    if not isinstance(flow["fresh_batches"], bool):
        raise ConfigError("flow.fresh_batches: expected true or false")
    if sub == "compare" and flow["fresh_batches"]:
        raise ConfigError("flow.fresh_batches: compare uses one fixed base batch for both methods")
    run_seed = raw.get("seed", DEFAULTS["seed"]) if seed is None else seed
    run_seed = _int(run_seed, "seed", 0)
    if run_seed >= 2**64:
        raise ConfigError("seed: must fit in 64 bits")

    init_raw = raw.get("init", {})
    _check_keys(init_raw, _SECTION_KEYS["init"], "init")
    mu = _array(init_raw.get("mu", np.zeros(d)), "init.mu", 1)
    a = _array(init_raw.get("a_matrix", np.eye(d)), "init.a_matrix", 2)
    if mu.shape != (d,):
        raise ConfigError(f"init.mu: expected length {d} to match the target")
    if a.shape != (d, d):
        raise ConfigError(f"init.a_matrix: expected a {d}x{d} matrix")
    try:
        GaussianVariationalParams(mu, a).sigma_cholesky
    except KGFlowError as exc:
        raise ConfigError(f"init.a_matrix: {exc}") from None

    if sub == "ganflow":
        if not target.is_normalized or spec["family"] == "conjugate":
            raise ConfigError("target.family: ganflow needs a gaussian or mixture data distribution")
        if d > 2:
            raise ConfigError("target: ganflow JS diagnostics need d <= 2")

    plot = bool(raw.get("emit_plot", False)) if emit_plot is None else emit_plot
    if plot and d > 2:
        raise ConfigError("emit_plot: plots support d <= 2 only")

    out = output_dir if output_dir is not None else raw.get("output_dir")
    try:
        flow_config = FlowConfig(
            step_size=float(step_size),
            num_steps=num_steps,
            num_particles=num_particles,
            seed=run_seed,
            record_every=record_every,
            integrator=flow["integrator"],
            fresh_batches=flow["fresh_batches"],
        )
    except KGFlowError as exc:
        raise ConfigError(f"flow: {exc}") from None
    return ExperimentConfig(
        subcommand=sub,
        target_spec=spec,
        kernel=kernel,
        bandwidth_heuristic=heuristic,
        flow=flow_config,
        init_mu=mu,
        init_a=a,
        output_dir=Path(out) if out is not None else None,
        emit_plot=plot,
        raw=raw,
    )


def load_config(path, **overrides):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, **overrides)
