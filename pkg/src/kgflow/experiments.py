"""Experiment orchestration behind the CLI subcommands.

Each ``run_*`` function takes a validated :class:`ExperimentConfig`, runs the
flow(s), optionally writes CSV/JSON/SVG files into ``output_dir`` and returns
an :class:`ExperimentResult`.
"""

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bbvi import elbo_estimate, run_bbvi
from .errors import KGFlowError
from .family import BaseSampleBatch, GaussianVariationalParams, pushforward
from .flows import run_gan_flow
from .io import emit_samples, emit_trajectory, write_summary
from .kernels import ContextSource, gaussian_ntk_kernel, rbf_kernel
from .metrics import energy_distance, gaussian_kl, moment_summary
from .svgd import ParticleEnsemble, run_svgd

BASELINE_REPLICATES = 5


@dataclass
class ExperimentResult:
    subcommand: str
    trajectories: dict
    records: list
    base_draws: Optional[np.ndarray] = None
    files: list = field(default_factory=list)


def _exact_moments(target):
    p = target.params
    if target.family in ("gaussian", "conjugate"):
        return np.asarray(p["mean"]), np.asarray(p["covariance"])
    return None


def _moment_diag(prefix, xs):
    mean, cov = moment_summary(xs)
    return {f"{prefix}mean": mean.tolist(), f"{prefix}covariance": cov.tolist()}


def _initial_batch(config, target):
    return BaseSampleBatch.draw(config.flow.num_particles, target.dim, config.seed)


def _svgd(config, target):
    params = config.initial_params()
    batch = _initial_batch(config, target)
    initial = ParticleEnsemble(pushforward(params, batch.draws))
    exact = _exact_moments(target)

    def diagnostics(ens):
        out = _moment_diag("", ens.positions)
        if exact is not None:
            fit = GaussianVariationalParams(np.array(out["mean"]), np.linalg.cholesky(np.array(out["covariance"])))
            out["kl_gaussian_fit"] = gaussian_kl(fit, *exact)
        return out

    if config.kernel == "rbf":
        traj = run_svgd(initial, target, rbf_kernel(), config.flow,
                        bandwidth_heuristic=config.bandwidth_heuristic, diagnostics=diagnostics)
    else:
        traj = run_svgd(initial, target, gaussian_ntk_kernel(), config.flow,
                        context_source=ContextSource.FROM_PARTICLES, form="meanfield",
                        diagnostics=diagnostics)
    return {"svgd": traj}, [dict(step=r.step, time=r.time, **r.diagnostics) for r in traj]


def _bbvi(config, target):
    exact = _exact_moments(target)

    def diagnostics(params, batch):
        out = {"elbo": elbo_estimate(params, target, batch),
               "mu": params.mu.tolist(), "sigma": params.sigma.tolist()}
        if exact is not None:
            out["kl_to_posterior"] = gaussian_kl(params, *exact)
        return out

    traj = run_bbvi(config.initial_params(), target, config.flow, diagnostics)
    return {"bbvi": traj}, [dict(step=r.step, time=r.time, **r.diagnostics) for r in traj]


def _ganflow(config, target):
    traj = run_gan_flow(config.initial_params(), target, config.flow)
    records = [dict(step=r.step, time=r.time, mu=r.state.mu.tolist(), sigma=r.state.sigma.tolist(),
                    **r.diagnostics) for r in traj]
    return {"ganflow": traj}, records


def same_distribution_baseline(params, n, seed, step, replicates=BASELINE_REPLICATES):
    """Mean energy distance between independent size-n sample pairs from q_params."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(step), 7919]))
    vals = []
    for _ in range(replicates):
        a = pushforward(params, rng.standard_normal((n, params.dim)))
        b = pushforward(params, rng.standard_normal((n, params.dim)))
        vals.append(energy_distance(a, b))
    return float(np.mean(vals))


def _compare(config, target):
    """BBVI on (mu, A) and SVGD with the Gaussian NTK kernel from the same initial points."""
    params = config.initial_params()
    batch = _initial_batch(config, target)
    trajectories = {}
    try:
        trajectories["bbvi"] = run_bbvi(params, target, config.flow)
        initial = ParticleEnsemble(pushforward(params, batch.draws))
        trajectories["svgd"] = run_svgd(
            initial, target, gaussian_ntk_kernel(), config.flow,
            context_source=ContextSource.FROM_PARTICLES, form="meanfield",
        )
    except KGFlowError as exc:
        exc.partial_trajectories = dict(trajectories)
        if getattr(exc, "partial_trajectory", None) is not None:
            exc.partial_trajectories["bbvi" if "bbvi" not in trajectories else "svgd"] = exc.partial_trajectory
        exc.base_draws = batch.draws
        raise
    records = []
    for rb, rs in zip(trajectories["bbvi"], trajectories["svgd"]):
        xb = pushforward(rb.state, batch.draws)
        xs = rs.state.positions
        ed = energy_distance(xb, xs)
        base = same_distribution_baseline(rb.state, xb.shape[0], config.seed, rb.step)
        rec = {"step": rb.step, "time": rb.time, "energy_distance": ed, "baseline": base,
               "ratio": ed / base if base > 0 else float("inf"),
               "elbo": rb.diagnostics.get("elbo")}
        rec.update(_moment_diag("bbvi_", xb))
        rec.update(_moment_diag("svgd_", xs))
        records.append(rec)
    return trajectories, records, batch.draws


def _write_trajectories(trajectories, out, base_draws=None):
    files = []
    names = {"svgd": "svgd_particles.csv", "bbvi": "bbvi_params.csv", "ganflow": "gan_params.csv"}
    for key, traj in trajectories.items():
        if traj is None or not len(traj):
            continue
        files.append(emit_trajectory(traj, out / names[key]))
        if key == "bbvi" and base_draws is not None:
            snaps = [(r.step, r.time, pushforward(r.state, base_draws)) for r in traj]
            files.append(emit_samples(snaps, out / "bbvi_samples.csv"))
    return files


def _plot(config, target, trajectories, out, base_draws):
    from .plotting import emit_plot

    path = out / "figure.svg"
    if config.subcommand == "compare":
        emit_plot(target, path, trajectories.get("bbvi"), trajectories.get("svgd"), base_draws=base_draws)
    elif config.subcommand == "svgd":
        emit_plot(target, path, None, trajectories["svgd"])
    else:
        key = "bbvi" if config.subcommand == "bbvi" else "ganflow"
        emit_plot(target, path, trajectories[key], None,
                  labels=("BBVI" if key == "bbvi" else "generator", None), base_draws=base_draws)
    return path


def run_experiment(config, output_dir=None):
    """Run the configured subcommand; write files when ``output_dir`` is given.

    On a library error the partial trajectories and a failure summary are
    written before the exception propagates.
    """
    out = Path(output_dir) if output_dir is not None else config.output_dir
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    target = config.build_target()
    started = time.perf_counter()
    base_draws = None
    files = []
    try:
        if config.subcommand == "compare":
            trajectories, records, base_draws = _compare(config, target)
        elif config.subcommand == "svgd":
            trajectories, records = _svgd(config, target)
        elif config.subcommand == "bbvi":
            trajectories, records = _bbvi(config, target)
        else:
            trajectories, records = _ganflow(config, target)
        if config.subcommand in ("bbvi", "ganflow"):
            base_draws = _initial_batch(config, target).draws
    except KGFlowError as exc:
        if out is not None:
            partial = getattr(exc, "partial_trajectories", None)
            if partial is None and getattr(exc, "partial_trajectory", None) is not None:
                partial = {_traj_key(config.subcommand): exc.partial_trajectory}
            _write_trajectories(partial or {}, out, getattr(exc, "base_draws", None))
            write_summary(_summary(config, [], started, status="failed", error=str(exc),
                                   step_index=getattr(exc, "step_index", None)), out / "summary.json")
        raise
    if out is not None:
        files = _write_trajectories(trajectories, out, base_draws if config.subcommand == "compare" else None)
        if config.emit_plot:
            files.append(_plot(config, target, trajectories, out, base_draws))
        files.append(out / "summary.json")
        write_summary(_summary(config, records, started, files=[f.name for f in files]), out / "summary.json")
    return ExperimentResult(config.subcommand, trajectories, records, base_draws, files)


def _traj_key(sub):
    return {"compare": "bbvi"}.get(sub, sub)


def _summary(config, records, started, files=(), status="ok", error=None, step_index=None):
    summary = {
        "library": "kgflow",
        "version": __version__,
        "status": status,
        "config": config.echo(),
        "records": records,
        "wall_clock_seconds": time.perf_counter() - started,
        "files": list(files),
    }
    if error is not None:
        summary["error"] = error
        summary["step_index"] = step_index
    return summary
