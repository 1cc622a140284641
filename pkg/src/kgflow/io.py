"""CSV trajectory files and the JSON run summary."""

import csv
import json
from pathlib import Path

import numpy as np

from .family import GaussianVariationalParams
from .svgd import ParticleEnsemble


def _fmt(x):
    # repr of a Python float is the shortest string that round-trips
    return repr(float(x))


def ensemble_header(d):
    return ["step", "time", "particle_id"] + [f"dim_{i}" for i in range(d)]


def params_header(d):
    return (["step", "time"] + [f"mu_{i}" for i in range(d)]
            + [f"a_{i}{j}" for i in range(d) for j in range(d)])


def _rows(record):
    state = record.state
    head = [str(record.step), _fmt(record.time)]
    if isinstance(state, ParticleEnsemble):
        for pid, row in enumerate(state.positions):
            yield head + [str(pid)] + [_fmt(v) for v in row]
    elif isinstance(state, GaussianVariationalParams):
        yield head + [_fmt(v) for v in state.flatten()]
    else:
        raise TypeError(f"cannot serialize state of type {type(state).__name__}")


def emit_trajectory(trajectory, path):
    """Write a trajectory as CSV.

    Particle ensembles: ``step,time,particle_id,dim_0..dim_{d-1}``, one row
    per particle per recorded step. Gaussian parameters:
    ``step,time,mu_0..,a_00..`` with A in row-major order.
    """
    path = Path(path)
    if not len(trajectory):
        raise ValueError("empty trajectory")
    first = trajectory[0].state
    if isinstance(first, ParticleEnsemble):
        header = ensemble_header(first.dim)
    else:
        header = params_header(first.dim)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for record in trajectory:
                writer.writerows(_rows(record))
    except OSError as exc:
        raise OSError(f"cannot write trajectory to {path}: {exc.strerror}") from exc
    return path


def emit_samples(samples_by_step, path):
    """Write ``[(step, time, (n, d) array), ...]`` in the particle-ensemble schema."""
    path = Path(path)
    d = samples_by_step[0][2].shape[1]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ensemble_header(d))
        for step, time, xs in samples_by_step:
            for pid, row in enumerate(xs):
                writer.writerow([str(step), _fmt(time), str(pid)] + [_fmt(v) for v in row])
    return path


def read_trajectory_csv(path):
    """Parse a trajectory CSV back into ``(header, {step: (time, array)})``.

    Ensemble files give an (n, d) array per step, parameter files a flat
    (mu, A) vector.
    """
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    by_step = {}
    ensemble = "particle_id" in header
    for row in rows:
        step, time = int(row[0]), float(row[1])
        values = [float(v) for v in row[3:]] if ensemble else [float(v) for v in row[2:]]
        by_step.setdefault(step, (time, []))[1].append(values)
    out = {}
    for step, (time, vals) in by_step.items():
        arr = np.array(vals)
        out[step] = (time, arr if ensemble else arr[0])
    return header, out


def write_summary(summary, path):
    path = Path(path)
    path.write_text(json.dumps(summary, indent=2, sort_keys=False, default=_default) + "\n")
    return path


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
