"""Divergences, two-sample discrepancies and the recorded-trajectory container."""

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import _linalg
from .errors import EmptyEnsembleError, NumericalError


@dataclass(frozen=True)
class TrajectoryRecord:
    step: int
    time: float
    state: Any  # ParticleEnsemble or GaussianVariationalParams
    diagnostics: dict = field(default_factory=dict)


@dataclass
class FlowTrajectory:
    """Sequence of recorded states. Steps strictly increase and time = step * step_size."""

    step_size: float
    records: list = field(default_factory=list)

    def append(self, step, time, state, diagnostics=None):
        if self.records and step <= self.records[-1].step:
            raise ValueError(f"step {step} recorded after step {self.records[-1].step}")
        self.records.append(TrajectoryRecord(int(step), float(time), state, dict(diagnostics or {})))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def final(self):
        return self.records[-1].state

    @property
    def steps(self):
        return [r.step for r in self.records]

    @property
    def times(self):
        return [r.time for r in self.records]

    def diagnostic(self, name):
        return np.array([r.diagnostics.get(name, np.nan) for r in self.records])


def moment_summary(samples):
    """Sample mean and unbiased (n - 1) covariance of an (n, d) array."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise EmptyEnsembleError("moment_summary needs at least two samples")
    with np.errstate(over="ignore", invalid="ignore"):
        mean = x.mean(axis=0)
        centered = x - mean
        cov = centered.T @ centered / (x.shape[0] - 1)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise NumericalError("non-finite sample covariance")
    return mean, 0.5 * (cov + cov.T)


def gaussian_kl(q, p_mean, p_cov):
    """KL(N(q.mu, q.sigma) || N(p_mean, p_cov)) in closed form."""
    p_mean = np.atleast_1d(np.asarray(p_mean, dtype=float))
    d = p_mean.shape[0]
    chol_p = _linalg.spd_cholesky(_linalg.as_square(p_cov, d), name="p_cov")
    chol_q = q.sigma_cholesky
    diff = q.mu - p_mean
    trace = np.trace(_linalg.chol_solve(chol_p, q.sigma))
    maha = diff @ _linalg.chol_solve(chol_p, diff)
    logdet = _linalg.chol_logdet(chol_p) - _linalg.chol_logdet(chol_q)
    return 0.5 * (trace + maha - d + logdet)


def _as_samples(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _mean_within(x):
    # V-statistic: n^2 denominator, zero diagonal included
    n = x.shape[0]
    return 2.0 * pdist(x).sum() / (n * n)


def energy_distance(x, y):
    """2 E|X - Y| - E|X - X'| - E|Y - Y'| as a V-statistic.

    All three means run over full n x m (n x n, m x m) distance matrices, so the
    value is nonnegative and zero for identical point sets.
    """
    x = _as_samples(x)
    y = _as_samples(y)
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise EmptyEnsembleError("energy distance needs at least two samples per set")
    # both orders are summed so that swapping the arguments is bit-exact
    cross = cdist(x, y).mean() + cdist(y, x).mean()
    value = cross - (_mean_within(x) + _mean_within(y))
    if not np.isfinite(value):
        raise NumericalError("non-finite energy distance")
    # symmetric by construction; tiny negative values are rounding
    return max(value, 0.0) if value > -1e-12 else value


def rbf_mmd2(x, y, bandwidth=None):
    """Unbiased squared MMD with exp(-|x-y|^2 / (2 bw^2)); bw defaults to the pooled median distance."""
    x = _as_samples(x)
    y = _as_samples(y)
    m, n = x.shape[0], y.shape[0]
    if m < 2 or n < 2:
        raise EmptyEnsembleError("MMD needs at least two samples per set")
    if bandwidth is None:
        bandwidth = float(np.median(pdist(np.vstack([x, y])))) or 1.0
    gamma = 0.5 / bandwidth**2
    kxx = np.exp(-gamma * cdist(x, x, "sqeuclidean"))
    kyy = np.exp(-gamma * cdist(y, y, "sqeuclidean"))
    kxy = np.exp(-gamma * cdist(x, y, "sqeuclidean"))
    return (
        (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
        + (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
        - 2.0 * kxy.mean()
    )
