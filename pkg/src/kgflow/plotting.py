"""Matplotlib rendering of flow snapshots over target-density contours."""

import math
from contextlib import contextmanager

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import UnsupportedDimensionError  # noqa: E402
from .family import GaussianVariationalParams, pushforward  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.linewidth": 0.8,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "svg.hashsalt": "kgflow",
    "svg.fonttype": "none",
}

MARKERS = (
    {"marker": "o", "s": 6, "alpha": 0.5, "color": "tab:blue", "linewidths": 0},
    {"marker": "x", "s": 8, "alpha": 0.5, "color": "tab:red", "linewidths": 0.6},
)


@contextmanager
def plot_style():
    with plt.rc_context(_RC):
        yield


def snapshot_samples(trajectory, base_draws=None):
    """``[(time, (n, d) samples), ...]``; parameter states are pushed through ``base_draws``."""
    out = []
    for rec in trajectory:
        state = rec.state
        if isinstance(state, GaussianVariationalParams):
            if base_draws is None:
                raise ValueError("parameter trajectories need base_draws to plot")
            out.append((rec.time, pushforward(state, base_draws)))
        else:
            out.append((rec.time, state.positions))
    return out


def _bounds(target, clouds, d):
    lo = np.full(d, np.inf)
    hi = np.full(d, -np.inf)
    p = target.params
    if "means" in p or "mean" in p:
        means = np.atleast_2d(p.get("means", p.get("mean")))
        covs = np.asarray(p.get("covariances", [p.get("covariance")]))
        sd = np.sqrt(np.diagonal(covs, axis1=1, axis2=2))
        lo = np.minimum(lo, (means - 3 * sd).min(axis=0))
        hi = np.maximum(hi, (means + 3 * sd).max(axis=0))
    for xs in clouds:
        lo = np.minimum(lo, np.percentile(xs, 0.5, axis=0))
        hi = np.maximum(hi, np.percentile(xs, 99.5, axis=0))
    if not np.all(np.isfinite(lo)):
        lo, hi = np.full(d, -4.0), np.full(d, 4.0)
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _density_panel(ax, target, lo, hi, d):
    if d == 1:
        grid = np.linspace(lo[0], hi[0], 400)
        lp = target.log_density_unnormalized(grid[:, None])
        dens = np.exp(lp - lp.max())
        ax.plot(grid, dens, color="0.4", lw=1.0)
        ax.set_ylim(-0.35, 1.1)
        ax.set_yticks([])
    else:
        gx = np.linspace(lo[0], hi[0], 160)
        gy = np.linspace(lo[1], hi[1], 160)
        mx, my = np.meshgrid(gx, gy)
        lp = target.log_density_unnormalized(np.column_stack([mx.ravel(), my.ravel()]))
        dens = np.exp(lp - lp.max()).reshape(mx.shape)
        ax.contour(mx, my, dens, levels=6, colors="0.55", linewidths=0.7)
        ax.set_aspect("equal")


def emit_plot(target, path, first=None, second=None, labels=("BBVI", "SVGD"), base_draws=None):
    """Write an SVG with one panel per recorded time, samples over density contours.

    ``first``/``second`` are trajectories recorded at matched times (either may be
    None). With no records a single contour-only panel is drawn. Returns the figure.
    """
    d = target.dim
    if d not in (1, 2):
        raise UnsupportedDimensionError(f"plots support d = 1 or 2, got d = {d}")
    series = []
    for traj, label, style in zip((first, second), labels, MARKERS):
        if traj is not None and len(traj):
            series.append((label, style, snapshot_samples(traj, base_draws)))
    num_panels = max([len(s[2]) for s in series], default=0) or 1
    clouds = [xs for _, _, snaps in series for _, xs in snaps]
    lo, hi = _bounds(target, clouds, d)

    with plot_style():
        cols = min(num_panels, 4)
        rows = math.ceil(num_panels / cols)
        fig, axes = plt.subplots(rows, cols, figsize=(2.4 * cols, 2.4 * rows), squeeze=False)
        flat = axes.ravel()
        for extra in flat[num_panels:]:
            fig.delaxes(extra)
        for k in range(num_panels):
            ax = flat[k]
            _density_panel(ax, target, lo, hi, d)
            title = None
            for s_idx, (label, style, snaps) in enumerate(series):
                if k >= len(snaps):
                    continue
                time, xs = snaps[k]
                title = f"t = {time:g}"
                if d == 1:
                    ax.scatter(xs[:, 0], np.full(xs.shape[0], -0.1 - 0.15 * s_idx), label=label, **style)
                else:
                    ax.scatter(xs[:, 0], xs[:, 1], label=label, **style)
            ax.set_xlim(lo[0], hi[0])
            if d == 2:
                ax.set_ylim(lo[1], hi[1])
            ax.set_title(title or "target")
        if series:
            flat[0].legend(loc="upper left", markerscale=2)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return fig
