"""Report figures rendered to files with matplotlib's Agg backend."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .diagnostics import order_statistic_band, qq_pp_data, theoretical_k  # noqa: E402
from .geometry import Sample  # noqa: E402
from .inference import simultaneous_band  # noqa: E402
from .probsets import GeometricModelDraw  # noqa: E402
from .quantreg import exceedance_split  # noqa: E402

__all__ = ["STYLE", "figure", "save", "plot_boundaries", "plot_dir_density", "plot_k_envelope", "plot_qq", "render_report"]

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "figure.dpi": 100,
    "svg.hashsalt": "geomex",
}

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def figure(width: float = 4.5, aspect: float | None = None):
    """New figure and axes at a given width in inches (height from the golden ratio by default)."""
    height = width * (_GOLDEN if aspect is None else aspect)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        # no timestamps or version strings, so reruns give identical files
        meta = {"Date": None, "Creator": None} if path.suffix == ".svg" else {"Software": None}
        fig.savefig(path, bbox_inches="tight", metadata=meta)
    plt.close(fig)
    return path


def plot_boundaries(sample: Sample, draws: Sequence[GeometricModelDraw], alpha: float = 0.05, path=None):
    """Left: data with the posterior-mean quantile set. Right: limit-set band
    over the sample scaled by 1/log(n/2), which concentrates on G (d=2)."""
    grid = draws[0].grid
    nodes = np.vstack([grid.nodes, grid.nodes[:1]])
    close = lambda v: np.append(v, v[0])  # noqa: E731
    rq = np.mean([d.r_q.values for d in draws], axis=0)
    rg = np.array([d.r_g.values for d in draws])
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(7.0, 3.5))
    left.scatter(sample.points[:, 0], sample.points[:, 1], s=2, c="0.6", lw=0)
    left.plot(close(rq) * nodes[:, 0], close(rq) * nodes[:, 1], "k-", lw=1, label="quantile set")
    scaled = sample.points / np.log(max(sample.n / 2.0, 2.0))
    right.scatter(scaled[:, 0], scaled[:, 1], s=2, c="0.6", lw=0)
    if len(rg) >= 200:
        band = simultaneous_band(rg, alpha)
        for edge in (band.lower, band.upper):
            right.plot(close(edge) * nodes[:, 0], close(edge) * nodes[:, 1], color="tab:red", lw=0.6, ls="--")
    mean_g = rg.mean(axis=0)
    right.plot(close(mean_g) * nodes[:, 0], close(mean_g) * nodes[:, 1], color="tab:red", lw=1, label="limit set")
    for ax in (left, right):
        ax.set_aspect("equal")
        ax.set_xlabel("$x_1$")
        ax.legend(loc="upper left", frameon=False)
    left.set_ylabel("$x_2$")
    return save(fig, path) if path else fig


def plot_dir_density(draws: Sequence[GeometricModelDraw], sample: Sample | None = None, path=None):
    grid = draws[0].grid
    dens = np.array([d.r_w.values for d in draws])
    fig, ax = figure()
    ang = grid.angles
    ax.plot(ang, dens.mean(axis=0), "k-", lw=1, label="posterior mean")
    lo, hi = np.quantile(dens, [0.025, 0.975], axis=0)
    ax.fill_between(ang, lo, hi, color="0.85", lw=0, label="pointwise 95%")
    if sample is not None and sample.n:
        phi = np.mod(np.arctan2(sample.directions[:, 1], sample.directions[:, 0]), 2 * np.pi)
        ax.hist(phi, bins=48, density=True, histtype="step", color="tab:blue", lw=0.8, label="exceedance angles")
    ax.set_xlim(0, 2 * np.pi)
    ax.set_xlabel("angle")
    ax.set_ylabel("density")
    ax.legend(frameon=False)
    return save(fig, path) if path else fig


def plot_k_envelope(env, curves: np.ndarray, d: int, path=None):
    fig, ax = figure()
    theo, _ = theoretical_k(env.kind, d, env.r, 50_000, 0)
    ax.fill_between(env.r, env.lower, env.upper, color="0.85", lw=0, label=f"{100 * (1 - env.alpha):.0f}% envelope")
    for c in curves:
        ax.plot(env.r, c, color="k", lw=0.4, alpha=0.5)
    ax.plot(env.r, theo, color="tab:red", lw=1, label="uniform")
    ax.set_xlabel("r" if env.kind == "ball" else "half aperture")
    ax.set_ylabel("$\\hat K_{%s}$" % ("B" if env.kind == "ball" else "C"))
    ax.legend(frameon=False)
    return save(fig, path) if path else fig


def plot_qq(tables: dict, path=None):
    fig, ax = figure(3.5, 1.0)
    qq = tables["qq"]
    n = len(qq)
    if n:
        lo, hi = order_statistic_band(n)
        x = qq[:, 0]
        ax.fill_between(x, -np.log1p(-lo), -np.log1p(-hi), color="0.85", lw=0)
        ax.plot(x, qq[:, 1], "k.", ms=2)
        top = float(max(x.max(), qq[:, 1].max()))
        ax.plot([0, top], [0, top], color="tab:red", lw=0.8)
    ax.set_xlabel("model quantile (Exp)")
    ax.set_ylabel("empirical quantile (Exp)")
    return save(fig, path) if path else fig


def render_report(result, out) -> list[Path]:
    """All figures for a pipeline result (PNG files under ``out``)."""
    out = Path(out)
    sample = result.sample
    model = result.model
    draws = model.model_draws()
    written: list[Path] = []
    if sample.d == 2:
        written.append(plot_boundaries(sample, draws, path=out / "boundaries.png"))
        exc, _ = exceedance_split(sample, draws[0].r_q)
        written.append(plot_dir_density(draws, exc, path=out / "dir_density.png"))
    diag = result.diagnostics
    if diag is not None:
        for kind in ("ball", "sector"):
            written.append(plot_k_envelope(diag.envelopes[kind], diag.curves[kind], diag.d, path=out / f"k_{kind}.png"))
    first = model.exceedance_fits[0]
    exc, _ = exceedance_split(sample, first.r_q)
    fit_draws = first.draws(50, 0)
    written.append(plot_qq(qq_pp_data(fit_draws, exc, 200, 0), path=out / "qq_excess.png"))
    fig, ax = figure()
    ax.hist(result.proportions, bins=10, color="0.6")
    ax.axvline(1 - model.settings["q"], color="tab:red", lw=1)
    ax.set_xlabel("exceedance proportion per quantile-set draw")
    written.append(save(fig, out / "exceedance_proportions.png"))
    return written
