"""PNG renderings of the report tables (optional; CSV is the primary output)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import PAIR_NAMES, BinnedGrid, GnssComparison, PerturbationCurve  # noqa: E402

# fixed metadata keeps PNG bytes reproducible
_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def histogram_figure(edges, counts, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    centers = 0.5 * (edges[:-1] + edges[1:]) * 1000
    width = (edges[1] - edges[0]) * 1000 / 3
    for k, name in enumerate(PAIR_NAMES):
        ax.bar(centers + (k - 1) * width, counts[name], width=width, label=name)
    ax.set_xlabel("inter-prism distance error [mm]")
    ax.set_ylabel("samples")
    ax.legend()
    return _save(fig, Path(path))


def grid_figure(grid: BinnedGrid, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.pcolormesh(grid.x.edges, grid.y.edges, np.ma.masked_invalid(grid.means.T * 1000), shading="flat")
    fig.colorbar(im, ax=ax, label="mean error [mm]")
    ax.set_xlabel(grid.x.name)
    ax.set_ylabel(grid.y.name)
    ax.set_title(title)
    return _save(fig, Path(path))


def perturbation_figure(curve: PerturbationCurve, path) -> Path:
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    s = curve.sigma * 1000
    for i, lab in enumerate("xyz"):
        axes[0, 0].plot(s, curve.pos_mean[:, i] * 1000, label=lab)
        axes[1, 0].plot(s, curve.pos_std[:, i] * 1000, label=lab)
    for i, lab in enumerate(("yaw", "pitch", "roll")):
        axes[0, 1].plot(s, curve.euler_mean[:, i], label=lab)
        axes[1, 1].plot(s, curve.euler_std[:, i], label=lab)
    axes[0, 0].set_ylabel("position mean [mm]")
    axes[1, 0].set_ylabel("position std [mm]")
    axes[0, 1].set_ylabel("angle mean [rad]")
    axes[1, 1].set_ylabel("angle std [rad]")
    for ax in axes[1]:
        ax.set_xlabel("input sigma [mm]")
    for ax in axes.ravel():
        ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, Path(path))


def gnss_figure(comparisons: list[GnssComparison], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    names = [c.regime for c in comparisons]
    x = np.arange(len(names))
    ax.bar(x - 0.2, [c.gnss.mean * 1000 for c in comparisons], 0.4,
           yerr=[c.gnss.std * 1000 for c in comparisons], label="GNSS pair")
    ax.bar(x + 0.2, [c.total_station.mean * 1000 for c in comparisons], 0.4,
           yerr=[c.total_station.std * 1000 for c in comparisons], label="total stations")
    ax.set_xticks(x, names)
    ax.set_yscale("log")
    ax.set_ylabel("mean absolute distance error [mm]")
    ax.legend()
    return _save(fig, Path(path))
