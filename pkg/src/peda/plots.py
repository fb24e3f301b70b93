"""Report figures rendered next to the delimited outputs.

The CSV files remain the contract; these PNGs are a convenience rendering
of the same data: the minimization history (observation term and gradient
norm per iteration), the relative RMS error curves, and surface-speed maps
of truth, background and analysis at the window end.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .assim import MinimizerLog
from .grid import StateField
from .twin import ErrorSeries

_PNG_META = {"Software": None}  # keep output bytes reproducible


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def plot_minimization(log: MinimizerLog, path) -> None:
    """Jo (outer rows) and gradient/residual norm against a flat iteration
    counter, relinearization marked by the outer boundaries."""
    its, jos, gns = [], [], []
    outer_marks = []
    count = 0
    for outer, inner, J, Jo, Jb, gnorm, stepnorm in log.rows:
        count += 1
        its.append(count)
        jos.append(Jo if inner == 0 else J)  # model value inside the loop
        gns.append(gnorm)
        if inner == 0:
            outer_marks.append(count)

    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    axes[0].plot(its, jos, "o-", ms=3, color="tab:blue")
    axes[0].set_yscale("log")
    axes[0].set_ylabel("cost (obs term / model value)")
    axes[1].plot(its, gns, "o-", ms=3, color="tab:red")
    axes[1].set_yscale("log")
    axes[1].set_ylabel("gradient / residual norm")
    axes[1].set_xlabel("iteration")
    for ax in axes:
        for m in outer_marks:
            ax.axvline(m, color="0.85", lw=0.8, zorder=0)
    fig.suptitle("minimization history")
    fig.tight_layout()
    _save(fig, path)


def plot_error_series(errors_bg: ErrorSeries, errors_an: ErrorSeries, path) -> None:
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for ax, comp, ebg, ean in ((axes[0], "u", errors_bg.e_u, errors_an.e_u),
                               (axes[1], "v", errors_bg.e_v, errors_an.e_v)):
        ax.plot(errors_bg.times, ebg, label="background", color="tab:orange")
        ax.plot(errors_an.times, ean, label="analysis", color="tab:green")
        ax.set_ylabel(f"relative RMS error ({comp})")
        ax.set_ylim(bottom=0.0)
    axes[1].set_xlabel("time")
    axes[0].legend()
    fig.tight_layout()
    _save(fig, path)


def plot_surface_speed(states: dict[str, StateField], level: int, path) -> None:
    """sqrt(u^2 + v^2) maps at one z level for each labeled state."""
    n = len(states)
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 3.4))
    if n == 1:
        axes = [axes]
    vmax = max(float(np.sqrt(X.u[:, :, level]**2 + X.v[:, :, level]**2).max())
               for X in states.values()) or 1.0
    for ax, (name, X) in zip(axes, states.items()):
        speed = np.sqrt(X.u[:, :, level]**2 + X.v[:, :, level]**2)
        im = ax.pcolormesh(speed.T, vmin=0.0, vmax=vmax, shading="auto")
        ax.set_title(name)
        ax.set_xlabel("x index")
        ax.set_ylabel("y index")
    fig.colorbar(im, ax=axes, fraction=0.03, label="speed")
    _save(fig, path)
