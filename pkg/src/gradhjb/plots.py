"""Figure rendering for the command-line report paths.

Each run command drops PNG figures next to its CSV output: the solved field
with its active set, the sweep bound tables against eps, the pointwise
residual field, and the Monte Carlo bound per start point. Rendering uses
the Agg backend and never opens a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_solution_figure",
    "save_sweep_figure",
    "save_residual_figure",
    "save_mc_figure",
]

_DPI = 150


def save_solution_figure(report, problem, path) -> None:
    g = problem.grid
    if g.n == 1:
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        x = g.axis(0)
        ax.plot(x, report.u.values, label="u")
        ax.plot(x, report.unconstrained.values, "--", lw=1, label="unconstrained")
        act = report.active
        if act.any():
            ax.fill_between(x, report.u.values.min(), report.u.values.max(),
                            where=act, alpha=0.15, color="tab:red", label="active set")
        ax.set_xlabel("x")
        ax.set_ylabel("u")
        ax.legend(frameon=False)
    else:
        fig, axes = plt.subplots(1, 2, figsize=(9.6, 4.0))
        x1, x2 = g.axis(0), g.axis(1)
        pc = axes[0].pcolormesh(x1, x2, report.u.values.T, shading="nearest")
        fig.colorbar(pc, ax=axes[0])
        axes[0].set_title("u")
        axes[1].pcolormesh(x1, x2, report.active.T.astype(float), shading="nearest",
                           cmap="Reds", vmin=0, vmax=1)
        axes[1].set_title("active set")
        for ax in axes:
            ax.set_xlabel("x1")
            ax.set_ylabel("x2")
            ax.set_aspect("equal")
    fig.suptitle(problem.name)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)


def save_sweep_figure(diags: dict, path) -> None:
    """diags maps a grid label (points per axis) to a DiagnosticReport."""
    columns = ["sup_grad", "sup_beta", "w2_2", "w2_4", "w2_8", "w2_inf"]
    fig, axes = plt.subplots(2, 3, figsize=(12, 6.5))
    for ax, col in zip(axes.ravel(), columns):
        for m, diag in diags.items():
            margins = sorted({r.margin for r in diag.sweep_rows})
            for margin in margins:
                rows = [r for r in diag.sweep_rows if r.margin == margin]
                eps = [r.eps for r in rows]
                if col == "sup_grad":
                    vals = [r.sup_grad for r in rows]
                elif col == "sup_beta":
                    vals = [r.sup_beta for r in rows]
                else:
                    key = col.split("_", 1)[1]
                    vals = [r.seminorms[key] for r in rows]
                ax.plot(eps, np.maximum(vals, 1e-16), "o-", ms=3,
                        label=f"m={m}, margin={margin:g}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("eps")
        ax.set_title(col)
    axes[0, 0].legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)


def save_residual_figure(u, problem, path) -> None:
    from .verify import _interior_operator_values

    pts, F, fvals, H = _interior_operator_values(u, problem)
    g = problem.grid
    if g.n == 1:
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        x = pts[:, 0]
        ax.plot(x, F - fvals, label="F(D2u, x) - f")
        ax.plot(x, H, label="H(Du)")
        ax.plot(x, np.maximum(F - fvals, H), "k--", lw=1, label="max (residual)")
        ax.axhline(0.0, color="gray", lw=0.5)
        ax.set_xlabel("x")
        ax.legend(frameon=False)
    else:
        fig, ax = plt.subplots(figsize=(5.6, 4.4))
        inner = tuple(m - 2 for m in g.shape)
        r = np.maximum(F - fvals, H).reshape(inner)
        pc = ax.pcolormesh(g.axis(0)[1:-1], g.axis(1)[1:-1], r.T, shading="nearest")
        fig.colorbar(pc, ax=ax)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        ax.set_aspect("equal")
        ax.set_title("max{F - f, H}")
    fig.suptitle(f"{problem.name}: pointwise residual")
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)


def save_mc_figure(rows, path) -> None:
    """rows: (label, mean, std_error, reference u value) per start point."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    xs = np.arange(len(rows))
    means = np.array([r[1] for r in rows])
    errs = 3 * np.array([r[2] for r in rows])
    refs = np.array([r[3] for r in rows])
    ax.errorbar(xs, means, yerr=errs, fmt="o", capsize=4, label="policy cost (mean +- 3 s.e.)")
    ax.plot(xs, refs, "k_", ms=16, label="u(x0)")
    ax.set_xticks(xs)
    ax.set_xticklabels([r[0] for r in rows], rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("cost")
    ax.legend(frameon=False)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
