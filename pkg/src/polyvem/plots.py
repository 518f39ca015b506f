"""Headless figure rendering for meshes and convergence tables.

The delimited table is the machine contract; these figures are the
human-readable companion written alongside it. Everything renders
through the Agg backend so the CLI works without a display.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import PolyCollection

from .mesh import PolygonalMesh
from .verify import ConvergenceTable


def convergence_figure(table: ConvergenceTable, path: str) -> str | None:
    """Log-log error-vs-h plot, one series per seminorm order.

    Series with a zero or negative entry are skipped (log axes); returns
    None without writing when nothing is plottable, e.g. the zero case.
    """
    if not table.rows:
        return None
    h = np.array([row.h for row in table.rows])
    n_series = len(table.rows[0].errors)
    fitted = table.fitted_slopes()

    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    plotted = 0
    for s in range(n_series):
        es = np.array([row.errors[s] for row in table.rows])
        if not np.all(es > 0.0):
            continue
        label = f"$e_{{{s}}}$"
        if fitted is not None and np.isfinite(fitted[s]):
            label += f"  (slope {fitted[s]:.2f})"
        ax.loglog(h, es, marker="o", label=label)
        plotted += 1
    if not plotted:
        plt.close(fig)
        return None

    _order_guide(ax, table, h)
    cfg = table.config
    ax.set_xlabel("mesh size $h$")
    ax.set_ylabel("broken seminorm error")
    ax.set_title(f"{table.case_name}: p={cfg.p} r={cfg.r} t={cfg.t}"
                 f" on {table.mesh_kind}")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _order_guide(ax, table: ConvergenceTable, h: np.ndarray) -> None:
    # dashed reference with the target energy rate, anchored at the
    # finest energy-norm point
    cfg = table.config
    s = cfg.p_eff
    es = np.array([row.errors[s] for row in table.rows])
    if not np.all(es > 0.0) or h.size < 2:
        return
    rate = cfg.r - cfg.p_eff + 1
    href = np.array([h[-1], h[0]])
    eref = es[-1] * (href / h[-1]) ** rate
    ax.loglog(href, eref, "k--", linewidth=0.8, alpha=0.6,
              label=f"$h^{{{rate}}}$ reference")


def mesh_figure(mesh: PolygonalMesh, path: str) -> str:
    """Filled-polygon rendering of the mesh."""
    polys = [mesh.vertices[list(cell)] for cell in mesh.cells]
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.add_collection(PolyCollection(polys, facecolors="#e8f0f7",
                                     edgecolors="#2a5d8f", linewidths=0.8))
    ax.autoscale()
    ax.set_aspect("equal")
    ax.set_title(f"{mesh.n_cells} cells, {mesh.n_vertices} vertices")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
