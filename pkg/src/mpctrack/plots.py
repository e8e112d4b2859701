"""File-rendered matplotlib figures accompanying the CSV/JSON artifacts.

Everything draws on the Agg backend and writes PNG files; nothing here is
interactive.  Two-dimensional sets are drawn from their vertex enumeration,
so figures silently skip sets that are not 2-D or not bounded.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

import numpy as np  # noqa: E402

from . import polytope  # noqa: E402


def _closed(verts):
    return np.vstack([verts, verts[:1]])


def draw_polygon(ax, poly, label=None, **kw):
    """Outline a bounded 2-D polytope; no-op for anything else."""
    try:
        verts = polytope.vertices_2d(poly)
    except Exception:
        return
    if verts.shape[0] < 2:
        return
    v = _closed(verts)
    ax.plot(v[:, 0], v[:, 1], label=label, **kw)


def save_state_space(path, trace, x_sp=None, sets=None):
    """Trajectory and artificial-reference path over the relevant sets."""
    if trace.x.shape[1] != 2:
        return False
    fig, ax = plt.subplots(figsize=(6.4, 5.6))
    for label, poly, style in sets or []:
        draw_polygon(ax, poly, label=label, **style)
    ax.plot(trace.x[:, 0], trace.x[:, 1], "-o", ms=2.5, lw=1.2,
            color="tab:blue", label="state")
    ax.plot(trace.x_a[:, 0], trace.x_a[:, 1], "-.", lw=1.2,
            color="tab:orange", label="artificial reference")
    ax.plot(trace.x[0, 0], trace.x[0, 1], "ko", ms=6, label="x(0)")
    if x_sp is not None:
        ax.plot(x_sp[0], x_sp[1], "r*", ms=12, label="setpoint")
    ax.set_xlabel("x_1")
    ax.set_ylabel("x_2")
    ax.legend(fontsize=8, loc="best")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def save_time_evolution(path, trace):
    """Outputs and the artificial reference against the setpoint, plus cost."""
    p = trace.y.shape[1]
    fig, axes = plt.subplots(p + 1, 1, figsize=(6.4, 2.0 * (p + 1)), sharex=True)
    axes = np.atleast_1d(axes)
    for i in range(p):
        ax = axes[i]
        ax.plot(trace.k, trace.y[:, i], "-", color="tab:blue", label=f"y_{i+1}")
        ax.plot(trace.k, trace.y_a[:, i], "--", color="tab:orange",
                label=f"ya_{i+1}")
        ax.plot(trace.k, trace.y_sp[:, i], "-.", color="tab:red",
                label=f"ysp_{i+1}")
        ax.legend(fontsize=7, loc="best")
        ax.grid(alpha=0.3)
    axes[-1].plot(trace.k, trace.value, "-", color="tab:green", label="cost")
    axes[-1].set_yscale("symlog", linthresh=1e-8)
    axes[-1].legend(fontsize=7)
    axes[-1].grid(alpha=0.3)
    axes[-1].set_xlabel("step k")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def save_gamma_sweep(path, rows):
    gammas = [r.gamma for r in rows]
    gaps = [max(r.gap, 1e-16) for r in rows]
    nu = rows[0].nu_norm if rows else None
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.semilogy(gammas, gaps, "-o", color="black", label="tracking-regulation gap")
    if nu is not None:
        ax.axvline(nu, color="tab:red", ls="--", lw=1.0,
                   label=f"multiplier norm {nu:.4g}")
    ax.set_xlabel("gamma")
    ax.set_ylabel("cost gap")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def save_compare(path, labels, points, verdicts):
    """Feasibility membership per configuration on a 2-D sample set."""
    if points.shape[0] == 0 or points.shape[1] != 2:
        return False
    ncfg = len(labels)
    fig, axes = plt.subplots(1, ncfg, figsize=(3.4 * ncfg, 3.4),
                             sharex=True, sharey=True)
    axes = np.atleast_1d(axes)
    for j, (lbl, ax) in enumerate(zip(labels, axes)):
        ok = verdicts[:, j]
        ax.plot(points[~ok, 0], points[~ok, 1], ".", ms=2, color="0.8")
        ax.plot(points[ok, 0], points[ok, 1], ".", ms=2.5, color="tab:blue")
        ax.set_title(lbl, fontsize=9)
        ax.set_xlabel("x_1")
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("x_2")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def save_sets(path, named_polys):
    """Overlay of 2-D sets (terminal projection, reachable states, ...)."""
    fig, ax = plt.subplots(figsize=(6.0, 5.2))
    drew = False
    styles = [dict(color="tab:blue", lw=1.5), dict(color="tab:orange", ls="--", lw=1.4),
              dict(color="tab:green", ls="-.", lw=1.3), dict(color="tab:red", ls=":", lw=1.3)]
    for (label, poly), style in zip(named_polys, styles * 4):
        before = len(ax.lines)
        draw_polygon(ax, poly, label=label, **style)
        drew = drew or len(ax.lines) > before
    if not drew:
        plt.close(fig)
        return False
    ax.set_xlabel("x_1")
    ax.set_ylabel("x_2")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True
