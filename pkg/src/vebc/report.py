"""Deterministic CSV/JSON writers and the figure rendering of the report path.

All floating-point CSV output is printed with 17 significant digits so that
identical configs and seeds produce byte-identical files.  Figures are
rendered beside the delimited output, one PNG per view.
"""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_json(path, obj: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _save(fig, path):
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def fig_mesh(mesh, path) -> None:
    """Triangulation with the clamped side highlighted."""
    from vebc.mesh import DIRICHLET

    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    ax.triplot(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles, lw=0.7, color="0.55")
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        color = "tab:red" if tag == DIRICHLET else "tab:blue"
        ax.plot(mesh.nodes[[a, b], 0], mesh.nodes[[a, b], 1], color=color, lw=2.2)
    ax.plot([], [], color="tab:red", lw=2.2, label="clamped")
    ax.plot([], [], color="tab:blue", lw=2.2, label="traction")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_aspect("equal")
    ax.set_title("mesh and boundary split")
    _save(fig, path)


def fig_energy(series: dict, path) -> None:
    """Energy histories on a log axis."""
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    t = series["t"]
    for key in ("E", "E_bar", "E_tilde"):
        if key in series:
            vals = np.maximum(series[key], 1e-300)
            ax.semilogy(t, vals, label=key)
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)


def fig_decay(t, values, report, path, label="E") -> None:
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    ax.semilogy(t, np.maximum(values, 1e-300), label=label)
    lo, hi = report.window
    tw = np.linspace(lo, hi, 50)
    fit = report.prefactor_hat * values[0] * np.exp(-report.a4_hat * tw)
    ax.semilogy(tw, fit, "--", label=f"fit: rate {report.a4_hat:.3f}, r2 {report.r_squared:.4f}")
    ax.axvspan(lo, hi, alpha=0.12, color="tab:green")
    ax.set_xlabel("t")
    ax.set_ylabel(label)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)


def fig_contraction(Ts, rhos, path) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.semilogy(Ts, rhos, "o-")
    ax.axhline(1.0, color="0.4", ls=":")
    ax.set_xlabel("horizon T")
    ax.set_ylabel("contraction estimate")
    ax.grid(alpha=0.3)
    _save(fig, path)


def fig_control(times_mid, xi, result, path) -> None:
    """Control magnitude over time plus the Neumann term decay."""
    fig, axes = plt.subplots(1, 2, figsize=(8.6, 3.4))
    mag = np.sqrt((xi**2).sum(axis=2)).max(axis=1)
    axes[0].plot(times_mid, mag)
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("max |xi| over boundary nodes")
    axes[0].grid(alpha=0.3)
    if result.term_norms is not None:
        axes[1].semilogy(np.arange(1, len(result.term_norms) + 1), result.term_norms, "o-")
        axes[1].set_xlabel("series term")
        axes[1].set_ylabel("term energy norm")
        axes[1].grid(alpha=0.3)
    _save(fig, path)


def fig_bvs(times, diff_series, path, labels=("backend difference",)) -> None:
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    if np.ndim(diff_series[0]) == 0:
        diff_series = [diff_series]
    for series, label in zip(diff_series, labels):
        ax.semilogy(times, np.maximum(np.asarray(series), 1e-300), label=label)
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)


def export_energy_csv(path, series: dict) -> None:
    """Columns t, E, E_bar, f_E, E_tilde."""
    rows = zip(series["t"], series["E"], series["E_bar"], series["f_E"], series["E_tilde"])
    write_csv(path, ["t", "E", "E_bar", "f_E", "E_tilde"], rows)


def export_trajectory_csv(path, traj, snapshot_times=()) -> None:
    """Columns t, E; optional state snapshot files next to the main CSV."""
    write_csv(path, ["t", "E"], zip(traj.times, traj.energy))
    base, ext = os.path.splitext(path)
    for ts in snapshot_times:
        k = int(round(ts / traj.dt))
        k = min(max(k, 0), traj.steps)
        rows = [
            (i, traj.states_v[k, i, 0], traj.states_v[k, i, 1])
            for i in range(traj.states_v.shape[1])
        ]
        write_csv(f"{base}_v_t{ts:g}{ext}", ["node", "vx", "vy"], rows)
        psi = traj.states_psi[k]
        rows = [
            (e, j, psi[e, j, 0], psi[e, j, 1], psi[e, j, 2])
            for e in range(psi.shape[0])
            for j in range(psi.shape[1])
        ]
        write_csv(f"{base}_psi_t{ts:g}{ext}", ["element", "branch", "k1", "k2", "k3"], rows)


def export_control_csv(path, mesh, xi, dt) -> None:
    """Columns t_mid, node_id, xi_x, xi_y restricted to traction-boundary nodes."""
    nn = mesh.neumann_nodes()
    rows = []
    for k in range(xi.shape[0]):
        t_mid = (k + 0.5) * dt
        for i in nn:
            rows.append((t_mid, i, xi[k, i, 0], xi[k, i, 1]))
    write_csv(path, ["t_mid", "node_id", "xi_x", "xi_y"], rows)


def export_bvs_csv(path, bvs_traj, snapshot_times=()) -> None:
    """Columns t plus nodal u and v at requested times (wide per-node files)."""
    write_csv(path, ["t", "E"], zip(bvs_traj.times, bvs_traj.energy))
    base, ext = os.path.splitext(path)
    for ts in snapshot_times:
        k = int(round(ts / bvs_traj.dt))
        k = min(max(k, 0), bvs_traj.steps)
        rows = [
            (i, bvs_traj.u[k, i, 0], bvs_traj.u[k, i, 1], bvs_traj.v[k, i, 0], bvs_traj.v[k, i, 1])
            for i in range(bvs_traj.u.shape[1])
        ]
        write_csv(f"{base}_uv_t{ts:g}{ext}", ["node", "ux", "uy", "vx", "vy"], rows)
