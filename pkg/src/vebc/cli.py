"""Experiment runner: every pipeline as a subcommand with reproducible outputs.

Subcommands: validate, simulate, decay, contraction, control, bvs.  Each
reads one TOML config, writes CSV/JSON artifacts (17 significant digits,
byte-identical across runs for a fixed config and seed) and PNG figures into
the output directory, and exits 0 only if all asserted tolerances pass
(1 on tolerance failure with a machine-readable failure JSON, 2 on config
errors).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from vebc import report
from vebc.bvs import partial_control, relaxation_stress, solve_bvs
from vebc.control import estimate_contraction, random_state, synthesize_control, verify_control
from vebc.energy import dissipation_residual, fit_decay, higher_energies
from vebc.evolution import EvolutionConfig, RSSolver
from vebc.expressions import eval_kelvin_field, eval_vector_field
from vebc.fem import RSState, assemble_operators
from vebc.mesh import build_unit_square_mesh
from vebc.tensors import branch_exponential, default_material, load_material, validate_material


class ConfigError(Exception):
    pass


def _load_config(path) -> dict:
    import sys as _sys

    if _sys.version_info >= (3, 11):
        import tomllib as toml
    else:
        import tomli as toml
    try:
        with open(path, "rb") as fh:
            return toml.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except toml.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def _steps_from(time_cfg: dict) -> tuple[float, int]:
    dt = float(time_cfg.get("dt", 1e-2))
    T = float(time_cfg.get("T", 1.0))
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-12 * max(T, 1.0):
        raise ConfigError(f"dt={dt} does not divide T={T} to 1 part in 1e12")
    return dt, steps


class Experiment:
    """Shared setup: mesh, material, operators, output directory."""

    def __init__(self, cfg: dict, config_dir: str, outdir: str | None):
        mesh_cfg = cfg.get("mesh", {})
        self.mesh = build_unit_square_mesh(
            int(mesh_cfg.get("m", 4)), mesh_cfg.get("dirichlet_side", "left")
        )
        mat_cfg = cfg.get("material", {})
        if "file" in mat_cfg:
            path = mat_cfg["file"]
            if not os.path.isabs(path):
                path = os.path.join(config_dir, path)
            if not os.path.exists(path):
                raise ConfigError(f"material file not found: {path}")
            self.material = load_material(path)
        else:
            self.material = default_material(int(mat_cfg.get("n", 2)))
        self.ops = assemble_operators(self.mesh, self.material)
        self.solver = RSSolver(self.ops)
        out_cfg = cfg.get("output", {})
        self.outdir = outdir or out_cfg.get("dir", "out")
        self.figures = bool(out_cfg.get("figures", True))
        os.makedirs(self.outdir, exist_ok=True)
        self.cfg = cfg

    def path(self, name: str) -> str:
        return os.path.join(self.outdir, name)

    def centroids(self) -> np.ndarray:
        return self.mesh.nodes[self.mesh.triangles].mean(axis=1)

    def state_from_cfg(self, section: dict, v_key: str, psi_key: str, seed_key: str = "seed",
                       default_zero: bool = False) -> RSState:
        ops = self.ops
        if v_key in section or psi_key in section:
            v = np.zeros((ops.n_nodes, 2))
            psi = np.zeros((ops.n_elements, ops.n_branches, 3))
            if v_key in section:
                v = eval_vector_field(list(section[v_key]), self.mesh.nodes)
            if psi_key in section:
                k = eval_kelvin_field(list(section[psi_key]), self.centroids())
                psi = np.repeat(k[:, None, :], ops.n_branches, axis=1)
            return RSState(ops.apply_dirichlet(v), psi)
        if default_zero:
            return ops.zero_state()
        rng = np.random.default_rng(int(section.get(seed_key, 0)))
        return random_state(self.solver, rng, smooth=True)


def cmd_validate(exp: Experiment) -> list[str]:
    failures = []
    rep = validate_material(exp.material)
    mesh = exp.mesh
    ops = exp.ops
    checks = {}
    if not rep.ok:
        failures += list(rep.violations)
    checks["alpha0"] = rep.alpha0
    checks["beta0"] = rep.beta0
    checks["gamma0"] = rep.gamma0
    area_err = abs(mesh.triangle_areas().sum() - 1.0)
    checks["area_error"] = area_err
    if area_err > 1e-12:
        failures.append(f"triangle areas sum to 1 within 1e-12: got error {area_err:.3e}")
    rho_e = exp.material.rho_on_elements(mesh.n_triangles)
    mass_err = abs(ops.mass_rho.sum() / 2.0 - (rho_e * mesh.triangle_areas()).sum())
    checks["mass_sum_error"] = mass_err
    if mass_err > 1e-12:
        failures.append(f"mass matrix row sums integrate the density: error {mass_err:.3e}")
    const = np.ones((mesh.n_nodes, 2))
    strain_err = float(np.abs(ops.strain_of(const)).max())
    checks["translation_strain_error"] = strain_err
    if strain_err > 1e-12:
        failures.append(f"strain annihilates rigid translations: error {strain_err:.3e}")
    # discrete Korn: the constrained stiffness form is positive definite
    import scipy.sparse as sp

    K = sum(np.asarray(s) for s in exp.material.stiffnesses)
    middle = sp.kron(sp.diags(ops.areas), sp.csr_matrix(K))
    A = (ops.strain.T @ middle @ ops.strain).toarray()[np.ix_(ops.free_dofs, ops.free_dofs)]
    korn_min = float(np.linalg.eigvalsh(A)[0])
    checks["korn_min_eigenvalue"] = korn_min
    if korn_min <= 0.0:
        failures.append(f"discrete Korn positivity failed: min eigenvalue {korn_min:.3e}")
    rng = np.random.default_rng(0)
    w = rng.standard_normal((ops.n_nodes, 2))
    tau = rng.standard_normal((ops.n_elements, 3))
    lhs = float(np.einsum("e,ek,ek->", ops.areas, ops.strain_of(w), tau))
    rhs = float(np.sum(w * ops.strain_adjoint(tau)))
    adj_err = abs(lhs - rhs) / max(abs(lhs), 1.0)
    checks["strain_adjoint_error"] = adj_err
    if adj_err > 1e-12:
        failures.append(f"strain/adjoint consistency: relative error {adj_err:.3e}")
    from vebc.fem import schur_matrix

    fidx = ops.free_dofs
    Bp = schur_matrix(ops, exp.material, lam=1.0, alpha=1).toarray()
    B0 = schur_matrix(ops, exp.material, lam=1.0, alpha=0).toarray()
    bm = ops.boundary_mass_N.toarray()[np.ix_(fidx, fidx)]
    schur_err = float(np.abs((Bp - B0) - bm).max())
    checks["schur_boundary_identity_error"] = schur_err
    if schur_err > 1e-14 * max(np.abs(Bp).max(), 1.0):
        failures.append(f"boundary-mode Schur identity: error {schur_err:.3e}")
    report.write_json(exp.path("validate.json"), {"checks": checks, "failures": failures})
    if exp.figures:
        report.fig_mesh(mesh, exp.path("mesh.png"))
    with open(exp.path("mesh.txt"), "w", encoding="utf-8") as fh:
        fh.write(mesh.dump())
    return failures


def cmd_simulate(exp: Experiment) -> list[str]:
    failures = []
    sim = exp.cfg.get("simulate", {})
    dt, steps = _steps_from(exp.cfg.get("time", {}))
    alpha = int(sim.get("alpha", 1))
    state0 = exp.state_from_cfg(sim, "v0", "psi0")
    traj = exp.solver.evolve(state0, EvolutionConfig(dt=dt, steps=steps, alpha=alpha))
    series = higher_energies(exp.ops, traj)
    report.export_energy_csv(exp.path("energy.csv"), series)
    report.export_trajectory_csv(
        exp.path("trajectory.csv"), traj, snapshot_times=sim.get("snapshot_times", ())
    )
    out = {"E0": float(traj.energy[0]), "E_final": float(traj.energy[-1]), "alpha": alpha}
    if alpha == 1:
        res = dissipation_residual(exp.ops, traj)
        out["dissipation_residual_max"] = float(np.abs(res).max())
        tol = 1e-11 * max(traj.energy[0], 1e-300)
        if np.abs(res).max() > tol:
            failures.append(
                "per-step energy identity residual %.3e exceeds 1e-11*E0=%.3e"
                % (np.abs(res).max(), tol)
            )
    report.write_json(exp.path("simulate.json"), out)
    if exp.figures:
        report.fig_energy(series, exp.path("energy.png"))
    return failures


def cmd_decay(exp: Experiment) -> list[str]:
    failures = []
    dec = exp.cfg.get("decay", {})
    dt, steps = _steps_from(exp.cfg.get("time", {"dt": 1e-2, "T": 20.0}))
    seeds = dec.get("seeds", [0, 1, 2, 3, 4])
    results = []
    for seed in seeds:
        rng = np.random.default_rng(int(seed))
        state0 = random_state(exp.solver, rng, smooth=True)
        traj = exp.solver.evolve(state0, EvolutionConfig(dt=dt, steps=steps, alpha=1))
        series = higher_energies(exp.ops, traj)
        repE = fit_decay(series["t"], series["E"])
        repB = fit_decay(series["t"], series["E_bar"])
        results.append({"seed": int(seed), "E": repE.to_dict(), "E_bar": repB.to_dict()})
        for label, r in (("E", repE), ("E_bar", repB)):
            if not (r.a4_hat > 0.0):
                failures.append(f"seed {seed}: fitted {label} rate {r.a4_hat:.4f} is not positive")
            if r.r_squared < 0.99:
                failures.append(f"seed {seed}: {label} fit r2={r.r_squared:.4f} < 0.99")
        if seed == seeds[0]:
            report.export_energy_csv(exp.path("decay_energy.csv"), series)
            if exp.figures:
                report.fig_decay(series["t"], series["E"], repE, exp.path("decay_E.png"), label="E")
                report.fig_decay(
                    series["t"], series["E_bar"], repB, exp.path("decay_Ebar.png"), label="E_bar"
                )
    report.write_json(exp.path("decay.json"), {"fits": results, "failures": failures})
    return failures


def cmd_contraction(exp: Experiment) -> list[str]:
    failures = []
    con = exp.cfg.get("contraction", {})
    dt = float(exp.cfg.get("time", {}).get("dt", 1e-2))
    T_values = [float(t) for t in con.get("T_values", [1.0, 2.0, 4.0, 8.0])]
    probes = int(con.get("probes", 4))
    iterations = int(con.get("iterations", 2))
    seed = int(con.get("seed", 0))
    rhos = []
    rows = []
    for T in T_values:
        est = estimate_contraction(
            exp.solver, dt, int(round(T / dt)), probes=probes, iterations=iterations, seed=seed
        )
        rhos.append(est.rho_hat)
        rows.append((T, est.rho_hat, est.one_step_max))
    report.write_csv(exp.path("contraction.csv"), ["T", "rho_hat", "one_step_max"], rows)
    for a, b, Ta, Tb in zip(rhos, rhos[1:], T_values, T_values[1:]):
        if b > a * 1.05:
            failures.append(
                f"rho_hat increased beyond 5%% noise from T={Ta} ({a:.3e}) to T={Tb} ({b:.3e})"
            )
    if rhos[-1] >= 0.9:
        failures.append(f"rho_hat({T_values[-1]}) = {rhos[-1]:.3f} >= 0.9")
    report.write_json(
        exp.path("contraction.json"),
        {
            "T_values": T_values,
            "rho_hat": rhos,
            "probes": probes,
            "iterations": iterations,
            "method": "random-probe power estimate (lower-bound style, not a proven norm)",
            "failures": failures,
        },
    )
    if exp.figures:
        report.fig_contraction(T_values, rhos, exp.path("contraction.png"))
    return failures


def cmd_control(exp: Experiment) -> list[str]:
    failures = []
    con = exp.cfg.get("control", {})
    dt, steps = _steps_from(exp.cfg.get("time", {"dt": 1e-2, "T": 2.0}))
    tol = float(con.get("tol", 1e-8))
    f_section = {"v0": con.get("f1"), "psi0": con.get("f2"), "seed": int(con.get("seed", 0))}
    f_section = {k: v for k, v in f_section.items() if v is not None}
    f = exp.state_from_cfg(f_section, "v0", "psi0")
    g_section = {"v0": con.get("g1"), "psi0": con.get("g2"), "seed": int(con.get("seed", 0)) + 1}
    g_section = {k: v for k, v in g_section.items() if v is not None}
    g = exp.state_from_cfg(g_section, "v0", "psi0")
    est = estimate_contraction(exp.solver, dt, steps, probes=4, iterations=2,
                               seed=int(con.get("seed", 0)))
    res = synthesize_control(exp.solver, f, g, dt, steps, tol=tol)
    vrep, _ = verify_control(exp.solver, res.xi, f, g, res, dt, steps)
    report.export_control_csv(exp.path("control.csv"), exp.mesh, res.xi, dt)
    out = res.to_report(rho_hat=est.rho_hat)
    out["verification"] = vrep.to_dict()
    report.write_json(exp.path("control.json"), out)
    if res.terminal_error > 1e-9:
        failures.append(f"terminal error {res.terminal_error:.3e} > 1e-9")
    if res.initial_error > max(1e-6, 10 * tol):
        failures.append(f"initial error {res.initial_error:.3e} > {max(1e-6, 10 * tol):.1e}")
    if exp.figures:
        t_mid = (np.arange(steps) + 0.5) * dt
        report.fig_control(t_mid, res.xi, res, exp.path("control.png"))
    return failures


def cmd_bvs(exp: Experiment) -> list[str]:
    failures = []
    bcfg = exp.cfg.get("bvs", {})
    dt, steps = _steps_from(exp.cfg.get("time", {"dt": 1e-2, "T": 2.0}))
    tol = float(bcfg.get("tol", 1e-10))
    nodes = exp.mesh.nodes

    # model-equivalence study: the two solver routes agree at second order
    u0 = eval_vector_field(list(bcfg.get("u0", ["sin(pi*x)*y", "x*(1-y)"])), nodes)
    v0 = eval_vector_field(list(bcfg.get("v0", ["x*y", "cos(pi*y)*x"])), nodes)
    levels = [float(d) for d in bcfg.get("dt_levels", [2e-2, 1e-2, 5e-3])]
    T_eq = float(bcfg.get("T_equivalence", 1.0))
    diffs = []
    for d in levels:
        n = int(round(T_eq / d))
        ad = solve_bvs(exp.solver, u0, v0, d, n, alpha=1, backend="ad")
        direct = solve_bvs(exp.solver, u0, v0, d, n, alpha=1, backend="direct")
        diffs.append(float(np.linalg.norm(ad.u[-1] - direct.u[-1]) / np.linalg.norm(ad.u[-1])))
    orders = [float(np.log2(diffs[i] / diffs[i + 1])) for i in range(len(diffs) - 1)]
    for o in orders:
        if not (1.7 <= o <= 2.3):
            failures.append(f"backend-equivalence order {o:.2f} outside 2.0 +/- 0.3")
    report.write_csv(
        exp.path("bvs_equivalence.csv"), ["dt", "terminal_u_rel_diff"], zip(levels, diffs)
    )

    # relaxation-kernel check against the closed form for constant strain
    e0 = np.array([1.0, 0.0, 0.0])
    dker = float(bcfg.get("kernel_dt", 1e-3))
    Tker = float(bcfg.get("kernel_T", 1.0))
    K = int(round(Tker / dker))
    hist = np.tile(e0, (K + 1, 1, 1))
    sig = relaxation_stress(exp.material, dker, hist)[0]
    closed = sum(
        (stiff.kelvin @ branch_exponential(Tker, eta, stiff)) @ e0
        for stiff, eta in exp.material.branches
    )
    closed0 = sum(stiff.kelvin @ e0 for stiff, _ in exp.material.branches)
    kernel_err = float(np.abs(sig - closed).max() / np.abs(closed0).max())
    if kernel_err > 1e-6:
        failures.append(f"kernel quadrature error {kernel_err:.3e} > 1e-6")

    # partial controllability of the displacement velocity
    f1 = eval_vector_field(list(bcfg.get("f1", ["sin(pi*x)*y", "x*y"])), nodes)
    g1 = eval_vector_field(list(bcfg.get("g1", ["x*(1-y)", "sin(pi*y)*x"])), nodes)
    u_con = None
    if "u_con" in bcfg:
        u_con = eval_vector_field(list(bcfg["u_con"]), nodes)
    pc = partial_control(exp.solver, f1, g1, dt, steps, u_con=u_con, tol=tol)
    bound = max(1e-8, 10 * tol)
    if pc.v_end_error_initial > bound:
        failures.append(f"initial velocity error {pc.v_end_error_initial:.3e} > {bound:.1e}")
    if pc.v_end_error_terminal > bound:
        failures.append(f"terminal velocity error {pc.v_end_error_terminal:.3e} > {bound:.1e}")
    if u_con is not None and pc.ucon_strain_error > 1e-9:
        failures.append(f"start-displacement strain error {pc.ucon_strain_error:.3e} > 1e-9")
    out = pc.to_report()
    out["kernel_error"] = kernel_err
    out["equivalence_orders"] = orders
    out["failures"] = failures
    report.write_json(exp.path("bvs.json"), out)
    report.export_control_csv(exp.path("bvs_control.csv"), exp.mesh, pc.control.xi, dt)
    resolve = solve_bvs(
        exp.solver, pc.u_tilde0, f1, dt, steps, alpha=0, traction_source=pc.control.xi,
        backend="direct",
    )
    report.export_bvs_csv(
        exp.path("bvs_trajectory.csv"), resolve,
        snapshot_times=bcfg.get("snapshot_times", (0.0, dt * steps)),
    )
    if exp.figures:
        ts = [k * dker for k in range(K + 1)]
        closed_t = [
            np.abs(
                sum(
                    (stiff.kelvin @ branch_exponential(t, eta, stiff)) @ e0
                    for stiff, eta in exp.material.branches
                )
            ).max()
            for t in ts
        ]
        report.fig_bvs(ts, [closed_t], exp.path("bvs_kernel.png"), labels=("|closed-form stress|",))
        report.fig_contraction(levels, diffs, exp.path("bvs_equivalence.png"))
    return failures


_COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "decay": cmd_decay,
    "contraction": cmd_contraction,
    "control": cmd_control,
    "bvs": cmd_bvs,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vebc",
        description="Extended-Maxwell viscoelasticity: simulation, decay diagnostics "
        "and boundary-control synthesis.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="TOML experiment configuration")
    parser.add_argument("--outdir", default=None, help="override the output directory")
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        exp = Experiment(cfg, os.path.dirname(os.path.abspath(args.config)), args.outdir)
        failures = _COMMANDS[args.command](exp)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if failures:
        report.write_json(
            os.path.join(exp.outdir, "failures.json"),
            {"command": args.command, "failures": failures},
        )
        for f in failures:
            print(f"FAIL: {f}", file=sys.stderr)
        return 1
    print(f"{args.command}: all asserted tolerances passed; artifacts in {exp.outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
