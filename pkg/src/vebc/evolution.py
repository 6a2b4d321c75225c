"""Implicit-midpoint evolution of the reduced system and related linear solves.

Each midpoint step is one application of the rate-(2/dt) resolvent: with
lam = 2/dt the midpoint state solves (lam I - L) x_mid = lam x_old (+ data),
and the new state is 2 x_mid - x_old.  Branch strains are eliminated
elementwise (3x3 blocks), so the only global solve is the symmetric velocity
Schur system, factorized once per (dt, boundary mode) pair.  The midpoint rule
makes the quadratic energy identity exact, which the energy module exploits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse.linalg as spla

from vebc.fem import DiscreteOperators, RSState, branch_resolvent_factors, schur_matrix

SourceLike = Union[None, np.ndarray, Callable[[float], np.ndarray]]


@dataclass
class EvolutionConfig:
    """Time grid, boundary mode and optional sources for one evolution run.

    The traction on the free boundary is -alpha*v + g_N; traction and volume
    sources are sampled at the step midpoints t_{k+1/2}.  Volume sources exist
    only for manufactured-solution testing.
    """

    dt: float
    steps: int
    alpha: int = 1
    traction_source: SourceLike = None
    volume_source_v: SourceLike = None
    volume_source_psi: SourceLike = None

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.steps < 1:
            raise ValueError(f"need at least one step, got {self.steps}")
        if self.alpha not in (-1, 0, 1):
            raise ValueError(f"boundary mode must be -1, 0 or +1, got {self.alpha}")
        for name in ("traction_source", "volume_source_v", "volume_source_psi"):
            src = getattr(self, name)
            if isinstance(src, np.ndarray) and src.shape[0] != self.steps:
                raise ValueError(
                    f"{name} has {src.shape[0]} samples, config has {self.steps} steps"
                )

    @property
    def T(self) -> float:
        return self.dt * self.steps

    @property
    def has_sources(self) -> bool:
        return any(
            s is not None
            for s in (self.traction_source, self.volume_source_v, self.volume_source_psi)
        )

    def sample(self, src: SourceLike, k: int) -> Optional[np.ndarray]:
        if src is None:
            return None
        t_mid = (k + 0.5) * self.dt
        return src(t_mid) if callable(src) else src[k]


@dataclass
class Trajectory:
    """Stored evolution history on the uniform grid t_k = k*dt.

    states_v[k], states_psi[k] hold the state at t_k; mid_v[k] is the nodal
    velocity at t_{k+1/2} as produced by the scheme (it equals the average of
    the neighbouring states exactly).  energy[k] logs the quadratic energy.
    """

    dt: float
    alpha: int
    states_v: np.ndarray
    states_psi: np.ndarray
    mid_v: np.ndarray
    energy: np.ndarray
    had_sources: bool = False

    @property
    def steps(self) -> int:
        return self.mid_v.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    @property
    def T(self) -> float:
        return self.dt * self.steps

    def state(self, k: int) -> RSState:
        return RSState(self.states_v[k].copy(), self.states_psi[k].copy())

    def midpoint_state(self, k: int) -> RSState:
        """State at t_{k+1/2}; exact midpoint average of the scheme."""
        return RSState(
            0.5 * (self.states_v[k] + self.states_v[k + 1]),
            0.5 * (self.states_psi[k] + self.states_psi[k + 1]),
        )

    @property
    def initial(self) -> RSState:
        return self.state(0)

    @property
    def final(self) -> RSState:
        return self.state(self.steps)


class RSSolver:
    """Resolvent and evolution driver for one assembled operator set.

    Factorized Schur matrices are cached per (rate, boundary mode) pair, so a
    whole trajectory costs one factorization plus one triangular solve per
    step.
    """

    def __init__(self, ops: DiscreteOperators):
        self.ops = ops
        self.material = ops.material
        self._factor_cache: dict = {}
        self._branch_cache: dict = {}

    def _factors(self, lam: float, alpha: int):
        key = (lam, alpha)
        if key not in self._factor_cache:
            B = schur_matrix(self.ops, self.material, lam, alpha).tocsc()
            self._factor_cache[key] = spla.splu(B)
        if lam not in self._branch_cache:
            self._branch_cache[lam] = branch_resolvent_factors(self.material, lam)
        return self._factor_cache[key], self._branch_cache[lam]

    def resolvent_solve(
        self,
        lam: float,
        f: Optional[np.ndarray] = None,
        omega: Optional[np.ndarray] = None,
        alpha: int = 1,
        g_N: Optional[np.ndarray] = None,
    ) -> RSState:
        """Solve (lam I - L) (v, psi) = (f, omega) with traction -alpha*v + g_N.

        f is a nodal field (n_nodes, 2); omega is (n_elements, n_branches, 3);
        either may be None (zero).  Returns the state; the branch strains are
        recovered elementwise as psi_j = R_j (e[v] + omega_j).
        """
        ops = self.ops
        if lam <= 0.0:
            raise ValueError(f"rate must be positive, got lam={lam}")
        lu, R = self._factors(lam, alpha)
        rhs = np.zeros(2 * ops.n_nodes)
        if f is not None:
            rhs += ops.mass_rho @ np.asarray(f).ravel()
        if g_N is not None:
            rhs += ops.boundary_mass_N @ np.asarray(g_N).ravel()
        if omega is not None:
            load = np.zeros((ops.n_elements, 3))
            for j, (stiff, _eta) in enumerate(self.material.branches):
                load += omega[:, j, :] @ (stiff.kelvin @ R[j]).T
            rhs -= ops.strain_adjoint(load).ravel()
        v = np.zeros(2 * ops.n_nodes)
        v[ops.free_dofs] = lu.solve(rhs[ops.free_dofs])
        v = v.reshape(ops.n_nodes, 2)
        ev = ops.strain_of(v)
        psi = np.zeros((ops.n_elements, self.material.n, 3))
        for j in range(self.material.n):
            rhs_j = ev if omega is None else ev + omega[:, j, :]
            psi[:, j, :] = rhs_j @ R[j].T
        return RSState(v, psi)

    def resolvent_residual(
        self,
        state: RSState,
        lam: float,
        f: Optional[np.ndarray] = None,
        omega: Optional[np.ndarray] = None,
        alpha: int = 1,
        g_N: Optional[np.ndarray] = None,
    ) -> tuple[float, float]:
        """Relative residuals of the two resolvent equations (weak v-equation first)."""
        ops = self.ops
        rhs = np.zeros(2 * ops.n_nodes)
        if f is not None:
            rhs += ops.mass_rho @ np.asarray(f).ravel()
        if g_N is not None:
            rhs += ops.boundary_mass_N @ np.asarray(g_N).ravel()
        lhs = lam * (ops.mass_rho @ state.v.ravel())
        lhs += ops.strain_adjoint(ops.total_branch_stress(state.psi)).ravel()
        lhs += alpha * (ops.boundary_mass_N @ state.v.ravel())
        fd = ops.free_dofs
        scale_v = max(np.abs(rhs[fd]).max(), np.abs(lhs[fd]).max(), 1e-300)
        res_v = np.abs((lhs - rhs)[fd]).max() / scale_v
        res_psi = 0.0
        scale_psi = 1e-300
        ev = ops.strain_of(state.v)
        for j, (stiff, eta) in enumerate(self.material.branches):
            rhs_j = ev.copy()
            if omega is not None:
                rhs_j += omega[:, j, :]
            lhs_j = lam * state.psi[:, j, :] + state.psi[:, j, :] @ (stiff.kelvin / eta).T
            res_psi = max(res_psi, np.abs(lhs_j - rhs_j).max())
            scale_psi = max(scale_psi, np.abs(rhs_j).max())
        return res_v, res_psi / scale_psi

    def step_midpoint(
        self,
        state: RSState,
        dt: float,
        alpha: int = 1,
        g_N: Optional[np.ndarray] = None,
        f_v: Optional[np.ndarray] = None,
        f_psi: Optional[np.ndarray] = None,
    ) -> tuple[RSState, RSState]:
        """One implicit-midpoint step; returns (new state, midpoint state)."""
        lam = 2.0 / dt
        f = lam * state.v if f_v is None else lam * state.v + f_v
        omega = lam * state.psi if f_psi is None else lam * state.psi + f_psi
        mid = self.resolvent_solve(lam, f=f, omega=omega, alpha=alpha, g_N=g_N)
        new = RSState(2.0 * mid.v - state.v, 2.0 * mid.psi - state.psi)
        return new, mid

    def evolve(self, state0: RSState, cfg: EvolutionConfig) -> Trajectory:
        """Apply step_midpoint cfg.steps times, recording states, midpoints, energies."""
        from vebc.energy import energy

        ops = self.ops
        n_steps = cfg.steps
        states_v = np.zeros((n_steps + 1, ops.n_nodes, 2))
        states_psi = np.zeros((n_steps + 1, ops.n_elements, self.material.n, 3))
        mid_v = np.zeros((n_steps, ops.n_nodes, 2))
        elog = np.zeros(n_steps + 1)
        state = RSState(ops.apply_dirichlet(state0.v), state0.psi.copy())
        states_v[0], states_psi[0] = state.v, state.psi
        elog[0] = energy(ops, state)
        for k in range(n_steps):
            state, mid = self.step_midpoint(
                state,
                cfg.dt,
                alpha=cfg.alpha,
                g_N=cfg.sample(cfg.traction_source, k),
                f_v=cfg.sample(cfg.volume_source_v, k),
                f_psi=cfg.sample(cfg.volume_source_psi, k),
            )
            states_v[k + 1], states_psi[k + 1] = state.v, state.psi
            mid_v[k] = mid.v
            elog[k + 1] = energy(ops, state)
        return Trajectory(
            dt=cfg.dt,
            alpha=cfg.alpha,
            states_v=states_v,
            states_psi=states_psi,
            mid_v=mid_v,
            energy=elog,
            had_sources=cfg.has_sources,
        )

    def apply_L(self, state: RSState, alpha: int = 1) -> RSState:
        """The discrete generator: weak velocity equation inverted against the mass."""
        ops = self.ops
        load = ops.strain_adjoint(ops.total_branch_stress(state.psi)).ravel()
        load += alpha * (ops.boundary_mass_N @ state.v.ravel())
        key = ("mass", 0)
        if key not in self._factor_cache:
            f = ops.free_dofs
            M = ops.mass_rho[np.ix_(f, f)].tocsc()
            self._factor_cache[key] = spla.splu(M)
        dv = np.zeros(2 * ops.n_nodes)
        dv[ops.free_dofs] = self._factor_cache[key].solve(-load[ops.free_dofs])
        ev = ops.strain_of(state.v)
        dpsi = np.zeros_like(state.psi)
        for j, (stiff, eta) in enumerate(self.material.branches):
            dpsi[:, j, :] = ev - state.psi[:, j, :] @ (stiff.kelvin / eta).T
        return RSState(dv.reshape(ops.n_nodes, 2), dpsi)


def l_preimage(solver: RSSolver, target: RSState) -> RSState:
    """Solve L (v, psi) = (target.v, target.psi) with the dissipative boundary built in.

    Eliminating the branch strains via psi_j = eta_j C_j^(-1) (e[v] - target.psi_j)
    leaves the symmetric positive definite velocity system
    (sum_j eta_j) (e[v], e[w]) + (v, w)_GammaN
        = (sum_j eta_j target.psi_j, e[w]) - (rho target.v, w).
    """
    ops = solver.ops
    material = solver.material
    etas = material.viscosities
    key = ("preimage",)
    if key not in solver._factor_cache:
        import scipy.sparse as sp

        middle = sp.kron(sp.diags(ops.areas * etas.sum()), sp.identity(3, format="csr"))
        A = ops.strain.T @ middle @ ops.strain + ops.boundary_mass_N
        f = ops.free_dofs
        solver._factor_cache[key] = spla.splu(A.tocsr()[np.ix_(f, f)].tocsc())
    load = np.einsum("j,ejk->ek", etas, target.psi)
    rhs = ops.strain_adjoint(load).ravel() - ops.mass_rho @ target.v.ravel()
    v = np.zeros(2 * ops.n_nodes)
    v[ops.free_dofs] = solver._factor_cache[key].solve(rhs[ops.free_dofs])
    v = v.reshape(ops.n_nodes, 2)
    ev = ops.strain_of(v)
    psi = np.zeros_like(target.psi)
    for j, (stiff, eta) in enumerate(material.branches):
        psi[:, j, :] = eta * ((ev - target.psi[:, j, :]) @ stiff.inv().T)
    return RSState(v, psi)


def reconstruct_ad(
    ops: DiscreteOperators,
    u0: np.ndarray,
    phi0: np.ndarray,
    traj: Trajectory,
    compat_tol: float = 1e-9,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rebuild the displacement-form variables (u, v, phi) from a trajectory.

    u is integrated by the trapezoidal rule (whose node averages coincide with
    the scheme's midpoints), and phi_j = e[u] - psi_j elementwise.  The
    supplied initial data must satisfy e[u0] - phi0_j = psi_j(0) per element.
    Returns (u, v, phi) with u of shape (N+1, n_nodes, 2) and phi of shape
    (N+1, n_elements, n_branches, 3).
    """
    e0 = ops.strain_of(u0)
    mismatch = np.abs(e0[:, None, :] - phi0 - traj.states_psi[0])
    worst = np.unravel_index(np.argmax(mismatch), mismatch.shape)
    if mismatch[worst] > compat_tol * max(1.0, np.abs(traj.states_psi[0]).max()):
        raise ValueError(
            "initial data incompatible with the trajectory: element %d, branch %d "
            "(|e[u0] - phi0 - psi(0)| = %.3e)" % (worst[0], worst[1], mismatch[worst])
        )
    n_steps = traj.steps
    u = np.zeros_like(traj.states_v)
    u[0] = u0
    for k in range(n_steps):
        u[k + 1] = u[k] + traj.dt * 0.5 * (traj.states_v[k] + traj.states_v[k + 1])
    eu = np.stack([ops.strain_of(u[k]) for k in range(n_steps + 1)])
    phi = eu[:, :, None, :] - traj.states_psi
    return u, traj.states_v.copy(), phi


def ad_residual(
    ops: DiscreteOperators, u: np.ndarray, phi: np.ndarray, dt: float
) -> float:
    """Max residual of eta_j d/dt phi_j = C_j (e[u] - phi_j) at interior grid nodes.

    Time derivatives by central differences; this measures the reconstruction
    against the continuum relation, so it decays at second order in dt.
    """
    material = ops.material
    n_steps = u.shape[0] - 1
    eu = np.stack([ops.strain_of(u[k]) for k in range(n_steps + 1)])
    res = 0.0
    for j, (stiff, eta) in enumerate(material.branches):
        dphi = (phi[2:, :, j, :] - phi[:-2, :, j, :]) / (2.0 * dt)
        sigma = (eu[1:-1] - phi[1:-1, :, j, :]) @ stiff.kelvin.T
        res = max(res, np.abs(eta * dphi - sigma).max())
    return res
