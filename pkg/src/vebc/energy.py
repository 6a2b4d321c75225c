"""Energy functionals, the exact per-step dissipation identity, and decay fits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from vebc.fem import DiscreteOperators, RSState

if TYPE_CHECKING:
    from vebc.evolution import Trajectory


def energy(ops: DiscreteOperators, state: RSState) -> float:
    """E = (1/2) v.M_rho.v + (1/2) sum_j sum_elements area (C_j psi_j).psi_j.

    Nonnegative; zero exactly for the zero state (SPD mass + strong convexity).
    """
    vflat = state.v.ravel()
    e = 0.5 * float(vflat @ (ops.mass_rho @ vflat))
    for j, (stiff, _eta) in enumerate(ops.material.branches):
        spj = state.psi[:, j, :]
        e += 0.5 * float(np.einsum("e,ek,ek->", ops.areas, spj @ stiff.kelvin.T, spj))
    return e


def enorm(ops: DiscreteOperators, state: RSState) -> float:
    """The H-norm sqrt(2 E); all contraction and error statements use it."""
    return float(np.sqrt(max(2.0 * energy(ops, state), 0.0)))


def boundary_energy_rate(ops: DiscreteOperators, v: np.ndarray) -> float:
    """||v||^2 on the traction boundary (the boundary dissipation channel)."""
    vflat = np.asarray(v).ravel()
    return float(vflat @ (ops.boundary_mass_N @ vflat))


def viscous_energy_rate(ops: DiscreteOperators, psi: np.ndarray) -> float:
    """sum_j (1/eta_j) ||C_j psi_j||^2 with element-area weights."""
    out = 0.0
    for j, (stiff, eta) in enumerate(ops.material.branches):
        cpsi = psi[:, j, :] @ stiff.kelvin.T
        out += float(np.einsum("e,ek,ek->", ops.areas, cpsi, cpsi)) / eta
    return out


def dissipation_residual(ops: DiscreteOperators, traj: "Trajectory") -> np.ndarray:
    """Per-step residual of the exact discrete energy identity.

    For the dissipative boundary mode without sources each midpoint step
    satisfies
        (E[k+1] - E[k])/dt = - sum_j (1/eta_j) ||C_j psi_j^(k+1/2)||^2
                             - ||v^(k+1/2)||^2_GammaN
    to solver roundoff.  Raises if the trajectory was produced with a
    different boundary mode or with sources.
    """
    if traj.alpha != 1:
        raise ValueError(f"dissipation identity requires boundary mode +1, got {traj.alpha}")
    if traj.had_sources:
        raise ValueError("dissipation identity requires a source-free trajectory")
    res = np.zeros(traj.steps)
    for k in range(traj.steps):
        psi_mid = 0.5 * (traj.states_psi[k] + traj.states_psi[k + 1])
        v_mid = traj.mid_v[k]
        rate = -viscous_energy_rate(ops, psi_mid) - boundary_energy_rate(ops, v_mid)
        res[k] = (traj.energy[k + 1] - traj.energy[k]) / traj.dt - rate
    return res


def strain_rate_dissipation(ops: DiscreteOperators, traj: "Trajectory", k: int) -> float:
    """Equivalent dissipation form sum_j eta_j ||e[v] - d/dt psi_j||^2 at midpoint k."""
    v_mid = traj.mid_v[k]
    ev = ops.strain_of(v_mid)
    out = 0.0
    for j, (_stiff, eta) in enumerate(ops.material.branches):
        dpsi = (traj.states_psi[k + 1, :, j, :] - traj.states_psi[k, :, j, :]) / traj.dt
        diff = ev - dpsi
        out += eta * float(np.einsum("e,ek,ek->", ops.areas, diff, diff))
    return out


def higher_energies(
    ops: DiscreteOperators, traj: "Trajectory", c_amend: float = 1e-2
) -> dict[str, np.ndarray]:
    """Time series of E, the derivative-augmented energy, the cross term and its amendment.

    The time derivatives entering E_bar are central differences of the stored
    trajectory (one-sided at the ends).  f_E = (sum_j C_j psi_j, e[v]);
    E_tilde = E_bar + c_amend * f_E with a configurable small constant.
    """
    n = traj.steps
    if n < 2:
        raise ValueError("need at least 3 states to difference the trajectory")
    dt = traj.dt
    E = traj.energy.copy()
    dv = np.zeros_like(traj.states_v)
    dpsi = np.zeros_like(traj.states_psi)
    dv[1:-1] = (traj.states_v[2:] - traj.states_v[:-2]) / (2 * dt)
    dpsi[1:-1] = (traj.states_psi[2:] - traj.states_psi[:-2]) / (2 * dt)
    dv[0] = (traj.states_v[1] - traj.states_v[0]) / dt
    dv[-1] = (traj.states_v[-1] - traj.states_v[-2]) / dt
    dpsi[0] = (traj.states_psi[1] - traj.states_psi[0]) / dt
    dpsi[-1] = (traj.states_psi[-1] - traj.states_psi[-2]) / dt
    E_rate = np.array([energy(ops, RSState(dv[k], dpsi[k])) for k in range(n + 1)])
    f_E = np.zeros(n + 1)
    for k in range(n + 1):
        stress = ops.total_branch_stress(traj.states_psi[k])
        ev = ops.strain_of(traj.states_v[k])
        f_E[k] = float(np.einsum("e,ek,ek->", ops.areas, stress, ev))
    E_bar = E + E_rate
    return {
        "t": traj.times,
        "E": E,
        "E_bar": E_bar,
        "f_E": f_E,
        "E_tilde": E_bar + c_amend * f_E,
    }


@dataclass(frozen=True)
class DecayReport:
    """Fitted exponential decay of a positive time series on a window."""

    a4_hat: float
    prefactor_hat: float
    r_squared: float
    window: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "a4_hat": self.a4_hat,
            "prefactor_hat": self.prefactor_hat,
            "r_squared": self.r_squared,
            "window": list(self.window),
        }


def fit_decay(
    t: np.ndarray, values: np.ndarray, window: tuple[float, float] | None = None
) -> DecayReport:
    """Least-squares line through (t, log value); a4_hat is minus the slope.

    The default window [T/2, T] skips transient behaviour.  The prefactor is
    exp(intercept) / value at the first sample, matching value(t) ~
    prefactor * value(0) * exp(-a4_hat t).
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is None:
        window = (0.5 * t[-1], t[-1])
    lo, hi = window
    mask = (t >= lo) & (t <= hi)
    if mask.sum() < 2:
        raise ValueError(f"window {window} selects fewer than two samples")
    if (values[mask] <= 0.0).any():
        raise ValueError("series has nonpositive values inside the fit window")
    tw = t[mask]
    yw = np.log(values[mask])
    A = np.stack([tw, np.ones_like(tw)], axis=1)
    coef, *_ = np.linalg.lstsq(A, yw, rcond=None)
    slope, intercept = coef
    fitted = A @ coef
    ss_res = float(((yw - fitted) ** 2).sum())
    ss_tot = float(((yw - yw.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return DecayReport(
        a4_hat=float(-slope),
        prefactor_hat=float(np.exp(intercept) / values[0]),
        r_squared=float(min(r2, 1.0)),
        window=(float(lo), float(hi)),
    )
