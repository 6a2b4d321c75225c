"""Dense brute-force counterparts of the sparse solves, for tiny meshes.

Every linear solve in the package (resolvent, midpoint step, generator
preimage, operator columns) can be cross-checked on small meshes against a
dense factorization of the fully assembled system.  States are packed as
[velocity free dofs, all branch strains] for this purpose.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from vebc.fem import DiscreteOperators, RSState


def state_dim(ops: DiscreteOperators) -> int:
    return len(ops.free_dofs) + 3 * ops.n_elements * ops.n_branches


def pack_state(ops: DiscreteOperators, state: RSState) -> np.ndarray:
    return np.concatenate([state.v.ravel()[ops.free_dofs], state.psi.ravel()])


def unpack_state(ops: DiscreteOperators, x: np.ndarray) -> RSState:
    nf = len(ops.free_dofs)
    v = np.zeros(2 * ops.n_nodes)
    v[ops.free_dofs] = x[:nf]
    psi = x[nf:].reshape(ops.n_elements, ops.n_branches, 3)
    return RSState(v.reshape(ops.n_nodes, 2), psi)


def h_gram(ops: DiscreteOperators) -> sp.csr_matrix:
    """Gram matrix of the H-inner product on packed states.

    (V, V')_H = v.M_rho.v' + sum_j area-weighted (C_j psi_j, psi_j').
    """
    f = ops.free_dofs
    Mv = ops.mass_rho[np.ix_(f, f)]
    branch_blocks = sla.block_diag(*[stiff.kelvin for stiff, _ in ops.material.branches])
    Mpsi = sp.kron(sp.diags(ops.areas), sp.csr_matrix(branch_blocks))
    return sp.block_diag([Mv, Mpsi], format="csr")


def dense_resolvent_matrix(
    ops: DiscreteOperators, lam: float, alpha: int
) -> tuple[np.ndarray, np.ndarray]:
    """Dense mass-weighted matrix of (lam I - L) on packed states.

    Returns (A, W) with A x = W b, where b packs the data (f, omega) and W
    applies the mass weighting of the right-hand side:
        velocity rows: lam M v + E^T A sum_j C_j psi_j + alpha M_Gamma v = M f (+ M_Gamma g)
        strain rows:   lam psi_j + (C_j/eta_j) psi_j - e[v] = omega_j.
    """
    f = ops.free_dofs
    nf = len(f)
    npsi = 3 * ops.n_elements * ops.n_branches
    dim = nf + npsi
    A = np.zeros((dim, dim))
    Mv = ops.mass_rho.toarray()[np.ix_(f, f)]
    Bv = ops.boundary_mass_N.toarray()[np.ix_(f, f)]
    A[:nf, :nf] = lam * Mv + alpha * Bv
    E = ops.strain.toarray()[:, f]  # (3*ne, nf)
    area3 = np.repeat(ops.areas, 3)
    n = ops.n_branches
    for j, (stiff, eta) in enumerate(ops.material.branches):
        cols = _branch_cols(ops, j)
        # E^T diag(area) C_j acting on psi_j
        CJ = sla.block_diag(*[stiff.kelvin] * ops.n_elements)
        A[:nf, nf + cols] = E.T @ (area3[:, None] * CJ)
        A[nf + cols[:, None], nf + cols[None, :]] = sla.block_diag(
            *[lam * np.eye(3) + stiff.kelvin / eta] * ops.n_elements
        )
        A[nf + cols, :nf] = -E
    W = np.zeros((dim, dim))
    W[:nf, :nf] = Mv
    W[nf:, nf:] = np.eye(npsi)
    return A, W


def _branch_cols(ops: DiscreteOperators, j: int) -> np.ndarray:
    """Packed psi column indices of branch j (psi raveled as element, branch, comp)."""
    n = ops.n_branches
    e = np.arange(ops.n_elements)
    return (3 * (e[:, None] * n + j) + np.arange(3)[None, :]).ravel()


def dense_resolvent_solve(
    ops: DiscreteOperators,
    lam: float,
    f_data: np.ndarray | None,
    omega: np.ndarray | None,
    alpha: int,
    g_N: np.ndarray | None = None,
) -> RSState:
    """Brute-force resolvent: assemble the full system densely and LU-solve it."""
    A, W = dense_resolvent_matrix(ops, lam, alpha)
    fr = ops.free_dofs
    nf = len(fr)
    b = np.zeros(A.shape[0])
    if f_data is not None:
        b[:nf] = (ops.mass_rho @ np.asarray(f_data).ravel())[fr]
    if g_N is not None:
        b[:nf] += (ops.boundary_mass_N @ np.asarray(g_N).ravel())[fr]
    if omega is not None:
        b[nf:] = np.asarray(omega).ravel()
    x = sla.solve(A, b)
    return unpack_state(ops, x)


def dense_operator_matrix(ops, apply_fn) -> np.ndarray:
    """Materialize a linear state map column by column on the packed basis."""
    dim = state_dim(ops)
    cols = np.zeros((dim, dim))
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        cols[:, i] = pack_state(ops, apply_fn(unpack_state(ops, e)))
    return cols


def h_operator_norm(ops: DiscreteOperators, matrix: np.ndarray) -> float:
    """True operator norm in the H-inner product via a symmetric square root."""
    H = h_gram(ops).toarray()
    w, V = np.linalg.eigh(H)
    sqrtH = (V * np.sqrt(w)) @ V.T
    inv_sqrtH = (V / np.sqrt(w)) @ V.T
    return float(np.linalg.norm(sqrtH @ matrix @ inv_sqrtH, 2))
