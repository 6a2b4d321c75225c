"""Discrete spaces and operator assembly.

Velocities are continuous piecewise-linear vector fields (two dofs per node,
dof 2*i and 2*i+1 for node i); each branch strain is piecewise constant per
element in Kelvin coordinates.  With this pairing the strain of a velocity
field is elementwise constant, so the branch relaxation equations hold
pointwise per element with no projection error and the semidiscrete energy
identities are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from vebc.mesh import Mesh, NEUMANN
from vebc.tensors import MaterialModel


@dataclass
class RSState:
    """Phase point of the reduced system: nodal velocity + per-element branch strains.

    v has shape (n_nodes, 2) and vanishes on clamped nodes; psi has shape
    (n_elements, n_branches, 3) in Kelvin coordinates.
    """

    v: np.ndarray
    psi: np.ndarray

    def copy(self) -> "RSState":
        return RSState(self.v.copy(), self.psi.copy())

    def __add__(self, other: "RSState") -> "RSState":
        return RSState(self.v + other.v, self.psi + other.psi)

    def __sub__(self, other: "RSState") -> "RSState":
        return RSState(self.v - other.v, self.psi - other.psi)

    def __mul__(self, a: float) -> "RSState":
        return RSState(a * self.v, a * self.psi)

    __rmul__ = __mul__

    def negate_velocity(self) -> "RSState":
        """The velocity-flip involution (v, psi) -> (-v, psi)."""
        return RSState(-self.v, self.psi.copy())

    @staticmethod
    def zeros(n_nodes: int, n_elements: int, n_branches: int) -> "RSState":
        return RSState(np.zeros((n_nodes, 2)), np.zeros((n_elements, n_branches, 3)))


@dataclass(frozen=True)
class DiscreteOperators:
    """Assembled matrices and maps for one mesh/material pair.

    Attributes
    ----------
    mass_rho : csr matrix, (2n, 2n)
        Density-weighted nodal mass matrix of the vector field.
    boundary_mass_N : csr matrix, (2n, 2n)
        Trace mass matrix supported on traction-boundary nodes.
    strain : csr matrix, (3*n_elements, 2n)
        Per-element Kelvin strain of a nodal field.
    areas : (n_elements,) array
        Triangle areas (the quadrature weights of all element sums).
    dirichlet_dofs, free_dofs : int arrays
        Complementary dof index sets for the clamped-node constraint.
    """

    mesh: Mesh
    material: MaterialModel
    mass_rho: sp.csr_matrix
    boundary_mass_N: sp.csr_matrix
    strain: sp.csr_matrix
    areas: np.ndarray
    dirichlet_dofs: np.ndarray
    free_dofs: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_elements(self) -> int:
        return self.mesh.n_triangles

    @property
    def n_branches(self) -> int:
        return self.material.n

    def zero_state(self) -> RSState:
        return RSState.zeros(self.n_nodes, self.n_elements, self.n_branches)

    def strain_of(self, v: np.ndarray) -> np.ndarray:
        """Element Kelvin strains of a nodal field, shape (n_elements, 3)."""
        return (self.strain @ np.asarray(v).ravel()).reshape(self.n_elements, 3)

    def strain_adjoint(self, tau: np.ndarray) -> np.ndarray:
        """Adjoint of strain_of under the area-weighted element inner product.

        Returns the nodal load vector with (strain_of(w), tau)_weighted
        = w . strain_adjoint(tau) for every nodal field w.
        """
        weighted = (np.asarray(tau).reshape(self.n_elements, 3) * self.areas[:, None]).ravel()
        return (self.strain.T @ weighted).reshape(self.n_nodes, 2)

    def apply_dirichlet(self, v: np.ndarray) -> np.ndarray:
        """Zero the clamped dofs of a nodal field (returns a copy)."""
        out = np.asarray(v, dtype=float).copy().ravel()
        out[self.dirichlet_dofs] = 0.0
        return out.reshape(self.n_nodes, 2)

    def total_branch_stress(self, psi: np.ndarray) -> np.ndarray:
        """Sum over branches of C_j psi_j, shape (n_elements, 3)."""
        stiff = self.material.stiffnesses
        out = np.zeros((self.n_elements, 3))
        for j in range(self.n_branches):
            out += psi[:, j, :] @ stiff[j].T
        return out


def _p1_mass(mesh: Mesh, rho_e: np.ndarray) -> sp.csr_matrix:
    n = mesh.n_nodes
    areas = mesh.triangle_areas()
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    rows, cols, vals = [], [], []
    for e, tri in enumerate(mesh.triangles):
        block = rho_e[e] * areas[e] * local
        for a in range(3):
            for b in range(3):
                for comp in range(2):
                    rows.append(2 * tri[a] + comp)
                    cols.append(2 * tri[b] + comp)
                    vals.append(block[a, b])
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n))


def _boundary_mass(mesh: Mesh) -> sp.csr_matrix:
    n = mesh.n_nodes
    rows, cols, vals = [], [], []
    edges = mesh.boundary_edges[mesh.boundary_tags == NEUMANN]
    lengths = mesh.edge_lengths(edges)
    local = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    for (a, b), ell in zip(edges, lengths):
        block = ell * local
        for i, ni in enumerate((a, b)):
            for j, nj in enumerate((a, b)):
                for comp in range(2):
                    rows.append(2 * ni + comp)
                    cols.append(2 * nj + comp)
                    vals.append(block[i, j])
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n))


def _strain_operator(mesh: Mesh) -> sp.csr_matrix:
    n = mesh.n_nodes
    areas = mesh.triangle_areas()
    sqrt2 = np.sqrt(2.0)
    rows, cols, vals = [], [], []
    for e, tri in enumerate(mesh.triangles):
        p = mesh.nodes[tri]
        # gradients of the barycentric shape functions
        b = np.array([p[1, 1] - p[2, 1], p[2, 1] - p[0, 1], p[0, 1] - p[1, 1]]) / (2 * areas[e])
        c = np.array([p[2, 0] - p[1, 0], p[0, 0] - p[2, 0], p[1, 0] - p[0, 0]]) / (2 * areas[e])
        for k in range(3):
            vx, vy = 2 * tri[k], 2 * tri[k] + 1
            # e11 = dvx/dx, e22 = dvy/dy, k3 = (dvx/dy + dvy/dx)/sqrt(2)
            rows += [3 * e, 3 * e + 1, 3 * e + 2, 3 * e + 2]
            cols += [vx, vy, vx, vy]
            vals += [b[k], c[k], c[k] / sqrt2, b[k] / sqrt2]
    return sp.csr_matrix((vals, (rows, cols)), shape=(3 * mesh.n_triangles, 2 * n))


def assemble_operators(mesh: Mesh, material: MaterialModel) -> DiscreteOperators:
    """Assemble all matrices the evolution and resolvent solves need."""
    rho_e = material.rho_on_elements(mesh.n_triangles)
    dirichlet_nodes = mesh.dirichlet_nodes()
    dirichlet_dofs = np.sort(np.concatenate([2 * dirichlet_nodes, 2 * dirichlet_nodes + 1]))
    all_dofs = np.arange(2 * mesh.n_nodes)
    free_dofs = np.setdiff1d(all_dofs, dirichlet_dofs)
    return DiscreteOperators(
        mesh=mesh,
        material=material,
        mass_rho=_p1_mass(mesh, rho_e),
        boundary_mass_N=_boundary_mass(mesh),
        strain=_strain_operator(mesh),
        areas=mesh.triangle_areas(),
        dirichlet_dofs=dirichlet_dofs,
        free_dofs=free_dofs,
    )


def branch_resolvent_factors(material: MaterialModel, lam: float) -> list[np.ndarray]:
    """Per-branch 3x3 inverses R_j = (lam I + C_j/eta_j)^(-1)."""
    out = []
    for stiff, eta in material.branches:
        out.append(np.linalg.inv(lam * np.eye(3) + stiff.kelvin / eta))
    return out


def schur_matrix(
    ops: DiscreteOperators, material: MaterialModel, lam: float, alpha: int
) -> sp.csr_matrix:
    """Matrix of the velocity bilinear form after elementwise strain elimination.

    B(v, w) = sum_j (C_j (lam I + C_j/eta_j)^(-1) e[v], e[w])
              + lam (v, w)_rho + alpha (v, w)_GammaN,
    restricted to the clamped-node-constrained dof set.  Symmetric; positive
    definite for alpha in {0, +1} (and in practice also for alpha = -1 at the
    step rates used here, though that is not asserted).
    """
    if lam <= 0.0:
        raise ValueError(f"rate must be positive, got lam={lam}")
    if alpha not in (-1, 0, 1):
        raise ValueError(f"boundary mode must be -1, 0 or +1, got {alpha}")
    K = np.zeros((3, 3))
    for (stiff, _eta), R in zip(material.branches, branch_resolvent_factors(material, lam)):
        K += stiff.kelvin @ R
    K = 0.5 * (K + K.T)  # C_j commutes with its own resolvent; kill roundoff skew
    middle = sp.kron(sp.diags(ops.areas), sp.csr_matrix(K))
    B = ops.strain.T @ middle @ ops.strain + lam * ops.mass_rho + alpha * ops.boundary_mass_N
    B = B.tocsr()
    f = ops.free_dofs
    return B[np.ix_(f, f)].tocsr()
