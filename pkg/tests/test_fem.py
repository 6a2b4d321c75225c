"""Operator assembly: masses, strain, adjoint consistency, Schur matrices."""

import numpy as np
import pytest
import scipy.sparse as sp

from vebc.fem import RSState, assemble_operators, schur_matrix
from vebc.mesh import build_unit_square_mesh
from vebc.tensors import MaterialError, MaterialModel, isotropic_stiffness


class TestMassMatrices:
    def test_mass_row_sum_m1(self, ops1):
        # P1 mass row sums integrate the density: per component = rho * |Omega| = 1
        assert np.isclose(ops1.mass_rho.sum() / 2.0, 1.0, atol=1e-13)

    def test_mass_spd_on_constrained_space(self, ops2):
        f = ops2.free_dofs
        M = ops2.mass_rho.toarray()[np.ix_(f, f)]
        assert np.abs(M - M.T).max() == 0.0
        assert np.linalg.eigvalsh(M)[0] > 0.0

    def test_boundary_mass_psd_and_support(self, ops2):
        B = ops2.boundary_mass_N.toarray()
        assert np.abs(B - B.T).max() == 0.0
        w = np.linalg.eigvalsh(B)
        assert w[0] >= -1e-15
        nn = ops2.mesh.neumann_nodes()
        outside = np.setdiff1d(np.arange(ops2.n_nodes), nn)
        dofs = np.concatenate([2 * outside, 2 * outside + 1])
        assert np.abs(B[dofs]).max() == 0.0

    def test_boundary_mass_total(self, ops1):
        # Gamma_N has length 3 on the unit square with one clamped side
        assert np.isclose(ops1.boundary_mass_N.sum() / 2.0, 3.0, atol=1e-13)

    def test_per_element_density(self, mesh2):
        rho = np.linspace(1.0, 2.0, mesh2.n_triangles)
        model = MaterialModel(branches=((isotropic_stiffness(1.0, 1.0), 1.0),), rho=rho)
        ops = assemble_operators(mesh2, model)
        expected = float((rho * mesh2.triangle_areas()).sum())
        assert np.isclose(ops.mass_rho.sum() / 2.0, expected, atol=1e-13)

    def test_density_element_count_mismatch(self, mesh2):
        model = MaterialModel(
            branches=((isotropic_stiffness(1.0, 1.0), 1.0),), rho=np.ones(3)
        )
        with pytest.raises(MaterialError, match="elements"):
            assemble_operators(mesh2, model)


class TestStrainOperator:
    def test_constant_field_annihilated(self, ops2):
        v = np.ones((ops2.n_nodes, 2))
        assert np.abs(ops2.strain_of(v)).max() <= 1e-14

    def test_linear_field_exact(self, ops2):
        v = np.zeros((ops2.n_nodes, 2))
        v[:, 0] = ops2.mesh.nodes[:, 0]  # v = (x, 0)
        ev = ops2.strain_of(v)
        assert np.allclose(ev, np.tile([1.0, 0.0, 0.0], (ops2.n_elements, 1)), atol=1e-13)

    def test_shear_field_exact(self, ops2):
        v = np.zeros((ops2.n_nodes, 2))
        v[:, 0] = ops2.mesh.nodes[:, 1]  # v = (y, 0): e12 = 1/2, k3 = 1/sqrt(2)
        ev = ops2.strain_of(v)
        expected = np.tile([0.0, 0.0, 1.0 / np.sqrt(2.0)], (ops2.n_elements, 1))
        assert np.allclose(ev, expected, atol=1e-13)

    def test_adjoint_consistency(self, ops2, rng):
        for _ in range(10):
            w = rng.standard_normal((ops2.n_nodes, 2))
            tau = rng.standard_normal((ops2.n_elements, 3))
            lhs = float(np.einsum("e,ek,ek->", ops2.areas, ops2.strain_of(w), tau))
            rhs = float(np.sum(w * ops2.strain_adjoint(tau)))
            assert np.isclose(lhs, rhs, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("m", [1, 2, 4])
    def test_discrete_korn(self, m, material):
        # dense eigenvalue oracle: the constrained stiffness form is positive definite
        mesh = build_unit_square_mesh(m)
        ops = assemble_operators(mesh, material)
        K = sum(np.asarray(s) for s in material.stiffnesses)
        middle = sp.kron(sp.diags(ops.areas), sp.csr_matrix(K))
        A = (ops.strain.T @ middle @ ops.strain).toarray()
        A = A[np.ix_(ops.free_dofs, ops.free_dofs)]
        assert np.linalg.eigvalsh(A)[0] > 1e-10

    def test_strain_trivial_kernel_on_constrained_space(self, ops2):
        E = ops2.strain.toarray()[:, ops2.free_dofs]
        s = np.linalg.svd(E, compute_uv=False)
        assert s[-1] > 1e-10


class TestSchurMatrix:
    def test_single_branch_scalar_factor(self, mesh2):
        # lam=1, C=I, eta=1: C (lam I + C/eta)^(-1) = I/2 exactly, so the strain
        # part of B is half the plain stiffness form
        model = MaterialModel(branches=((isotropic_stiffness(0.0, 0.5), 1.0),), rho=1.0)
        ops = assemble_operators(mesh2, model)
        B = schur_matrix(ops, model, lam=1.0, alpha=0).toarray()
        f = ops.free_dofs
        middle = sp.kron(sp.diags(ops.areas), sp.identity(3, format="csr"))
        plain = (ops.strain.T @ middle @ ops.strain).toarray()[np.ix_(f, f)]
        mass = ops.mass_rho.toarray()[np.ix_(f, f)]
        assert np.abs(B - (0.5 * plain + mass)).max() <= 1e-14

    def test_large_rate_limit(self, ops2, material):
        # Neumann expansion: B = lam M + alpha Mb + (1/lam) sum_j C_j-form + O(1/lam^2)
        lam = 1e6
        B = schur_matrix(ops2, material, lam=lam, alpha=1).toarray()
        f = ops2.free_dofs
        mass = ops2.mass_rho.toarray()[np.ix_(f, f)]
        bmass = ops2.boundary_mass_N.toarray()[np.ix_(f, f)]
        K = sum(np.asarray(s) for s in material.stiffnesses)
        middle = sp.kron(sp.diags(ops2.areas), sp.csr_matrix(K))
        stiff = (ops2.strain.T @ middle @ ops2.strain).toarray()[np.ix_(f, f)]
        first_order = (1.0 / lam) * stiff
        deviation = B - lam * mass - bmass - first_order
        assert np.abs(deviation).max() <= 1e-5 * np.abs(first_order).max()

    @pytest.mark.parametrize("lam", [0.3, 1.0, 7.0])
    def test_cholesky_succeeds_dissipative(self, ops2, material, lam):
        B = schur_matrix(ops2, material, lam=lam, alpha=1).toarray()
        np.linalg.cholesky(B)  # raises LinAlgError if not SPD

    def test_cholesky_succeeds_free(self, ops2, material):
        B = schur_matrix(ops2, material, lam=2.0, alpha=0).toarray()
        np.linalg.cholesky(B)

    def test_alpha_difference_is_boundary_mass(self, ops2, material):
        lam = 3.0
        Bp = schur_matrix(ops2, material, lam=lam, alpha=1).toarray()
        B0 = schur_matrix(ops2, material, lam=lam, alpha=0).toarray()
        f = ops2.free_dofs
        bmass = ops2.boundary_mass_N.toarray()[np.ix_(f, f)]
        scale = np.abs(Bp).max()
        assert np.abs((Bp - B0) - bmass).max() <= 1e-14 * scale

    def test_rejects_nonpositive_rate(self, ops2, material):
        with pytest.raises(ValueError, match="positive"):
            schur_matrix(ops2, material, lam=0.0, alpha=1)


class TestRSState:
    def test_zero_factory_shapes(self, ops2):
        s = ops2.zero_state()
        assert s.v.shape == (ops2.n_nodes, 2)
        assert s.psi.shape == (ops2.n_elements, ops2.n_branches, 3)

    def test_dirichlet_application(self, ops2, rng):
        v = rng.standard_normal((ops2.n_nodes, 2))
        vd = ops2.apply_dirichlet(v)
        assert np.abs(vd.ravel()[ops2.dirichlet_dofs]).max() == 0.0
        assert np.array_equal(vd.ravel()[ops2.free_dofs], v.ravel()[ops2.free_dofs])

    def test_algebra(self, ops2, rng):
        a = RSState(rng.standard_normal((ops2.n_nodes, 2)),
                    rng.standard_normal((ops2.n_elements, ops2.n_branches, 3)))
        b = RSState(rng.standard_normal((ops2.n_nodes, 2)),
                    rng.standard_normal((ops2.n_elements, ops2.n_branches, 3)))
        c = 2.0 * a - b
        assert np.allclose(c.v, 2 * a.v - b.v)
        n = a.negate_velocity()
        assert np.array_equal(n.v, -a.v) and np.array_equal(n.psi, a.psi)
