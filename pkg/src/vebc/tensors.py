"""Symmetric-tensor algebra in Kelvin notation and Maxwell-branch material data.

All rank-2 symmetric tensors (strains, stresses, viscous strains) live in the
orthonormal Kelvin coordinates (w11, w22, sqrt(2)*w12), so that the Frobenius
inner product of tensors equals the Euclidean dot product of their coordinate
vectors and every stiffness tensor is an honest symmetric 3x3 matrix whose
smallest eigenvalue is the strong-convexity constant.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

_SQRT2 = np.sqrt(2.0)

SYMMETRY_TOL = 1e-12


class MaterialError(ValueError):
    """Raised when material data violates the admissibility conditions."""


def kelvin_vec(tensor: np.ndarray) -> np.ndarray:
    """Map a symmetric 2x2 matrix to its Kelvin coordinate vector.

    Parameters
    ----------
    tensor : (2, 2) array
        Symmetric matrix; off-diagonal entries must agree to 1e-12
        relative to the matrix scale.

    Returns
    -------
    (3,) array
        (w11, w22, sqrt(2)*w12).  The map is a linear isometry for the
        Frobenius norm.
    """
    tensor = np.asarray(tensor, dtype=float)
    if tensor.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {tensor.shape}")
    scale = max(1.0, np.abs(tensor).max())
    if abs(tensor[0, 1] - tensor[1, 0]) > SYMMETRY_TOL * scale:
        raise ValueError(
            "matrix is not symmetric: entry (0,1)=%.17g differs from (1,0)=%.17g"
            % (tensor[0, 1], tensor[1, 0])
        )
    return np.array([tensor[0, 0], tensor[1, 1], _SQRT2 * 0.5 * (tensor[0, 1] + tensor[1, 0])])


def kelvin_mat(vec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`kelvin_vec`: Kelvin coordinates back to a 2x2 matrix."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (3,):
        raise ValueError(f"expected a length-3 vector, got shape {vec.shape}")
    off = vec[2] / _SQRT2
    return np.array([[vec[0], off], [off, vec[1]]])


@dataclass(frozen=True)
class Stiffness:
    """A fully symmetric, strongly convex stiffness tensor in Kelvin coordinates.

    Attributes
    ----------
    kelvin : (3, 3) array
        Symmetric positive definite matrix mapping Kelvin strains to
        Kelvin stresses.
    """

    kelvin: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kelvin, dtype=float)
        if k.shape != (3, 3):
            raise MaterialError(f"stiffness matrix must be 3x3, got {k.shape}")
        if not np.array_equal(k, k.T):
            # accept tiny asymmetry from file round trips, then symmetrize
            if np.abs(k - k.T).max() > SYMMETRY_TOL * max(1.0, np.abs(k).max()):
                raise MaterialError("stiffness matrix is not symmetric")
            k = 0.5 * (k + k.T)
        object.__setattr__(self, "kelvin", k)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.kelvin)[0])

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """Stress of a Kelvin strain vector (works on trailing axis of arrays)."""
        return np.asarray(vec) @ self.kelvin.T

    def inv(self) -> np.ndarray:
        return np.linalg.inv(self.kelvin)


def isotropic_stiffness(lam: float, mu: float) -> Stiffness:
    """Isotropic stiffness from the Lame pair (lam, mu).

    Kelvin matrix [[lam+2mu, lam, 0], [lam, lam+2mu, 0], [0, 0, 2mu]] with
    eigenvalues {2mu, 2mu, 2lam+2mu}.  Requires mu > 0 and lam >= 0 so that
    the tensor is strongly convex.
    """
    if mu <= 0.0:
        raise MaterialError(f"shear modulus must be positive for strong convexity, got mu={mu}")
    if lam < 0.0:
        raise MaterialError(f"first Lame parameter must be nonnegative, got lam={lam}")
    k = np.array(
        [
            [lam + 2.0 * mu, lam, 0.0],
            [lam, lam + 2.0 * mu, 0.0],
            [0.0, 0.0, 2.0 * mu],
        ]
    )
    return Stiffness(k)


@dataclass(frozen=True)
class MaterialModel:
    """An n-branch Maxwell material: per-branch stiffness and viscosity, plus density.

    Attributes
    ----------
    branches : tuple of (Stiffness, float)
        Spring stiffness and dashpot viscosity of each Maxwell unit.
    rho : float or (n_elements,) array
        Mass density, constant or piecewise constant per element.
    """

    branches: tuple[tuple[Stiffness, float], ...]
    rho: np.ndarray | float = 1.0
    name: str = "material"

    def __post_init__(self):
        if len(self.branches) < 1:
            raise MaterialError("at least one Maxwell branch is required")
        rho = np.asarray(self.rho, dtype=float)
        object.__setattr__(self, "rho", float(rho) if rho.ndim == 0 else rho)

    @property
    def n(self) -> int:
        return len(self.branches)

    @property
    def stiffnesses(self) -> list[np.ndarray]:
        return [c.kelvin for c, _ in self.branches]

    @property
    def viscosities(self) -> np.ndarray:
        return np.array([eta for _, eta in self.branches])

    def rho_on_elements(self, n_elements: int) -> np.ndarray:
        rho = self.rho
        if np.ndim(rho) == 0:
            return np.full(n_elements, float(rho))
        rho = np.asarray(rho, dtype=float)
        if rho.shape != (n_elements,):
            raise MaterialError(
                f"per-element density has {rho.shape[0]} entries, mesh has {n_elements} elements"
            )
        return rho


@dataclass(frozen=True)
class MaterialReport:
    """Validated admissibility constants of a material, or its named violations."""

    ok: bool
    alpha0: float = 0.0
    beta0: float = 0.0
    gamma0: float = 0.0
    violations: tuple[str, ...] = field(default_factory=tuple)


def validate_material(model: MaterialModel) -> MaterialReport:
    """Check strong convexity and positivity and return the admissibility constants.

    Returns the largest alpha0 with (C_j w) w >= alpha0 |w|^2 for every branch
    (the smallest stiffness eigenvalue over branches), beta0 = min viscosity
    and gamma0 = min density.  Violations are reported per branch.
    """
    violations = []
    eig_mins = []
    for j, (stiff, eta) in enumerate(model.branches):
        emin = stiff.min_eigenvalue
        eig_mins.append(emin)
        if emin <= 0.0:
            violations.append(
                f"branch {j}: stiffness is not strongly convex (min eigenvalue {emin:.6g} <= 0)"
            )
        if eta <= 0.0:
            violations.append(f"branch {j}: viscosity {eta:.6g} <= 0")
    rho = np.atleast_1d(np.asarray(model.rho, dtype=float))
    if rho.min() <= 0.0:
        violations.append(f"density has nonpositive entries (min {rho.min():.6g})")
    if violations:
        return MaterialReport(ok=False, violations=tuple(violations))
    return MaterialReport(
        ok=True,
        alpha0=float(min(eig_mins)),
        beta0=float(model.viscosities.min()),
        gamma0=float(rho.min()),
    )


def branch_exponential(t: float, eta: float, stiffness: Stiffness | np.ndarray) -> np.ndarray:
    """Matrix exponential exp(-t * C / eta) in Kelvin coordinates.

    Computed by eigen-decomposition of the symmetric matrix C/eta; the result
    is symmetric positive definite with eigenvalues exp(-t*lam_i/eta) in (0, 1]
    for t >= 0.
    """
    if t < 0.0:
        raise ValueError(f"time must be nonnegative, got t={t}")
    k = stiffness.kelvin if isinstance(stiffness, Stiffness) else np.asarray(stiffness, dtype=float)
    w, V = np.linalg.eigh(k / eta)
    return (V * np.exp(-t * w)) @ V.T


def _branch_from_table(idx: int, table: dict) -> tuple[Stiffness, float]:
    if "eta" not in table:
        raise MaterialError(f"branch {idx}: missing viscosity key 'eta'")
    eta = float(table["eta"])
    if "kelvin" in table:
        stiff = Stiffness(np.asarray(table["kelvin"], dtype=float))
    elif "lambda" in table and "mu" in table:
        stiff = isotropic_stiffness(float(table["lambda"]), float(table["mu"]))
    else:
        raise MaterialError(
            f"branch {idx}: provide either 'lambda' and 'mu' or an explicit 3x3 'kelvin' matrix"
        )
    return stiff, eta


def material_from_dict(data: dict, name: str = "material") -> MaterialModel:
    """Build a MaterialModel from a parsed material table (see file format below)."""
    if "branch" not in data:
        raise MaterialError("material table must contain an array of 'branch' tables")
    tables = data["branch"]
    if "n" in data and int(data["n"]) != len(tables):
        raise MaterialError(
            f"declared n={data['n']} does not match {len(tables)} branch tables"
        )
    branches = tuple(_branch_from_table(i, t) for i, t in enumerate(tables))
    rho = data.get("rho", 1.0)
    rho = np.asarray(rho, dtype=float) if isinstance(rho, list) else float(rho)
    model = MaterialModel(branches=branches, rho=rho, name=name)
    report = validate_material(model)
    if not report.ok:
        raise MaterialError("; ".join(report.violations))
    return model


def load_material(path) -> MaterialModel:
    """Load a material file.

    Format (TOML):

        n = 2                 # optional, cross-checked against branch count
        rho = 1.0             # scalar or per-element list
        [[branch]]
        lambda = 1.0          # Lame pair ...
        mu = 1.0
        eta = 1.0
        [[branch]]
        kelvin = [[3.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 2.0]]   # ... or explicit matrix
        eta = 2.0
    """
    with open(path, "rb") as fh:
        data = _toml.load(fh)
    import os

    return material_from_dict(data, name=os.path.splitext(os.path.basename(str(path)))[0])


def default_material(n: int = 2) -> MaterialModel:
    """The two-branch isotropic material used throughout the experiments."""
    branches = [(isotropic_stiffness(1.0, 1.0), 1.0)]
    if n >= 2:
        branches.append((isotropic_stiffness(1.0, 1.0), 2.0))
    for _ in range(n - 2):
        branches.append((isotropic_stiffness(0.5, 1.0), 1.5))
    return MaterialModel(branches=tuple(branches[:n]), rho=1.0, name=f"default{n}")
