"""Peridynamic forces, FE mass matrix, weak-form force vectors, bilinear
forms, L2 projection and energies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from . import kernels
from .bonds import BondSet, build_bonds, node_bonds
from .geometry import FeField, HorizonTable, Mesh, build_horizon_quadrature, default_lattice, quadrature_points
from .potential import PotentialSpec


_BOND_BUDGET = 1 << 21  # bonds per pointwise-evaluation chunk


class AssemblyError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


# --- pointwise forces -----------------------------------------------------

def _point_bonds(field: FeField, x, table: HorizonTable) -> BondSet:
    mesh = field.mesh
    pts = np.asarray(x, float).reshape(-1, mesh.d)
    return build_bonds(mesh, table, pts)


def pd_force_at_point(field: FeField, x, table: HorizonTable, spec: PotentialSpec,
                      linear: bool = False) -> np.ndarray:
    """Quadrature of the peridynamic force density at x (one point or (P, d))."""
    x = np.asarray(x, float)
    pts = x.reshape(-1, field.mesh.d)
    step = max(1, _BOND_BUDGET // max(table.size, 1))
    out = np.empty((len(pts), field.mesh.d))
    for p0 in range(0, len(pts), step):
        bonds = _point_bonds(field, pts[p0:p0 + step], table)
        out[p0:p0 + step] = kernels.point_force(bonds, field.nodal_values, spec.c, spec.beta, linear)
    single = x.ndim == 0 or (x.ndim == 1 and (field.mesh.d > 1 or x.shape == (1,)))
    return out[0] if single else out


def pd_force_linear_at_point(field: FeField, x, table: HorizonTable, spec: PotentialSpec) -> np.ndarray:
    return pd_force_at_point(field, x, table, spec, linear=True)


# --- mass matrix ----------------------------------------------------------

@dataclass
class MassMatrix:
    """Scalar P1 mass matrix; the vector-valued matrix is ``kron(M, I_d)``."""

    matrix: sparse.csr_matrix
    lumped: np.ndarray
    d: int

    def full(self) -> sparse.csr_matrix:
        return sparse.kron(self.matrix, sparse.identity(self.d), format="csr")

    def apply(self, U: np.ndarray, lumped: bool = False) -> np.ndarray:
        return self.lumped[:, None] * U if lumped else self.matrix @ U


def assemble_mass(mesh: Mesh) -> MassMatrix:
    vol = mesh.volumes
    if np.any(vol <= 0):
        raise AssemblyError("degenerate element in mass assembly")
    n = mesh.d + 1
    # int phi_i phi_j = vol (1 + delta_ij) / ((d+1)(d+2))
    local = (np.ones((n, n)) + np.eye(n)) / (n * (n + 1))
    rows = np.repeat(mesh.elements, n, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, n)).ravel()
    vals = (vol[:, None, None] * local[None]).ravel()
    M = sparse.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    M.sum_duplicates()
    lumped = np.asarray(M.sum(axis=1)).ravel()
    return MassMatrix(M, lumped, mesh.d)


def solve_spd(A, rhs: np.ndarray, rtol: float = 1e-12, max_iter: Optional[int] = None,
              x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients, all columns of ``rhs`` at once.

    Stops when ||b - A x|| <= rtol ||b|| per column.
    """
    n = A.shape[0]
    max_iter = max_iter or 10 * n
    rhs = np.asarray(rhs, float)
    B = rhs.reshape(n, -1)
    dinv = (1.0 / A.diagonal())[:, None]
    X = np.zeros_like(B) if x0 is None else np.array(x0, float).reshape(n, -1)
    R = B - A @ X if x0 is not None else B.copy()
    target = rtol * np.linalg.norm(B, axis=0)
    done = np.linalg.norm(R, axis=0) <= target
    Z = dinv * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    it = 0
    while not np.all(done):
        if it >= max_iter:
            raise SolverError(f"CG did not converge in {max_iter} iterations")
        it += 1
        AP = A @ P
        pAp = np.einsum("ij,ij->j", P, AP)
        alpha = np.where(done, 0.0, rz / np.where(done, 1.0, pAp))
        X += alpha * P
        R -= alpha * AP
        done |= np.linalg.norm(R, axis=0) <= target
        Z = dinv * R
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(done, 0.0, rz_new / np.where(rz == 0, 1.0, rz))
        P = Z + beta * P
        rz = rz_new
    return X.reshape(rhs.shape)


# --- the discretized operator bundle ---------------------------------------

@dataclass
class Discretization:
    """Mesh, potential and horizon quadrature with lazily built bond sets."""

    mesh: Mesh
    spec: PotentialSpec
    table: HorizonTable
    order: int = 2
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, mesh: Mesh, spec: PotentialSpec, epsilon: float, m: Optional[int] = None,
              order: int = 2) -> "Discretization":
        if m is None:
            m = default_lattice(epsilon, mesh.h)
        table = build_horizon_quadrature(epsilon, m, spec.j_kind, mesh.d)
        return cls(mesh, spec, table, order)

    @property
    def epsilon(self) -> float:
        return self.table.epsilon

    @property
    def d(self) -> int:
        return self.mesh.d

    def _cached(self, key, make):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    @property
    def mass(self) -> MassMatrix:
        return self._cached("mass", lambda: assemble_mass(self.mesh))

    @property
    def interior(self) -> np.ndarray:
        return self.mesh.interior

    def mass_interior(self) -> sparse.csr_matrix:
        I = self.interior
        return self._cached("M_II", lambda: self.mass.matrix[I][:, I].tocsr())

    @property
    def node_bonds(self) -> BondSet:
        # nodal collocation; integration weights are the lumped masses
        return self._cached("node_bonds", lambda: node_bonds(self.mesh, self.table, self.mass.lumped))

    @property
    def quad(self):
        return self._cached("quad", lambda: quadrature_points(self.mesh, self.order))

    @property
    def gauss_bonds(self) -> BondSet:
        def make():
            pts, wts, elem, bc = self.quad
            xn = self.mesh.elements[elem]
            return build_bonds(self.mesh, self.table, pts, wts, x_interp=(xn, bc))
        return self._cached("gauss_bonds", make)

    @property
    def gauss_matrix(self) -> sparse.csr_matrix:
        """G with (G g)_i = sum_q W_q phi_i(x_q) g(x_q) ~ int phi_i g."""
        def make():
            pts, wts, elem, bc = self.quad
            rows = self.mesh.elements[elem].ravel()
            cols = np.repeat(np.arange(len(wts)), self.d + 1)
            vals = (bc * wts[:, None]).ravel()
            return sparse.csr_matrix((vals, (rows, cols)), shape=(self.mesh.n_nodes, len(wts)))
        return self._cached("G", make)

    def gauss_values(self, U: np.ndarray) -> np.ndarray:
        """Interpolate nodal values at the element quadrature points."""
        pts, wts, elem, bc = self.quad
        return np.einsum("pk,pkc->pc", bc, U[self.mesh.elements[elem]])

    # forces
    def nodal_force(self, U, linear=False) -> np.ndarray:
        return kernels.point_force(self.node_bonds, U, self.spec.c, self.spec.beta, linear)

    def gauss_force(self, U, linear=False) -> np.ndarray:
        return kernels.point_force(self.gauss_bonds, U, self.spec.c, self.spec.beta, linear)

    def weak_force(self, U, linear=False, variant: str = "variational") -> np.ndarray:
        if variant == "variational":
            _, grad = kernels.energy_grad(self.gauss_bonds, U, self.spec.c, self.spec.beta, linear)
            return -grad
        if variant == "collocated":
            return self.gauss_matrix @ self.gauss_force(U, linear)
        raise ValueError(f"unknown weak force variant {variant!r}")

    def potential(self, U, linear=False, nodal=False) -> float:
        bonds = self.node_bonds if nodal else self.gauss_bonds
        e, _ = kernels.energy_grad(bonds, U, self.spec.c, self.spec.beta, linear, want_grad=False)
        return e

    def bilinear(self, U, V, linear=False) -> float:
        return kernels.bilinear(self.gauss_bonds, U, V, self.spec.c, self.spec.beta, linear)

    def stiffness_apply(self, U) -> np.ndarray:
        """A_l U with a_l(u, v) = V . A_l U."""
        _, grad = kernels.energy_grad(self.gauss_bonds, U, self.spec.c, self.spec.beta, True)
        return grad

    def solve_mass(self, rhs: np.ndarray, lumped: bool = False, rtol: float = 1e-12) -> np.ndarray:
        """Solve M X = rhs on interior nodes; boundary rows are identity with zero rhs."""
        I = self.interior
        out = np.zeros_like(rhs, dtype=float)
        if lumped:
            out[I] = rhs[I] / self.mass.lumped[I, None]
        else:
            out[I] = solve_spd(self.mass_interior(), rhs[I], rtol=rtol)
        return out

    def l2_norm(self, U, lumped: bool = False) -> float:
        return float(np.sqrt(max(np.sum(U * self.mass.apply(U, lumped)), 0.0)))


# --- free-function surface -------------------------------------------------

def _disc(field: FeField, table: HorizonTable, spec: PotentialSpec, order: int = 2) -> Discretization:
    return Discretization(field.mesh, spec, table, order)


def nodal_force_strong(field: FeField, table: HorizonTable, spec: PotentialSpec,
                       linear: bool = False) -> np.ndarray:
    return _disc(field, table, spec).nodal_force(field.nodal_values, linear)


def assemble_weak_force(field: FeField, body_force, table: HorizonTable, spec: PotentialSpec,
                        linear: bool = False, variant: str = "collocated",
                        disc: Optional[Discretization] = None) -> np.ndarray:
    """F_i = int phi_i (P(u_h) + b) dx with order-2 element quadrature.

    ``body_force`` is an FeField, a callable of (P, d) points, or None.
    ``variant="collocated"`` evaluates the pointwise force at the quadrature
    points; ``"variational"`` uses -a_h(u_h, phi_i), the exact gradient of
    the discrete potential energy.
    """
    disc = disc or _disc(field, table, spec)
    F = disc.weak_force(field.nodal_values, linear, variant)
    if body_force is not None:
        F = F + disc.gauss_matrix @ body_values(disc, body_force)
    return F


def body_values(disc: Discretization, body_force) -> np.ndarray:
    if isinstance(body_force, FeField):
        return disc.gauss_values(body_force.nodal_values)
    pts = disc.quad[0]
    return np.asarray(body_force(pts), float).reshape(len(pts), disc.d)


def bilinear_a(u: FeField, v: FeField, table: HorizonTable, spec: PotentialSpec,
               linear: bool = False) -> float:
    return _disc(u, table, spec).bilinear(u.nodal_values, v.nodal_values, linear)


def bilinear_a_linear(u: FeField, v: FeField, table: HorizonTable, spec: PotentialSpec) -> float:
    return bilinear_a(u, v, table, spec, linear=True)


def l2_project(exact: Callable, mesh: Mesh, zero_boundary: bool = False, order: int = 4,
               rtol: float = 1e-12) -> FeField:
    """L2 projection onto V_h (or V_h with zero boundary values)."""
    pts, wts, elem, bc = quadrature_points(mesh, order)
    vals = np.asarray(exact(pts), float).reshape(len(pts), -1)
    rows = mesh.elements[elem].ravel()
    rhs = np.zeros((mesh.n_nodes, vals.shape[1]))
    for comp in range(vals.shape[1]):
        rhs[:, comp] = np.bincount(rows, weights=(bc * (wts * vals[:, comp])[:, None]).ravel(),
                                   minlength=mesh.n_nodes)
    M = assemble_mass(mesh).matrix
    if zero_boundary:
        I = mesh.interior
        x = np.zeros_like(rhs)
        x[I] = solve_spd(M[I][:, I].tocsr(), rhs[I], rtol=rtol)
    else:
        x = solve_spd(M, rhs, rtol=rtol)
    return FeField(mesh, x)


def energies(field: FeField, velocity: FeField, table: HorizonTable, spec: PotentialSpec,
             linear: bool = False, lumped: bool = False) -> tuple[float, float, float]:
    disc = _disc(field, table, spec)
    V = velocity.nodal_values
    kinetic = 0.5 * float(np.sum(V * disc.mass.apply(V, lumped)))
    potential = disc.potential(field.nodal_values, linear)
    return kinetic, potential, kinetic + potential
