"""Divergence-form discrete Laplace-Beltrami operator on cell-centered grids.

For a node p with neighbours q the stiffness carries the face weights

    s-faces:     (Psi / Phi)(face) * h_theta / h_s
    theta-faces: (Phi / Psi)(face) * h_s / h_theta

assembled symmetrically, and the lumped mass is Phi * Psi * h_s * h_theta at
the node. M^-1 L is then a second order approximation of
(1 / (Phi Psi)) [d_s((Psi/Phi) u_s) + d_theta((Phi/Psi) u_theta)].
Neumann boundaries carry no face (zero flux through the half-cell face).
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from tubeshell.core.errors import DegenerateMetricError, DomainError, GridMismatchError
from tubeshell.core.geometry import BentTube, GluedSurface, Surface, phi, surface_radius_and_kappa
from tubeshell.core.models import Grid2D, ScalarField
from tubeshell.profiles.base import ProfileCurve

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiscreteOperator:
    grid: Grid2D
    stiffness: sp.csr_matrix
    mass: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    kappa: float = 0.0

    @property
    def mass_matrix(self) -> sp.dia_matrix:
        return sp.diags(self.mass)

    @property
    def total_area(self) -> float:
        return float(self.mass.sum())

    def inner(self, u: ScalarField, v: ScalarField) -> float:
        """Weighted L2 product sum(u v M)."""
        self._check(u)
        self._check(v)
        return float(np.dot(u.values * v.values, self.mass))

    def _check(self, u: ScalarField):
        if u.grid != self.grid:
            raise GridMismatchError(f"field grid {u.grid.shape} does not match operator grid {self.grid.shape}")


def _check_topology(surface: Surface, grid: Grid2D):
    if isinstance(surface, GluedSurface):
        if not grid.is_periodic:
            raise DomainError("glued surfaces need a periodic grid in s")
        if abs(grid.length - surface.period) > 1e-12 * surface.period:
            raise DomainError(f"grid period {grid.length:g} does not match glued period {surface.period:g}")
        return
    if isinstance(surface, (BentTube, ProfileCurve)):
        length = surface.profile.length if isinstance(surface, BentTube) else surface.length
        if grid.is_periodic:
            raise DomainError("single tubes need a Neumann grid in s")
        if abs(grid.length - length) > 1e-12 * length:
            raise DomainError(f"grid length {grid.length:g} does not match profile length {length:g}")
        if grid.n_theta == 1 and isinstance(surface, BentTube) and surface.kappa != 0.0:
            raise DomainError("axisymmetric grids (n_theta = 1) require kappa = 0")
        return
    raise DomainError(f"unsupported surface type {type(surface).__name__}")


def _metric_at(surface: Surface, s, theta):
    radius, _ = surface_radius_and_kappa(surface)
    factor = phi(surface, s, theta)
    psi = np.broadcast_to(radius(s, 0), factor.shape)
    if np.any(factor <= 0) or np.any(psi <= 0) or not np.all(np.isfinite(factor)):
        raise DegenerateMetricError("degenerate metric: Phi or Psi is not positive on the grid")
    return factor, psi


def assemble(surface: Surface, grid: Grid2D) -> DiscreteOperator:
    _check_topology(surface, grid)
    _, kappa = surface_radius_and_kappa(surface)
    n_s, n_t = grid.shape
    h_s, h_t = grid.h_s, grid.h_theta
    idx = np.arange(grid.size).reshape(grid.shape)

    S, T = grid.mesh()
    node_phi, node_psi = _metric_at(surface, S, T)

    rows, cols, weights = [], [], []

    # s-faces at s = (i + 1) h_s between rows i and i + 1
    last = n_s if grid.is_periodic else n_s - 1
    face_s = (np.arange(last) + 1.0) * h_s
    FS, FT = np.meshgrid(face_s, grid.theta_nodes, indexing="ij")
    f_phi, f_psi = _metric_at(surface, FS, FT)
    rows.append(idx[:last].ravel())
    cols.append(np.roll(idx, -1, axis=0)[:last].ravel())
    weights.append((f_psi / f_phi * h_t / h_s).ravel())

    # theta-faces at theta_j + h_theta / 2, periodic
    if n_t > 1:
        TS, TT = np.meshgrid(grid.s_nodes, grid.theta_nodes + 0.5 * h_t, indexing="ij")
        t_phi, t_psi = _metric_at(surface, TS, TT)
        rows.append(idx.ravel())
        cols.append(np.roll(idx, -1, axis=1).ravel())
        weights.append((t_phi / t_psi * h_s / h_t).ravel())

    r = np.concatenate(rows)
    c = np.concatenate(cols)
    w = np.concatenate(weights)
    off = sp.coo_matrix((w, (r, c)), shape=(grid.size, grid.size)).tocsr()
    off = off + off.T
    diagonal = -np.asarray(off.sum(axis=1)).ravel()
    stiffness = (off + sp.diags(diagonal)).tocsr()

    mass = (node_phi * node_psi).ravel() * h_s * h_t
    logger.debug("assembled %dx%d operator (kappa=%g, nnz=%d)", n_s, n_t, kappa, stiffness.nnz)
    return DiscreteOperator(grid, stiffness, mass, node_phi.ravel(), node_psi.ravel(), float(kappa))


def apply(op: DiscreteOperator, u: ScalarField) -> ScalarField:
    """M^-1 L u, the discrete Laplace-Beltrami of u."""
    op._check(u)
    return u.with_values(op.stiffness @ u.values / op.mass)


def linearization(op: DiscreteOperator, potential) -> sp.csr_matrix:
    """Weighted Jacobian L + M diag(potential) of u -> Delta u + f(u)."""
    values = potential.values if isinstance(potential, ScalarField) else np.asarray(potential, dtype=float)
    return (op.stiffness + sp.diags(op.mass * values)).tocsr()


def gradient_sq(op: DiscreteOperator, u: ScalarField) -> ScalarField:
    """|grad u|^2 = u_s^2 / Phi^2 + u_theta^2 / Psi^2 by central differences."""
    u_s, u_t = partial_derivatives(op, u)
    phi_n = op.phi.reshape(op.grid.shape)
    psi_n = op.psi.reshape(op.grid.shape)
    return u.with_values(u_s**2 / phi_n**2 + u_t**2 / psi_n**2)


def partial_derivatives(op: DiscreteOperator, u: ScalarField):
    """Central-difference (u_s, u_theta) as (n_s, n_theta) arrays."""
    op._check(u)
    grid = op.grid
    arr = u.as_array()
    if grid.is_periodic:
        u_s = (np.roll(arr, -1, axis=0) - np.roll(arr, 1, axis=0)) / (2.0 * grid.h_s)
    else:
        u_s = np.gradient(arr, grid.h_s, axis=0, edge_order=2)
    if grid.n_theta > 1:
        u_t = (np.roll(arr, -1, axis=1) - np.roll(arr, 1, axis=1)) / (2.0 * grid.h_theta)
    else:
        u_t = np.zeros_like(arr)
    return u_s, u_t


def dirichlet_energy(op: DiscreteOperator, u: ScalarField) -> float:
    """-<L u, u>, the discrete integral of |grad u|^2."""
    op._check(u)
    return float(-np.dot(op.stiffness @ u.values, u.values))


def matrix_triplets(op: DiscreteOperator):
    """Stiffness entries as (i, j, value) sorted by (i, j)."""
    coo = op.stiffness.tocoo()
    order = np.lexsort((coo.col, coo.row))
    return coo.row[order], coo.col[order], coo.data[order]
