"""Self-consistent potential and electric field on a finite-volume mesh.

Solves ``-lap(phi) = rho - rho0`` with the two-point flux stencil: across an
interior face ``E.n = -(phi_j - phi_i) / dist``, across a Dirichlet wall
``E.n_out = phi_i / d`` (``phi = 0`` on the wall at distance ``d``) and zero
across a Neumann wall. Summing cell balances gives the discrete Green
identity: the boundary flux equals ``sum vol (rho - rho0)`` to rounding.
"""
from dataclasses import dataclass
import logging

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import NeutralityError
from .grid import DistributionField, SpatialMesh, VelocityGrid, weighted_lp_norm

LOGGER = logging.getLogger(__name__)

BC_KINDS = ("dirichlet", "neumann")


def charge_density(f, grid: VelocityGrid = None):
    """Return ``rho[f] = int sqrt(mu) f dv`` per cell.

    :param f: a :class:`DistributionField` or an array with the grid given
    """
    if isinstance(f, DistributionField):
        grid, values = f.grid, f.values
    else:
        values = np.asarray(f, dtype=float)
    return grid.integrate(grid.sqrt_mu * values)


def current_density(f, grid: VelocityGrid = None):
    """Return ``j[f] = int v sqrt(mu) f dv`` per cell, shape ``(n, 3)``."""
    if isinstance(f, DistributionField):
        grid, values = f.grid, f.values
    else:
        values = np.asarray(f, dtype=float)
    weighted = grid.sqrt_mu * values
    return np.stack(
        [grid.integrate(weighted * grid.v[..., i]) for i in range(3)], axis=-1
    )


@dataclass
class PotentialField:
    """Potential and field per cell plus the face values they come from.

    ``face_field`` is ``E.n`` on interior faces (normal from the first to the
    second cell), ``bface_field`` is ``E.n_out`` on wall faces.
    """

    phi: np.ndarray
    e_field: np.ndarray
    bc_kind: str
    rho0: float
    face_field: np.ndarray
    bface_field: np.ndarray
    mesh: SpatialMesh

    @classmethod
    def zeros(cls, mesh: SpatialMesh, bc_kind="neumann", rho0=0.0):
        return cls(
            phi=np.zeros(mesh.n_active),
            e_field=np.zeros((mesh.n_active, 3)),
            bc_kind=bc_kind,
            rho0=rho0,
            face_field=np.zeros(len(mesh.face_areas)),
            bface_field=np.zeros(len(mesh.bface_areas)),
            mesh=mesh,
        )


class PoissonSolver:
    """Factorized finite-volume Laplacian for one mesh and boundary kind.

    For Neumann walls the singular system is bordered with the constraint
    ``sum vol phi = 0``, which also fixes the additive constant.

    :param mesh: the spatial mesh
    :param bc_kind: ``"dirichlet"`` or ``"neumann"``
    :param rho0: background density subtracted from every source
    """

    def __init__(self, mesh: SpatialMesh, bc_kind="neumann", rho0=0.0):
        if bc_kind not in BC_KINDS:
            raise ValueError("unknown boundary kind: {}".format(bc_kind))
        self.mesh = mesh
        self.bc_kind = bc_kind
        self.rho0 = float(rho0)
        n = mesh.n_active
        i, j = mesh.face_cells[:, 0], mesh.face_cells[:, 1]
        coupling = mesh.face_areas / mesh.face_dists
        rows = np.concatenate([i, j, i, j])
        cols = np.concatenate([i, j, j, i])
        data = np.concatenate([coupling, coupling, -coupling, -coupling])
        if bc_kind == "dirichlet":
            rows = np.concatenate([rows, mesh.bface_cells])
            cols = np.concatenate([cols, mesh.bface_cells])
            data = np.concatenate([data, mesh.bface_areas / mesh.bface_dists])
        else:
            rows = np.concatenate([rows, np.full(n, n), np.arange(n)])
            cols = np.concatenate([cols, np.arange(n), np.full(n, n)])
            data = np.concatenate([data, mesh.volumes, mesh.volumes])
            n += 1
        self.matrix = sparse.csc_matrix((data, (rows, cols)), shape=(n, n))
        self._solve = splinalg.factorized(self.matrix)

    def check_neutral(self, rho):
        """Raise :class:`NeutralityError` if ``int (rho - rho0) != 0``."""
        rho = np.asarray(rho, dtype=float)
        imbalance = float(np.sum(self.mesh.volumes * (rho - self.rho0)))
        scale = max(1.0, float(np.sum(self.mesh.volumes * np.abs(rho))))
        if abs(imbalance) > 1e-10 * scale:
            raise NeutralityError(imbalance)
        return imbalance

    def solve(self, rho):
        """Return the :class:`PotentialField` of a per-cell source."""
        mesh = self.mesh
        rho = np.asarray(rho, dtype=float)
        source = mesh.volumes * (rho - self.rho0)
        if self.bc_kind == "neumann":
            self.check_neutral(rho)
            phi = self._solve(np.append(source, 0.0))[:-1]
        else:
            phi = self._solve(source)
        i, j = mesh.face_cells[:, 0], mesh.face_cells[:, 1]
        face_field = -(phi[j] - phi[i]) / mesh.face_dists
        if self.bc_kind == "dirichlet":
            bface_field = phi[mesh.bface_cells] / mesh.bface_dists
        else:
            bface_field = np.zeros(len(mesh.bface_areas))
        e_field = cell_average(mesh, face_field, bface_field)
        return PotentialField(
            phi, e_field, self.bc_kind, self.rho0, face_field, bface_field, mesh
        )


def cell_average(mesh: SpatialMesh, face_field, bface_field):
    """Cell vector ``E = 1/2 sum_faces (E.n_out) n_out``."""
    e_field = np.zeros((mesh.n_active, 3))
    normals = mesh.face_normals * face_field[:, None]
    np.add.at(e_field, mesh.face_cells[:, 0], 0.5 * normals)
    np.add.at(e_field, mesh.face_cells[:, 1], 0.5 * normals)
    bnormals = mesh.bface_normals * bface_field[:, None]
    np.add.at(e_field, mesh.bface_cells, 0.5 * bnormals)
    return e_field


def solve_poisson(rho, mesh: SpatialMesh, bc_kind="neumann", rho0=0.0):
    """One-shot :meth:`PoissonSolver.solve`.

    :raises NeutralityError: Neumann source with nonzero total charge
    """
    return PoissonSolver(mesh, bc_kind, rho0).solve(rho)


def boundary_flux(pf: PotentialField):
    """``oint E.n dS`` over the wall faces."""
    return float(np.sum(pf.mesh.bface_areas * pf.bface_field))


def field_energy(pf: PotentialField):
    """Discrete ``int |E|^2 dx``, equal to ``sum vol phi (rho - rho0)``."""
    mesh = pf.mesh
    interior = np.sum(mesh.face_areas * mesh.face_dists * pf.face_field ** 2)
    wall = np.sum(mesh.bface_areas * mesh.bface_dists * pf.bface_field ** 2)
    return float(interior + wall)


def flux_change(history):
    """Largest step-to-step change of a boundary flux history."""
    history = np.asarray(history, dtype=float)
    if history.size < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(history))))


def field_gradient(pf: PotentialField):
    """Green-Gauss gradient ``dE_i/dx_j`` per cell, shape ``(n, 3, 3)``."""
    mesh = pf.mesh
    e = pf.e_field
    first, second = mesh.face_cells[:, 0], mesh.face_cells[:, 1]
    face_e = 0.5 * (e[first] + e[second])
    flux = (mesh.face_areas[:, None, None] * face_e[:, :, None]) * (
        mesh.face_normals[:, None, :]
    )
    gradient = np.zeros((mesh.n_active, 3, 3))
    np.add.at(gradient, first, flux)
    np.add.at(gradient, second, -flux)
    bflux = mesh.bface_areas[:, None, None] * e[mesh.bface_cells][:, :, None]
    np.add.at(gradient, mesh.bface_cells, bflux * mesh.bface_normals[:, None, :])
    return gradient / mesh.volumes[:, None, None]


def field_bound_report(pf: PotentialField, f: DistributionField, p=2.0):
    """Ratio ``||E||_{W^{1,p}_x} / ||f||_{L^p_{x,v}}``; ``0`` for ``f = 0``.

    ``p = inf`` uses cell and grid maxima.
    """
    if not p > 1:
        raise ValueError("p must lie in (1, inf]: {}".format(p))
    denominator = weighted_lp_norm(f, p)
    if denominator == 0:
        return 0.0
    magnitude = np.sqrt(np.sum(pf.e_field ** 2, axis=-1))
    grad = np.sqrt(np.sum(field_gradient(pf) ** 2, axis=(-2, -1)))
    volumes = pf.mesh.volumes
    if np.isinf(p):
        numerator = float(np.max(magnitude) + np.max(grad))
    else:
        numerator = float(np.sum(volumes * magnitude ** p)) ** (1.0 / p)
        numerator += float(np.sum(volumes * grad ** p)) ** (1.0 / p)
    return numerator / denominator
