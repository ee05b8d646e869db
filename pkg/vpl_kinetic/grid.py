"""Velocity grid, spatial mesh and the weighted norms built on them.

The velocity grid is a uniform tensor lattice on ``[-v_max, v_max]^3``;
``n_axis`` counts intervals per axis, so every axis carries ``n_axis + 1``
nodes including ``0`` and ``±v_max``. Quadrature is the trapezoid rule
(half weights on the faces of the cube).

Fields on the grid are plain numpy arrays whose three trailing axes are the
velocity axes; any leading axes (spatial cells, time levels) broadcast.
Vector fields append a trailing axis of length 3, matrix fields two.
"""
from dataclasses import dataclass, field
from functools import lru_cache
import logging

import numpy as np
from scipy import sparse

from .errors import NumericalError

LOGGER = logging.getLogger(__name__)

VELOCITY_AXES = (-3, -2, -1)


def maxwellian(v):
    """Return the normalized global Maxwellian ``exp(-|v|^2)``.

    :param v: array with a trailing axis of length 3
    """
    v = np.asarray(v, dtype=float)
    return np.exp(-np.sum(v * v, axis=-1))


def japanese_bracket(v):
    """Return ``<v> = sqrt(1 + |v|^2)`` for a trailing velocity axis."""
    v = np.asarray(v, dtype=float)
    return np.sqrt(1.0 + np.sum(v * v, axis=-1))


def weight_bracket(v, theta):
    """Return ``<v>^theta``; on a grid use the cached :meth:`VelocityGrid.weight`."""
    return japanese_bracket(v) ** float(theta)


def check_finite(values, what="field"):
    """Raise :class:`NumericalError` if ``values`` holds NaN or Inf."""
    if not np.all(np.isfinite(values)):
        raise NumericalError("{} contains non-finite values".format(what))


class VelocityGrid:
    """Uniform, symmetric velocity lattice with trapezoid weights.

    Instances are immutable: all arrays are flagged read-only.

    :param v_max: velocity cutoff
    :param n_axis: intervals per axis (even, at least 8)
    """

    def __init__(self, v_max: float = 6.0, n_axis: int = 32):
        if int(n_axis) != n_axis or n_axis < 8 or n_axis % 2:
            raise ValueError("n_axis must be an even integer >= 8: {}".format(n_axis))
        if not v_max > 0:
            raise ValueError("v_max must be positive: {}".format(v_max))
        self.v_max = float(v_max)
        self.n_axis = int(n_axis)
        self.spacing = 2.0 * self.v_max / self.n_axis
        self.n_nodes = self.n_axis + 1
        self.shape = (self.n_nodes,) * 3

        self.axis = np.linspace(-self.v_max, self.v_max, self.n_nodes)
        # exact symmetry of the node set
        self.axis = 0.5 * (self.axis - self.axis[::-1])
        self.axis_weights = np.full(self.n_nodes, self.spacing)
        self.axis_weights[[0, -1]] = 0.5 * self.spacing

        v1, v2, v3 = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        self.v = np.stack([v1, v2, v3], axis=-1)
        self.speed_sq = v1 ** 2 + v2 ** 2 + v3 ** 2
        w = self.axis_weights
        self.quad_weights = w[:, None, None] * w[None, :, None] * w[None, None, :]
        self.mu = np.exp(-self.speed_sq)
        self.sqrt_mu = np.exp(-0.5 * self.speed_sq)
        self.bracket = np.sqrt(1.0 + self.speed_sq)
        for array in (
            self.axis,
            self.axis_weights,
            self.v,
            self.speed_sq,
            self.quad_weights,
            self.mu,
            self.sqrt_mu,
            self.bracket,
        ):
            array.flags.writeable = False

    def __repr__(self):
        return "VelocityGrid(v_max={}, n_axis={})".format(self.v_max, self.n_axis)

    def __eq__(self, other):
        return (
            isinstance(other, VelocityGrid)
            and self.v_max == other.v_max
            and self.n_axis == other.n_axis
        )

    def __hash__(self):
        return hash((self.v_max, self.n_axis))

    @property
    def nodes(self):
        """The lattice flattened to shape ``(n_nodes**3, 3)``."""
        return self.v.reshape(-1, 3)

    @property
    def volume(self):
        return (2.0 * self.v_max) ** 3

    def weight(self, theta):
        """Return the cached ``<v>^theta`` array."""
        return _bracket_power(self, float(theta))

    def integrate(self, h):
        """Trapezoid quadrature over the three trailing velocity axes."""
        h = np.asarray(h, dtype=float)
        return np.sum(h * self.quad_weights, axis=VELOCITY_AXES)

    def inner(self, f, g):
        """Discrete ``L^2_v`` inner product, per leading index."""
        return self.integrate(np.asarray(f) * np.asarray(g))

    def reflect_index(self):
        """Index permutation of one axis realizing ``v_k -> -v_k``."""
        return np.arange(self.n_nodes)[::-1]


@lru_cache(maxsize=64)
def _bracket_power(grid, theta):
    weight = grid.bracket ** theta
    weight.flags.writeable = False
    return weight


def integrate_v(grid: VelocityGrid, h):
    """Return the velocity quadrature ``sum h(node) w(node)``.

    :raises NumericalError: on non-finite input
    """
    check_finite(h, "integrand")
    return grid.integrate(h)


@dataclass(frozen=True, eq=False)
class SpatialMesh:
    """Cartesian finite-volume mesh, possibly masked to a curved domain.

    Positions are padded to 3-vectors. Interior faces join ``face_cells[k, 0]``
    to ``face_cells[k, 1]`` with unit normal ``face_normals[k]`` pointing from
    the first to the second cell. Boundary faces belong to ``bface_cells`` and
    carry outward unit normals.
    """

    dim: int
    kind: str
    extent: float
    n_cells: int
    spacing: float
    cell_centers: np.ndarray
    volumes: np.ndarray
    face_cells: np.ndarray
    face_areas: np.ndarray
    face_dists: np.ndarray
    face_normals: np.ndarray
    bface_cells: np.ndarray
    bface_areas: np.ndarray
    bface_dists: np.ndarray
    bface_normals: np.ndarray
    bface_centers: np.ndarray
    index: np.ndarray = field(repr=False, default=None)

    @property
    def n_active(self):
        return len(self.volumes)

    @property
    def total_volume(self):
        return float(np.sum(self.volumes))

    @classmethod
    def slab(cls, length: float = 1.0, n_cells: int = 32):
        """The interval ``[0, length]`` with unit cross-section."""
        if n_cells < 2:
            raise ValueError("slab needs at least 2 cells: {}".format(n_cells))
        dx = float(length) / n_cells
        centers = np.zeros((n_cells, 3))
        centers[:, 0] = (np.arange(n_cells) + 0.5) * dx
        face_cells = np.stack([np.arange(n_cells - 1), np.arange(1, n_cells)], axis=1)
        face_normals = np.zeros((n_cells - 1, 3))
        face_normals[:, 0] = 1.0
        bface_normals = np.array([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        return cls(
            dim=1,
            kind="slab",
            extent=float(length),
            n_cells=n_cells,
            spacing=dx,
            cell_centers=centers,
            volumes=np.full(n_cells, dx),
            face_cells=face_cells,
            face_areas=np.ones(n_cells - 1),
            face_dists=np.full(n_cells - 1, dx),
            face_normals=face_normals,
            bface_cells=np.array([0, n_cells - 1]),
            bface_areas=np.ones(2),
            bface_dists=np.full(2, 0.5 * dx),
            bface_normals=bface_normals,
            bface_centers=np.array([[0.0, 0.0, 0.0], [float(length), 0.0, 0.0]]),
            index=np.arange(n_cells),
        )

    @classmethod
    def disk(cls, radius: float = 1.0, n_cells: int = 16):
        """Staircase disk of the given radius centred at the origin.

        Cells of the ``n_cells x n_cells`` square ``[-R, R]^2`` whose centre
        lies inside the disk are active; faces towards inactive cells are wall
        faces with axis-aligned normals.
        """
        if n_cells < 4:
            raise ValueError("disk needs at least 4 cells per axis: {}".format(n_cells))
        dx = 2.0 * radius / n_cells
        coords = -radius + (np.arange(n_cells) + 0.5) * dx
        cx, cy = np.meshgrid(coords, coords, indexing="ij")
        active = cx ** 2 + cy ** 2 < radius ** 2
        index = np.full(active.shape, -1)
        index[active] = np.arange(int(active.sum()))
        centers = np.zeros((int(active.sum()), 3))
        centers[:, 0] = cx[active]
        centers[:, 1] = cy[active]

        face_cells, face_normals = [], []
        bface_cells, bface_normals, bface_centers = [], [], []
        for i, j in zip(*np.nonzero(active)):
            me = index[i, j]
            for axis, step in ((0, 1), (0, -1), (1, 1), (1, -1)):
                ni, nj = (i + step, j) if axis == 0 else (i, j + step)
                normal = np.zeros(3)
                normal[axis] = step
                inside = 0 <= ni < n_cells and 0 <= nj < n_cells and active[ni, nj]
                if inside:
                    if step == 1:
                        face_cells.append((me, index[ni, nj]))
                        face_normals.append(normal)
                else:
                    bface_cells.append(me)
                    bface_normals.append(normal)
                    bface_centers.append(centers[me] + 0.5 * dx * normal)
        n_faces, n_bfaces = len(face_cells), len(bface_cells)
        return cls(
            dim=2,
            kind="disk",
            extent=float(radius),
            n_cells=n_cells,
            spacing=dx,
            cell_centers=centers,
            volumes=np.full(len(centers), dx * dx),
            face_cells=np.array(face_cells, dtype=int).reshape(n_faces, 2),
            face_areas=np.full(n_faces, dx),
            face_dists=np.full(n_faces, dx),
            face_normals=np.array(face_normals).reshape(n_faces, 3),
            bface_cells=np.array(bface_cells, dtype=int),
            bface_areas=np.full(n_bfaces, dx),
            bface_dists=np.full(n_bfaces, 0.5 * dx),
            bface_normals=np.array(bface_normals).reshape(n_bfaces, 3),
            bface_centers=np.array(bface_centers).reshape(n_bfaces, 3),
            index=index,
        )

    def integrate(self, values):
        """Sum ``volume * value`` over the leading cell axis."""
        values = np.asarray(values, dtype=float)
        shape = (-1,) + (1,) * (values.ndim - 1)
        return np.sum(values * self.volumes.reshape(shape), axis=0)


@dataclass
class DistributionField:
    """Perturbation ``f(t, x, v)`` on a spatial mesh times a velocity grid.

    ``values`` has shape ``(n_active_cells,) + grid.shape``.
    """

    values: np.ndarray
    grid: VelocityGrid
    mesh: SpatialMesh
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.mesh.n_active,) + self.grid.shape
        if self.values.shape != expected:
            raise ValueError(
                "field shape {} does not match mesh x grid {}".format(
                    self.values.shape, expected
                )
            )

    @classmethod
    def zeros(cls, grid, mesh, time=0.0):
        return cls(np.zeros((mesh.n_active,) + grid.shape), grid, mesh, time)

    def copy(self, values=None, time=None):
        return DistributionField(
            np.array(self.values if values is None else values, dtype=float),
            self.grid,
            self.mesh,
            self.time if time is None else time,
        )

    def check_finite(self):
        check_finite(self.values, "distribution field")

    def full_distribution(self):
        """Return ``F = mu + sqrt(mu) f``."""
        return self.grid.mu + self.grid.sqrt_mu * self.values

    def min_full_distribution(self):
        return float(np.min(self.full_distribution()))

    def is_physical(self, tol=1e-12):
        """Whether ``F >= -tol`` everywhere."""
        return self.min_full_distribution() >= -tol


def weighted_lp(grid, volumes, values, p=2.0, theta=0.0):
    """``||<v>^theta f||_{L^p}`` over cells (with ``volumes``) and nodes."""
    values = np.asarray(values, dtype=float)
    check_finite(values)
    weighted = np.abs(values) * grid.weight(theta)
    if np.isinf(p):
        return float(np.max(weighted)) if weighted.size else 0.0
    if p < 1:
        raise ValueError("p must lie in [1, inf]: {}".format(p))
    per_cell = grid.integrate(weighted ** p)
    volumes = np.ones(1) if volumes is None else np.asarray(volumes)
    total = float(np.sum(per_cell * volumes))
    return total ** (1.0 / p)


def weighted_lp_norm(f: DistributionField, p=2.0, theta=0.0):
    """Return ``||<v>^theta f||_{L^p_{x,v}}``; ``p = inf`` is the grid maximum.

    :raises NumericalError: if the field is not finite
    """
    return weighted_lp(f.grid, f.mesh.volumes, f.values, p, theta)


def embedding_constant(grid: VelocityGrid, mesh: SpatialMesh, p: float, l: float):
    """Constant of ``||f||_{p,theta} <= C ||f||_{inf,theta+l}`` on this grid.

    Computed with the same quadrature as the norms, so the inequality holds
    exactly for discrete fields.
    """
    if not l > 3.0 / p:
        raise ValueError("embedding needs l > 3/p (l={}, p={})".format(l, p))
    tail = float(grid.integrate(grid.weight(-p * l)))
    return (mesh.total_volume * tail) ** (1.0 / p)


class VelocityDifference:
    """Second-order velocity differences on a :class:`VelocityGrid`.

    ``D`` is the centered difference with one-sided second-order stencils on
    the first and last node (exact on quadratics). ``D*`` is its adjoint in
    the weighted inner product, ``D* = W^{-1} D^T W``, so that
    ``<D* J, g> = <J, D g>`` holds exactly for the trapezoid weights.
    """

    def __init__(self, grid: VelocityGrid):
        self.grid = grid
        n, h = grid.n_nodes, grid.spacing
        matrix = np.zeros((n, n))
        for i in range(1, n - 1):
            matrix[i, i - 1] = -0.5 / h
            matrix[i, i + 1] = 0.5 / h
        matrix[0, :3] = np.array([-3.0, 4.0, -1.0]) * 0.5 / h
        matrix[-1, -3:] = np.array([1.0, -4.0, 3.0]) * 0.5 / h
        w = grid.axis_weights
        self.matrix = matrix
        self.adjoint_matrix = matrix.T * w[None, :] / w[:, None]

    @staticmethod
    def _along(matrix, values, axis):
        axis = values.ndim + axis
        out = np.tensordot(values, matrix, axes=([axis], [1]))
        return np.moveaxis(out, -1, axis)

    def derivative(self, values, axis):
        """``D`` along one of the trailing velocity axes (``-3, -2, -1``)."""
        return self._along(self.matrix, np.asarray(values, dtype=float), axis)

    def gradient(self, values):
        """Return ``D f`` with a trailing axis of length 3."""
        values = np.asarray(values, dtype=float)
        return np.stack([self.derivative(values, a) for a in VELOCITY_AXES], axis=-1)

    def adjoint(self, flux):
        """Return ``sum_a D*_a J_a``, the discrete analogue of ``-div J``."""
        flux = np.asarray(flux, dtype=float)
        total = self._along(self.adjoint_matrix, flux[..., 0], -3)
        total = total + self._along(self.adjoint_matrix, flux[..., 1], -2)
        return total + self._along(self.adjoint_matrix, flux[..., 2], -1)

    def adjoint_along(self, values, axis):
        return self._along(self.adjoint_matrix, np.asarray(values, dtype=float), axis)

    def sparse_matrices(self):
        """Return ``(D_a, D*_a)`` for ``a = 0, 1, 2`` as sparse matrices.

        Rows and columns follow C-order flattening of the velocity lattice.
        """
        eye = sparse.identity(self.grid.n_nodes, format="csr")
        d1 = sparse.csr_matrix(self.matrix)
        a1 = sparse.csr_matrix(self.adjoint_matrix)
        factors = (
            lambda m: sparse.kron(sparse.kron(m, eye), eye, format="csr"),
            lambda m: sparse.kron(sparse.kron(eye, m), eye, format="csr"),
            lambda m: sparse.kron(sparse.kron(eye, eye), m, format="csr"),
        )
        return [(build(d1), build(a1)) for build in factors]
