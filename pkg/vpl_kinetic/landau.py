"""Landau kernel, diffusion matrices and the FFT convolution engine.

Convolutions are quadratures on the velocity lattice,

    (Phi * h)(v_i) = sum_u Phi(v_i - u) w_u h(u),

evaluated with a zero-padded real FFT. The kernel is tabulated on all lattice
offsets ``k h`` with ``k`` in ``[-n_axis, n_axis]^3``; symmetric matrices are
stored as six components in the order ``00, 01, 02, 11, 12, 22``.
"""
from dataclasses import dataclass
import logging
from pathlib import Path

import numpy as np
from scipy import fft
from scipy.interpolate import RegularGridInterpolator

from . import io
from .errors import NumericalError, SmallnessError
from .grid import VELOCITY_AXES, VelocityDifference, VelocityGrid, check_finite

LOGGER = logging.getLogger(__name__)

#: ``lim (int_{[-M,M]^3} |x|^{-1} dx - sum_{k != 0, |k|_inf <= M} |k|^{-1})``
LATTICE_CONSTANT = 2.8372974794806

COMPONENTS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
ORIGIN_RULES = ("lattice", "zero")


def component_index(i, j):
    """Position of ``(i, j)`` in the six-component storage."""
    i, j = min(i, j), max(i, j)
    return COMPONENTS.index((i, j))


def unpack_symmetric(components):
    """``(6, ...)`` components -> ``(..., 3, 3)`` matrices."""
    components = np.asarray(components)
    out = np.empty(components.shape[1:] + (3, 3))
    for c, (i, j) in enumerate(COMPONENTS):
        out[..., i, j] = components[c]
        out[..., j, i] = components[c]
    return out


def phi_kernel(w, gamma=-3.0, origin=None):
    """Return the Landau kernel ``{I - w^ (x) w^} |w|^{gamma+2}``.

    :param w: offsets with a trailing axis of length 3
    :param gamma: kernel exponent in ``[-3, 1]``
    :param origin: scalar ``c`` so that ``Phi(0) = c I``; required when any
        offset vanishes
    :returns: array of shape ``w.shape[:-1] + (3, 3)``
    """
    w = np.asarray(w, dtype=float)
    r = np.sqrt(np.sum(w * w, axis=-1))
    at_origin = r == 0
    if np.any(at_origin) and origin is None:
        raise ValueError("Landau kernel is singular at w = 0 without an origin rule")
    safe = np.where(at_origin, 1.0, r)
    unit = w / safe[..., None]
    projector = np.eye(3) - unit[..., :, None] * unit[..., None, :]
    out = projector * (safe ** (gamma + 2.0))[..., None, None]
    if np.any(at_origin):
        out[at_origin] = origin * np.eye(3)
    return out


def origin_value(grid: VelocityGrid, gamma=-3.0, origin_rule="lattice"):
    """Tabulated ``Phi(0) = c I``; returns ``c``.

    The lattice rule restores the omitted origin cell of the locally
    integrable Coulomb singularity; it only applies to ``gamma = -3``.
    """
    if origin_rule not in ORIGIN_RULES:
        raise ValueError("unknown origin rule: {}".format(origin_rule))
    if gamma > -2.0:
        return 0.0
    if gamma == -2.0:
        # angular mean of the projector
        return 2.0 / 3.0
    if origin_rule == "zero":
        return 0.0
    if gamma != -3.0:
        LOGGER.warning(
            "origin rule 'lattice' needs gamma = -3; using 'zero' (gamma=%s)", gamma
        )
        return 0.0
    return 2.0 / 3.0 * LATTICE_CONSTANT / grid.spacing


class KernelTable:
    """Landau kernel tabulated on all lattice offsets, with FFT convolution.

    :param grid: the velocity grid
    :param gamma: kernel exponent (default Coulomb, ``-3``)
    :param origin_rule: ``"lattice"`` (default) or ``"zero"``
    :param workers: thread count handed to :mod:`scipy.fft`
    """

    def __init__(
        self,
        grid: VelocityGrid,
        gamma: float = -3.0,
        origin_rule: str = "lattice",
        workers: int = 1,
        values=None,
    ):
        if not -3.0 <= gamma <= 1.0:
            raise ValueError("gamma must lie in [-3, 1]: {}".format(gamma))
        self.grid = grid
        self.gamma = float(gamma)
        self.origin_rule = origin_rule
        self.workers = workers
        n = grid.n_axis
        self.offsets = np.arange(-n, n + 1) * grid.spacing
        self.origin = origin_value(grid, self.gamma, origin_rule)
        if values is None:
            axes = (self.offsets,) * 3
            offsets = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
            matrices = phi_kernel(offsets, self.gamma, self.origin)
            values = np.stack([matrices[..., i, j] for i, j in COMPONENTS])
        self.values = np.asarray(values, dtype=float)
        self.values.flags.writeable = False
        self.period = fft.next_fast_len(2 * n + 1, real=True)
        padded = np.zeros((6,) + (self.period,) * 3)
        padded[:, : 2 * n + 1, : 2 * n + 1, : 2 * n + 1] = self.values
        self._kernel_hat = fft.rfftn(padded, axes=VELOCITY_AXES, workers=workers)
        self._sigma = None
        self._sigma_i = None

    @classmethod
    def cached(cls, grid, gamma=-3.0, origin_rule="lattice", cache_dir=None, workers=1):
        """Load the table from ``cache_dir`` if present, else build and store it."""
        if cache_dir is None:
            return cls(grid, gamma, origin_rule, workers)
        path = Path(cache_dir).joinpath(
            "kernel_g{}_v{}_n{}_{}.bin".format(
                gamma, grid.v_max, grid.n_axis, origin_rule
            )
        )
        if path.exists():
            values = io.read_kernel_cache(path, gamma, grid.v_max, grid.n_axis)
            LOGGER.debug("kernel table loaded from %s", path)
            return cls(grid, gamma, origin_rule, workers, values=values)
        table = cls(grid, gamma, origin_rule, workers)
        io.write_kernel_cache(path, gamma, grid.v_max, grid.n_axis, table.values)
        return table

    def matrices(self):
        """The table as ``(2n+1, 2n+1, 2n+1, 3, 3)`` matrices."""
        return unpack_symmetric(self.values)

    def _transform(self, values):
        p = (self.period,) * 3
        return fft.rfftn(values, s=p, axes=VELOCITY_AXES, workers=self.workers)

    def _back(self, spectrum):
        n, m = self.grid.n_axis, self.grid.n_nodes
        p = (self.period,) * 3
        out = fft.irfftn(spectrum, s=p, axes=VELOCITY_AXES, workers=self.workers)
        return out[..., n : n + m, n : n + m, n : n + m]

    def matrix_conv(self, h):
        """``Phi * h`` for a scalar field; returns ``(..., N, N, N, 3, 3)``."""
        h = np.asarray(h, dtype=float)
        check_finite(h, "convolution source")
        spectrum = self._transform(h * self.grid.quad_weights)
        components = [self._back(spectrum * self._kernel_hat[c]) for c in range(6)]
        return unpack_symmetric(components)

    def vector_conv(self, s):
        """``sum_j Phi^{ij} * s_j`` for a vector field ``(..., N, N, N, 3)``."""
        s = np.asarray(s, dtype=float)
        check_finite(s, "convolution source")
        weights = self.grid.quad_weights
        spectra = [self._transform(s[..., j] * weights) for j in range(3)]
        out = []
        for i in range(3):
            total = sum(
                spectra[j] * self._kernel_hat[component_index(i, j)] for j in range(3)
            )
            out.append(self._back(total))
        return np.stack(out, axis=-1)

    def sigma(self):
        """Maxwellian diffusion matrix ``sigma = Phi * mu`` (cached)."""
        if self._sigma is None:
            self._sigma = sigma_conv(self, self.grid.mu)
            self._sigma.flags.writeable = False
        return self._sigma

    def sigma_i(self):
        """``sigma^i = Phi^{ij} * (v_j mu)`` (cached)."""
        if self._sigma_i is None:
            self._sigma_i = sigma_i_field(self)
            self._sigma_i.flags.writeable = False
        return self._sigma_i


def sigma_conv(table: KernelTable, h):
    """Matrix-valued ``Phi * h`` on the velocity grid."""
    return table.matrix_conv(h)


def sigma_i_field(table: KernelTable):
    """Return ``sigma^i = Phi^{ij} * (v_j mu)`` as ``(N, N, N, 3)``."""
    grid = table.grid
    return table.vector_conv(grid.v * grid.mu[..., None])


def direct_matrix(table: KernelTable):
    """Dense ``(6, M, M)`` convolution matrices with the weights folded in.

    ``M = N^3``; entry ``[c, i, j]`` is ``Phi_c(v_i - v_j) w_j``. Small grids only.
    """
    grid = table.grid
    n = grid.n_axis
    idx = np.indices(grid.shape).reshape(3, -1).T
    diff = idx[:, None, :] - idx[None, :, :] + n
    dense = table.values[:, diff[..., 0], diff[..., 1], diff[..., 2]]
    return dense * grid.quad_weights.reshape(-1)[None, None, :]


def direct_convolution(table: KernelTable, h):
    """Brute-force ``O(N^6)`` evaluation of :meth:`KernelTable.matrix_conv`."""
    grid = table.grid
    h = np.asarray(h, dtype=float)
    lead = h.shape[:-3]
    flat = h.reshape((-1, int(np.prod(grid.shape))))
    dense = direct_matrix(table)
    components = np.einsum("cij,bj->cbi", dense, flat)
    components = components.reshape((6,) + lead + grid.shape)
    return unpack_symmetric(components)


@dataclass
class DiffusionField:
    """Collision coefficients ``sigma_G`` and ``a_g`` per (cell, node)."""

    sigma: np.ndarray
    drift: np.ndarray
    source_g: str = "maxwellian"
    #: ``Phi * (sqrt(mu) g)``, so that ``sigma = Phi * mu + perturbation``
    perturbation: np.ndarray = None

    def eigenvalues(self):
        return np.linalg.eigvalsh(self.sigma)

    def min_eigenvalue(self):
        return float(np.min(self.eigenvalues()[..., 0]))


def drift_field(table: KernelTable, values):
    """``a_g^i = -Phi^{ij} * (v_j sqrt(mu) g + sqrt(mu) d_j g)``."""
    grid = table.grid
    values = np.asarray(values, dtype=float)
    if not np.any(values):
        return np.zeros(values.shape + (3,))
    gradient = VelocityDifference(grid).gradient(values)
    source = grid.v * (grid.sqrt_mu * values)[..., None]
    source = source + grid.sqrt_mu[..., None] * gradient
    return -table.vector_conv(source)


def build_sigma_G(table: KernelTable, g, source_g="g", check=True, with_drift=True):
    """Return ``sigma_G = Phi * (mu + sqrt(mu) g)`` and ``a_g``.

    ``a_g^i = -Phi^{ij} * (v_j sqrt(mu) g + sqrt(mu) d_j g)`` with ``d_j`` the
    centered difference; it is left as ``None`` when ``with_drift`` is false.

    :param g: array ``(..., N, N, N)`` or a field with ``.values``
    :raises SmallnessError: if ``||g||_inf >= 1`` or ``sigma_G`` loses positivity
    """
    grid = table.grid
    values = np.asarray(getattr(g, "values", g), dtype=float)
    check_finite(values, "g")
    sup = float(np.max(np.abs(values))) if values.size else 0.0
    if sup >= 1.0:
        raise SmallnessError(
            "smallness regime violated: ||g||_inf = {:.3e}".format(sup)
        )
    lead = values.shape[:-3]
    if sup == 0.0:
        sigma = np.broadcast_to(table.sigma(), lead + table.sigma().shape).copy()
        drift = np.zeros(lead + grid.shape + (3,)) if with_drift else None
        perturbation = np.zeros(lead + grid.shape + (3, 3))
        return DiffusionField(sigma, drift, source_g, perturbation)
    weighted = grid.sqrt_mu * values
    perturbation = table.matrix_conv(weighted)
    sigma = table.sigma() + perturbation
    drift = drift_field(table, values) if with_drift else None
    field = DiffusionField(sigma, drift, source_g, perturbation)
    if check:
        low = field.min_eigenvalue()
        if low < 0:
            raise SmallnessError(
                "sigma_G has a negative eigenvalue ({:.3e}); "
                "g too large or grid too coarse".format(low)
            )
    return field


@dataclass
class Eigenvalues:
    """Closed-form eigenvalues of the Maxwellian diffusion matrix."""

    lambda1: np.ndarray
    lambda2: np.ndarray
    degenerate: np.ndarray


def eigenvalue_formulas(v, grid: VelocityGrid, gamma=-3.0, origin_rule="lattice"):
    """Return ``lambda_1, lambda_2`` of ``sigma(v)`` by quadrature.

    ``lambda_1 = int {1 - (v^.w^)^2} mu(v - w) |w|^{gamma+2} dw`` and
    ``lambda_2 = int {1 - |v^ x w^|^2 / 2} mu(v - w) |w|^{gamma+2} dw``,
    evaluated with the grid quadrature in the variable ``u = v - w`` and the
    same origin correction as the kernel table. At ``v = 0`` both equal the
    isotropic value and ``degenerate`` is set.

    :param v: one velocity ``(3,)`` or a batch ``(m, 3)``
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    c0 = origin_value(grid, gamma, origin_rule)
    u = grid.nodes
    weights = grid.quad_weights.reshape(-1)
    mu_u = grid.mu.reshape(-1)
    lam1, lam2, flag = [], [], []
    for point in v:
        w = point[None, :] - u
        r = np.sqrt(np.sum(w * w, axis=-1))
        on_node = r == 0
        safe = np.where(on_node, 1.0, r)
        radial = np.where(on_node, 0.0, safe ** (gamma + 2.0)) * mu_u * weights
        # the origin cell carries Phi(0) = c0 I with weight w_u at u = v
        correction = float(np.sum(c0 * mu_u[on_node] * weights[on_node]))
        speed = np.linalg.norm(point)
        if speed == 0:
            iso = 2.0 / 3.0 * float(np.sum(radial)) + correction
            lam1.append(iso)
            lam2.append(iso)
            flag.append(True)
            continue
        cos_sq = (np.dot(w, point) / (safe * speed)) ** 2
        lam1.append(float(np.sum((1.0 - cos_sq) * radial)) + correction)
        lam2.append(float(np.sum(0.5 * (1.0 + cos_sq) * radial)) + correction)
        flag.append(False)
    return Eigenvalues(np.array(lam1), np.array(lam2), np.array(flag))


def sigma_bounds_fit(sigma, grid: VelocityGrid):
    """Fit the pinching ``c1 <v>^-3 <= eig(sigma) <= c2 <v>^-1``.

    :returns: ``(c1, c2)``
    """
    eig = np.linalg.eigvalsh(sigma)
    c1 = float(np.min(eig[..., 0] * grid.bracket ** 3))
    c2 = float(np.max(eig[..., -1] * grid.bracket))
    return c1, c2


def drift_decay_constant(vector_field, grid: VelocityGrid):
    """Smallest ``C`` with ``|a(v)| <= C <v>^-1`` over the grid."""
    magnitude = np.sqrt(np.sum(np.asarray(vector_field) ** 2, axis=-1))
    return float(np.max(magnitude * grid.bracket))


def sigma_interpolator(grid: VelocityGrid, sigma):
    """Return a callable ``v -> sigma(v)`` by trilinear interpolation.

    Points outside the grid are clamped to the cube.
    """
    axes = (grid.axis,) * 3
    interpolators = [
        RegularGridInterpolator(axes, sigma[..., i, j], method="linear")
        for i, j in COMPONENTS
    ]

    def evaluate(v):
        v = np.clip(np.asarray(v, dtype=float), -grid.v_max, grid.v_max)
        flat = v.reshape(-1, 3)
        components = [interp(flat) for interp in interpolators]
        return unpack_symmetric(components).reshape(v.shape[:-1] + (3, 3))

    return evaluate


def stiffness_bound(sigma, grid: VelocityGrid, safety=0.9):
    """Explicit diffusion bound ``safety h^2 / (6 max eig sigma)``."""
    top = float(np.max(np.linalg.eigvalsh(sigma)[..., -1]))
    if not top > 0:
        raise NumericalError("diffusion matrix has no positive eigenvalue")
    return safety * grid.spacing ** 2 / (6.0 * top)
