"""Linearized Landau operators, the bilinear collision term and projections.

All operators are written on ``q = f / sqrt(mu)`` in divergence form,

    A f = -mu^{-1/2} D*[mu sigma D q]
    K f =  mu^{-1/2} D*[mu Phi * (mu D q)]
    Gamma[g, f] = -mu^{-1/2} D*[(Phi * G) D F - F Phi * (D G)],

with ``G = sqrt(mu) g``, ``F = sqrt(mu) f``, ``D`` the centered velocity
difference and ``D*`` its weighted adjoint. In this form ``L = -A - K`` is
symmetric positive semidefinite for the quadrature inner product, its kernel
is exactly the span of the five collision invariants, and
``<sqrt(mu), Gamma[g, f]> = 0`` holds to rounding.
"""
from dataclasses import dataclass
import logging

import numpy as np
from scipy import sparse

from .grid import VELOCITY_AXES, VelocityDifference, VelocityGrid
from .landau import (
    DiffusionField,
    KernelTable,
    build_sigma_G,
    component_index,
    direct_convolution,
    direct_matrix,
    drift_field,
)

LOGGER = logging.getLogger(__name__)


def _contract(matrix, vector):
    return np.einsum("...ij,...j->...i", matrix, vector)


@dataclass
class MacroMoments:
    """Coefficients of ``Pf = {a + v.b + |v|^2 c} sqrt(mu)`` per cell."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def reconstruct(self, grid: VelocityGrid):
        a = np.asarray(self.a)[..., None, None, None]
        c = np.asarray(self.c)[..., None, None, None]
        b = np.asarray(self.b)
        vb = np.einsum("...i,abci->...abc", b, grid.v)
        return (a + vb + c * grid.speed_sq) * grid.sqrt_mu


class CollisionInvariantBasis:
    """Orthonormalized ``{sqrt(mu), v_i sqrt(mu), |v|^2 sqrt(mu)}``.

    ``functions[k] = sum_m change[k, m] raw[m]``, so raw coefficients of a
    projection are ``coefficients @ change``.
    """

    def __init__(self, grid: VelocityGrid):
        self.grid = grid
        raw = [grid.sqrt_mu]
        raw += [grid.v[..., i] * grid.sqrt_mu for i in range(3)]
        raw += [grid.speed_sq * grid.sqrt_mu]
        self.raw = np.stack(raw)
        change = np.zeros((5, 5))
        functions = []
        for k in range(5):
            u = self.raw[k].copy()
            row = np.zeros(5)
            row[k] = 1.0
            # second sweep re-orthogonalizes
            for _ in range(2):
                for i, e in enumerate(functions):
                    p = float(grid.inner(u, e))
                    u = u - p * e
                    row = row - p * change[i]
            norm = float(np.sqrt(grid.inner(u, u)))
            functions.append(u / norm)
            change[k] = row / norm
        self.functions = np.stack(functions)
        self.change = change
        flat = self.functions.reshape(5, -1) * grid.quad_weights.reshape(-1)
        self.gram = flat @ self.functions.reshape(5, -1).T

    def coefficients(self, f):
        """``<f, e_k>`` with a trailing axis of length 5."""
        f = np.asarray(f, dtype=float)
        return np.stack([self.grid.inner(f, e) for e in self.functions], axis=-1)

    def combine(self, coefficients):
        return np.einsum("...k,kabc->...abc", coefficients, self.functions)


def project_P(basis: CollisionInvariantBasis, f):
    """Return ``(Pf, MacroMoments)`` for the orthogonal projection onto N(L)."""
    coefficients = basis.coefficients(f)
    raw = coefficients @ basis.change
    moments = MacroMoments(a=raw[..., 0], b=raw[..., 1:4], c=raw[..., 4])
    return basis.combine(coefficients), moments


class CollisionOperators:
    """Matrix-free ``A``, ``K``, ``L`` and ``Gamma`` on one velocity grid.

    Arrays carry any number of leading (cell) axes.
    """

    def __init__(self, table: KernelTable):
        self.table = table
        self.grid = grid = table.grid
        self.diff = VelocityDifference(grid)
        self.sigma = table.sigma()
        self.sigma_vv = np.einsum("...i,...ij,...j->...", grid.v, self.sigma, grid.v)
        self.basis = CollisionInvariantBasis(grid)
        self._mu = grid.mu[..., None]

    def inner(self, f, g):
        """Quadrature inner product over velocity, per leading index."""
        return self.grid.inner(f, g)

    def psi(self, f):
        return self.diff.gradient(np.asarray(f, dtype=float) / self.grid.sqrt_mu)

    def apply_A(self, f, sigma=None):
        """``A f = d_i(sigma^ij d_j f) - sigma^ij v_i v_j f + d_i sigma^i f``."""
        sigma = self.sigma if sigma is None else sigma
        flux = self._mu * _contract(sigma, self.psi(f))
        return -self.diff.adjoint(flux) / self.grid.sqrt_mu

    def apply_K(self, f):
        mu_psi = self._mu * self.psi(f)
        flux = self._mu * self.table.vector_conv(mu_psi)
        return self.diff.adjoint(flux) / self.grid.sqrt_mu

    def apply_L(self, f):
        """``L f = -A f - K f``."""
        return -self.apply_A(f) - self.apply_K(f)

    def apply_Gamma(self, g, f):
        """The bilinear collision term ``Gamma[g, f]``."""
        g = np.asarray(g, dtype=float)
        f = np.asarray(f, dtype=float)
        if not np.any(g) or not np.any(f):
            return np.zeros(np.broadcast(g, f).shape)
        big_g = self.grid.sqrt_mu * g
        big_f = self.grid.sqrt_mu * f
        flux = _contract(self.table.matrix_conv(big_g), self.diff.gradient(big_f))
        flux = flux - big_f[..., None] * self.table.vector_conv(
            self.diff.gradient(big_g)
        )
        return -self.diff.adjoint(flux) / self.grid.sqrt_mu

    def sigma_inner(self, f, g, theta=0.0, volumes=None):
        """``<f, g>_{sigma, theta}`` with the Maxwellian ``sigma``.

        Summed over the leading cell axis with ``volumes`` when given,
        otherwise returned per leading index.
        """
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        df, dg = self.diff.gradient(f), self.diff.gradient(g)

        def density(a, da, b, db):
            return np.einsum("...i,...ij,...j->...", da, self.sigma, db) + (
                self.sigma_vv * a * b
            )

        symmetric = 0.5 * (density(f, df, g, dg) + density(g, dg, f, df))
        per_cell = self.grid.integrate(symmetric * self.grid.weight(2.0 * theta))
        if volumes is None:
            return per_cell
        return float(np.sum(per_cell * np.asarray(volumes)))

    def sigma_norm(self, f, theta=0.0, volumes=None):
        value = self.sigma_inner(f, f, theta, volumes)
        return np.sqrt(np.maximum(value, 0.0))

    def project_P(self, f):
        return project_P(self.basis, f)


def apply_A(operators, f):
    return operators.apply_A(f)


def apply_K(operators, f):
    return operators.apply_K(f)


def apply_L(operators, f):
    return operators.apply_L(f)


def apply_Gamma(operators, g, f):
    return operators.apply_Gamma(g, f)


def sigma_inner(operators, f, g, theta=0.0, volumes=None):
    return operators.sigma_inner(f, g, theta, volumes)


class RearrangedCoefficients:
    """Kinetic Fokker-Planck form of ``-L f + Gamma[g, f]``.

    ``-L f + Gamma[g, f] = -D*(sigma_G D f) + a_g . D f + Kbar_g f`` up to
    discretization error, with

        Kbar_g f = K f + (d_i sigma^i - sigma^ij v_i v_j - d_i b^i + v . b) f,
        b = Phi * (sqrt(mu) D g).

    ``b`` is written with ``v`` outside the convolution, which is exact on
    the lattice since ``Phi(w) w = 0``. :meth:`apply_gamma` evaluates the
    divergence form of ``Gamma[g, .]`` with the convolutions of ``g`` cached.
    """

    def __init__(
        self, operators: CollisionOperators, g, coefficients: DiffusionField
    ):
        self.operators = operators
        self.g = np.asarray(g, dtype=float)
        self.coefficients = coefficients
        grid = operators.grid
        big_g = grid.sqrt_mu * self.g
        if np.any(big_g):
            gamma_flux = operators.table.vector_conv(operators.diff.gradient(big_g))
        else:
            gamma_flux = np.zeros(self.g.shape + (3,))
        #: ``Phi * D(sqrt(mu) g)``
        self.gamma_flux = gamma_flux
        self._kbar_multiplier = None

    @property
    def sigma_G(self):
        return self.coefficients.sigma

    @property
    def drift(self):
        if self.coefficients.drift is None:
            self.coefficients.drift = drift_field(self.operators.table, self.g)
        return self.coefficients.drift

    @property
    def kbar_multiplier(self):
        """The multiplicative part of ``Kbar_g``, per node."""
        if self._kbar_multiplier is None:
            ops = self.operators
            grid = ops.grid
            diff = ops.diff
            sigma_i = ops.table.sigma_i()
            b = ops.table.vector_conv(grid.sqrt_mu[..., None] * diff.gradient(self.g))
            divergence = sum(
                diff.derivative(sigma_i[..., a] - b[..., a], axis)
                for a, axis in enumerate(VELOCITY_AXES)
            )
            self._kbar_multiplier = (
                divergence - ops.sigma_vv + np.sum(grid.v * b, axis=-1)
            )
        return self._kbar_multiplier

    def apply_diffusion(self, f):
        diff = self.operators.diff
        return -diff.adjoint(_contract(self.sigma_G, diff.gradient(f)))

    def apply_drift(self, f):
        return np.sum(self.drift * self.operators.diff.gradient(f), axis=-1)

    def apply_kbar(self, f):
        return self.operators.apply_K(f) + self.kbar_multiplier * f

    def apply(self, f):
        return self.apply_diffusion(f) + self.apply_drift(f) + self.apply_kbar(f)

    def apply_gamma(self, f):
        """``Gamma[g, f]`` in divergence form; matches ``apply_Gamma(g, f)``."""
        ops = self.operators
        big_f = ops.grid.sqrt_mu * np.asarray(f, dtype=float)
        flux = _contract(self.coefficients.perturbation, ops.diff.gradient(big_f))
        flux = flux - big_f[..., None] * self.gamma_flux
        return -ops.diff.adjoint(flux) / ops.grid.sqrt_mu


def rearranged_coefficients(
    operators: CollisionOperators, g, check=True, with_drift=True
):
    """Return the ``(sigma_G, a_g, Kbar_g)`` splitting for a given ``g``.

    ``a_g`` is built on first use when ``with_drift`` is false.

    :raises SmallnessError: when ``sigma_G`` loses positivity
    """
    coefficients = build_sigma_G(
        operators.table, g, check=check, with_drift=with_drift
    )
    return RearrangedCoefficients(operators, g, coefficients)


def kbar_band_report(
    coefficients: RearrangedCoefficients, f, theta=1.0, p=2.0, bands=(2, 4)
):
    """Fitted constants of the band-limited ``L^p`` estimate of ``Kbar_g f``.

    For each ``n`` returns ``n^theta ||Kbar f||_{L^p(n <= |v| < 2n)}``
    divided by ``||D f||_p + ||<v>^theta f||_p``.
    """
    ops = coefficients.operators
    grid = ops.grid
    f = np.asarray(f, dtype=float)
    kbar = coefficients.apply_kbar(f)
    grad = np.sqrt(np.sum(ops.diff.gradient(f) ** 2, axis=-1))

    def norm(values, mask=None):
        values = np.abs(values) ** p
        if mask is not None:
            values = values * mask
        return float(np.sum(grid.integrate(values))) ** (1.0 / p)

    scale = norm(grad) + norm(f * grid.weight(theta))
    speed = np.sqrt(grid.speed_sq)
    report = {}
    for n in bands:
        mask = (speed >= n) & (speed < 2 * n)
        report[n] = n ** theta * norm(kbar, mask) / scale if scale > 0 else 0.0
    return report


@dataclass
class DenseOperators:
    """Explicitly assembled ``A``, ``K``, ``L`` acting on flattened fields."""

    A: np.ndarray
    K: np.ndarray
    L: np.ndarray


def assemble_dense(operators: CollisionOperators):
    """Assemble dense matrices from sparse differences and direct quadrature.

    Independent of the FFT engine; meant for grids up to ``n_axis = 8``.
    """
    grid = operators.grid
    table = operators.table
    size = int(np.prod(grid.shape))
    sqrt_mu = grid.sqrt_mu.reshape(-1)
    mu = grid.mu.reshape(-1)
    sigma = direct_convolution(table, grid.mu).reshape(size, 3, 3)
    dense_conv = direct_matrix(table)
    matrices = operators.diff.sparse_matrices()
    scale = sparse.diags(1.0 / sqrt_mu)
    d_scaled = [(d @ scale).toarray() for d, _ in matrices]
    mu_d = [mu[:, None] * d for d in d_scaled]
    a_part = np.zeros((size, size))
    k_part = np.zeros((size, size))
    for i in range(3):
        adjoint = matrices[i][1]
        flux_a = sum((mu * sigma[:, i, j])[:, None] * d_scaled[j] for j in range(3))
        a_part += adjoint @ flux_a
        conv = sum(dense_conv[component_index(i, j)] @ mu_d[j] for j in range(3))
        k_part += adjoint @ (mu[:, None] * conv)
    a_matrix = -a_part / sqrt_mu[:, None]
    k_matrix = k_part / sqrt_mu[:, None]
    return DenseOperators(A=a_matrix, K=k_matrix, L=-a_matrix - k_matrix)


def power_iteration_bound(operators: CollisionOperators, n_iter=60, seed=0):
    """Estimate the largest eigenvalue of ``L`` by power iteration."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(operators.grid.shape)
    estimate = 0.0
    for _ in range(n_iter):
        x = x / np.sqrt(operators.inner(x, x))
        y = operators.apply_L(x)
        estimate = max(estimate, float(operators.inner(y, x)))
        x = y
    LOGGER.debug("largest eigenvalue of L estimated at %.4g", estimate)
    return estimate


@dataclass
class CoercivityReport:
    """Sampled constants of the linear estimates."""

    delta_hat: float
    sigma_lower: float
    semipositivity_min: float
    n_samples: int


def random_smooth_field(grid: VelocityGrid, rng):
    """A random smooth field: low-degree polynomial times a shifted Gaussian."""
    coefficients = rng.standard_normal(10)
    v1, v2, v3 = (grid.v[..., i] for i in range(3))
    monomials = [np.ones_like(v1), v1, v2, v3, v1 * v1, v2 * v2, v3 * v3]
    monomials += [v1 * v2, v2 * v3, v1 * v3]
    poly = sum(c * m for c, m in zip(coefficients, monomials))
    shift = 0.5 * rng.standard_normal(3)
    envelope = np.exp(-0.5 * np.sum((grid.v - shift) ** 2, axis=-1))
    return poly * envelope


def coercivity_sample(operators: CollisionOperators, n_samples=100, seed=0, theta=0.0):
    """Fit ``delta_hat`` of ``<Lf, f> >= delta |(I-P) f|_sigma^2`` and ``C`` of
    ``|f|_{sigma,theta} >= C |f|_{2,theta-1/2}`` over random smooth fields.

    Semi-positivity is sampled on white-noise fields and reported as the
    minimum of ``<Lf, f> / |f|^2``.
    """
    grid = operators.grid
    rng = np.random.default_rng(seed)
    ratios, lower, semi = [], [], []
    for _ in range(n_samples):
        f = random_smooth_field(grid, rng)
        lf = float(operators.inner(operators.apply_L(f), f))
        micro = f - operators.project_P(f)[0]
        micro_sigma = float(operators.sigma_inner(micro, micro))
        if micro_sigma > 0:
            ratios.append(lf / micro_sigma)
        sigma_norm = float(np.sqrt(operators.sigma_inner(f, f, theta)))
        l2 = float(np.sqrt(grid.integrate(f * f * grid.weight(2 * theta - 1))))
        lower.append(sigma_norm / l2)
        noise = rng.standard_normal(grid.shape)
        semi.append(
            float(operators.inner(operators.apply_L(noise), noise))
            / float(operators.inner(noise, noise))
        )
    return CoercivityReport(
        delta_hat=float(min(ratios)),
        sigma_lower=float(min(lower)),
        semipositivity_min=float(min(semi)),
        n_samples=n_samples,
    )
