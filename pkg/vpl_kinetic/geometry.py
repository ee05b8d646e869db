"""Implicit domains, specular reflection and boundary-flattening charts.

A domain is ``{zeta < 0}`` with outward normal ``grad zeta / |grad zeta|``.
Near a boundary given as a graph ``x3 = rho(x1, x2)`` the chart

    psi^-1(y) = (y1 - y3 rho_1, y2 - y3 rho_2, rho + y3)

sends the wall to ``{y3 = 0}``; velocities map by ``v = A^-1 w`` and the
wall reflection ``R_x`` becomes ``R = diag(1, 1, -1)``. Closed-form Jacobians
are evaluated entry by entry so that they can be checked against the
generic linear algebra.
"""
from dataclasses import dataclass
import logging
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
import yaml

from .errors import ConfigError, GeometryError
from .landau import sigma_interpolator

LOGGER = logging.getLogger(__name__)

OUTGOING = "outgoing"
INCOMING = "incoming"
GRAZING = "grazing"

REFLECTION = np.diag([1.0, 1.0, -1.0])


@dataclass(frozen=True)
class ImplicitDomain:
    """``Omega = {zeta(x) < 0}`` with helpers for sampling its boundary.

    :param zeta: level-set function ``(..., 3) -> (...)``
    :param grad_zeta: its gradient ``(..., 3) -> (..., 3)``
    :param bbox: ``(lower, upper)`` corners of a bounding box
    :param distance: signed distance (negative inside), approximate allowed
    :param sampler: ``(n, rng) -> (n, 3)`` points on the boundary
    """

    name: str
    zeta: Callable
    grad_zeta: Callable
    bbox: Tuple[np.ndarray, np.ndarray]
    distance: Callable
    sampler: Callable

    @classmethod
    def ball(cls, radius=1.0, center=(0.0, 0.0, 0.0)):
        c = np.asarray(center, dtype=float)

        def sampler(n, rng):
            d = rng.standard_normal((n, 3))
            return c + radius * d / np.linalg.norm(d, axis=-1, keepdims=True)

        return cls(
            "ball",
            lambda x: np.sum((np.asarray(x) - c) ** 2, axis=-1) - radius ** 2,
            lambda x: 2.0 * (np.asarray(x) - c),
            (c - radius, c + radius),
            lambda x: np.linalg.norm(np.asarray(x) - c, axis=-1) - radius,
            sampler,
        )

    @classmethod
    def slab(cls, length=1.0, width=1.0):
        """``0 < x1 < length``; the transverse directions are sampled on
        ``[-width, width]``."""

        def grad(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            out[..., 0] = 2.0 * x[..., 0] - length
            return out

        def sampler(n, rng):
            points = rng.uniform(-width, width, (n, 3))
            points[:, 0] = length * rng.integers(0, 2, n)
            return points

        def zeta(x):
            x1 = np.asarray(x, dtype=float)[..., 0]
            return x1 * (x1 - length)

        def distance(x):
            x1 = np.asarray(x, dtype=float)[..., 0]
            return np.maximum(-x1, x1 - length)

        return cls(
            "slab",
            zeta,
            grad,
            (np.array([0.0, -width, -width]), np.array([length, width, width])),
            distance,
            sampler,
        )

    @classmethod
    def cylinder(cls, radius=1.0, height=1.0):
        """Infinite circular cylinder about the ``x3`` axis; samples on the
        lateral surface with ``|x3| <= height``."""

        def grad(x):
            x = np.asarray(x, dtype=float)
            out = 2.0 * x
            out[..., 2] = 0.0
            return out

        def sampler(n, rng):
            angle = rng.uniform(0.0, 2.0 * np.pi, n)
            z = rng.uniform(-height, height, n)
            return np.stack([radius * np.cos(angle), radius * np.sin(angle), z], -1)

        return cls(
            "cylinder",
            lambda x: np.sum(np.asarray(x)[..., :2] ** 2, axis=-1) - radius ** 2,
            grad,
            (np.array([-radius, -radius, -height]), np.array([radius, radius, height])),
            lambda x: np.linalg.norm(np.asarray(x)[..., :2], axis=-1) - radius,
            sampler,
        )

    @classmethod
    def box(cls, half_widths=(1.0, 1.0, 1.0), power=8):
        """Axis-aligned box with rounded edges, ``sum (x_i/a_i)^power < 1``."""
        a = np.asarray(half_widths, dtype=float)

        def zeta(x):
            return np.sum((np.asarray(x) / a) ** power, axis=-1) - 1.0

        def grad(x):
            return power * (np.asarray(x) / a) ** (power - 1) / a

        def distance(x):
            norm = np.linalg.norm(grad(x), axis=-1)
            return zeta(x) / np.where(norm > 0, norm, 1.0)

        def sampler(n, rng):
            d = rng.standard_normal((n, 3))
            scale = np.sum((d / a) ** power, axis=-1) ** (-1.0 / power)
            return d * scale[:, None]

        return cls("box", zeta, grad, (-a, a), distance, sampler)

    def sample_boundary(self, n, seed=0):
        return self.sampler(n, np.random.default_rng(seed))

    def project(self, x, n_iter=30):
        """Nearest boundary point by Newton steps on ``zeta``."""
        x = np.array(x, dtype=float)
        for _ in range(n_iter):
            grad = self.grad_zeta(x)
            norm_sq = np.sum(grad * grad, axis=-1, keepdims=True)
            x = x - self.zeta(x)[..., None] * grad / np.where(norm_sq > 0, norm_sq, 1.0)
        return x


def outward_normal(domain: ImplicitDomain, x, tol_boundary=1e-8, tol_gradient=1e-12):
    """Return ``grad zeta / |grad zeta|`` at boundary points.

    :raises GeometryError: if a point is off the boundary or the gradient
        degenerates there
    """
    x = np.asarray(x, dtype=float)
    level = np.abs(domain.zeta(x))
    if np.any(level > tol_boundary):
        worst = float(np.max(level))
        raise GeometryError(
            "point is not on the boundary (|zeta| = {:.3e})".format(worst)
        )
    grad = domain.grad_zeta(x)
    norm = np.linalg.norm(grad, axis=-1, keepdims=True)
    if np.any(norm <= tol_gradient):
        raise GeometryError("degenerate boundary gradient")
    return grad / norm


def reflect(normal, v):
    """``R v = v - 2 (n.v) n`` for unit normals."""
    normal = np.asarray(normal, dtype=float)
    v = np.asarray(v, dtype=float)
    return v - 2.0 * np.sum(normal * v, axis=-1, keepdims=True) * normal


def specular_reflect(domain: ImplicitDomain, x, v):
    return reflect(outward_normal(domain, x), v)


def classify_normal(normal, v, tol_grazing=1e-12):
    """Label ``outgoing`` (``n.v > 0``), ``incoming`` or ``grazing``.

    The grazing band is ``|n.v| <= tol_grazing |v|``.
    """
    v = np.asarray(v, dtype=float)
    dot = float(np.dot(np.asarray(normal, dtype=float), v))
    if abs(dot) <= tol_grazing * float(np.linalg.norm(v)):
        return GRAZING
    return OUTGOING if dot > 0 else INCOMING


def classify_gamma(domain: ImplicitDomain, x, v, tol_grazing=1e-12):
    return classify_normal(outward_normal(domain, x), v, tol_grazing)


def rotational_symmetry_residual(
    domain: ImplicitDomain, x0, omega, n_samples=1000, seed=0
):
    """``max |[(x - x0) x omega] . n_x|`` over sampled boundary points."""
    omega = np.asarray(omega, dtype=float)
    if not np.any(omega):
        raise ValueError("rotation axis must be nonzero")
    points = domain.sample_boundary(n_samples, seed)
    normals = outward_normal(domain, points, tol_boundary=1e-6)
    tangent = np.cross(points - np.asarray(x0, dtype=float), omega)
    return float(np.max(np.abs(np.sum(tangent * normals, axis=-1))))


def mesh_symmetry_residual(mesh, x0, omega):
    """Rotational-symmetry residual over the wall faces of a mesh."""
    if len(mesh.bface_centers) == 0:
        return 0.0
    tangent = np.cross(mesh.bface_centers - np.asarray(x0, dtype=float), omega)
    return float(np.max(np.abs(np.sum(tangent * mesh.bface_normals, axis=-1))))


class GraphFunction:
    """Wall profile ``x3 = rho(y1, y2)`` with partials up to third order.

    :meth:`derivatives` returns a mapping with keys ``rho``, ``r1``, ``r2``,
    ``r11``, ``r12``, ``r22``, ``r111``, ``r112``, ``r122``, ``r222``.
    """

    def derivatives(self, y1, y2) -> Dict[str, np.ndarray]:
        raise NotImplementedError


class PolynomialGraph(GraphFunction):
    """``rho = sum c_pq y1^p y2^q`` from a ``{(p, q): c}`` mapping."""

    def __init__(self, coefficients=None):
        self.coefficients = {
            (int(p), int(q)): float(c) for (p, q), c in (coefficients or {}).items()
        }

    @staticmethod
    def _power(y, p, k):
        # k-th derivative of y^p
        if k > p:
            return np.zeros_like(y)
        factor = 1.0
        for i in range(k):
            factor *= p - i
        return factor * y ** (p - k)

    def _partial(self, y1, y2, k1, k2):
        total = np.zeros(np.broadcast(y1, y2).shape)
        for (p, q), c in self.coefficients.items():
            total = total + c * self._power(y1, p, k1) * self._power(y2, q, k2)
        return total

    def derivatives(self, y1, y2):
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        orders = {
            "rho": (0, 0),
            "r1": (1, 0),
            "r2": (0, 1),
            "r11": (2, 0),
            "r12": (1, 1),
            "r22": (0, 2),
            "r111": (3, 0),
            "r112": (2, 1),
            "r122": (1, 2),
            "r222": (0, 3),
        }
        return {k: self._partial(y1, y2, *v) for k, v in orders.items()}


class SphereCapGraph(GraphFunction):
    """Lower cap of the sphere of radius ``R`` centred at ``(0, 0, R)``.

    ``rho = R - s`` with ``s = sqrt(R^2 - y1^2 - y2^2)``; defined for
    ``|y| < R``.
    """

    def __init__(self, radius=2.0):
        self.radius = float(radius)

    def derivatives(self, y1, y2):
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        arg = self.radius ** 2 - y1 ** 2 - y2 ** 2
        if np.any(arg <= 0):
            raise GeometryError("point outside the sphere-cap chart")
        s = np.sqrt(arg)
        y = (y1, y2)
        out = {"rho": self.radius - s, "r1": y1 / s, "r2": y2 / s}
        for name, (i, j) in (("r11", (0, 0)), ("r12", (0, 1)), ("r22", (1, 1))):
            out[name] = float(i == j) / s + y[i] * y[j] / s ** 3
        for name, (i, j, k) in (
            ("r111", (0, 0, 0)),
            ("r112", (0, 0, 1)),
            ("r122", (0, 1, 1)),
            ("r222", (1, 1, 1)),
        ):
            delta = float(i == j) * y[k] + float(i == k) * y[j] + float(j == k) * y[i]
            out[name] = delta / s ** 3 + 3.0 * y[i] * y[j] * y[k] / s ** 5
        return out


@dataclass
class ChartMaps:
    """Everything the chart evaluates at one batch of points."""

    x: np.ndarray
    a_inv: np.ndarray
    a: np.ndarray
    determinant: np.ndarray
    c: np.ndarray
    b: Optional[np.ndarray] = None


class FlattenChart:
    """Boundary-flattening chart for a graph wall ``x3 = rho(x1, x2)``."""

    def __init__(self, rho: GraphFunction, name="custom"):
        self.rho = rho
        self.name = name

    @classmethod
    def flat(cls):
        return cls(PolynomialGraph({}), "flat")

    @classmethod
    def paraboloid(cls, curvature=1.0):
        coefficients = {(2, 0): curvature, (0, 2): curvature}
        return cls(PolynomialGraph(coefficients), "paraboloid")

    @classmethod
    def sphere_cap(cls, radius=2.0):
        return cls(SphereCapGraph(radius), "sphere-cap")

    def _terms(self, y):
        y = np.asarray(y, dtype=float)
        return y, self.rho.derivatives(y[..., 0], y[..., 1])

    def inverse(self, y):
        """``x = psi^-1(y)``."""
        y, d = self._terms(y)
        y3 = y[..., 2]
        return np.stack(
            [y[..., 0] - y3 * d["r1"], y[..., 1] - y3 * d["r2"], d["rho"] + y3], -1
        )

    def normal(self, y1, y2):
        """Unnormalized wall normal ``d1 eta x d2 eta = (-rho_1, -rho_2, 1)``."""
        d = self.rho.derivatives(y1, y2)
        return np.stack([-d["r1"], -d["r2"], np.ones_like(d["r1"])], -1)

    def jac_Ainv(self, y):
        y, d = self._terms(y)
        y3 = y[..., 2]
        out = np.empty(y.shape[:-1] + (3, 3))
        out[..., 0, 0] = 1.0 - y3 * d["r11"]
        out[..., 0, 1] = -y3 * d["r12"]
        out[..., 0, 2] = -d["r1"]
        out[..., 1, 0] = -y3 * d["r12"]
        out[..., 1, 1] = 1.0 - y3 * d["r22"]
        out[..., 1, 2] = -d["r2"]
        out[..., 2, 0] = d["r1"]
        out[..., 2, 1] = d["r2"]
        out[..., 2, 2] = 1.0
        return out

    def determinant(self, y):
        """``det A^-1`` as a quadratic in ``y3``."""
        y, d = self._terms(y)
        return _determinant(y[..., 2], d)

    def jac_A(self, y):
        """``A = adj(A^-1) / det(A^-1)`` from the closed-form adjugate."""
        y, d = self._terms(y)
        y3 = y[..., 2]
        r1, r2 = d["r1"], d["r2"]
        r11, r12, r22 = d["r11"], d["r12"], d["r22"]
        adj = np.empty(y.shape[:-1] + (3, 3))
        adj[..., 0, 0] = (1.0 + r2 ** 2) - y3 * r22
        adj[..., 0, 1] = -r1 * r2 + y3 * r12
        adj[..., 0, 2] = r1 + y3 * (r2 * r12 - r1 * r22)
        adj[..., 1, 0] = -r1 * r2 + y3 * r12
        adj[..., 1, 1] = (1.0 + r1 ** 2) - y3 * r11
        adj[..., 1, 2] = r2 + y3 * (r1 * r12 - r2 * r11)
        adj[..., 2, 0] = -r1 + y3 * (r1 * r22 - r2 * r12)
        adj[..., 2, 1] = -r2 + y3 * (r2 * r11 - r1 * r12)
        adj[..., 2, 2] = 1.0 - y3 * (r11 + r22) + y3 ** 2 * (r11 * r22 - r12 ** 2)
        return adj / _determinant(y3, d)[..., None, None]

    def mat_B(self, y, w):
        """``B = dv/dy`` at ``v = A^-1(y) w``."""
        y, d = self._terms(y)
        w = np.asarray(w, dtype=float)
        y3 = y[..., 2]
        w1, w2, w3 = w[..., 0], w[..., 1], w[..., 2]
        r11, r12, r22 = d["r11"], d["r12"], d["r22"]
        out = np.empty(np.broadcast(y, w).shape[:-1] + (3, 3))
        out[..., 0, 0] = -y3 * d["r111"] * w1 - y3 * d["r112"] * w2 - r11 * w3
        out[..., 0, 1] = -y3 * d["r112"] * w1 - y3 * d["r122"] * w2 - r12 * w3
        out[..., 0, 2] = -r11 * w1 - r12 * w2
        out[..., 1, 0] = -y3 * d["r112"] * w1 - y3 * d["r122"] * w2 - r12 * w3
        out[..., 1, 1] = -y3 * d["r122"] * w1 - y3 * d["r222"] * w2 - r22 * w3
        out[..., 1, 2] = -r12 * w1 - r22 * w2
        out[..., 2, 0] = r11 * w1 + r12 * w2
        out[..., 2, 1] = r12 * w1 + r22 * w2
        out[..., 2, 2] = 0.0
        return out

    def mat_C(self, y):
        """``C = A^-T A^-1`` from the closed-form entries."""
        y, d = self._terms(y)
        y3 = y[..., 2]
        r1, r2 = d["r1"], d["r2"]
        r11, r12, r22 = d["r11"], d["r12"], d["r22"]
        out = np.empty(y.shape[:-1] + (3, 3))
        out[..., 0, 0] = y3 ** 2 * (r11 ** 2 + r12 ** 2) - 2.0 * y3 * r11 + r1 ** 2 + 1
        out[..., 0, 1] = y3 ** 2 * r12 * (r11 + r22) - 2.0 * y3 * r12 + r1 * r2
        out[..., 0, 2] = y3 * (r1 * r11 + r2 * r12)
        out[..., 1, 0] = out[..., 0, 1]
        out[..., 1, 1] = y3 ** 2 * (r12 ** 2 + r22 ** 2) - 2.0 * y3 * r22 + r2 ** 2 + 1
        out[..., 1, 2] = y3 * (r1 * r12 + r2 * r22)
        out[..., 2, 0] = out[..., 0, 2]
        out[..., 2, 1] = out[..., 1, 2]
        out[..., 2, 2] = r1 ** 2 + r2 ** 2 + 1.0
        return out


def _determinant(y3, d):
    r1, r2 = d["r1"], d["r2"]
    r11, r12, r22 = d["r11"], d["r12"], d["r22"]
    quadratic = r11 * r22 - r12 ** 2
    linear = 2.0 * r1 * r2 * r12 - r2 ** 2 * r11 - r1 ** 2 * r22 - r11 - r22
    return y3 ** 2 * quadratic + y3 * linear + (r1 ** 2 + r2 ** 2 + 1.0)


def chart_determinant(chart: FlattenChart, y):
    return chart.determinant(y)


def flatten_maps(chart: FlattenChart, y, w=None):
    """Evaluate ``psi^-1``, ``A^-1``, ``A``, ``C`` (and ``B`` given ``w``).

    :raises GeometryError: where ``det A^-1 <= 0``
    """
    det = chart.determinant(y)
    if np.any(det <= 0):
        raise GeometryError(
            "degenerate chart: det A^-1 = {:.3e}".format(float(np.min(det)))
        )
    return ChartMaps(
        x=chart.inverse(y),
        a_inv=chart.jac_Ainv(y),
        a=chart.jac_A(y),
        determinant=det,
        c=chart.mat_C(y),
        b=None if w is None else chart.mat_B(y, w),
    )


def specular_commute_residual(chart: FlattenChart, y1, y2, w, y3=0.0):
    """``|A^-1 (R w) - R_x (A^-1 w)|`` at ``(y1, y2, y3)``.

    Vanishes identically on the wall ``y3 = 0``.
    """
    y1, y2 = np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)
    y = np.stack(np.broadcast_arrays(y1, y2, np.full_like(y1, y3)), axis=-1)
    w = np.asarray(w, dtype=float)
    a_inv = chart.jac_Ainv(y)
    normal = chart.normal(y1, y2)
    normal = normal / np.linalg.norm(normal, axis=-1, keepdims=True)
    lhs = np.einsum("...ij,...j->...i", a_inv, w @ REFLECTION)
    rhs = reflect(normal, np.einsum("...ij,...j->...i", a_inv, w))
    return np.linalg.norm(lhs - rhs, axis=-1)


def tube_width(chart: FlattenChart, extent=0.5, n_samples=41):
    """Largest ``|y3|`` keeping ``det A^-1 > 0`` over ``[-extent, extent]^2``.

    Smallest real root magnitude of the determinant quadratic over the
    sampled ``(y1, y2)``; ``inf`` for a flat wall.
    """
    axis = np.linspace(-extent, extent, n_samples)
    y1, y2 = np.meshgrid(axis, axis, indexing="ij")
    d = chart.rho.derivatives(y1.ravel(), y2.ravel())
    a = d["r11"] * d["r22"] - d["r12"] ** 2
    b = 2.0 * d["r1"] * d["r2"] * d["r12"] - d["r2"] ** 2 * d["r11"]
    b = b - d["r1"] ** 2 * d["r22"] - d["r11"] - d["r22"]
    c = d["r1"] ** 2 + d["r2"] ** 2 + 1.0
    width = np.inf
    for qa, qb, qc in zip(a, b, c):
        # np.roots drops vanishing leading coefficients
        roots = np.roots([qa, qb, qc])
        real = np.abs(roots[np.abs(np.imag(roots)) < 1e-12].real)
        if real.size:
            width = min(width, float(np.min(real)))
    LOGGER.debug("tube width of chart %s: %s", chart.name, width)
    return width


def mirror_extend(values, y3, w3, tol=1e-10):
    """Flip a field on ``y3 <= 0`` over to ``y3 > 0``.

    :param values: array ``(n_y3, n_w3, ...)`` on ascending ``y3`` ending at
        ``0`` and a ``w3`` axis symmetric about ``0``
    :returns: ``(y3_full, values_full)`` with
        ``f(y3, w3) = f(-y3, -w3)`` above the wall
    :raises GeometryError: if the wall row is not even in ``w3``
    """
    values = np.asarray(values, dtype=float)
    y3 = np.asarray(y3, dtype=float)
    w3 = np.asarray(w3, dtype=float)
    if y3[-1] != 0 or np.any(np.diff(y3) <= 0):
        raise GeometryError("y3 must ascend to the wall at 0")
    if not np.allclose(w3, -w3[::-1], atol=1e-14):
        raise GeometryError("w3 axis must be symmetric")
    mismatch = interface_jump(values)
    if mismatch > tol:
        raise GeometryError("specular mismatch at the wall: {:.3e}".format(mismatch))
    upper = values[-2::-1, ::-1]
    return np.concatenate([y3, -y3[-2::-1]]), np.concatenate([values, upper])


def interface_jump(values):
    """``sup |f(0-, w) - f(0+, w)|`` of the mirror extension of ``values``."""
    wall = np.asarray(values, dtype=float)[-1]
    return float(np.max(np.abs(wall - wall[::-1]))) if wall.size else 0.0


def mirror_extend_callable(f_lower, tol=1e-10):
    """Return ``f_bar(y, w)`` for a callable on the lower half space."""

    def f_bar(y, w):
        y = np.asarray(y, dtype=float)
        w = np.asarray(w, dtype=float)
        upper = y[..., 2] > 0
        y_eval = np.where(upper[..., None], y @ REFLECTION, y)
        w_eval = np.where(upper[..., None], w @ REFLECTION, w)
        return f_lower(y_eval, w_eval)

    return f_bar


def one_sided_jump(f_bar, y, w, delta=1e-9):
    """``sup |f_bar(y3 = 0-) - f_bar(y3 = 0+)|`` over wall points ``y``.

    The limits are sampled at ``y3 = -delta`` and ``y3 = +delta``.
    """
    y = np.array(y, dtype=float)
    below, above = y.copy(), y.copy()
    below[..., 2] = -delta
    above[..., 2] = delta
    jump = np.abs(f_bar(below, w) - f_bar(above, w))
    return float(np.max(jump)) if jump.size else 0.0


def extrapolated_jump(values_full, n_lower):
    """Wall row against the linear extrapolation of the two rows above it.

    ``values_full`` is a mirror extension whose first ``n_lower`` rows are the
    lower field, ending on the wall; the result is ``O(h^2)`` for a smooth
    field satisfying the specular condition.
    """
    values_full = np.asarray(values_full, dtype=float)
    wall = values_full[n_lower - 1]
    upper = 2.0 * values_full[n_lower] - values_full[n_lower + 1]
    return float(np.max(np.abs(wall - upper))) if wall.size else 0.0


@dataclass
class PhaseCoefficients:
    """Collision coefficients as callables of ``(x, v)``.

    ``sigma`` returns ``(..., 3, 3)``, ``drift`` and ``e_field`` vectors,
    ``kbar`` the scalar multiplier of ``Kbar_g``; missing ones are zero.
    ``e_field`` is the field ``E_g`` of the drift, ``source_field`` the field
    ``E_f`` of the source ``2 sqrt(mu) v.E_f`` (``e_field`` when missing).
    """

    sigma: Callable
    drift: Optional[Callable] = None
    e_field: Optional[Callable] = None
    kbar: Optional[Callable] = None
    source_field: Optional[Callable] = None

    @classmethod
    def from_diffusion(cls, grid, sigma, drift=None, e_value=None):
        """Interpolate one cell's ``sigma_G`` (and ``a_g``) over velocity."""
        sigma_fn = sigma_interpolator(grid, sigma)
        drift_fn = None
        if drift is not None:
            drift_fn = _vector_interpolator(grid, drift)
        e_fn = None
        if e_value is not None:
            e_value = np.asarray(e_value, dtype=float)

            def e_fn(x):
                return np.broadcast_to(e_value, np.shape(x)).copy()

        return cls(lambda x, v: sigma_fn(v), drift_fn, e_fn)


def _vector_interpolator(grid, values):
    axes = (grid.axis,) * 3
    parts = [
        RegularGridInterpolator(axes, values[..., i], method="linear") for i in range(3)
    ]

    def evaluate(x, v):
        v = np.clip(np.asarray(v, dtype=float), -grid.v_max, grid.v_max)
        flat = v.reshape(-1, 3)
        return np.stack([p(flat) for p in parts], -1).reshape(v.shape)

    return evaluate


@dataclass
class TransformedCoefficients:
    """Both branches of the flattened coefficients and their wall gap."""

    a_lower: np.ndarray
    a_upper: np.ndarray
    b_lower: np.ndarray
    b_upper: np.ndarray
    c_lower: np.ndarray
    c_upper: np.ndarray
    s_lower: np.ndarray
    s_upper: np.ndarray
    interface_gap: float


def _branch(chart, coefficients, y, w):
    maps = flatten_maps(chart, y, w)
    v = np.einsum("...ij,...j->...i", maps.a_inv, w)
    x = maps.x
    sigma = coefficients.sigma(x, v)
    big_a = np.einsum("...ij,...jk,...lk->...il", maps.a, sigma, maps.a)
    big_b = np.einsum("...ij,...jk,...k->...i", maps.a, maps.b, w)
    zero = np.zeros(v.shape)
    drift = coefficients.drift(x, v) if coefficients.drift else zero
    e_field = coefficients.e_field(x) if coefficients.e_field else zero
    big_b = big_b + np.einsum("...ij,...j->...i", maps.a, drift - e_field)
    big_c = np.sum(v * e_field, axis=-1)
    if coefficients.kbar:
        big_c = big_c + coefficients.kbar(x, v)
    source_field = e_field
    if coefficients.source_field:
        source_field = coefficients.source_field(x)
    sqrt_mu = np.exp(-0.5 * np.sum(v * v, axis=-1))
    source = 2.0 * sqrt_mu * np.sum(v * source_field, axis=-1)
    return big_a, big_b, big_c, source


def transformed_coefficients(
    chart: FlattenChart, coefficients: PhaseCoefficients, y, w
):
    """Coefficients of the flattened and mirrored equation.

    Lower branch: ``A sigma A^T``, ``ABw + A a - A E_g`` and the multiplier
    ``(A^-1 w).E_g (+ Kbar)``; the source ``2 sqrt(mu) (A^-1 w).E_f`` is kept
    apart since it does not multiply ``f``. Upper branch: the same evaluated
    at ``(Ry, Rw)`` and conjugated by ``R``. The gap is the largest
    difference of the two ``A`` branches on ``y3 = 0``.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    a_low, b_low, c_low, s_low = _branch(chart, coefficients, y, w)
    upper = _branch(chart, coefficients, y @ REFLECTION, w @ REFLECTION)
    a_up, b_up, c_up, s_up = upper
    a_up = REFLECTION @ a_up @ REFLECTION
    b_up = b_up @ REFLECTION
    wall = y.copy()
    wall[..., 2] = 0.0
    a_wall_low = _branch(chart, coefficients, wall, w)[0]
    a_wall_up = REFLECTION @ _branch(chart, coefficients, wall, w @ REFLECTION)[0]
    a_wall_up = a_wall_up @ REFLECTION
    gap = float(np.max(np.abs(a_wall_low - a_wall_up))) if a_wall_low.size else 0.0
    return TransformedCoefficients(
        a_low, a_up, b_low, b_up, c_low, c_up, s_low, s_up, gap
    )


def smoothstep(s):
    """C2 quintic ramp from 0 at ``s <= 0`` to 1 at ``s >= 1``."""
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


class PartitionOfUnity:
    """``chi_0`` on the interior plus boundary patches ``chi_k``.

    The cutoff ``chi~`` is 1 within ``delta/2`` of the wall (and outside
    ``Omega``) and 0 deeper than ``delta``; ``chi_0 = 1 - chi~`` and the
    patches share ``chi~`` in proportion to bumps ``(1 - (d/r)^2)^3_+``
    around wall points, measured at the projected wall point.
    """

    def __init__(self, domain: ImplicitDomain, delta, centers, radius):
        self.domain = domain
        self.delta = float(delta)
        self.centers = np.asarray(centers, dtype=float)
        self.radius = float(radius)

    def cutoff(self, x):
        depth = -self.domain.distance(x)
        return 1.0 - smoothstep((depth - 0.5 * self.delta) / (0.5 * self.delta))

    def bumps(self, x):
        wall = self.domain.project(x)
        d = np.linalg.norm(wall[..., None, :] - self.centers, axis=-1) / self.radius
        return np.clip(1.0 - d * d, 0.0, None) ** 3

    def weights(self, x, tol=1e-10):
        """``(..., 1 + n_patches)`` weights; column 0 is ``chi_0``.

        :raises GeometryError: where the patches leave a coverage gap
        """
        x = np.asarray(x, dtype=float)
        cut = self.cutoff(x)
        needs = cut > 0
        bumps = np.zeros(cut.shape + (len(self.centers),))
        bumps[needs] = self.bumps(x[needs])
        total = np.sum(bumps, axis=-1)
        if np.any(needs & (total <= 0)):
            raise GeometryError("partition of unity has a coverage gap")
        share = bumps / np.where(total > 0, total, 1.0)[..., None]
        out = np.concatenate([(1.0 - cut)[..., None], cut[..., None] * share], -1)
        error = float(np.max(np.abs(np.sum(out, axis=-1) - 1.0))) if out.size else 0.0
        if error > tol:
            raise GeometryError("partition of unity has a coverage gap")
        return out


def partition_weights(
    domain: ImplicitDomain, delta, n_patches=200, radius=None, seed=0
):
    """Build a :class:`PartitionOfUnity` with patch centres sampled on the wall."""
    if not delta > 0:
        raise ValueError("delta must be positive: {}".format(delta))
    centers = domain.sample_boundary(n_patches, seed)
    radius = 4.0 * delta if radius is None else radius
    return PartitionOfUnity(domain, delta, centers, radius)


CHART_PRESETS = ("flat", "paraboloid", "sphere-cap", "polynomial")


def load_chart(source):
    """Build a chart from a mapping or a YAML file.

    Keys: ``preset`` (one of :data:`CHART_PRESETS`), ``radius`` for
    ``sphere-cap``, ``curvature`` for ``paraboloid`` and ``coefficients``
    (a list of ``[p, q, c]``) for ``polynomial``.
    """
    if isinstance(source, (str, Path)):
        try:
            source = yaml.safe_load(Path(source).read_text(encoding="utf-8"))
        except (yaml.parser.ParserError, yaml.scanner.ScannerError) as error:
            raise ConfigError("Invalid chart YAML: {}".format(error))
    source = dict(source or {})
    preset = source.pop("preset", "flat")
    if preset == "flat":
        return FlattenChart.flat()
    if preset == "paraboloid":
        return FlattenChart.paraboloid(float(source.get("curvature", 1.0)))
    if preset == "sphere-cap":
        return FlattenChart.sphere_cap(float(source.get("radius", 2.0)))
    if preset == "polynomial":
        try:
            coefficients = {
                (int(p), int(q)): float(c) for p, q, c in source["coefficients"]
            }
        except (KeyError, TypeError, ValueError) as error:
            raise ConfigError(
                "Invalid option value: (option: 'coefficients'; value: {})\n{}".format(
                    source.get("coefficients"), error
                )
            )
        return FlattenChart(PolynomialGraph(coefficients), "polynomial")
    raise ConfigError("Unknown option: preset={}".format(preset))
