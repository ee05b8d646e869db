"""Functionals evaluated on states and trajectories.

Conservation drifts, entropy, the weighted energy hierarchy, macro-micro
ratios, kinetic distances and norms, oscillation and decay fits. Estimates
that maximise over samples (Hoelder seminorm, quasi-triangle constant,
interpolation constant) are sampled lower bounds, never certified suprema.
"""
from dataclasses import dataclass, field
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import least_squares

from .errors import DiagnosticsError, GeometryError
from .field import boundary_flux, charge_density, field_energy
from .geometry import mesh_symmetry_residual
from .grid import VelocityGrid, check_finite, weighted_lp
from .operators import CollisionOperators, project_P, random_smooth_field

LOGGER = logging.getLogger(__name__)

POSITIVITY_TOL = 1e-12


def theta_label(theta):
    return "{:g}".format(float(theta))


@dataclass
class KineticPoint:
    """A point ``z = (t, x, v)``; ``x`` is padded to three components."""

    t: float
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.t = float(self.t)
        x = np.zeros(3)
        given = np.atleast_1d(np.asarray(self.x, dtype=float))
        x[: given.size] = given
        self.x = x
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        finite = np.isfinite(self.t) and np.all(np.isfinite(x))
        if not (finite and np.all(np.isfinite(self.v))):
            raise DiagnosticsError("kinetic point has non-finite components")


@dataclass
class DiagnosticsRecord:
    """Every functional of one state; per-theta quantities keyed by theta."""

    t: float
    mass: float
    kinetic_energy: float
    field_energy: float
    flux: float
    angular_momentum: Optional[float]
    entropy: Optional[float]
    W: Dict[float, float]
    V: Dict[float, float]
    I: Dict[float, float]
    D: Dict[float, float]
    E: Dict[float, float]
    macro_norm: float
    micro_norm: float
    sup_norms: Dict[float, float]
    min_F: float

    @property
    def total_energy(self):
        return self.kinetic_energy + self.field_energy

    @property
    def entropy_flag(self):
        return self.entropy is None

    @property
    def positivity_flag(self):
        return self.min_F < -POSITIVITY_TOL

    def as_row(self):
        row = {
            "t": self.t,
            "mass": self.mass,
            "kinetic_energy": self.kinetic_energy,
            "field_energy": self.field_energy,
            "total_energy": self.total_energy,
            "flux": self.flux,
            "angular_momentum": self.angular_momentum,
            "angular_momentum_flag": self.angular_momentum is None,
            "entropy": self.entropy,
            "entropy_flag": self.entropy_flag,
            "macro_norm": self.macro_norm,
            "micro_norm": self.micro_norm,
            "min_F": self.min_F,
            "min_F_flag": self.positivity_flag,
        }
        for name in ("W", "V", "I", "D", "E"):
            for theta, value in getattr(self, name).items():
                row["{}_theta_{}".format(name, theta_label(theta))] = value
        for theta, value in self.sup_norms.items():
            row["sup_theta_{}".format(theta_label(theta))] = value
        return row


def timeseries_columns(thetas: Sequence[float]) -> List[str]:
    """The fixed CSV column order for a theta list."""
    columns = [
        "t",
        "mass",
        "kinetic_energy",
        "field_energy",
        "total_energy",
        "flux",
        "angular_momentum",
        "angular_momentum_flag",
        "entropy",
        "entropy_flag",
    ]
    for name in ("W", "V", "I", "D", "E"):
        columns.extend("{}_theta_{}".format(name, theta_label(t)) for t in thetas)
    columns.extend(["macro_norm", "micro_norm"])
    columns.extend("sup_theta_{}".format(theta_label(t)) for t in thetas)
    columns.extend(["min_F", "min_F_flag"])
    return columns


def _velocity_moment(grid: VelocityGrid, values, weight):
    return grid.integrate(grid.sqrt_mu * weight * values)


def default_axis(mesh):
    """Symmetry axis and base point used for angular momentum."""
    if mesh.dim == 1:
        return np.zeros(3), np.array([1.0, 0.0, 0.0])
    return np.zeros(3), np.array([0.0, 0.0, 1.0])


def conservation_report(state, x0=None, omega=None, symmetry_tol=1e-10):
    """Mass, perturbed kinetic energy, field energy, flux and angular momentum.

    Angular momentum ``sum [(x - x0) x omega] . v sqrt(mu) f`` is reported
    only when the mesh passes the rotational symmetry check, otherwise
    ``None``.
    """
    f, pf = state.f, state.pf
    grid, mesh = f.grid, f.mesh
    volumes = mesh.volumes
    mass = float(np.sum(volumes * charge_density(f)))
    kinetic = float(np.sum(volumes * _velocity_moment(grid, f.values, grid.speed_sq)))
    base, axis = default_axis(mesh)
    x0 = base if x0 is None else np.asarray(x0, dtype=float)
    omega = axis if omega is None else np.asarray(omega, dtype=float)
    angular = None
    if mesh_symmetry_residual(mesh, x0, omega) <= symmetry_tol:
        lever = np.cross(mesh.cell_centers - x0, omega)
        momentum = np.stack(
            [_velocity_moment(grid, f.values, grid.v[..., i]) for i in range(3)],
            axis=-1,
        )
        angular = float(np.sum(volumes * np.sum(lever * momentum, axis=-1)))
    return {
        "mass": mass,
        "kinetic_energy": kinetic,
        "field_energy": field_energy(pf),
        "flux": boundary_flux(pf),
        "angular_momentum": angular,
    }


def entropy(state):
    """``H = sum F ln F`` for ``F = mu + sqrt(mu) f``; ``None`` if ``F <= 0``."""
    f = state.f
    full = f.full_distribution()
    if np.min(full) <= 0:
        LOGGER.warning("entropy skipped at t=%g: F has non-positive values", f.time)
        return None
    per_cell = f.grid.integrate(full * np.log(full))
    return float(np.sum(f.mesh.volumes * per_cell))


def energy_functionals(state, theta, operators: CollisionOperators):
    """Return ``(I_theta, D_theta)``.

    ``I = ||f||_{2,theta}^2 + ||E||^2`` and ``D = ||f||_{sigma,theta}^2 + ||E||^2``.
    """
    f = state.f
    e2 = field_energy(state.pf)
    instant = weighted_lp(f.grid, f.mesh.volumes, f.values, 2.0, theta) ** 2 + e2
    dissipation = operators.sigma_inner(f.values, f.values, theta, f.mesh.volumes)
    return instant, max(dissipation, 0.0) + e2


def hierarchy(state, theta, operators: CollisionOperators, field_weight=2.0):
    """``(W_theta, V_theta)`` summed over the half-integer weights up to theta."""
    f = state.f
    e2 = field_weight * field_energy(state.pf)
    w_total = v_total = 0.0
    for j in range(int(math.floor(2 * theta + 1e-12)) + 1):
        weight = 0.5 * j
        w_total += weighted_lp(f.grid, f.mesh.volumes, f.values, 2.0, weight) ** 2
        v_total += max(
            operators.sigma_inner(f.values, f.values, weight, f.mesh.volumes), 0.0
        )
    return w_total + e2, v_total + e2


class Monitor:
    """Turns states into :class:`DiagnosticsRecord` and accumulates ``E_theta``.

    ``E_theta(t)`` is the trapezoid accumulation of ``D_theta`` over the
    monitored times.
    """

    def __init__(
        self,
        operators: CollisionOperators,
        thetas=(0.0,),
        field_weight=2.0,
        symmetry_tol=1e-10,
    ):
        self.operators = operators
        self.thetas = tuple(float(t) for t in thetas)
        self.field_weight = field_weight
        self.symmetry_tol = symmetry_tol
        self._last = None

    def __call__(self, state) -> DiagnosticsRecord:
        ops = self.operators
        f = state.f
        report = conservation_report(state, symmetry_tol=self.symmetry_tol)
        values = {"W": {}, "V": {}, "I": {}, "D": {}, "E": {}, "sup": {}}
        for theta in self.thetas:
            values["W"][theta], values["V"][theta] = hierarchy(
                state, theta, ops, self.field_weight
            )
            values["I"][theta], values["D"][theta] = energy_functionals(
                state, theta, ops
            )
            values["sup"][theta] = weighted_lp(
                f.grid, f.mesh.volumes, f.values, np.inf, theta
            )
            accumulated = 0.0
            if self._last is not None:
                dt = state.t - self._last.t
                previous = self._last.D[theta]
                accumulated = self._last.E[theta] + 0.5 * dt * (
                    previous + values["D"][theta]
                )
            values["E"][theta] = accumulated
        macro, _ = project_P(ops.basis, f.values)
        micro = f.values - macro
        record = DiagnosticsRecord(
            t=state.t,
            mass=report["mass"],
            kinetic_energy=report["kinetic_energy"],
            field_energy=report["field_energy"],
            flux=report["flux"],
            angular_momentum=report["angular_momentum"],
            entropy=entropy(state),
            W=values["W"],
            V=values["V"],
            I=values["I"],
            D=values["D"],
            E=values["E"],
            macro_norm=float(ops.sigma_norm(macro, 0.0, f.mesh.volumes)),
            micro_norm=float(ops.sigma_norm(micro, 0.0, f.mesh.volumes)),
            sup_norms=values["sup"],
            min_F=f.min_full_distribution(),
        )
        self._last = record
        return record


@dataclass
class MacroMicroWindow:
    start: float
    end: float
    ratio: Optional[float]

    @property
    def flagged(self):
        return self.ratio is None


def macro_micro_report(records: Sequence[DiagnosticsRecord], window=1.0):
    """Windowed ``(int ||Pf||_sigma^2 + int ||E||^2) / int ||(I-P)f||_sigma^2``.

    Windows have integer length and start at the first record; the ratio is
    ``None`` (flagged) when the denominator vanishes.

    :raises DiagnosticsError: for a non-integer or sub-unit window
    """
    if window < 1 or abs(window - round(window)) > 1e-12:
        raise DiagnosticsError("macro-micro windows need integer length >= 1")
    t = np.array([r.t for r in records])
    numerator = np.array([r.macro_norm ** 2 + r.field_energy for r in records])
    denominator = np.array([r.micro_norm ** 2 for r in records])
    windows = []
    start = t[0] if len(t) else 0.0
    while len(t) and start + window <= t[-1] + 1e-9:
        end = start + window
        inside = (t >= start - 1e-9) & (t <= end + 1e-9)
        top = trapezoid(numerator[inside], t[inside]) if inside.sum() > 1 else 0.0
        bottom = trapezoid(denominator[inside], t[inside]) if inside.sum() > 1 else 0.0
        ratio = float(top / bottom) if bottom > 0 else None
        windows.append(MacroMicroWindow(float(start), float(end), ratio))
        start = end
    return windows


def max_macro_micro_ratio(windows: Sequence[MacroMicroWindow]):
    ratios = [w.ratio for w in windows if w.ratio is not None]
    return max(ratios) if ratios else None


def quasi_distance(z: KineticPoint, w: KineticPoint):
    """``max{|t-tau|^(1/2), |x - xi - (t-tau) nu|^(1/3), |v - nu|}``."""
    dt = z.t - w.t
    return max(
        abs(dt) ** 0.5,
        float(np.linalg.norm(z.x - w.x - dt * w.v)) ** (1.0 / 3.0),
        float(np.linalg.norm(z.v - w.v)),
    )


def _quasi_distance_arrays(t1, x1, v1, t2, x2, v2):
    dt = t1 - t2
    shift = np.linalg.norm(x1 - x2 - dt[..., None] * v2, axis=-1)
    return np.maximum.reduce(
        [np.abs(dt) ** 0.5, np.cbrt(shift), np.linalg.norm(v1 - v2, axis=-1)]
    )


def quasi_triangle_constant(n_triples=10000, scale=1.0, seed=0):
    """Sampled ``max d(z, w) / (d(z, y) + d(y, w))`` over random triples."""
    rng = np.random.default_rng(seed)
    points = [
        (
            rng.uniform(0, scale, n_triples),
            rng.uniform(-scale, scale, (n_triples, 3)),
            rng.uniform(-scale, scale, (n_triples, 3)),
        )
        for _ in range(3)
    ]
    z, y, w = points
    direct = _quasi_distance_arrays(*z, *w)
    detour = _quasi_distance_arrays(*z, *y) + _quasi_distance_arrays(*y, *w)
    ratio = direct / np.maximum(detour, 1e-300)
    return float(np.max(ratio))


def holder_seminorm(snapshot, alpha=1.0, budget=1000, seed=0):
    """Sampled ``C^{0,alpha}`` seminorm of one time level.

    Pairs are every nearest neighbour pair of the (cell, node) lattice plus
    ``budget`` random pairs; the first ``n`` random pairs do not depend on
    ``budget``, so the value is monotone in it.
    """
    if not 0 < alpha <= 1:
        raise DiagnosticsError("alpha must lie in (0, 1]: {}".format(alpha))
    grid, mesh = snapshot.grid, snapshot.mesh
    values = np.asarray(snapshot.values, dtype=float)
    check_finite(values)
    n_cells = values.shape[0]
    x = mesh.cell_centers[:, None, None, None, :]
    v = grid.v[None]
    positions = np.broadcast_to(x, values.shape + (3,))
    velocities = np.broadcast_to(v, values.shape + (3,))
    best = 0.0

    def update(f1, f2, x1, x2, v1, v2):
        dist = _quasi_distance_arrays(
            np.zeros(f1.shape), x1, v1, np.zeros(f2.shape), x2, v2
        )
        mask = dist > 0
        if not np.any(mask):
            return 0.0
        return float(np.max(np.abs(f1 - f2)[mask] / dist[mask] ** alpha))

    for axis in range(4):
        if values.shape[axis] < 2:
            continue
        head = [slice(None)] * 4
        tail = [slice(None)] * 4
        head[axis] = slice(1, None)
        tail[axis] = slice(None, -1)
        head, tail = tuple(head), tuple(tail)
        best = max(
            best,
            update(
                values[head],
                values[tail],
                positions[head],
                positions[tail],
                velocities[head],
                velocities[tail],
            ),
        )
    if budget > 0:
        rng = np.random.default_rng(seed)
        size = values.size
        picks = np.minimum((rng.random((budget, 2)) * size).astype(int), size - 1)
        flat_f = values.reshape(-1)
        flat_x = positions.reshape(-1, 3)
        flat_v = velocities.reshape(-1, 3)
        i, j = picks[:, 0], picks[:, 1]
        sampled = update(
            flat_f[i], flat_f[j], flat_x[i], flat_x[j], flat_v[i], flat_v[j]
        )
        best = max(best, sampled)
    LOGGER.debug("sampled Hoelder seminorm over %d cells: %.4g", n_cells, best)
    return best


def velocity_derivatives(values, grid: VelocityGrid):
    """``(|grad_v f|, |D2_vv f|)`` by second-order differences."""
    spacing = grid.spacing
    axes = (-3, -2, -1)
    first = np.gradient(values, spacing, axis=axes, edge_order=2)
    grad_sq = sum(d ** 2 for d in first)
    hess_sq = np.zeros_like(values)
    for d in first:
        for dd in np.gradient(d, spacing, axis=axes, edge_order=2):
            hess_sq = hess_sq + dd ** 2
    return np.sqrt(grad_sq), np.sqrt(hess_sq)


@dataclass
class Trajectory:
    """Stored time levels of a slab run, ``values`` shaped ``(T, n, N, N, N)``."""

    times: np.ndarray
    values: np.ndarray
    grid: VelocityGrid
    mesh: object

    @classmethod
    def from_snapshots(cls, snapshots, grid, mesh):
        times = np.array([t for t, _ in snapshots])
        values = np.stack([v for _, v in snapshots])
        return cls(times, values, grid, mesh)


def sp_terms(trajectory: Trajectory, p=2.0):
    """``(||f||_p, ||D_v f||_p, ||D2_vv f||_p, ||Y f||_p)`` with ``Y = -(d_t + v.d_x)``.

    :raises DiagnosticsError: for fewer than three time levels or uneven steps
    """
    if not 1 < p < np.inf:
        raise DiagnosticsError("p must lie in (1, inf): {}".format(p))
    times = np.asarray(trajectory.times, dtype=float)
    if times.size < 3:
        raise DiagnosticsError("S^p norm needs at least 3 stored time levels")
    steps = np.diff(times)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
        raise DiagnosticsError("S^p norm needs a uniform time step")
    grid, mesh = trajectory.grid, trajectory.mesh
    values = np.asarray(trajectory.values, dtype=float)
    d_t = np.gradient(values, steps[0], axis=0, edge_order=2)
    if mesh.n_active >= 3:
        d_x = np.gradient(values, mesh.spacing, axis=1, edge_order=2)
    else:
        d_x = np.zeros_like(values)
    kinetic = -(d_t + grid.v[..., 0] * d_x)
    grad, hess = velocity_derivatives(values, grid)
    time_weights = np.full(times.size, steps[0])
    time_weights[[0, -1]] *= 0.5

    def norm(h):
        per_cell = grid.integrate(np.abs(h) ** p)
        total = np.sum(per_cell * mesh.volumes[None, :] * time_weights[:, None])
        return float(total) ** (1.0 / p)

    return norm(values), norm(grad), norm(hess), norm(kinetic)


def sp_norm(trajectory: Trajectory, p=2.0):
    """The ``S^p`` norm of a stored trajectory."""
    terms = sp_terms(trajectory, p)
    return float(sum(term ** p for term in terms) ** (1.0 / p))


def interpolation_constant(grid: VelocityGrid, n_samples=20, seed=0, p=2.0):
    """Sampled constant of ``||Df|| <= eps ||D2 f|| + (C / eps) ||f||``.

    For one field the best constant over all ``eps`` is
    ``||Df||^2 / (4 ||D2 f|| ||f||)``; the maximum over random smooth fields
    is returned.
    """
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_samples):
        f = random_smooth_field(grid, rng)
        grad, hess = velocity_derivatives(f, grid)
        norms = [
            float(grid.integrate(np.abs(h) ** p)) ** (1.0 / p) for h in (f, grad, hess)
        ]
        if norms[0] > 0 and norms[2] > 0:
            best = max(best, norms[1] ** 2 / (4.0 * norms[2] * norms[0]))
    return best


def trajectory_sampler(trajectory: Trajectory):
    """Callable ``a(t, x, v)`` by linear interpolation in ``(t, x1, v)``.

    Arguments outside the stored support are clamped to it; the returned
    function carries a ``support`` attribute.
    """
    grid, mesh = trajectory.grid, trajectory.mesh
    centers = mesh.cell_centers[:, 0]
    axes = (np.asarray(trajectory.times, dtype=float), centers) + (grid.axis,) * 3
    interpolator = RegularGridInterpolator(axes, trajectory.values, method="linear")

    def evaluate(t, x, v):
        t = np.clip(np.asarray(t, dtype=float), axes[0][0], axes[0][-1])
        x1 = np.clip(np.asarray(x, dtype=float)[..., 0], centers[0], centers[-1])
        v = np.clip(np.asarray(v, dtype=float), -grid.v_max, grid.v_max)
        points = np.concatenate([t[..., None], x1[..., None], v], axis=-1)
        return interpolator(points.reshape(-1, 5)).reshape(t.shape)

    evaluate.support = Support(
        (float(axes[0][0]), float(axes[0][-1])),
        (0.0, float(mesh.extent)),
        grid.v_max,
    )
    return evaluate


@dataclass
class Support:
    """Time interval, ``x1`` interval and velocity cube half-width."""

    t_range: tuple
    x_range: tuple
    v_max: float


def _uniform_ball(rng, n, radius):
    direction = rng.standard_normal((n, 3))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    return direction * (radius * rng.random(n) ** (1.0 / 3.0))[:, None]


def oscillation(
    a: Callable,
    z0: KineticPoint,
    r,
    n_samples=20000,
    seed=0,
    normalized=False,
    support: Support = None,
):
    """Monte Carlo oscillation of ``a`` over the kinetic cylinder ``Q_r(z0)``.

    The raw value is ``r^-(4d+2)`` times the integral of ``|a(z1) - a(z2)|``
    over ``D_r x D_r x (t0 - r^2, t0)``, ``d = 3``; ``normalized=True``
    returns the mean ``|a(z1) - a(z2)|`` over the cylinder instead.

    :raises GeometryError: if the cylinder misses the support of ``a``
    """
    support = support or getattr(a, "support", None)
    if support is not None:
        t_lo, t_hi = support.t_range
        reach = r ** 3 + r * abs(z0.v[0]) * r ** 2
        misses = (
            z0.t <= t_lo
            or z0.t - r ** 2 >= t_hi
            or z0.x[0] + reach <= support.x_range[0]
            or z0.x[0] - reach >= support.x_range[1]
            or np.any(np.abs(z0.v) - r >= support.v_max)
        )
        if misses:
            raise GeometryError("oscillation cylinder does not meet the data")
    rng = np.random.default_rng(seed)
    t = z0.t - r ** 2 * rng.random(n_samples)
    centre = z0.x + (t - z0.t)[:, None] * z0.v
    x1 = centre + _uniform_ball(rng, n_samples, r ** 3)
    x2 = centre + _uniform_ball(rng, n_samples, r ** 3)
    v1 = z0.v + _uniform_ball(rng, n_samples, r)
    v2 = z0.v + _uniform_ball(rng, n_samples, r)
    mean = float(np.mean(np.abs(a(t, x1, v1) - a(t, x2, v2))))
    if normalized:
        return mean
    d = 3
    ball = 4.0 * np.pi / 3.0
    slice_volume = ball * r ** (3 * d) * ball * r ** d
    return mean * r ** 2 * slice_volume ** 2 / r ** (4 * d + 2)


def oscillation_exponent(a: Callable, z0: KineticPoint, radii, normalized=True, **kw):
    """Slope of ``log osc`` against ``log r``."""
    radii = np.asarray(radii, dtype=float)
    values = np.array(
        [oscillation(a, z0, r, normalized=normalized, **kw) for r in radii]
    )
    if np.any(values <= 0):
        return 0.0
    slope, _ = np.polyfit(np.log(radii), np.log(values), 1)
    return float(slope)


@dataclass
class DecayFit:
    eps0: float
    k: float
    residual: float
    n_points: int
    flagged: bool = field(default=False)


def _decay_model(params, t):
    log_eps0, k = params
    return 2.0 * log_eps0 - 2.0 * k * np.log1p(t / k)


def decay_fit(t, w, t_min=1.0, k_bounds=(1e-8, 1e4)):
    """Fit ``W ~ eps0^2 (1 + t/k)^(-2k)`` to samples with ``t > t_min``.

    A coarse grid over ``log k`` seeds a bounded least-squares refinement.
    A non-decaying series ends with ``k`` at the lower bound and is flagged.

    :raises DiagnosticsError: for fewer than 10 usable samples
    """
    t = np.asarray(t, dtype=float)
    w = np.asarray(w, dtype=float)
    keep = (t > t_min) & (w > 0) & np.isfinite(w)
    if keep.sum() < 10:
        raise DiagnosticsError(
            "decay fit needs at least 10 positive samples after t={}".format(t_min)
        )
    t, log_w = t[keep], np.log(w[keep])

    def residual(params):
        return _decay_model(params, t) - log_w

    best = None
    for k in np.logspace(np.log10(k_bounds[0]), np.log10(k_bounds[1]), 49):
        log_eps0 = 0.5 * np.mean(log_w + 2.0 * k * np.log1p(t / k))
        cost = float(np.sum(residual((log_eps0, k)) ** 2))
        if best is None or cost < best[0]:
            best = (cost, log_eps0, k)
    lower = [-np.inf, k_bounds[0]]
    upper = [np.inf, k_bounds[1]]
    result = least_squares(residual, x0=[best[1], best[2]], bounds=(lower, upper))
    log_eps0, k = result.x
    rms = float(np.sqrt(np.mean(result.fun ** 2)))
    flagged = bool(k <= 1e-3 or log_w[-1] >= log_w[0])
    if flagged:
        LOGGER.warning("decay fit flagged: k = %.3g", k)
    return DecayFit(float(np.exp(log_eps0)), float(k), rms, int(t.size), flagged)
