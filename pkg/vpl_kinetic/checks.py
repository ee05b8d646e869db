"""Invariant check suites behind ``vpl check``.

Each suite returns :class:`CheckResult` rows: a measured value, the tolerance
it is held to and whether it passed. Sampled quantities are labelled so.
"""
from dataclasses import dataclass
import logging
import math
from typing import Callable, Dict, List

import numpy as np

from . import diagnostics
from .errors import CheckFailure, NeutralityError
from .field import PoissonSolver, boundary_flux, field_bound_report, field_energy
from .geometry import (
    FlattenChart,
    ImplicitDomain,
    PhaseCoefficients,
    flatten_maps,
    extrapolated_jump,
    interface_jump,
    mirror_extend,
    mirror_extend_callable,
    one_sided_jump,
    outward_normal,
    partition_weights,
    specular_commute_residual,
    transformed_coefficients,
)
from .grid import (
    DistributionField,
    SpatialMesh,
    VelocityGrid,
    embedding_constant,
    weighted_lp_norm,
)
from .landau import KernelTable, eigenvalue_formulas, phi_kernel
from .operators import (
    CollisionOperators,
    assemble_dense,
    coercivity_sample,
    power_iteration_bound,
)
from .solver import collision_step

LOGGER = logging.getLogger(__name__)


@dataclass
class CheckResult:
    suite: str
    name: str
    value: float
    tolerance: float
    relation: str = "<="

    @property
    def passed(self):
        value = self.value
        if self.relation == "finite":
            return value is not None and bool(np.isfinite(value))
        if value is None or not np.isfinite(value):
            return False
        if self.relation == "<=":
            return value <= self.tolerance
        if self.relation == ">=":
            return value >= self.tolerance
        return value > self.tolerance

    def describe(self):
        status = "PASS" if self.passed else "FAIL"
        if self.relation == "finite":
            bound = "finite (sampled)"
        else:
            bound = "{} {:.3e}".format(self.relation, self.tolerance)
        value = "n/a" if self.value is None else "{:.6e}".format(float(self.value))
        return "[{}] {}.{}: {} {}".format(status, self.suite, self.name, value, bound)


def _relative(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale


def kernel_suite(n_axis=32, seed=0) -> List[CheckResult]:
    """Kernel algebra, sigma at the origin and the spectral structure."""
    suite = "kernel"
    grid = VelocityGrid(6.0, n_axis)
    table = KernelTable(grid)
    offsets = np.stack(np.meshgrid(*(table.offsets,) * 3, indexing="ij"), -1)
    offsets = offsets.reshape(-1, 3)
    offsets = offsets[np.any(offsets != 0, axis=-1)]
    phi = phi_kernel(offsets, table.gamma)
    annihilation = float(np.max(np.abs(np.einsum("nij,nj->ni", phi, offsets))))
    r = np.linalg.norm(offsets, axis=-1)
    eig = np.linalg.eigvalsh(phi)
    expected = np.stack([np.zeros_like(r), 1.0 / r, 1.0 / r], -1)
    eig_error = float(np.max(np.abs(eig - expected) * r[:, None]))

    def origin_error(g):
        centre = (g.n_axis // 2,) * 3
        sigma0 = KernelTable(g).sigma()[centre]
        return _relative(sigma0, 4.0 * math.pi / 3.0 * np.eye(3))

    error = origin_error(grid)
    coarse = origin_error(VelocityGrid(6.0, max(8, n_axis // 2)))
    tolerance = 1e-3 * (32.0 / n_axis) ** 2

    sigma = table.sigma()
    speed = np.sqrt(grid.speed_sq)
    inside = (speed > 0) & (speed <= 4.0)
    v = grid.v[inside]
    sv = np.einsum("nij,nj->ni", sigma[inside], v)
    rayleigh = np.sum(v * sv, axis=-1) / np.sum(v * v, axis=-1)
    radial = np.linalg.norm(sv - rayleigh[:, None] * v, axis=-1)
    radial = float(np.max(radial / np.linalg.norm(sv, axis=-1)))

    centre = grid.n_axis // 2
    steps = [k for k in range(1, centre + 1) if grid.axis[centre + k] <= 4.0]
    along = np.array([[grid.axis[centre + k], 0.0, 0.0] for k in steps])
    formulas = eigenvalue_formulas(along, grid, table.gamma, table.origin_rule)
    index = [(centre + k, centre, centre) for k in steps]
    solved = np.array([np.linalg.eigvalsh(sigma[i]) for i in index])
    unit = along / np.linalg.norm(along, axis=-1, keepdims=True)
    radial_eig = np.array([u @ sigma[i] @ u for u, i in zip(unit, index)])
    transverse = np.sum(solved, axis=-1) - radial_eig
    formula_error = max(
        _relative(formulas.lambda1, radial_eig),
        _relative(formulas.lambda2, 0.5 * transverse),
    )

    far = np.array([[s, 0.0, 0.0] for s in grid.axis if 3.0 <= s <= 5.0 + 1e-12])
    plateau = eigenvalue_formulas(far, grid, table.gamma, table.origin_rule)
    bracket = np.sqrt(1.0 + far[:, 0] ** 2)

    def spread(values):
        return float((np.max(values) - np.min(values)) / np.mean(values))

    return [
        CheckResult(suite, "kernel_annihilates_offset", annihilation, 1e-13),
        CheckResult(suite, "kernel_eigenvalues", eig_error, 1e-12),
        CheckResult(suite, "sigma_origin_isotropic", error, tolerance),
        CheckResult(suite, "sigma_origin_convergence", coarse / error, 3.5, ">="),
        CheckResult(suite, "sigma_radial_eigenvector", radial, 1e-4),
        CheckResult(suite, "eigenvalue_formulas", formula_error, 1e-4),
        CheckResult(
            suite, "lambda1_plateau", spread(plateau.lambda1 * bracket ** 3), 0.1
        ),
        CheckResult(suite, "lambda2_plateau", spread(plateau.lambda2 * bracket), 0.1),
    ]


def operators_suite(n_axis=8, seed=0) -> List[CheckResult]:
    """Null space, semi-positivity, Gamma identities and the dense oracle."""
    suite = "operators"
    grid = VelocityGrid(6.0, n_axis)
    ops = CollisionOperators(KernelTable(grid))
    rng = np.random.default_rng(seed)

    def norm(f):
        return float(np.sqrt(ops.inner(f, f)))

    null = max(norm(ops.apply_L(e)) / norm(e) for e in ops.basis.raw)
    coercivity = coercivity_sample(ops, n_samples=20, seed=seed)

    f1, f2, g = (rng.standard_normal(grid.shape) * grid.sqrt_mu for _ in range(3))
    a, b = 0.7, -1.3
    combined = ops.apply_Gamma(g, a * f1 + b * f2)
    split = a * ops.apply_Gamma(g, f1) + b * ops.apply_Gamma(g, f2)
    bilinear = norm(combined - split) / max(norm(combined), 1e-300)

    mass = 0.0
    for _ in range(50):
        g = rng.standard_normal(grid.shape)
        f = rng.standard_normal(grid.shape)
        value = abs(float(ops.inner(grid.sqrt_mu, ops.apply_Gamma(g, f))))
        mass = max(mass, value / (norm(g) * norm(f)))

    x = rng.standard_normal(grid.shape)
    y = rng.standard_normal(grid.shape)
    symmetry = abs(float(ops.inner(ops.apply_L(x), y) - ops.inner(x, ops.apply_L(y))))
    symmetry /= norm(ops.apply_L(x)) * norm(y)

    dense_error = collision_error = float("nan")
    if n_axis <= 8:
        dense = assemble_dense(ops)
        flat = x.reshape(-1)
        dense_error = max(
            _relative(ops.apply_A(x).reshape(-1), dense.A @ flat),
            _relative(ops.apply_K(x).reshape(-1), dense.K @ flat),
            _relative(ops.apply_L(x).reshape(-1), dense.L @ flat),
        )
        collision_error = dense_collision_error(ops, dense, seed=seed)
    rows = [
        CheckResult(suite, "null_space_residual", null, 1e-10),
        CheckResult(
            suite, "semi_positivity", coercivity.semipositivity_min, -1e-8, ">="
        ),
        CheckResult(suite, "coercivity_delta_sampled", coercivity.delta_hat, 0.0, ">"),
        CheckResult(suite, "gamma_bilinear", bilinear, 1e-12),
        CheckResult(suite, "gamma_mass_orthogonal", mass, 1e-8),
        CheckResult(suite, "L_symmetric", symmetry, 1e-10),
    ]
    if n_axis <= 8:
        rows.append(CheckResult(suite, "dense_operators", dense_error, 1e-10))
        rows.append(
            CheckResult(suite, "dense_collision_step", collision_error, 1e-10)
        )
    return rows


def dense_collision_error(
    ops: CollisionOperators, dense, n_cells=4, n_steps=10, seed=0
):
    """Largest relative gap between matrix-free and dense collision trajectories."""
    grid = ops.grid
    rng = np.random.default_rng(seed)
    start = rng.standard_normal((n_cells,) + grid.shape) * grid.sqrt_mu
    dt = 0.9 * 2.0 / power_iteration_bound(ops, seed=seed)
    source = np.zeros_like(start)

    def apply_dense(f):
        flat = f.reshape(n_cells, -1)
        return (flat @ dense.L.T).reshape(f.shape)

    free, assembled = start, start
    worst = 0.0
    for _ in range(n_steps):
        free = collision_step(ops.apply_L, free, dt, source)
        assembled = collision_step(apply_dense, assembled, dt, source)
        worst = max(worst, _relative(free, assembled))
    return worst


def specular_sample(y, w):
    """A smooth lower-half-space field even in ``w3`` on the wall."""
    y3, w1, w3 = y[..., 2], w[..., 0], w[..., 2]
    return np.exp(y3) * np.cos(w3) * (1.0 + 0.3 * w1) + y3 * w3


def coefficient_gap(chart, n_axis, wall, w):
    """Wall gap of the flattened Maxwellian diffusion on an ``n_axis`` lattice."""
    grid = VelocityGrid(6.0, n_axis)
    coefficients = PhaseCoefficients.from_diffusion(grid, KernelTable(grid).sigma())
    return transformed_coefficients(chart, coefficients, wall, w).interface_gap


def geometry_suite(n_axis=16, seed=0, n_samples=1000) -> List[CheckResult]:
    """Chart algebra, specular commutation, mirror extension and partition."""
    suite = "geometry"
    rng = np.random.default_rng(seed)
    rows = []
    charts = (
        FlattenChart.flat(),
        FlattenChart.paraboloid(),
        FlattenChart.sphere_cap(),
    )
    for chart in charts:
        y1 = rng.uniform(-0.5, 0.5, n_samples)
        y2 = rng.uniform(-0.5, 0.5, n_samples)
        w = rng.standard_normal((n_samples, 3))
        residual = float(np.max(specular_commute_residual(chart, y1, y2, w)))
        y = np.stack([y1, y2, rng.uniform(-0.1, 0.1, n_samples)], -1)
        maps = flatten_maps(chart, y)
        inverse = float(np.max(np.abs(maps.a @ maps.a_inv - np.eye(3))))
        c_error = _relative(maps.c, np.swapaxes(maps.a_inv, -1, -2) @ maps.a_inv)
        rows.extend(
            [
                CheckResult(suite, "commute_{}".format(chart.name), residual, 1e-12),
                CheckResult(suite, "inverse_{}".format(chart.name), inverse, 1e-12),
                CheckResult(suite, "c_matrix_{}".format(chart.name), c_error, 1e-12),
            ]
        )

    y3 = np.linspace(-1.0, 0.0, 11)
    w3 = np.linspace(-2.0, 2.0, 9)
    lower = np.exp(y3)[:, None] * np.cos(w3)[None, :] + y3[:, None] * w3[None, :]
    _, extended = mirror_extend(lower, y3, w3)
    spacing = y3[1] - y3[0]
    rows.append(CheckResult(suite, "mirror_wall_parity", interface_jump(lower), 1e-12))
    rows.append(
        CheckResult(
            suite,
            "mirror_interface_jump",
            extrapolated_jump(extended, len(y3)),
            2.0 * spacing ** 2,
        )
    )
    wall = np.stack(
        [rng.uniform(-0.5, 0.5, 50), rng.uniform(-0.5, 0.5, 50), np.zeros(50)], -1
    )
    w = rng.uniform(-2.0, 2.0, (50, 3))
    limits = one_sided_jump(mirror_extend_callable(specular_sample), wall, w)
    rows.append(CheckResult(suite, "mirror_one_sided_limits", limits, 1e-8))

    for chart in charts:
        gap = coefficient_gap(chart, n_axis, wall, w)
        if chart.name == "flat":
            rows.append(CheckResult(suite, "flat_coefficient_gap", gap, 1e-12))
            continue
        finer = coefficient_gap(chart, 2 * n_axis, wall, w)
        ratio = finer / gap if gap > 0 else 0.0
        name = "coefficient_gap_refinement_{}".format(chart.name)
        rows.append(CheckResult(suite, name, ratio, 0.6))

    ball = ImplicitDomain.ball()
    points = ball.sample_boundary(n_samples, seed)
    normals = outward_normal(ball, points)
    unit = float(np.max(np.abs(np.linalg.norm(normals, axis=-1) - 1.0)))
    rows.append(CheckResult(suite, "ball_normals_unit", unit, 1e-14))

    partition = partition_weights(ball, 0.2, n_patches=200, radius=0.8, seed=seed)
    inner = rng.standard_normal((n_samples, 3))
    inner *= (rng.random(n_samples) ** (1.0 / 3.0) / np.linalg.norm(inner, axis=-1))[
        :, None
    ]
    total = np.sum(partition.weights(inner), axis=-1)
    coverage = float(np.max(np.abs(total - 1.0)))
    rows.append(CheckResult(suite, "partition_of_unity", coverage, 1e-10))
    return rows


def _manufactured_error(n_cells, bc_kind):
    mesh = SpatialMesh.slab(1.0, n_cells)
    x = mesh.cell_centers[:, 0]
    if bc_kind == "dirichlet":
        exact = np.sin(np.pi * x)
    else:
        exact = np.cos(np.pi * x)
    pf = PoissonSolver(mesh, bc_kind).solve(np.pi ** 2 * exact)
    return float(np.max(np.abs(pf.phi - exact)))


def field_suite(n_axis=8, seed=0) -> List[CheckResult]:
    """Manufactured convergence, the discrete Green identity and energy."""
    suite = "field"
    rows = []
    for bc_kind in ("dirichlet", "neumann"):
        errors = [_manufactured_error(n, bc_kind) for n in (16, 32, 64)]
        order = math.log2(errors[1] / errors[2])
        rows.append(
            CheckResult(suite, "order_{}".format(bc_kind), abs(order - 2.0), 0.1)
        )
    rng = np.random.default_rng(seed)
    for mesh in (SpatialMesh.slab(1.0, 32), SpatialMesh.disk(1.0, 16)):
        rho = rng.standard_normal(mesh.n_active)
        pf = PoissonSolver(mesh, "dirichlet").solve(rho)
        charge = float(np.sum(mesh.volumes * rho))
        green = abs(boundary_flux(pf) - charge)
        work = float(np.sum(mesh.volumes * pf.phi * rho))
        energy = _relative(field_energy(pf), work)
        rows.append(CheckResult(suite, "green_" + mesh.kind, green, 1e-10))
        rows.append(CheckResult(suite, "energy_" + mesh.kind, energy, 1e-10))

    mesh = SpatialMesh.slab(1.0, 16)
    try:
        PoissonSolver(mesh, "neumann").solve(np.ones(mesh.n_active))
        rejected = 0.0
    except NeutralityError:
        rejected = 1.0
    rows.append(CheckResult(suite, "neumann_rejects_charge", rejected, 1.0, ">="))

    grid = VelocityGrid(6.0, n_axis)
    values = rng.standard_normal((mesh.n_active,) + grid.shape) * grid.sqrt_mu
    f = DistributionField(values, grid, mesh)
    rho = grid.integrate(grid.sqrt_mu * values)
    pf = PoissonSolver(mesh, "dirichlet").solve(rho)
    rows.append(
        CheckResult(suite, "field_bound_ratio", field_bound_report(pf, f), 0, "finite")
    )
    return rows


def norms_suite(n_axis=16, seed=0) -> List[CheckResult]:
    """Kinetic distance, Hoelder and S^p norms, decay fit and embedding."""
    suite = "norms"
    KP = diagnostics.KineticPoint
    origin = KP(0.0, [0.3, 0.0, 0.0], [0.0, 0.0, 0.0])
    examples = [
        (diagnostics.quasi_distance(origin, origin), 0.0),
        (
            diagnostics.quasi_distance(
                KP(1.0, [0.3, 0, 0], [0, 0, 0]), KP(0.0, [0.3, 0, 0], [0, 0, 0])
            ),
            1.0,
        ),
        (
            diagnostics.quasi_distance(
                KP(0.0, [0.308, 0, 0], [1, 0, 0]), KP(0.0, [0.3, 0, 0], [1, 0, 0])
            ),
            0.2,
        ),
    ]
    quasi = max(abs(value - expected) for value, expected in examples)
    triangle = diagnostics.quasi_triangle_constant(10000, seed=seed)

    t = np.linspace(0.0, 20.0, 101)
    fit = diagnostics.decay_fit(t, (1.0 + t / 3.0) ** -6)
    flat = float(diagnostics.decay_fit(t, np.ones_like(t)).flagged)

    grid = VelocityGrid(6.0, n_axis)
    mesh = SpatialMesh.slab(1.0, 4)
    linear = np.broadcast_to(grid.v[..., 0], (mesh.n_active,) + grid.shape).copy()
    snapshot = DistributionField(linear, grid, mesh)
    holder = diagnostics.holder_seminorm(snapshot, 1.0, budget=500, seed=seed)

    rng = np.random.default_rng(seed)
    levels = np.stack([rng.standard_normal(linear.shape) for _ in range(4)])
    trajectory = diagnostics.Trajectory(np.arange(4) * 0.1, levels, grid, mesh)
    base = diagnostics.sp_norm(trajectory)
    homogeneity = 0.0
    for factor in (2.0, 10.0):
        scaled = diagnostics.Trajectory(trajectory.times, factor * levels, grid, mesh)
        gap = abs(diagnostics.sp_norm(scaled) - factor * base) / (factor * base)
        homogeneity = max(homogeneity, gap)

    coarse = diagnostics.interpolation_constant(grid, seed=seed)
    fine = diagnostics.interpolation_constant(VelocityGrid(6.0, 2 * n_axis), seed=seed)

    p, l = 2.0, 2.0
    c_p = embedding_constant(grid, mesh, p, l)
    worst = 0.0
    for _ in range(10):
        f = DistributionField(rng.standard_normal(linear.shape), grid, mesh)
        ratio = weighted_lp_norm(f, p, 0.0) / (c_p * weighted_lp_norm(f, np.inf, l))
        worst = max(worst, ratio)

    return [
        CheckResult(suite, "quasi_distance_examples", quasi, 1e-12),
        CheckResult(suite, "quasi_triangle_sampled", triangle, 0, "finite"),
        CheckResult(suite, "decay_fit_synthetic", abs(fit.k - 3.0) / 3.0, 0.05),
        CheckResult(suite, "decay_fit_flags_constant", flat, 1.0, ">="),
        CheckResult(suite, "holder_linear", abs(holder - 1.0), 1e-12),
        CheckResult(suite, "sp_norm_homogeneous", homogeneity, 1e-12),
        CheckResult(suite, "interpolation_stable", abs(fine - coarse) / coarse, 0.2),
        CheckResult(suite, "embedding_inequality", worst, 1.0),
    ]


SUITES: Dict[str, Callable[..., List[CheckResult]]] = {
    "kernel": kernel_suite,
    "operators": operators_suite,
    "geometry": geometry_suite,
    "field": field_suite,
    "norms": norms_suite,
}


def run_suite(name, n_axis=None, seed=0) -> List[CheckResult]:
    """Run one suite (or ``"all"``); ``n_axis`` overrides the suite default."""
    names = list(SUITES) if name == "all" else [name]
    results = []
    for suite in names:
        if suite not in SUITES:
            raise KeyError(suite)
        kwargs = {"seed": seed}
        if n_axis is not None:
            kwargs["n_axis"] = n_axis
        LOGGER.info("running check suite %s", suite)
        results.extend(SUITES[suite](**kwargs))
    return results


def assert_passed(results: List[CheckResult]):
    """Raise :class:`CheckFailure` listing every failed check."""
    failed = [r for r in results if not r.passed]
    if failed:
        raise CheckFailure(
            "{} check(s) failed:\n{}".format(
                len(failed), "\n".join(r.describe() for r in failed)
            )
        )
