"""Time integration of the perturbation equation in a specular slab.

One step is the Strang splitting ``T(dt/2) C(dt) T(dt/2)``:

- ``T`` is free streaming in ``x`` with specular walls plus the field drift
  ``-E.grad_v f + (v.E) f``, written on ``h = sqrt(mu) f`` as
  ``dh/dt = E . D* h`` so that mass and the ``2 E.j`` energy exchange are
  exact; SSP-RK2 in time with the field re-solved at each stage.
- ``C`` is the collision step ``-L f (+ Gamma[g, f]) + 2 sqrt(mu) v.E_f``
  with ``E_f`` held fixed (collisions do not change the charge), sub-cycled
  with Heun's method under ``2 / lambda_max(L)``, or backward Euler solved
  by GMRES preconditioned with a factorization of ``I + dt L``. In ``full``
  mode ``g`` is found by Picard iteration and ``Gamma[g, .]`` uses the
  convolutions of ``g`` cached in its rearranged coefficients.
"""
from dataclasses import dataclass, field, replace
import logging
import math
from typing import Callable, List, Optional

import numpy as np
from scipy import linalg
from scipy.sparse import linalg as splinalg

from . import io
from .errors import ConfigError, NumericalError
from .field import PoissonSolver, PotentialField, boundary_flux, charge_density
from .grid import DistributionField, SpatialMesh, VelocityGrid, check_finite
from .landau import KernelTable, stiffness_bound
from .operators import (
    CollisionOperators,
    power_iteration_bound,
    rearranged_coefficients,
)

LOGGER = logging.getLogger(__name__)

MODES = ("frozen", "full")
TRANSPORT_SCHEMES = ("upwind", "muscl")
DRIFT_SCHEMES = ("centered", "upwind", "off")
COLLISION_INTEGRATORS = ("rk2", "implicit")
INITIAL_RECIPES = ("isotropic", "odd", "random", "zero")
#: largest velocity lattice (nodes) for which ``I + dt L`` is factorized
IMPLICIT_MAX_NODES = 17 ** 3


@dataclass
class SolverConfig:
    """Time stepping and initial data; ``dt=None`` derives the step."""

    mode: str = "frozen"
    t_end: float = 5.0
    dt: Optional[float] = None
    cfl_safety: float = 0.9
    diffusion_safety: float = 0.9
    transport_scheme: str = "upwind"
    drift_scheme: str = "upwind"
    collision_integrator: str = "rk2"
    picard_tol: float = 1e-8
    picard_max_iters: int = 10
    max_dt_halvings: int = 4
    bc_kind: str = "neumann"
    initial_recipe: str = "isotropic"
    eps0: float = 1e-3
    theta0: float = 0.0
    seed: int = 0
    physical: bool = False
    checkpoint_every: int = 0
    cadence: int = 10

    def __post_init__(self):
        for name, allowed in (
            ("mode", MODES),
            ("transport_scheme", TRANSPORT_SCHEMES),
            ("drift_scheme", DRIFT_SCHEMES),
            ("collision_integrator", COLLISION_INTEGRATORS),
            ("initial_recipe", INITIAL_RECIPES),
        ):
            if getattr(self, name) not in allowed:
                raise ConfigError(
                    "Invalid option value: (option: '{}'; value: {})\n"
                    "expected one of {}".format(name, getattr(self, name), allowed)
                )
        if self.picard_max_iters < 2:
            raise ConfigError(
                "Invalid option value: (option: 'picard_max_iters'; value: {})\n"
                "at least 2 iterations are needed to measure a change".format(
                    self.picard_max_iters
                )
            )


@dataclass
class SimState:
    """The unknowns after an accepted step; ``pf`` is the field of ``f``."""

    f: DistributionField
    pf: PotentialField
    t: float
    step_index: int
    mode: str


class PicardFailure(NumericalError):
    """Raise when the Picard iteration does not converge."""

    pass


def minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _specular_padded(values, n_ghost):
    """Pad the cell axis with mirrored cells whose ``v1`` axis is reversed."""
    left = values[:n_ghost][::-1, ::-1]
    right = values[-n_ghost:][::-1, ::-1]
    return np.concatenate([left, values, right], axis=0)


def transport_rhs(values, grid: VelocityGrid, mesh: SpatialMesh, scheme="upwind"):
    """``-v1 d_x f`` in flux form with specular ghost cells.

    The wall fluxes of ``sqrt(mu)`` and ``|v|^2 sqrt(mu)`` moments cancel
    exactly because the ghost states are the interior states at ``R v``.
    """
    v1 = grid.axis[:, None, None]
    padded = _specular_padded(values, 2)
    n = values.shape[0]
    left = padded[1 : n + 2]
    right = padded[2 : n + 3]
    if scheme == "muscl":
        jump = right - left
        left, right = (
            left + 0.5 * minmod(left - padded[0 : n + 1], jump),
            right - 0.5 * minmod(jump, padded[3 : n + 4] - right),
        )
    elif scheme != "upwind":
        raise ConfigError("Unknown option: transport_scheme={}".format(scheme))
    flux = v1 * np.where(v1 > 0, left, right)
    return -(flux[1:] - flux[:-1]) / mesh.spacing


def drift_rhs(values, grid: VelocityGrid, e1, scheme="upwind", diff=None):
    """``-E1 d_{v1} f + v1 E1 f`` for a per-cell field ``e1``."""
    if scheme == "off":
        return np.zeros_like(values)
    e1 = np.asarray(e1, dtype=float)[:, None, None, None]
    h = grid.sqrt_mu * values
    if scheme == "centered":
        rhs_h = e1 * diff.adjoint_along(h, -3)
    elif scheme == "upwind":
        faces = np.where(e1 > 0, h[:, :-1], h[:, 1:]) * e1
        flux = np.zeros((h.shape[0], h.shape[1] + 1) + h.shape[2:])
        flux[:, 1:-1] = faces
        rhs_h = -(flux[:, 1:] - flux[:, :-1]) / grid.axis_weights[:, None, None]
    else:
        raise ConfigError("Unknown option: drift_scheme={}".format(scheme))
    return rhs_h / grid.sqrt_mu


def heun_step(rhs: Callable, values, dt):
    """One explicit second-order Runge-Kutta (Heun) step."""
    k1 = rhs(values)
    k2 = rhs(values + dt * k1)
    return values + 0.5 * dt * (k1 + k2)


def collision_source(grid: VelocityGrid, e_field):
    """``2 sqrt(mu) v.E`` per cell."""
    e = np.asarray(e_field, dtype=float)
    return 2.0 * grid.sqrt_mu * np.einsum("ci,abdi->cabd", e, grid.v)


def collision_step(
    apply_l: Callable, values, dt, source, n_sub=1, apply_gamma: Callable = None
):
    """Advance ``df/dt = -L f (+ Gamma f) + source`` by ``n_sub`` Heun steps."""

    def rhs(f):
        out = source - apply_l(f)
        if apply_gamma is not None:
            out = out + apply_gamma(f)
        return out

    sub = dt / n_sub
    for _ in range(n_sub):
        values = heun_step(rhs, values, sub)
    return values


def operator_matrix(apply: Callable, shape, chunk=32):
    """Assemble a linear velocity operator column by column.

    ``apply`` must accept a leading batch axis; columns follow C-order
    flattening of ``shape``.
    """
    size = int(np.prod(shape))
    matrix = np.empty((size, size))
    for start in range(0, size, chunk):
        stop = min(size, start + chunk)
        unit = np.zeros((stop - start, size))
        unit[np.arange(stop - start), np.arange(start, stop)] = 1.0
        columns = apply(unit.reshape((stop - start,) + tuple(shape)))
        matrix[:, start:stop] = columns.reshape(stop - start, size).T
    return matrix


def check_implicit_size(shape):
    size = int(np.prod(shape))
    if size > IMPLICIT_MAX_NODES:
        raise ConfigError(
            "Invalid option value: (option: 'collision_integrator'; value: implicit)\n"
            "the implicit step factorizes I + dt L and supports at most {} "
            "velocity nodes (got {})".format(IMPLICIT_MAX_NODES, size)
        )
    return size


def factor_collision(apply_l: Callable, shape, dt):
    """LU factors of ``I + dt L`` on one velocity lattice.

    :raises ConfigError: above ``IMPLICIT_MAX_NODES`` nodes
    """
    size = check_implicit_size(shape)
    matrix = dt * operator_matrix(apply_l, shape)
    matrix[np.diag_indices(size)] += 1.0
    return linalg.lu_factor(matrix, check_finite=False)


def implicit_collision_step(
    apply_l: Callable,
    values,
    dt,
    source,
    apply_gamma: Callable = None,
    rtol=1e-10,
    factors=None,
):
    """Backward Euler ``(I + dt L - dt Gamma) f' = f + dt source``.

    GMRES on all cells at once, preconditioned cell by cell with the LU
    factors of ``I + dt L`` (computed here unless ``factors`` is given), so
    that without ``apply_gamma`` the first preconditioned guess is the
    solution.

    :raises NumericalError: if GMRES does not reach ``rtol``
    """
    shape = values.shape
    size = values.size
    nodes = int(np.prod(shape[-3:]))
    if factors is None:
        factors = factor_collision(apply_l, shape[-3:], dt)

    def precondition(x):
        cells = np.reshape(x, (-1, nodes)).T
        return linalg.lu_solve(factors, cells, check_finite=False).T.reshape(-1)

    def matvec(x):
        f = np.reshape(x, shape)
        out = f + dt * apply_l(f)
        if apply_gamma is not None:
            out = out - dt * apply_gamma(f)
        return out.reshape(-1)

    rhs = (values + dt * source).reshape(-1)
    guess = precondition(rhs)
    operator = splinalg.LinearOperator((size, size), matvec=matvec, dtype=float)
    preconditioner = splinalg.LinearOperator(
        (size, size), matvec=precondition, dtype=float
    )
    solution, info = splinalg.gmres(
        operator,
        rhs,
        x0=guess,
        rtol=rtol,
        atol=0.0,
        restart=20,
        maxiter=50,
        M=preconditioner,
    )
    if info != 0:
        raise NumericalError(
            "implicit collision solve did not converge (info={})".format(info)
        )
    return solution.reshape(shape)


def initial_data(grid: VelocityGrid, mesh: SpatialMesh, config: SolverConfig):
    """Neutral initial perturbation scaled to ``||f0||_{inf,theta0} = eps0``."""
    x = mesh.cell_centers[:, 0]
    shape = (mesh.n_active,) + grid.shape
    recipe = config.initial_recipe
    if recipe == "zero":
        return np.zeros(shape)
    width = 0.1 * mesh.extent
    bump = np.exp(-0.5 * ((x - 0.5 * mesh.extent) / width) ** 2)
    if recipe == "isotropic":
        a = bump - np.sum(bump * mesh.volumes) / mesh.total_volume
        values = a[:, None, None, None] * grid.sqrt_mu
    elif recipe == "odd":
        values = bump[:, None, None, None] * grid.v[..., 0] * grid.sqrt_mu
    else:
        rng = np.random.default_rng(config.seed)
        values = rng.uniform(-1.0, 1.0, shape) * grid.sqrt_mu
        mass = float(np.sum(charge_density(values, grid) * mesh.volumes))
        scale = mesh.total_volume * float(grid.integrate(grid.mu))
        values = values - mass / scale * grid.sqrt_mu
    sup = float(np.max(np.abs(values) * grid.weight(config.theta0)))
    return values * (config.eps0 / sup)


@dataclass
class StepStats:
    picard_iterations: int = 0
    contraction: List[float] = field(default_factory=list)
    substeps: int = 0
    halvings: int = 0


class Simulation:
    """A configured slab run: operators, Poisson solver and step policy.

    :raises ConfigError: for a non-slab mesh or a fixed ``dt`` above the
        stability bounds
    """

    def __init__(
        self,
        grid: VelocityGrid,
        mesh: SpatialMesh,
        table: KernelTable,
        config: SolverConfig,
        lambda_max: float = None,
    ):
        if mesh.dim != 1:
            raise ConfigError("the production solver runs on the 1D slab only")
        self.grid = grid
        self.mesh = mesh
        self.config = config
        self.operators = CollisionOperators(table)
        self.diff = self.operators.diff
        if config.collision_integrator == "implicit":
            check_implicit_size(grid.shape)
        self._factors = {}
        self.initial_values = initial_data(grid, mesh, config)
        if config.physical:
            background = float(grid.integrate(grid.mu))
            rho = charge_density(self.initial_values, grid)
            mass = float(np.sum(rho * mesh.volumes))
            self.background = background
            rho0 = background + mass / mesh.total_volume
        else:
            self.background = 0.0
            rho0 = 0.0
        self.poisson = PoissonSolver(mesh, config.bc_kind, rho0)
        if lambda_max is None:
            lambda_max = power_iteration_bound(self.operators, seed=config.seed)
        self.lambda_max = lambda_max
        self.dt_cfl = config.cfl_safety * mesh.spacing / grid.v_max
        self.dt_diffusion = stiffness_bound(
            self.operators.sigma, grid, config.diffusion_safety
        )
        bound = min(self.dt_cfl, self.dt_diffusion)
        if config.dt is None:
            dt = bound
        elif config.dt > bound:
            raise ConfigError(
                "Invalid option value: (option: 'dt'; value: {})\n"
                "stability bound is {:.4g}".format(config.dt, bound)
            )
        else:
            dt = config.dt
        self.n_steps = max(1, int(math.ceil(config.t_end / dt - 1e-12)))
        self.dt = config.t_end / self.n_steps
        LOGGER.info(
            "dt = %.4g (%d steps; cfl %.4g, diffusion %.4g, lambda_max %.4g)",
            self.dt,
            self.n_steps,
            self.dt_cfl,
            self.dt_diffusion,
            self.lambda_max,
        )

    def field_of(self, values) -> PotentialField:
        return self.poisson.solve(charge_density(values, self.grid) + self.background)

    def initial_state(self) -> SimState:
        values = self.initial_values.copy()
        f = DistributionField(values, self.grid, self.mesh, 0.0)
        return SimState(f, self.field_of(values), 0.0, 0, self.config.mode)

    def state_from(self, values, t, step_index) -> SimState:
        f = DistributionField(values, self.grid, self.mesh, t)
        return SimState(f, self.field_of(values), t, step_index, self.config.mode)

    def n_substeps(self, dt):
        limit = self.config.diffusion_safety * 2.0 / self.lambda_max
        return max(1, int(math.ceil(dt / limit - 1e-12)))

    def transport_stage(self, values):
        pf = self.field_of(values)
        rhs = transport_rhs(values, self.grid, self.mesh, self.config.transport_scheme)
        return rhs + drift_rhs(
            values, self.grid, pf.e_field[:, 0], self.config.drift_scheme, self.diff
        )

    def step_transport(self, values, dt):
        """SSP-RK2 transport of ``values`` over ``dt``.

        :raises NumericalError: on a CFL violation
        """
        courant = dt * self.grid.v_max / self.mesh.spacing
        if courant > 1.0:
            raise NumericalError(
                "CFL violation (Courant number {:.3f})".format(courant)
            )
        first = values + dt * self.transport_stage(values)
        second = first + dt * self.transport_stage(first)
        return 0.5 * (values + second)

    def collision_factors(self, dt):
        """LU factors of ``I + dt L``, cached per step size."""
        if dt not in self._factors:
            self._factors[dt] = factor_collision(
                self.operators.apply_L, self.grid.shape, dt
            )
        return self._factors[dt]

    def step_collision(self, values, dt, g=None, stats=None):
        """Collision step with ``Gamma[g, .]`` when ``g`` is given.

        The source ``2 sqrt(mu) v.E`` takes its field from ``g`` (the
        current Picard iterate) when given; collisions conserve the charge,
        so it agrees with the field of ``values``.

        :raises SmallnessError: when ``sigma_G`` of ``g`` loses positivity
        """
        ops = self.operators
        driver = values if g is None else g
        source = collision_source(self.grid, self.field_of(driver).e_field)
        apply_gamma = None
        if g is not None:
            apply_gamma = rearranged_coefficients(ops, g, with_drift=False).apply_gamma
        if self.config.collision_integrator == "implicit":
            return implicit_collision_step(
                ops.apply_L,
                values,
                dt,
                source,
                apply_gamma,
                factors=self.collision_factors(dt),
            )
        n_sub = self.n_substeps(dt)
        if stats is not None:
            stats.substeps += n_sub
        return collision_step(ops.apply_L, values, dt, source, n_sub, apply_gamma)

    def picard_iterate(self, values, dt, stats=None):
        """Collision step with ``g`` iterated to self-consistency.

        ``g`` starts from ``values``; iterate ``k`` is accepted when it moved
        by at most ``picard_tol`` times the norm of iterate ``k - 1``, so at
        least two iterations run.

        :raises PicardFailure: if ``picard_max_iters`` is reached
        """
        config = self.config
        if config.mode == "frozen":
            if stats is not None:
                stats.picard_iterations += 1
            return self.step_collision(values, dt, None, stats)
        g = values
        previous = None
        for k in range(1, config.picard_max_iters + 1):
            candidate = self.step_collision(values, dt, g, stats)
            change = float(np.sqrt(np.sum((candidate - g) ** 2)))
            scale = float(np.sqrt(np.sum(g ** 2)))
            if previous:
                ratio = change / previous
                LOGGER.debug("picard iteration %d: contraction %.3g", k, ratio)
                if stats is not None:
                    stats.contraction.append(ratio)
            previous = change
            g = candidate
            if k > 1 and change <= config.picard_tol * scale:
                if stats is not None:
                    stats.picard_iterations += k
                return candidate
        raise PicardFailure(
            "Picard iteration did not converge in {} iterations".format(
                config.picard_max_iters
            )
        )

    def _strang(self, values, dt, stats):
        values = self.step_transport(values, 0.5 * dt)
        values = self.picard_iterate(values, dt, stats)
        return self.step_transport(values, 0.5 * dt)

    def advance(self, values, dt, stats, halvings=0):
        try:
            return self._strang(values, dt, stats)
        except PicardFailure:
            if halvings >= self.config.max_dt_halvings:
                raise
            stats.halvings += 1
            LOGGER.info("Picard failure: halving dt to %.4g", 0.5 * dt)
            half = self.advance(values, 0.5 * dt, stats, halvings + 1)
            return self.advance(half, 0.5 * dt, stats, halvings + 1)

    def step(self, state: SimState, stats: StepStats = None) -> SimState:
        """One accepted step.

        :raises NumericalError: tagged with the step index
        """
        stats = StepStats() if stats is None else stats
        index = state.step_index + 1
        old = state.f.values
        try:
            values = self.advance(old, self.dt, stats)
            check_finite(values, "distribution field")
        except NumericalError as error:
            raise NumericalError(str(error), step_index=index) from error
        old_norm = float(np.sqrt(np.sum(old ** 2)))
        new_norm = float(np.sqrt(np.sum(values ** 2)))
        if old_norm > 0 and new_norm > 10.0 * old_norm:
            raise NumericalError(
                "instability: norm grew by {:.3g}".format(new_norm / old_norm), index
            )
        t = self.config.t_end if index == self.n_steps else index * self.dt
        return self.state_from(values, t, index)

    def splitting_error(self, state: SimState):
        """Relative difference between one step and two half steps."""
        stats = StepStats()
        full = self._strang(state.f.values, self.dt, stats)
        half = self._strang(state.f.values, 0.5 * self.dt, stats)
        half = self._strang(half, 0.5 * self.dt, stats)
        norm = float(np.sqrt(np.sum(full ** 2)))
        if norm == 0:
            return 0.0
        return float(np.sqrt(np.sum((full - half) ** 2))) / norm


@dataclass
class RunResult:
    final: SimState
    records: list
    snapshots: list
    picard_iterations: List[int]
    contraction: List[float]
    flux_history: List[float]
    substeps: int
    halvings: int


def run(
    sim: Simulation,
    monitor: Callable = None,
    state: SimState = None,
    keep_trajectory=False,
    checkpoint_dir=None,
):
    """Advance to ``t_end``, calling ``monitor(state)`` on the cadence.

    ``monitor`` returns a record which is collected; the first and last
    states are always monitored.
    """
    state = sim.initial_state() if state is None else state
    cadence = max(1, sim.config.cadence)
    records, snapshots = [], []
    flux_history = [boundary_flux(state.pf)]
    iterations, contraction = [], []
    substeps = halvings = 0

    def observe(current):
        if monitor is not None:
            records.append(monitor(current))
        if keep_trajectory:
            snapshots.append((current.t, current.f.values.copy()))

    observe(state)
    while state.step_index < sim.n_steps:
        stats = StepStats()
        state = sim.step(state, stats)
        iterations.append(stats.picard_iterations)
        contraction.extend(stats.contraction)
        substeps += stats.substeps
        halvings += stats.halvings
        flux_history.append(boundary_flux(state.pf))
        every = sim.config.checkpoint_every
        if checkpoint_dir is not None and every and state.step_index % every == 0:
            path = "{}/checkpoint_{:06d}.bin".format(checkpoint_dir, state.step_index)
            io.write_checkpoint(path, state.f, state.step_index)
        if state.step_index % cadence == 0 or state.step_index == sim.n_steps:
            observe(state)
    return RunResult(
        final=state,
        records=records,
        snapshots=snapshots,
        picard_iterations=iterations,
        contraction=contraction,
        flux_history=flux_history,
        substeps=substeps,
        halvings=halvings,
    )


def resume(sim: Simulation, path) -> SimState:
    """Rebuild the state stored in a checkpoint."""
    values, t, step_index = io.read_checkpoint(path, sim.grid, sim.mesh)
    return sim.state_from(values, t, step_index)


def with_mode(config: SolverConfig, **changes) -> SolverConfig:
    return replace(config, **changes)
