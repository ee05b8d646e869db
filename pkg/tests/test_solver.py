import numpy as np
import pytest

from vpl_kinetic.errors import ConfigError, NumericalError
from vpl_kinetic.field import charge_density
from vpl_kinetic.grid import SpatialMesh
from vpl_kinetic.operators import power_iteration_bound, random_smooth_field
from vpl_kinetic.solver import (
    INITIAL_RECIPES,
    Simulation,
    SolverConfig,
    collision_source,
    collision_step,
    drift_rhs,
    factor_collision,
    implicit_collision_step,
    initial_data,
    minmod,
    resume,
    run,
    transport_rhs,
    with_mode,
)


def make_sim(table8, grid8, **changes):
    settings = dict(t_end=0.05, cadence=1, eps0=1e-3)
    settings.update(changes)
    return Simulation(grid8, SpatialMesh.slab(1.0, 8), table8, SolverConfig(**settings))


def total_moment(grid, mesh, values, weight=1.0):
    return float(np.sum(mesh.volumes * grid.integrate(grid.sqrt_mu * weight * values)))


def test_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(mode="adaptive")
    with pytest.raises(ConfigError):
        SolverConfig(transport_scheme="weno")
    with pytest.raises(ConfigError):
        SolverConfig(picard_max_iters=1)
    assert SolverConfig().drift_scheme == "upwind"
    config = with_mode(SolverConfig(), mode="full")
    assert config.mode == "full"


def test_minmod():
    assert np.array_equal(
        minmod(np.array([1.0, -2.0, 1.0]), np.array([2.0, -1.0, -1.0])),
        [1.0, -1.0, 0.0],
    )


@pytest.mark.parametrize("recipe", INITIAL_RECIPES)
def test_initial_data(recipe, grid8, slab8):
    values = initial_data(grid8, slab8, SolverConfig(initial_recipe=recipe, eps0=1e-3))
    assert abs(total_moment(grid8, slab8, values)) < 1e-15
    sup = np.max(np.abs(values))
    assert sup == (0.0 if recipe == "zero" else pytest.approx(1e-3))


@pytest.mark.parametrize("scheme", ["upwind", "muscl"])
def test_transport_conserves(scheme, grid8, slab8):
    values = np.random.default_rng(0).standard_normal((slab8.n_active,) + grid8.shape)
    rhs = transport_rhs(values, grid8, slab8, scheme)
    scale = total_moment(grid8, slab8, np.abs(rhs))
    assert abs(total_moment(grid8, slab8, rhs)) <= 1e-12 * scale
    energy = total_moment(grid8, slab8, rhs, grid8.speed_sq)
    energy_scale = total_moment(grid8, slab8, np.abs(rhs), grid8.speed_sq)
    assert abs(energy) <= 1e-12 * energy_scale


def test_bump_reflects_at_wall(grid8, slab8):
    values = np.zeros((slab8.n_active,) + grid8.shape)
    centre = grid8.n_axis // 2
    values[-2:, centre + 1] = 1.0
    mass = total_moment(grid8, slab8, values)
    dt = 0.9 * slab8.spacing / grid8.v_max
    for _ in range(20):
        first = values + dt * transport_rhs(values, grid8, slab8)
        second = first + dt * transport_rhs(first, grid8, slab8)
        values = 0.5 * (values + second)
    assert abs(total_moment(grid8, slab8, values) - mass) <= 1e-12 * mass
    reflected = np.zeros_like(values)
    reflected[:, centre - 1] = values[:, centre - 1]
    assert total_moment(grid8, slab8, reflected) >= 0.8 * mass


@pytest.mark.parametrize("scheme", ["centered", "upwind"])
def test_drift_conserves_mass(scheme, operators8, grid8, slab8):
    values = np.random.default_rng(1).standard_normal((slab8.n_active,) + grid8.shape)
    e1 = np.linspace(-1.0, 1.0, slab8.n_active)
    rhs = drift_rhs(values * grid8.sqrt_mu, grid8, e1, scheme, operators8.diff)
    scale = total_moment(grid8, slab8, np.abs(rhs))
    assert abs(total_moment(grid8, slab8, rhs)) <= 1e-12 * scale
    assert not np.any(drift_rhs(values, grid8, e1, "off"))


def test_collision_source(grid8):
    e_field = np.array([[0.5, 0.0, 0.0], [-1.0, 0.2, 0.0]])
    source = collision_source(grid8, e_field)
    assert source.shape == (2,) + grid8.shape
    v1, v2 = grid8.v[..., 0], grid8.v[..., 1]
    np.testing.assert_allclose(source[0], grid8.sqrt_mu * v1, rtol=0, atol=1e-15)
    expected = 2.0 * grid8.sqrt_mu * (-v1 + 0.2 * v2)
    np.testing.assert_allclose(source[1], expected, rtol=0, atol=1e-15)
    assert np.allclose(grid8.integrate(grid8.sqrt_mu * source), 0.0, atol=1e-15)


def test_implicit_collision_step(operators8, grid8):
    values = np.random.default_rng(2).standard_normal((2,) + grid8.shape)
    values *= grid8.sqrt_mu
    source = np.zeros_like(values)
    result = implicit_collision_step(operators8.apply_L, values, 0.1, source)
    residual = result + 0.1 * operators8.apply_L(result) - values
    assert np.linalg.norm(residual) <= 1e-8 * np.linalg.norm(values)


def test_implicit_collision_step_with_gamma(operators8, grid8):
    rng = np.random.default_rng(3)
    values = np.stack([random_smooth_field(grid8, rng) for _ in range(2)])
    g = 1e-3 * values / np.max(np.abs(values))
    source = collision_source(grid8, np.array([[0.1, 0.0, 0.0], [0.0, 0.0, 0.0]]))

    def apply_gamma(f):
        return operators8.apply_Gamma(g, f)

    factors = factor_collision(operators8.apply_L, grid8.shape, 0.5)
    result = implicit_collision_step(
        operators8.apply_L, values, 0.5, source, apply_gamma, factors=factors
    )
    residual = result + 0.5 * (operators8.apply_L(result) - apply_gamma(result))
    residual -= values + 0.5 * source
    assert np.linalg.norm(residual) <= 1e-8 * np.linalg.norm(values)


def test_implicit_size_limit(operators8):
    with pytest.raises(ConfigError):
        factor_collision(operators8.apply_L, (19, 19, 19), 0.1)


def test_collision_step_dissipates(operators8, grid8):
    rng = np.random.default_rng(4)
    values = random_smooth_field(grid8, rng)
    lambda_max = power_iteration_bound(operators8)
    dt = 1.0 / lambda_max
    norms = [float(operators8.inner(values, values))]
    for _ in range(10):
        values = collision_step(operators8.apply_L, values, dt, 0.0)
        norms.append(float(operators8.inner(values, values)))
    assert all(b <= a * (1 + 1e-8) for a, b in zip(norms, norms[1:]))
    assert norms[-1] < norms[0]


def test_simulation_rejects(table8, grid8):
    with pytest.raises(ConfigError):
        Simulation(grid8, SpatialMesh.disk(1.0, 8), table8, SolverConfig())
    with pytest.raises(ConfigError):
        make_sim(table8, grid8, dt=1.0)


def test_step_policy(table8, grid8):
    sim = make_sim(table8, grid8)
    assert sim.dt <= min(sim.dt_cfl, sim.dt_diffusion)
    assert sim.n_steps * sim.dt == pytest.approx(0.05)
    config = SolverConfig(t_end=0.05, dt=0.5 * sim.dt_cfl)
    fixed = Simulation(grid8, sim.mesh, table8, config, lambda_max=sim.lambda_max)
    assert fixed.dt <= 0.5 * sim.dt_cfl
    assert fixed.lambda_max == sim.lambda_max


def test_zero_trajectory(table8, grid8):
    sim = make_sim(table8, grid8, initial_recipe="zero")
    result = run(sim, keep_trajectory=True)
    assert result.final.t == 0.05
    assert result.final.step_index == sim.n_steps
    assert not np.any(result.final.f.values)
    assert len(result.snapshots) == sim.n_steps + 1
    assert result.flux_history == [0.0] * (sim.n_steps + 1)


@pytest.mark.parametrize("recipe", ["isotropic", "odd"])
def test_mass_conservation(recipe, table8, grid8):
    sim = make_sim(table8, grid8, initial_recipe=recipe)
    result = run(sim)
    values = result.final.f.values
    scale = total_moment(grid8, sim.mesh, np.abs(sim.initial_values))
    assert abs(total_moment(grid8, sim.mesh, values)) <= 1e-12 * scale
    assert np.isfinite(values).all()
    assert result.substeps >= sim.n_steps


def test_determinism(table8, grid8):
    first = run(make_sim(table8, grid8, initial_recipe="random")).final.f.values
    second = run(make_sim(table8, grid8, initial_recipe="random")).final.f.values
    assert np.array_equal(first, second)


def test_checkpoint_resume(tmp_path, table8, grid8):
    sim = make_sim(table8, grid8, checkpoint_every=2)
    uninterrupted = run(sim, checkpoint_dir=tmp_path)
    path = tmp_path.joinpath("checkpoint_000002.bin")
    assert path.exists()
    state = resume(sim, path)
    assert state.step_index == 2
    resumed = run(sim, state=state)
    assert resumed.final.t == uninterrupted.final.t
    np.testing.assert_allclose(
        resumed.final.f.values, uninterrupted.final.f.values, rtol=0, atol=1e-15
    )


def test_physical_background(table8, grid8):
    sim = make_sim(table8, grid8, physical=True)
    assert sim.background == pytest.approx(grid8.integrate(grid8.mu))
    state = sim.initial_state()
    rho = charge_density(state.f) + sim.background
    assert np.allclose(rho.mean(), sim.poisson.rho0)


def test_implicit_matches_explicit(table8, grid8):
    explicit = run(make_sim(table8, grid8)).final.f.values
    implicit = run(make_sim(table8, grid8, collision_integrator="implicit"))
    gap = np.max(np.abs(implicit.final.f.values - explicit))
    assert gap <= 0.25 * np.max(np.abs(explicit))


def test_full_mode(table8, grid8):
    sim = make_sim(table8, grid8, mode="full", t_end=0.02)
    result = run(sim)
    assert all(count >= 2 for count in result.picard_iterations)
    assert all(ratio < 1.0 for ratio in result.contraction)
    assert sim.splitting_error(result.final) >= 0.0


def test_picard_failure(table8, grid8):
    sim = make_sim(
        table8,
        grid8,
        mode="full",
        picard_max_iters=2,
        picard_tol=1e-30,
        max_dt_halvings=0,
        t_end=0.02,
    )
    with pytest.raises(NumericalError) as info:
        sim.step(sim.initial_state())
    assert info.value.step_index == 1
