from types import SimpleNamespace

import numpy as np
import pytest

from vpl_kinetic import diagnostics
from vpl_kinetic.diagnostics import KineticPoint, Monitor
from vpl_kinetic.errors import DiagnosticsError, GeometryError
from vpl_kinetic.field import PotentialField
from vpl_kinetic.grid import DistributionField, SpatialMesh, weighted_lp
from vpl_kinetic.solver import Simulation, SolverConfig, run


def zero_state(grid, mesh):
    return SimpleNamespace(
        f=DistributionField.zeros(grid, mesh),
        pf=PotentialField.zeros(mesh),
        t=0.0,
    )


def linear_snapshot(grid, mesh):
    values = np.broadcast_to(grid.v[..., 0], (mesh.n_active,) + grid.shape)
    return DistributionField(values.copy(), grid, mesh)


def test_kinetic_point():
    point = KineticPoint(0.5, [0.1], [1, 2, 3])
    assert point.x.tolist() == [0.1, 0.0, 0.0]
    with pytest.raises(DiagnosticsError):
        KineticPoint(float("nan"), [0.0], [0, 0, 0])


@pytest.mark.parametrize(
    "z,w,expected",
    [
        ((0.0, [0.3], [0, 0, 0]), (0.0, [0.3], [0, 0, 0]), 0.0),
        ((1.0, [0.3], [0, 0, 0]), (0.0, [0.3], [0, 0, 0]), 1.0),
        ((0.0, [0.308], [1, 0, 0]), (0.0, [0.3], [1, 0, 0]), 0.2),
    ],
)
def test_quasi_distance(z, w, expected):
    value = diagnostics.quasi_distance(KineticPoint(*z), KineticPoint(*w))
    assert value == pytest.approx(expected, abs=1e-12)


def test_quasi_triangle_constant():
    constant = diagnostics.quasi_triangle_constant(2000, seed=1)
    assert np.isfinite(constant)
    assert constant > 0


def test_holder_seminorm(grid8, slab8):
    snapshot = linear_snapshot(grid8, slab8)
    assert diagnostics.holder_seminorm(snapshot, 1.0, budget=200) == pytest.approx(
        1.0, abs=1e-12
    )
    rng = np.random.default_rng(3)
    noisy = snapshot.copy(values=rng.standard_normal(snapshot.values.shape))
    small = diagnostics.holder_seminorm(noisy, 0.5, budget=10, seed=4)
    large = diagnostics.holder_seminorm(noisy, 0.5, budget=500, seed=4)
    assert large >= small
    with pytest.raises(DiagnosticsError):
        diagnostics.holder_seminorm(snapshot, 1.5)


def test_decay_fit():
    t = np.linspace(0.0, 20.0, 101)
    fit = diagnostics.decay_fit(t, 0.25 * (1.0 + t / 2.0) ** -4)
    assert fit.k == pytest.approx(2.0, rel=0.05)
    assert fit.eps0 == pytest.approx(0.5, rel=0.05)
    assert not fit.flagged
    assert diagnostics.decay_fit(t, np.ones_like(t)).flagged
    with pytest.raises(DiagnosticsError):
        diagnostics.decay_fit(np.linspace(0.0, 5.0, 8), np.ones(8))


def test_macro_micro_window():
    with pytest.raises(DiagnosticsError):
        diagnostics.macro_micro_report([], 0.5)
    assert diagnostics.max_macro_micro_ratio([]) is None


def test_sp_norm(grid8, slab8):
    rng = np.random.default_rng(0)
    shape = (slab8.n_active,) + grid8.shape
    levels = np.stack([rng.standard_normal(shape) for _ in range(3)])
    times = np.array([0.0, 0.1, 0.2])
    base = diagnostics.sp_norm(diagnostics.Trajectory(times, levels, grid8, slab8))
    scaled = diagnostics.Trajectory(times, 3.0 * levels, grid8, slab8)
    assert diagnostics.sp_norm(scaled) == pytest.approx(3.0 * base, rel=1e-12)
    with pytest.raises(DiagnosticsError):
        diagnostics.sp_norm(
            diagnostics.Trajectory(times[:2], levels[:2], grid8, slab8)
        )
    with pytest.raises(DiagnosticsError):
        uneven = np.array([0.0, 0.1, 0.3])
        diagnostics.sp_norm(diagnostics.Trajectory(uneven, levels, grid8, slab8))


def test_interpolation_constant(grid8):
    assert diagnostics.interpolation_constant(grid8, n_samples=5) > 0


def test_oscillation():
    z0 = KineticPoint(1.0, [0.5], [0.0, 0.0, 0.0])

    def constant(t, x, v):
        return np.ones_like(t)

    def first_velocity(t, x, v):
        return v[..., 0]

    assert diagnostics.oscillation(constant, z0, 0.5, n_samples=500) == 0.0
    radii = [0.1, 0.2, 0.4]
    exponent = diagnostics.oscillation_exponent(
        first_velocity, z0, radii, n_samples=500
    )
    assert exponent == pytest.approx(1.0, abs=1e-8)
    support = diagnostics.Support((0.0, 1.0), (0.0, 1.0), 6.0)
    with pytest.raises(GeometryError):
        diagnostics.oscillation(
            constant, KineticPoint(-1.0, [0.5], [0, 0, 0]), 0.1, support=support
        )


def test_monitor_zero_state(operators8, grid8, slab8):
    record = Monitor(operators8, thetas=(0.0, 1.0))(zero_state(grid8, slab8))
    assert record.mass == 0.0
    assert record.angular_momentum == 0.0
    assert np.isfinite(record.entropy)
    assert not record.entropy_flag
    assert record.W == {0.0: 0.0, 1.0: 0.0}
    assert record.E == {0.0: 0.0, 1.0: 0.0}
    assert record.min_F > 0


def test_entropy_negative_distribution(grid8, slab8):
    values = np.broadcast_to(-2.0 * grid8.sqrt_mu, (slab8.n_active,) + grid8.shape)
    state = SimpleNamespace(f=DistributionField(values.copy(), grid8, slab8))
    assert diagnostics.entropy(state) is None


def test_hierarchy(operators8, grid8, slab8):
    rng = np.random.default_rng(2)
    f = DistributionField(
        rng.standard_normal((slab8.n_active,) + grid8.shape), grid8, slab8
    )
    state = SimpleNamespace(f=f, pf=PotentialField.zeros(slab8))
    w0, v0 = diagnostics.hierarchy(state, 0.0, operators8)
    w1, v1 = diagnostics.hierarchy(state, 1.0, operators8)
    assert w0 == pytest.approx(weighted_lp(grid8, slab8.volumes, f.values, 2.0) ** 2)
    assert w1 > w0
    assert v1 >= v0 >= 0


def test_accumulated_dissipation(table8, grid8):
    sim = Simulation(
        grid8,
        SpatialMesh.slab(1.0, 8),
        table8,
        SolverConfig(t_end=0.05, cadence=1, eps0=1e-3),
    )
    result = run(sim, Monitor(sim.operators, thetas=(0.0,)))
    accumulated = [record.E[0.0] for record in result.records]
    assert accumulated[0] == 0.0
    assert all(b >= a for a, b in zip(accumulated, accumulated[1:]))


def test_timeseries_columns(data_regression):
    data_regression.check({"columns": diagnostics.timeseries_columns([0.0, 0.5])})


def test_velocity_derivatives(grid8):
    grad, hess = diagnostics.velocity_derivatives(grid8.v[..., 0] ** 2, grid8)
    assert np.allclose(grad, 2.0 * np.abs(grid8.v[..., 0]))
    assert np.allclose(hess, 2.0)


def test_trajectory_sampler_and_terms(grid8, slab8):
    times = np.array([0.0, 0.1, 0.2])
    shape = (slab8.n_active,) + grid8.shape
    levels = np.stack([np.broadcast_to(t + grid8.v[..., 0], shape) for t in times])
    trajectory = diagnostics.Trajectory(times, levels, grid8, slab8)
    sampler = diagnostics.trajectory_sampler(trajectory)
    point = np.array([[0.3, 0.0, 0.0]]), np.array([[1.2, 0.0, 0.0]])
    value = sampler(np.array([0.05]), *point)
    assert value == pytest.approx([1.25])
    assert sampler.support.t_range == (0.0, 0.2)
    f_norm, grad, hess, kinetic = diagnostics.sp_terms(trajectory)
    assert f_norm > 0 and grad > 0
    assert hess == pytest.approx(0.0, abs=1e-10)
    assert kinetic > 0
