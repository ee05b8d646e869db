import numpy as np
import pytest

from vpl_kinetic.errors import NumericalError
from vpl_kinetic.grid import (
    DistributionField,
    SpatialMesh,
    VelocityDifference,
    VelocityGrid,
    check_finite,
    embedding_constant,
    integrate_v,
    japanese_bracket,
    maxwellian,
    weighted_lp,
    weighted_lp_norm,
    weight_bracket,
)


@pytest.mark.parametrize("n_axis", [7, 6, 0])
def test_grid_rejects_axis(n_axis):
    with pytest.raises(ValueError):
        VelocityGrid(6.0, n_axis)


def test_grid_layout(grid8):
    assert grid8.n_nodes == 9
    assert grid8.shape == (9, 9, 9)
    assert np.array_equal(grid8.axis, -grid8.axis[::-1])
    assert grid8.axis[4] == 0.0
    assert grid8.spacing == 1.5
    assert not grid8.mu.flags.writeable
    assert grid8 == VelocityGrid(6.0, 8)
    assert hash(grid8) == hash(VelocityGrid(6.0, 8))


def test_quadrature():
    grid = VelocityGrid(6.0, 16)
    assert grid.integrate(np.ones(grid.shape)) == pytest.approx(12.0 ** 3, rel=1e-12)
    assert grid.integrate(grid.mu) == pytest.approx(np.pi ** 1.5, rel=1e-6)
    assert np.allclose(grid.mu, maxwellian(grid.v))
    assert np.allclose(grid.bracket, japanese_bracket(grid.v))
    assert np.array_equal(grid.weight(2.0), grid.weight(2))
    assert np.allclose(weight_bracket(grid.v, 2.0), grid.weight(2.0))
    assert integrate_v(grid, grid.mu) == grid.integrate(grid.mu)
    with pytest.raises(NumericalError):
        integrate_v(grid, np.full(grid.shape, np.nan))


def test_difference_exact_on_quadratics(grid8):
    diff = VelocityDifference(grid8)
    v1 = grid8.v[..., 0]
    assert np.allclose(diff.derivative(v1 ** 2, -3), 2 * v1, atol=1e-12)
    assert np.allclose(diff.gradient(np.ones(grid8.shape)), 0.0)


def test_difference_adjoint(grid8):
    diff = VelocityDifference(grid8)
    rng = np.random.default_rng(0)
    flux = rng.standard_normal(grid8.shape + (3,))
    g = rng.standard_normal(grid8.shape)
    lhs = grid8.inner(diff.adjoint(flux), g)
    rhs = grid8.integrate(np.sum(flux * diff.gradient(g), axis=-1))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_sparse_matrices_match(grid8):
    diff = VelocityDifference(grid8)
    values = np.random.default_rng(1).standard_normal(grid8.shape)
    for axis, (d, _) in zip((-3, -2, -1), diff.sparse_matrices()):
        dense = (d @ values.reshape(-1)).reshape(grid8.shape)
        assert np.allclose(dense, diff.derivative(values, axis))


def test_slab_mesh():
    mesh = SpatialMesh.slab(2.0, 4)
    assert mesh.n_active == 4
    assert mesh.total_volume == pytest.approx(2.0)
    assert np.allclose(mesh.cell_centers[:, 0], [0.25, 0.75, 1.25, 1.75])
    assert len(mesh.face_cells) == 3
    assert np.allclose(mesh.bface_normals[:, 0], [-1.0, 1.0])
    with pytest.raises(ValueError):
        SpatialMesh.slab(1.0, 1)


def test_disk_mesh():
    mesh = SpatialMesh.disk(1.0, 16)
    assert 2 * len(mesh.face_cells) + len(mesh.bface_cells) == 4 * mesh.n_active
    assert abs(mesh.total_volume - np.pi) < 0.2
    assert np.allclose(np.linalg.norm(mesh.bface_normals, axis=-1), 1.0)


def test_distribution_field(grid8, slab8):
    with pytest.raises(ValueError):
        DistributionField(np.zeros((3,) + grid8.shape), grid8, slab8)
    f = DistributionField.zeros(grid8, slab8)
    assert np.array_equal(f.full_distribution()[0], grid8.mu)
    assert f.is_physical()
    negative = f.copy(values=-2.0 * np.ones_like(f.values) / grid8.sqrt_mu.max())
    assert negative.min_full_distribution() < 0


def test_weighted_norms(grid8, slab8):
    values = np.ones((slab8.n_active,) + grid8.shape)
    f = DistributionField(values, grid8, slab8)
    assert weighted_lp_norm(f, 2.0) == pytest.approx(12.0 ** 1.5, rel=1e-12)
    assert weighted_lp_norm(f, np.inf, 1.0) == pytest.approx(grid8.bracket.max())
    with pytest.raises(ValueError):
        weighted_lp(grid8, None, values[0], 0.5)


def test_embedding_holds(grid8, slab8):
    constant = embedding_constant(grid8, slab8, 2.0, 2.0)
    rng = np.random.default_rng(2)
    for _ in range(5):
        f = DistributionField(
            rng.standard_normal((slab8.n_active,) + grid8.shape), grid8, slab8
        )
        assert weighted_lp_norm(f, 2.0) <= constant * weighted_lp_norm(f, np.inf, 2.0)
    with pytest.raises(ValueError):
        embedding_constant(grid8, slab8, 2.0, 1.0)


def test_check_finite():
    with pytest.raises(NumericalError):
        check_finite(np.array([0.0, np.nan]))
