import numpy as np
import pytest

from vpl_kinetic.grid import VelocityGrid
from vpl_kinetic.landau import KernelTable
from vpl_kinetic.operators import (
    CollisionInvariantBasis,
    CollisionOperators,
    assemble_dense,
    coercivity_sample,
    kbar_band_report,
    power_iteration_bound,
    project_P,
    random_smooth_field,
    rearranged_coefficients,
)


def smooth_fields(grid, n, seed=0):
    rng = np.random.default_rng(seed)
    return [random_smooth_field(grid, rng) for _ in range(n)]


def test_basis_orthonormal(grid8):
    basis = CollisionInvariantBasis(grid8)
    assert np.allclose(basis.gram, np.eye(5), atol=1e-12)


@pytest.mark.parametrize("index", range(5))
def test_null_space(operators8, index):
    invariant = operators8.basis.raw[index]
    reference = np.max(np.abs(operators8.apply_A(operators8.basis.raw[4])))
    residual = np.max(np.abs(operators8.apply_L(invariant)))
    assert residual <= 1e-10 * reference


@pytest.mark.parametrize("n_axis", [8, 12, 16])
def test_null_space_exact_on_refinement(n_axis):
    ops = CollisionOperators(KernelTable(VelocityGrid(6.0, n_axis)))
    reference = np.sqrt(ops.inner(ops.sigma_vv, ops.sigma_vv))
    for invariant in ops.basis.functions:
        residual = ops.apply_L(invariant)
        assert np.sqrt(ops.inner(residual, residual)) <= 1e-10 * reference


def test_projection(operators8, grid8):
    f = smooth_fields(grid8, 1)[0]
    pf, _ = project_P(operators8.basis, f)
    again, _ = project_P(operators8.basis, pf)
    assert np.allclose(again, pf, atol=1e-12 * np.max(np.abs(pf)))
    pf, moments = operators8.project_P(grid8.sqrt_mu)
    assert np.allclose(pf, grid8.sqrt_mu, atol=1e-12)
    assert moments.a == pytest.approx(1.0)
    assert np.allclose(moments.b, 0.0, atol=1e-12)
    assert moments.c == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(moments.reconstruct(grid8), pf, atol=1e-12)


def test_L_symmetric_semipositive(operators8, grid8):
    f, g = smooth_fields(grid8, 2, seed=3)
    lfg = operators8.inner(operators8.apply_L(f), g)
    lgf = operators8.inner(f, operators8.apply_L(g))
    assert lfg == pytest.approx(lgf, rel=1e-10)
    for h in smooth_fields(grid8, 5, seed=4):
        scale = operators8.inner(h, h) * np.max(np.abs(operators8.sigma))
        assert operators8.inner(operators8.apply_L(h), h) >= -1e-12 * scale


def test_gamma(operators8, grid8):
    g, f1, f2 = smooth_fields(grid8, 3, seed=5)
    combined = operators8.apply_Gamma(g, 2.0 * f1 - 3.0 * f2)
    separate = 2.0 * operators8.apply_Gamma(g, f1) - 3.0 * operators8.apply_Gamma(
        g, f2
    )
    assert np.allclose(combined, separate, atol=1e-10 * np.max(np.abs(separate)))
    value = operators8.apply_Gamma(g, f1)
    mass = operators8.inner(grid8.sqrt_mu, value)
    assert abs(mass) <= 1e-10 * operators8.inner(np.abs(value), grid8.sqrt_mu)
    assert not np.any(operators8.apply_Gamma(np.zeros(grid8.shape), f1))


def test_sigma_norm(operators8, grid8):
    f = smooth_fields(grid8, 1, seed=6)[0]
    assert operators8.sigma_norm(f) > 0
    assert operators8.sigma_norm(f, 1.0) > 0
    cells = np.stack([f, 2.0 * f])
    total = operators8.sigma_inner(cells, cells, volumes=[0.5, 0.5])
    assert total == pytest.approx(2.5 * operators8.sigma_inner(f, f), rel=1e-12)


def test_dense_matches_matrix_free(operators8, grid8):
    dense = assemble_dense(operators8)
    f = smooth_fields(grid8, 1, seed=7)[0]
    matrix_free = operators8.apply_L(f).reshape(-1)
    assert np.allclose(
        dense.L @ f.reshape(-1), matrix_free, atol=1e-10 * np.max(np.abs(matrix_free))
    )


def collision_gap(grid, g_scale, seed):
    ops = CollisionOperators(KernelTable(grid))
    rng = np.random.default_rng(seed)
    g = random_smooth_field(grid, rng)
    g = g_scale * g / np.max(np.abs(g))
    f = random_smooth_field(grid, rng)
    split = rearranged_coefficients(ops, g, check=False)
    expected = -ops.apply_L(f) + ops.apply_Gamma(g, f)
    gap = split.apply(f) - expected
    return np.sqrt(grid.integrate(gap ** 2) / grid.integrate(expected ** 2))


@pytest.mark.parametrize("g_scale", [0.0, 1e-2])
def test_rearranged_reproduces_collision(g_scale):
    coarse = collision_gap(VelocityGrid(6.0, 8), g_scale, seed=8)
    fine = collision_gap(VelocityGrid(6.0, 16), g_scale, seed=8)
    assert fine < coarse


def test_rearranged_maxwellian_part(operators8, grid8):
    f = smooth_fields(grid8, 1, seed=10)[0]
    split = rearranged_coefficients(operators8, np.zeros(grid8.shape))
    assert np.array_equal(split.sigma_G, operators8.sigma)
    assert not np.any(split.drift)
    sigma_i = operators8.table.sigma_i()
    divergence = sum(
        operators8.diff.derivative(sigma_i[..., a], axis)
        for a, axis in enumerate((-3, -2, -1))
    )
    expected = operators8.apply_K(f) + (divergence - operators8.sigma_vv) * f
    np.testing.assert_allclose(
        split.apply_kbar(f), expected, rtol=0, atol=1e-12 * np.max(np.abs(expected))
    )


def test_rearranged_gamma(operators8, grid8):
    g = smooth_fields(grid8, 1, seed=8)[0]
    g = 1e-3 * g / np.max(np.abs(g))
    f = np.stack(smooth_fields(grid8, 2, seed=9))
    split = rearranged_coefficients(operators8, g, with_drift=False)
    assert split.coefficients.drift is None
    expected = operators8.apply_Gamma(g, f)
    np.testing.assert_allclose(
        split.apply_gamma(f), expected, rtol=0, atol=1e-12 * np.max(np.abs(expected))
    )
    assert split.drift.shape == grid8.shape + (3,)
    report = kbar_band_report(split, f[0])
    assert set(report) == {2, 4}
    assert all(np.isfinite(value) for value in report.values())


def test_spectral_estimates(operators8):
    assert power_iteration_bound(operators8, n_iter=20) > 0
    report = coercivity_sample(operators8, n_samples=5)
    assert report.semipositivity_min >= -1e-8
    assert report.sigma_lower > 0
    assert report.n_samples == 5
