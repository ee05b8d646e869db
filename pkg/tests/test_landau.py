import numpy as np
import pytest

from vpl_kinetic.errors import FormatError, SmallnessError
from vpl_kinetic.landau import (
    KernelTable,
    build_sigma_G,
    direct_convolution,
    eigenvalue_formulas,
    origin_value,
    phi_kernel,
    sigma_bounds_fit,
    sigma_conv,
    sigma_i_field,
    stiffness_bound,
)


def test_kernel_annihilates_offset():
    w = np.random.default_rng(0).standard_normal((50, 3))
    matrices = phi_kernel(w)
    assert np.max(np.abs(np.einsum("nij,nj->ni", matrices, w))) < 1e-13
    assert np.allclose(matrices, np.swapaxes(matrices, -1, -2))


@pytest.mark.parametrize("gamma", [-3.0, -2.0, 0.0, 1.0])
def test_kernel_eigenvalues(gamma):
    w = np.array([0.3, -1.2, 0.7])
    eig = np.linalg.eigvalsh(phi_kernel(w, gamma))
    r = np.linalg.norm(w)
    assert np.allclose(eig, [0.0, r ** (gamma + 2), r ** (gamma + 2)], atol=1e-13)


def test_kernel_origin():
    with pytest.raises(ValueError):
        phi_kernel(np.zeros(3))
    assert np.allclose(phi_kernel(np.zeros(3), origin=2.0), 2.0 * np.eye(3))


def test_origin_rules(grid8):
    assert origin_value(grid8, -2.0) == pytest.approx(2.0 / 3.0)
    assert origin_value(grid8, -3.0, "zero") == 0.0
    assert origin_value(grid8, 0.0) == 0.0
    assert origin_value(grid8, -3.0) > 0
    with pytest.raises(ValueError):
        origin_value(grid8, -3.0, "nearest")
    with pytest.raises(ValueError):
        KernelTable(grid8, gamma=-4.0)


def test_fft_matches_direct(table8, grid8):
    h = np.random.default_rng(1).standard_normal(grid8.shape) * grid8.sqrt_mu
    fast = table8.matrix_conv(h)
    slow = direct_convolution(table8, h)
    assert np.max(np.abs(fast - slow)) <= 1e-10 * np.max(np.abs(slow))


def test_sigma_positive_and_isotropic(table8, grid8):
    sigma = table8.sigma()
    assert np.allclose(sigma, np.swapaxes(sigma, -1, -2))
    assert np.min(np.linalg.eigvalsh(sigma)[..., 0]) > 0
    centre = sigma[4, 4, 4]
    assert np.allclose(centre, centre[0, 0] * np.eye(3), rtol=1e-10, atol=1e-12)
    c1, c2 = sigma_bounds_fit(sigma, grid8)
    assert 0 < c1 <= c2


def test_eigenvalue_formulas_at_origin(grid8):
    eig = eigenvalue_formulas(np.zeros(3), grid8)
    assert eig.degenerate[0]
    assert eig.lambda1[0] == eig.lambda2[0]
    eig = eigenvalue_formulas([[1.5, 0.0, 0.0]], grid8)
    assert not eig.degenerate[0]
    assert eig.lambda1[0] > 0 and eig.lambda2[0] > 0


def test_sigma_G_zero_perturbation(table8, grid8):
    field = build_sigma_G(table8, np.zeros((2,) + grid8.shape))
    assert np.array_equal(field.sigma[1], table8.sigma())
    assert not np.any(field.drift)
    with pytest.raises(SmallnessError):
        build_sigma_G(table8, np.full(grid8.shape, 1.5))


def test_stiffness_bound(table8, grid8):
    bound = stiffness_bound(table8.sigma(), grid8, 0.9)
    top = np.max(np.linalg.eigvalsh(table8.sigma()))
    assert bound == pytest.approx(0.9 * 1.5 ** 2 / (6 * top))


def test_kernel_cache(tmp_path, grid8, table8):
    built = KernelTable.cached(grid8, cache_dir=tmp_path)
    assert len(list(tmp_path.glob("kernel_*.bin"))) == 1
    loaded = KernelTable.cached(grid8, cache_dir=tmp_path)
    assert np.array_equal(loaded.values, built.values)
    assert np.array_equal(loaded.values, table8.values)
    path = next(tmp_path.glob("kernel_*.bin"))
    path.write_bytes(path.read_bytes()[:16])
    with pytest.raises(FormatError):
        KernelTable.cached(grid8, cache_dir=tmp_path)


def test_sigma_i_field(table8, grid8):
    sigma_i = sigma_i_field(table8)
    projected = np.einsum("...ij,...j->...i", table8.sigma(), grid8.v)
    assert np.max(np.abs(sigma_i - projected)) <= 1e-10
    assert np.allclose(sigma_i[4, 4, 4], 0.0, atol=1e-12)
    assert not np.any(sigma_conv(table8, np.zeros(grid8.shape)))
