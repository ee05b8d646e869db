import math

import numpy as np
import pytest

from vpl_kinetic.errors import NeutralityError
from vpl_kinetic.field import (
    PoissonSolver,
    PotentialField,
    boundary_flux,
    charge_density,
    current_density,
    field_bound_report,
    field_energy,
    field_gradient,
    flux_change,
    solve_poisson,
)
from vpl_kinetic.grid import DistributionField, SpatialMesh


def manufactured_error(n_cells, bc_kind):
    mesh = SpatialMesh.slab(1.0, n_cells)
    x = mesh.cell_centers[:, 0]
    exact = np.sin(np.pi * x) if bc_kind == "dirichlet" else np.cos(np.pi * x)
    phi = solve_poisson(np.pi ** 2 * exact, mesh, bc_kind).phi
    return float(np.max(np.abs(phi - exact)))


@pytest.mark.parametrize("bc_kind", ["dirichlet", "neumann"])
def test_second_order(bc_kind):
    errors = [manufactured_error(n, bc_kind) for n in (16, 32, 64)]
    assert errors[0] > errors[1] > errors[2]
    assert abs(math.log2(errors[1] / errors[2]) - 2.0) < 0.25


@pytest.mark.parametrize(
    "mesh", [SpatialMesh.slab(1.0, 32), SpatialMesh.disk(1.0, 16)], ids=["slab", "disk"]
)
def test_green_identity_and_energy(mesh):
    rho = np.random.default_rng(0).standard_normal(mesh.n_active)
    pf = PoissonSolver(mesh, "dirichlet").solve(rho)
    charge = float(np.sum(mesh.volumes * rho))
    assert boundary_flux(pf) == pytest.approx(charge, abs=1e-10)
    work = float(np.sum(mesh.volumes * pf.phi * rho))
    assert field_energy(pf) == pytest.approx(work, rel=1e-10)
    assert field_energy(pf) > 0


def test_neumann():
    mesh = SpatialMesh.slab(1.0, 16)
    rho = np.random.default_rng(1).standard_normal(mesh.n_active)
    rho -= rho.mean()
    pf = PoissonSolver(mesh, "neumann").solve(rho)
    assert np.sum(mesh.volumes * pf.phi) == pytest.approx(0.0, abs=1e-12)
    assert boundary_flux(pf) == 0.0
    assert field_energy(pf) == pytest.approx(
        float(np.sum(mesh.volumes * pf.phi * rho)), rel=1e-10
    )
    with pytest.raises(NeutralityError):
        PoissonSolver(mesh, "neumann").solve(np.ones(mesh.n_active))
    shifted = PoissonSolver(mesh, "neumann", rho0=1.0).solve(rho + 1.0)
    assert np.allclose(shifted.phi, pf.phi)


def test_unknown_boundary_kind():
    with pytest.raises(ValueError):
        PoissonSolver(SpatialMesh.slab(1.0, 4), "periodic")


def test_moments(grid8, slab8):
    values = np.zeros((slab8.n_active,) + grid8.shape)
    values[:] = grid8.sqrt_mu
    rho = charge_density(DistributionField(values, grid8, slab8))
    assert np.allclose(rho, grid8.integrate(grid8.mu))
    assert np.allclose(current_density(values, grid8), 0.0, atol=1e-14)


def test_field_bound_report(grid8, slab8):
    f = DistributionField.zeros(grid8, slab8)
    assert field_bound_report(PotentialField.zeros(slab8), f) == 0.0
    values = np.random.default_rng(2).standard_normal(f.values.shape) * grid8.sqrt_mu
    f = f.copy(values=values)
    pf = PoissonSolver(slab8, "dirichlet").solve(charge_density(f))
    assert np.isfinite(field_bound_report(pf, f))
    assert np.isfinite(field_bound_report(pf, f, np.inf))
    assert field_gradient(pf).shape == (slab8.n_active, 3, 3)
    with pytest.raises(ValueError):
        field_bound_report(pf, f, 1.0)


def test_flux_change():
    assert flux_change([1.0]) == 0.0
    assert flux_change([0.0, 1e-3, 0.5e-3]) == pytest.approx(1e-3)
