import numpy as np
import pytest

from wbflow.dynamic import Curve, continuity_residual
from wbflow.energy import internal_energy, make_energy
from wbflow.grid import build_grid
from wbflow.measures import DiscreteMeasure
from wbflow.pde import fd_solve, weak_residual


def heat_series(x, t):
    # separated-variables solution of the linear problem with unit boundary
    # level: rho = 1 + exp(-pi^2 t) sin(pi x)
    return 1.0 + np.exp(-np.pi**2 * t) * np.sin(np.pi * x)


def sine_measure(grid):
    return DiscreteMeasure(grid, heat_series(grid.centers[:, 0], 0.0))


def test_stationary_state_preserved():
    grid = build_grid(1, (0, 1), 16)
    for spec in (make_energy("entropy", 1.0), make_energy("power", 1.0, 1.4)):
        mu = DiscreteMeasure(grid, np.full(16, spec.lam))
        curve = fd_solve(spec, mu, 0.01, 0.05)
        assert np.allclose(curve.densities, spec.lam, atol=1e-12)


def test_heat_equation_series_oracle():
    spec = make_energy("entropy", 1.0)
    errors = []
    for n, dt in ((16, 4e-4), (32, 1e-4), (64, 2.5e-5)):
        grid = build_grid(1, (0, 1), n)
        curve = fd_solve(spec, sine_measure(grid), dt, 0.05)
        x = grid.centers[:, 0]
        err = max(
            np.max(np.abs(curve.densities[k] - heat_series(x, curve.times[k])))
            for k in range(0, curve.n_intervals + 1, 10)
        )
        errors.append(err)
    assert errors[1] < errors[0] and errors[2] < errors[1]
    # second-order space, first-order time: each refinement divides by ~4
    assert errors[0] / errors[2] > 8
    assert errors[2] < 2e-3


def test_power_law_runs_and_dissipates():
    spec = make_energy("power", 1.0, 1.4)
    grid = build_grid(1, (0, 1), 32)
    rho0 = DiscreteMeasure(grid, 1.0 + np.sin(np.pi * grid.centers[:, 0]))
    curve = fd_solve(spec, rho0, 1e-3, 0.05)
    energies = [
        internal_energy(spec, DiscreteMeasure(grid, curve.densities[k]))
        for k in range(curve.n_intervals + 1)
    ]
    assert all(e2 <= e1 + 1e-12 for e1, e2 in zip(energies, energies[1:]))


def test_min_max_bracketing():
    spec = make_energy("entropy", 1.0)
    grid = build_grid(1, (0, 1), 24)
    rng = np.random.default_rng(5)
    rho0 = DiscreteMeasure(grid, rng.uniform(0.3, 2.5, 24))
    curve = fd_solve(spec, rho0, 5e-4, 0.03)
    lo = min(rho0.density.min(), 1.0)
    hi = max(rho0.density.max(), 1.0)
    assert curve.densities.min() >= lo - 1e-9
    assert curve.densities.max() <= hi + 1e-9


def test_continuity_equation_holds_with_momenta():
    spec = make_energy("power", 1.0, 1.2)
    grid = build_grid(1, (0, 1), 16)
    rho0 = DiscreteMeasure(grid, 1.0 + 0.5 * np.sin(np.pi * grid.centers[:, 0]))
    curve = fd_solve(spec, rho0, 1e-3, 0.02)
    assert continuity_residual(curve) <= 1e-8


def test_mass_change_equals_boundary_flux():
    spec = make_energy("entropy", 1.0)
    grid = build_grid(1, (0, 1), 16)
    rho0 = DiscreteMeasure(grid, 1.0 + np.sin(np.pi * grid.centers[:, 0]))
    curve = fd_solve(spec, rho0, 1e-3, 0.05)
    vol = grid.cell_volume
    for k in range(curve.n_intervals):
        dmass = (curve.densities[k + 1].sum() - curve.densities[k].sum()) * vol
        outflow = curve.boundary_flux[k].sum() * (curve.times[k + 1] - curve.times[k])
        assert dmass == pytest.approx(-outflow, abs=1e-10)


def test_2d_stationary_and_decay():
    spec = make_energy("entropy", 1.0)
    grid = build_grid(2, ((0, 1), (0, 1)), (8, 8))
    x, y = grid.centers[:, 0], grid.centers[:, 1]
    rho0 = DiscreteMeasure(grid, 1.0 + np.sin(np.pi * x) * np.sin(np.pi * y))
    curve = fd_solve(spec, rho0, 1e-3, 0.02)
    # 2d heat decay rate is 2 pi^2; just check monotone approach to the level
    dev0 = np.abs(curve.densities[0] - 1.0).max()
    dev1 = np.abs(curve.densities[-1] - 1.0).max()
    assert dev1 < dev0
    assert continuity_residual(curve) <= 1e-8


def interior_bump(grid):
    phi = np.zeros(grid.n_cells)
    x = grid.centers[:, 0]
    mask = (x > 0.2) & (x < 0.8)
    phi[mask] = np.sin(np.pi * (x[mask] - 0.2) / 0.6) ** 2
    return phi


def test_weak_residual_constant_curve():
    spec = make_energy("entropy", 1.0)
    grid = build_grid(1, (0, 1), 16)
    dens = np.ones((6, 16))
    curve = Curve(grid, np.linspace(0, 0.05, 6), dens)
    assert weak_residual(curve, spec, [interior_bump(grid)]) <= 1e-12


def test_weak_residual_rejects_boundary_support():
    spec = make_energy("entropy", 1.0)
    grid = build_grid(1, (0, 1), 8)
    curve = Curve(grid, [0.0, 1.0], np.ones((2, 8)))
    bad = np.ones(8)
    with pytest.raises(ValueError, match="boundary"):
        weak_residual(curve, spec, [bad])


def test_weak_residual_decreases_under_refinement():
    spec = make_energy("entropy", 1.0)
    values = []
    for n, dt in ((16, 2e-3), (32, 5e-4)):
        grid = build_grid(1, (0, 1), n)
        curve = fd_solve(spec, sine_measure(grid), dt, 0.04)
        values.append(weak_residual(curve, spec, [interior_bump(grid)]))
    assert values[1] < values[0]


def test_weak_residual_flags_time_reversal():
    spec = make_energy("entropy", 1.0)
    grid = build_grid(1, (0, 1), 32)
    curve = fd_solve(spec, sine_measure(grid), 5e-4, 0.04)
    forward = weak_residual(curve, spec, [interior_bump(grid)])
    reversed_curve = Curve(
        grid,
        curve.times,
        curve.densities[::-1].copy(),
        interior_flux=-curve.interior_flux[::-1].copy(),
        boundary_flux=-curve.boundary_flux[::-1].copy(),
    )
    backward = weak_residual(reversed_curve, spec, [interior_bump(grid)])
    assert backward > 10 * forward
    assert backward > 1e-3
