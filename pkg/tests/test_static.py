import numpy as np
import pytest

from wbflow.grid import build_grid
from wbflow.measures import DiscreteMeasure, plan_cost, validate_plan
from wbflow.static import transportation_simplex, wasserstein_distance, wb_distance

from oracles import brute_force_transport, linprog_transport, w_oracle, wb_oracle


@pytest.fixture
def grid4():
    return build_grid(1, (0, 1), 4)


def unit_at(grid, cell):
    density = np.zeros(grid.n_cells)
    density[cell] = 1.0 / grid.cell_volume
    return DiscreteMeasure(grid, density)


def random_measure(grid, rng, sparsity=0.0):
    density = rng.uniform(0.0, 3.0, grid.n_cells)
    if sparsity:
        density[rng.uniform(size=grid.n_cells) < sparsity] = 0.0
    return DiscreteMeasure(grid, density)


def test_identity_distance_zero(grid4):
    rng = np.random.default_rng(0)
    mu = random_measure(grid4, rng)
    value, plan = wb_distance(mu, mu, 2)
    assert value == 0.0
    assert validate_plan(plan, mu, mu).max_residual < 1e-12


def test_all_mass_to_boundary(grid4):
    mu = unit_at(grid4, 1)
    nu = DiscreteMeasure(grid4, np.zeros(4))
    value, plan = wb_distance(mu, nu, 2)
    assert value**2 == pytest.approx(0.140625, abs=1e-12)
    # brute force over all plan supports on this instance agrees
    oracle = wb_oracle(grid4, mu.density, nu.density, 2, method="enumerate")
    assert value**2 == pytest.approx(oracle, abs=1e-12)


def test_reservoir_reroute_beats_direct(grid4):
    mu = unit_at(grid4, 0)
    nu = unit_at(grid4, 3)
    value, plan = wb_distance(mu, nu, 2)
    assert value**2 == pytest.approx(0.03125, abs=1e-12)
    oracle = wb_oracle(grid4, mu.density, nu.density, 2, method="enumerate")
    assert value**2 == pytest.approx(oracle, abs=1e-12)
    # direct transport would cost 0.75^2
    assert value**2 < 0.5625
    assert plan.to_boundary[0] == pytest.approx(1.0)
    assert plan.from_boundary[3] == pytest.approx(1.0)


def test_mass_scaling(grid4):
    rng = np.random.default_rng(1)
    mu = random_measure(grid4, rng)
    nu = random_measure(grid4, rng)
    base, _ = wb_distance(mu, nu, 2)
    for c in (0.25, 3.0):
        scaled, _ = wb_distance(
            DiscreteMeasure(grid4, c * mu.density),
            DiscreteMeasure(grid4, c * nu.density),
            2,
        )
        assert scaled**2 == pytest.approx(c * base**2, rel=1e-12)


def test_zero_measures(grid4):
    zero = DiscreteMeasure(grid4, np.zeros(4))
    value, plan = wb_distance(zero, zero, 2)
    assert value == 0.0
    assert not plan.interior_flows


@pytest.mark.parametrize("p", [1, 2])
def test_metric_axioms_random(p):
    grid = build_grid(1, (0, 1), 8)
    rng = np.random.default_rng(42)
    for _ in range(25):
        m1 = random_measure(grid, rng, sparsity=0.3)
        m2 = random_measure(grid, rng, sparsity=0.3)
        m3 = random_measure(grid, rng, sparsity=0.3)
        d12, _ = wb_distance(m1, m2, p)
        d21, _ = wb_distance(m2, m1, p)
        d23, _ = wb_distance(m2, m3, p)
        d13, _ = wb_distance(m1, m3, p)
        assert abs(d12 - d21) <= 1e-9
        assert d13 <= d12 + d23 + 1e-9
        if not np.array_equal(m1.density, m2.density):
            assert d12 > 0.0


@pytest.mark.parametrize("p", [1, 2])
def test_wb_bounded_by_wasserstein(p):
    grid = build_grid(1, (0, 1), 6)
    rng = np.random.default_rng(3)
    for _ in range(20):
        mu = random_measure(grid, rng)
        nu_density = rng.uniform(0.05, 3.0, grid.n_cells)
        nu_density *= mu.density.sum() / nu_density.sum()
        nu = DiscreteMeasure(grid, nu_density)
        wb, _ = wb_distance(mu, nu, p)
        w = wasserstein_distance(mu, nu, p)
        assert wb <= w + 1e-9


def test_wasserstein_balanced_pair():
    grid = build_grid(1, (0, 1), 4)
    mu = unit_at(grid, 0)
    nu = unit_at(grid, 3)
    assert wasserstein_distance(mu, nu, 2) ** 2 == pytest.approx(0.5625, abs=1e-12)


def test_wasserstein_identity():
    grid = build_grid(1, (0, 1), 5)
    mu = DiscreteMeasure(grid, np.arange(1.0, 6.0))
    assert wasserstein_distance(mu, mu, 2) == 0.0


def test_wasserstein_rejects_unbalanced(grid4):
    mu = DiscreteMeasure(grid4, np.ones(4))
    nu = DiscreteMeasure(grid4, 2 * np.ones(4))
    with pytest.raises(ValueError):
        wasserstein_distance(mu, nu, 2)
    with pytest.raises(ValueError):
        wasserstein_distance(
            DiscreteMeasure(grid4, np.zeros(4)), DiscreteMeasure(grid4, np.zeros(4)), 2
        )


def test_wasserstein_matches_highs_oracle():
    grid = build_grid(1, (0, 1), 7)
    rng = np.random.default_rng(11)
    for _ in range(5):
        mu = random_measure(grid, rng)
        nu_density = rng.uniform(0.05, 3.0, grid.n_cells)
        nu_density *= mu.density.sum() / nu_density.sum()
        nu = DiscreteMeasure(grid, nu_density)
        value = wasserstein_distance(mu, nu, 2)
        assert value**2 == pytest.approx(w_oracle(grid, mu.density, nu.density, 2), abs=1e-9)


@pytest.mark.parametrize("cells,p", [(2, 1), (3, 2), (3, 1)])
def test_brute_force_equivalence_small_grids(cells, p):
    grid = build_grid(1, (0, 1), max(cells, 2))
    rng = np.random.default_rng(cells * 10 + p)
    for _ in range(4):
        mu = DiscreteMeasure(grid, rng.integers(0, 4, grid.n_cells).astype(float))
        nu = DiscreteMeasure(grid, rng.integers(0, 4, grid.n_cells).astype(float))
        value, _ = wb_distance(mu, nu, p)
        oracle = wb_oracle(grid, mu.density, nu.density, p, method="enumerate")
        assert value**p == pytest.approx(oracle, abs=1e-10)


@pytest.mark.parametrize("cells", [4, 5])
def test_highs_equivalence_medium_grids(cells):
    grid = build_grid(1, (0, 1), cells)
    rng = np.random.default_rng(cells)
    for _ in range(6):
        mu = random_measure(grid, rng, sparsity=0.25)
        nu = random_measure(grid, rng, sparsity=0.25)
        value, _ = wb_distance(mu, nu, 2)
        oracle = wb_oracle(grid, mu.density, nu.density, 2, method="linprog")
        assert value**2 == pytest.approx(oracle, abs=1e-10)


def test_simplex_agrees_with_enumeration_raw():
    rng = np.random.default_rng(5)
    for trial in range(8):
        m, n = rng.integers(2, 5, size=2)
        cost = rng.uniform(0, 2, (m, n))
        supply = rng.integers(1, 6, m).astype(float)
        demand = rng.integers(1, 6, n).astype(float)
        demand *= supply.sum() / demand.sum()
        res = transportation_simplex(cost, supply, demand)
        expected = brute_force_transport(cost, supply, demand)
        assert res.value == pytest.approx(expected, abs=1e-10)
        assert res.value == pytest.approx(
            linprog_transport(cost, supply, demand), abs=1e-9
        )


def test_optimal_plans_have_valid_marginals():
    grid = build_grid(2, ((0, 1), (0, 1)), (3, 3))
    rng = np.random.default_rng(9)
    for _ in range(5):
        mu = DiscreteMeasure(grid, rng.uniform(0, 2, grid.n_cells))
        nu = DiscreteMeasure(grid, rng.uniform(0, 2, grid.n_cells))
        value, plan = wb_distance(mu, nu, 2)
        assert validate_plan(plan, mu, nu).max_residual <= 1e-9
        assert plan_cost(plan, 2) == pytest.approx(value**2, rel=1e-12)


def test_refuses_oversized_grid():
    grid = build_grid(2, ((0, 1), (0, 1)), (65, 65))  # 4225 > 4096 cells
    mu = DiscreteMeasure(grid, np.ones(grid.n_cells))
    with pytest.raises(ValueError, match="4096"):
        wb_distance(mu, mu, 2)
