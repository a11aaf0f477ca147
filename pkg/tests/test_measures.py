import numpy as np
import pytest

from wbflow.grid import build_grid
from wbflow.measures import (
    DiscreteMeasure,
    TransportPlan,
    boundary_exchange,
    moment,
    plan_cost,
    validate_plan,
)


@pytest.fixture
def grid4():
    return build_grid(1, (0, 1), 4)


def unit_at(grid, cell):
    density = np.zeros(grid.n_cells)
    density[cell] = 1.0 / grid.cell_volume
    return DiscreteMeasure(grid, density)


def test_rejects_negative_density(grid4):
    with pytest.raises(ValueError):
        DiscreteMeasure(grid4, np.array([1.0, -0.1, 0.0, 0.0]))


def test_moment_zero_measure(grid4):
    assert moment(DiscreteMeasure(grid4, np.zeros(4)), 2) == 0.0


def test_moment_point_mass(grid4):
    # unit mass at x=0.375 (density 4 on one cell of width 1/4)
    mu = unit_at(grid4, 1)
    assert mu.mass() == pytest.approx(1.0)
    assert moment(mu, 2) == pytest.approx(0.140625, abs=1e-15)


def test_moment_uniform_against_direct_sum(grid4):
    mu = DiscreteMeasure(grid4, np.ones(4))
    direct = sum(
        grid4.boundary_distance[i] ** 2 * 1.0 * grid4.cell_volume for i in range(4)
    )
    assert direct == pytest.approx(0.078125)
    assert moment(mu, 2) == pytest.approx(direct, abs=1e-15)


def test_plan_cost_identity(grid4):
    mu = DiscreteMeasure(grid4, np.full(4, 2.0))
    plan = TransportPlan(
        grid4,
        [(i, i, m) for i, m in enumerate(mu.cell_masses())],
        np.zeros(4),
        np.zeros(4),
    )
    assert plan_cost(plan, 2) == 0.0
    assert validate_plan(plan, mu, mu).max_residual == 0.0


def test_plan_cost_boundary_term(grid4):
    mu = unit_at(grid4, 1)
    to_b = np.zeros(4)
    to_b[1] = 1.0
    plan = TransportPlan(grid4, [], to_b, np.zeros(4))
    assert plan_cost(plan, 2) == pytest.approx(0.140625)
    nu = DiscreteMeasure(grid4, np.zeros(4))
    assert validate_plan(plan, mu, nu).max_residual == 0.0


def test_plan_cost_interior_flow(grid4):
    plan = TransportPlan(grid4, [(0, 2, 0.5)], np.zeros(4), np.zeros(4))
    assert plan_cost(plan, 2) == pytest.approx(0.5 * 0.25)


def test_validate_plan_detects_deleted_flow(grid4):
    mu = DiscreteMeasure(grid4, np.full(4, 1.0))
    masses = mu.cell_masses()
    flows = [(i, i, masses[i]) for i in range(4)]
    plan = TransportPlan(grid4, flows[:-1], np.zeros(4), np.zeros(4))
    report = validate_plan(plan, mu, mu)
    assert report.max_residual == pytest.approx(masses[-1])


def test_validate_plan_empty_zero(grid4):
    zero = DiscreteMeasure(grid4, np.zeros(4))
    plan = TransportPlan(grid4, [], np.zeros(4), np.zeros(4))
    assert validate_plan(plan, zero, zero).max_residual == 0.0


def test_mass_bookkeeping_through_reservoir(grid4):
    rng = np.random.default_rng(7)
    mu = DiscreteMeasure(grid4, rng.uniform(0.0, 2.0, 4))
    to_b = mu.cell_masses() * 0.5
    from_b = np.full(4, 0.05)
    flows = [(i, i, m * 0.5) for i, m in enumerate(mu.cell_masses())]
    nu_masses = np.array([m * 0.5 for m in mu.cell_masses()]) + from_b
    nu = DiscreteMeasure(grid4, nu_masses / grid4.cell_volume)
    plan = TransportPlan(grid4, flows, to_b, from_b)
    assert validate_plan(plan, mu, nu).max_residual < 1e-12
    assert mu.mass() - nu.mass() == pytest.approx(boundary_exchange(plan))


def test_measure_csv_roundtrip(tmp_path, grid4):
    mu = DiscreteMeasure(grid4, np.array([0.5, 1.5, 0.0, 2.0]))
    path = tmp_path / "mu.csv"
    mu.write_csv(path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "cell,x0,density"
    assert len(rows) == 5


def test_plan_csv_kinds(tmp_path, grid4):
    to_b = np.array([0.1, 0.0, 0.0, 0.0])
    from_b = np.array([0.0, 0.0, 0.0, 0.2])
    plan = TransportPlan(grid4, [(0, 1, 0.3)], to_b, from_b)
    path = tmp_path / "plan.csv"
    plan.write_csv(path)
    text = path.read_text()
    for kind in ("interior", "to_boundary", "from_boundary"):
        assert kind in text
