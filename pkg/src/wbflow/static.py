"""Exact boundary-reservoir and classical transport distances.

Both distances are computed by a primal transportation simplex.  The
reservoir is one extra node that can absorb mass from every cell at cost
d(x_i, boundary)^p and supply mass to every cell at the same per-cell cost;
the reservoir-to-reservoir slot has cost zero and acts as the slack that
balances the problem.  The simplex maintains an exact basis tree, so optimal
dual variables come for free and every solve is certified by dual
feasibility plus complementary slackness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .measures import DiscreteMeasure, TransportPlan, plan_cost, require_valid_plan

__all__ = ["wb_distance", "wasserstein_distance", "TransportResult"]

MAX_DENSE_CELLS = 4096  # denser cost matrices than this are refused
_ENTER_TOL = 1e-11
_CERT_TOL = 1e-9


@dataclass
class TransportResult:
    """Raw simplex output on the balanced (supply, demand) problem."""

    value: float
    flows: dict[tuple[int, int], float]
    row_duals: np.ndarray
    col_duals: np.ndarray
    pivots: int

    def reduced_costs(self, cost: np.ndarray) -> np.ndarray:
        return cost - self.row_duals[:, None] - self.col_duals[None, :]


def _northwest_corner(supply, demand):
    """Initial basic feasible solution with exactly m + n - 1 basic cells."""
    m, n = len(supply), len(demand)
    s = supply.astype(float).copy()
    d = demand.astype(float).copy()
    flows = {}
    basis = []
    i = j = 0
    while True:
        q = min(s[i], d[j])
        flows[(i, j)] = q
        basis.append((i, j))
        s[i] -= q
        d[j] -= q
        if i == m - 1 and j == n - 1:
            break
        # advance one pointer only, even on simultaneous exhaustion, so the
        # basis stays a spanning tree (degenerate zero flows are fine)
        if (s[i] <= d[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return flows, basis


class _BasisTree:
    """Spanning tree of the bipartite transportation graph.

    Nodes 0..m-1 are rows, m..m+n-1 are columns.  Adjacency is kept as lists
    of neighbor nodes; duals are updated incrementally on the subtree cut off
    by each pivot.
    """

    def __init__(self, m, n, basis, cost):
        self.m = m
        self.n = n
        self.adj = [[] for _ in range(m + n)]
        for i, j in basis:
            self._link(i, m + j)
        self.u = np.zeros(m)
        self.v = np.zeros(n)
        self._init_duals(cost)

    def _link(self, a, b):
        self.adj[a].append(b)
        self.adj[b].append(a)

    def _unlink(self, a, b):
        self.adj[a].remove(b)
        self.adj[b].remove(a)

    def _init_duals(self, cost):
        m = self.m
        seen = np.zeros(m + self.n, dtype=bool)
        stack = [0]
        seen[0] = True
        self.u[0] = 0.0
        while stack:
            node = stack.pop()
            for nb in self.adj[node]:
                if not seen[nb]:
                    seen[nb] = True
                    if node < m:  # row -> col
                        self.v[nb - m] = cost[node, nb - m] - self.u[node]
                    else:  # col -> row
                        self.u[nb] = cost[nb, node - m] - self.v[node - m]
                    stack.append(nb)

    def path(self, src, dst):
        """Node path from src to dst through the tree."""
        parent = {src: None}
        stack = [src]
        while stack:
            node = stack.pop()
            if node == dst:
                break
            for nb in self.adj[node]:
                if nb not in parent:
                    parent[nb] = node
                    stack.append(nb)
        path = [dst]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        path.reverse()
        return path

    def replace(self, entering, leaving, delta):
        """Swap basis edges and shift duals on the component behind `leaving`.

        `delta` is the reduced cost of the entering cell; duals on the side of
        the cut containing the entering column move by delta (columns +, rows -).
        """
        ei, ej = entering
        li, lj = leaving
        self._unlink(li, self.m + lj)
        side = self._component(self.m + ej)
        self._link(ei, self.m + ej)
        for node in side:
            if node < self.m:
                self.u[node] -= delta
            else:
                self.v[node - self.m] += delta

    def _component(self, start):
        seen = {start}
        stack = [start]
        while stack:
            node = stack.pop()
            for nb in self.adj[node]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return seen


def transportation_simplex(cost, supply, demand, max_pivots=None) -> TransportResult:
    """Solve min <cost, flow> s.t. row sums = supply, col sums = demand.

    Entering variables are chosen by the most negative reduced cost; after a
    run of degenerate pivots the rule switches to Bland's (first eligible in
    row-major order), which guarantees termination, and switches back on the
    next mass-moving pivot.
    """
    cost = np.ascontiguousarray(cost, dtype=float)
    supply = np.asarray(supply, dtype=float)
    demand = np.asarray(demand, dtype=float)
    m, n = cost.shape
    total = supply.sum()
    if abs(total - demand.sum()) > 1e-9 * max(1.0, total):
        raise ValueError("unbalanced transportation problem")

    flows, basis = _northwest_corner(supply, demand)
    tree = _BasisTree(m, n, basis, cost)
    scale = max(1.0, float(np.abs(cost).max()))
    enter_tol = _ENTER_TOL * scale
    if max_pivots is None:
        max_pivots = 200 * (m + n) + 10_000

    stall = 0
    bland = False
    for pivot in range(max_pivots):
        reduced = cost - tree.u[:, None] - tree.v[None, :]
        if bland:
            eligible = np.argwhere(reduced < -enter_tol)
            if eligible.size == 0:
                break
            ei, ej = map(int, eligible[0])
        else:
            flat = int(np.argmin(reduced))
            ei, ej = divmod(flat, n)
            if reduced[ei, ej] >= -enter_tol:
                break
        delta = float(reduced[ei, ej])

        # cycle: entering cell plus tree path col ej -> row ei
        path = tree.path(tree.m + ej, ei)
        cycle = []
        for a, b in zip(path[:-1], path[1:]):
            cell = (a, b - m) if a < m else (b, a - m)
            cycle.append(cell)
        # signs: entering +, first path cell -, alternating
        minus_cells = cycle[0::2]
        theta = min(flows[c] for c in minus_cells)
        leaving = min(c for c in minus_cells if flows[c] <= theta)

        for idx, cell in enumerate(cycle):
            flows[cell] += theta if idx % 2 else -theta
            if flows[cell] < 0.0:
                flows[cell] = 0.0
        flows[(ei, ej)] = theta
        del flows[leaving]
        tree.replace((ei, ej), leaving, delta)

        if theta <= 0.0:
            stall += 1
            if stall > m + n:
                bland = True
        else:
            stall = 0
            bland = False
    else:
        raise RuntimeError(f"transportation simplex stalled after {max_pivots} pivots")

    tree._init_duals(cost)  # fresh duals for the certificate, free of pivot drift
    value = float(sum(cost[c] * q for c, q in flows.items()))
    return TransportResult(
        value=value,
        flows=flows,
        row_duals=tree.u.copy(),
        col_duals=tree.v.copy(),
        pivots=pivot,
    )


def _certify(result: TransportResult, cost: np.ndarray) -> None:
    """Optimality certificate: dual feasibility + complementary slackness."""
    scale = max(1.0, float(np.abs(cost).max()))
    reduced = result.reduced_costs(cost)
    worst = float(reduced.min())
    if worst < -_CERT_TOL * scale:
        raise RuntimeError(f"dual infeasibility {worst:.3e} in transport solve")
    slack = max(
        (abs(reduced[c]) for c, q in result.flows.items() if q > 0.0), default=0.0
    )
    if slack > _CERT_TOL * scale:
        raise RuntimeError(f"complementary slackness violated by {slack:.3e}")


def _pairwise_costs(grid: Grid, p: float) -> np.ndarray:
    if grid.n_cells > MAX_DENSE_CELLS:
        raise ValueError(
            f"grid has {grid.n_cells} cells; dense transport costs are "
            f"limited to {MAX_DENSE_CELLS} (desk-scale tool)"
        )
    diff = grid.centers[:, None, :] - grid.centers[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    if p == 2:
        return sq
    return sq ** (p / 2.0)


def _check_inputs(mu, nu, p):
    if mu.grid is not nu.grid:
        raise ValueError("measures must share one grid")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")


def wb_distance(
    mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2
) -> tuple[float, TransportPlan]:
    """Boundary-reservoir transport distance and an optimal plan.

    Returns (cost^(1/p), plan).  The reservoir makes every instance feasible;
    the returned plan carries no boundary-to-boundary mass.
    """
    _check_inputs(mu, nu, p)
    grid = mu.grid
    n = grid.n_cells
    a = mu.cell_masses()
    b = nu.cell_masses()
    empty = np.zeros(n)

    if not a.any() and not b.any():
        return 0.0, TransportPlan(grid, [], empty, empty.copy())

    bd = grid.boundary_distance**p
    cost = np.zeros((n + 1, n + 1))
    cost[:n, :n] = _pairwise_costs(grid, p)
    cost[:n, n] = bd
    cost[n, :n] = bd
    supply = np.append(a, b.sum())
    demand = np.append(b, a.sum())

    result = transportation_simplex(cost, supply, demand)
    _certify(result, cost)

    interior = []
    to_bdry = np.zeros(n)
    from_bdry = np.zeros(n)
    for (i, j), q in result.flows.items():
        if q <= 0.0:
            continue
        if i < n and j < n:
            interior.append((i, j, q))
        elif i < n:
            to_bdry[i] += q
        elif j < n:
            from_bdry[j] += q
        # reservoir-to-reservoir slack is dropped (zero cost, zero effect)
    plan = TransportPlan(grid, interior, to_bdry, from_bdry)
    require_valid_plan(plan, mu, nu)

    total = plan_cost(plan, p)
    return total ** (1.0 / p), plan


def wasserstein_distance(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2) -> float:
    """Classical balanced transport distance (no reservoir).

    Requires mass(mu) == mass(nu) > 0 up to 1e-12 relative.
    """
    _check_inputs(mu, nu, p)
    ma, mb = mu.mass(), nu.mass()
    if abs(ma - mb) > 1e-12 * max(ma, mb, 1.0) or ma <= 0.0:
        raise ValueError(
            f"balanced transport needs equal positive masses, got {ma!r} and {mb!r}"
        )
    cost = _pairwise_costs(mu.grid, p)
    result = transportation_simplex(cost, mu.cell_masses(), nu.cell_masses())
    _certify(result, cost)
    return result.value ** (1.0 / p)
