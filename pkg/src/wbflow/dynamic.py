"""Discrete continuity equation, action functional, and geodesic solver.

Curves carry densities at time nodes and, optionally, one signed flux per
edge and time interval: interior fluxes are positive in the axis-positive
direction, boundary fluxes are positive outward.  Boundary fluxes are
unconstrained degrees of freedom; the continuity equation is only imposed
cell by cell in the interior, which is what lets curves gain or lose mass
through the boundary.

The action integrand is alpha_p(flux density, edge density) with the edge
density averaged from the adjacent cells (interior) or taken from the single
interior cell (boundary).  Interior edges are weighted with the cell volume;
boundary edges carry the weight (dx/2)^p A^p / (p^p vol^(p-1)), calibrated so
that optimally draining one cell through its boundary face costs exactly the
cell mass times (dx/2)^p, the price the static reservoir charges.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from .grid import Grid
from .measures import DiscreteMeasure
from .static import wb_distance

__all__ = ["Curve", "action", "solve_dynamic", "metric_speed", "continuity_residual"]


@dataclass(frozen=True)
class Curve:
    """Time-indexed densities with optional per-interval edge fluxes."""

    grid: Grid
    times: np.ndarray  # (K+1,)
    densities: np.ndarray  # (K+1, n_cells)
    interior_flux: np.ndarray | None = None  # (K, n_interior_edges)
    boundary_flux: np.ndarray | None = None  # (K, n_boundary_edges)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        dens = np.asarray(self.densities, dtype=float)
        if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing with >= 2 nodes")
        if dens.shape != (len(times), self.grid.n_cells):
            raise ValueError("densities must be (n_times, n_cells)")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "densities", dens)
        for name, count in (
            ("interior_flux", len(self.grid.interior_edges)),
            ("boundary_flux", len(self.grid.boundary_edges)),
        ):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape != (len(times) - 1, count):
                    raise ValueError(f"{name} must be (n_intervals, {count})")
                object.__setattr__(self, name, arr)

    @property
    def n_intervals(self) -> int:
        return len(self.times) - 1

    @property
    def has_momenta(self) -> bool:
        return self.interior_flux is not None and self.boundary_flux is not None

    def measure(self, k: int) -> DiscreteMeasure:
        return DiscreteMeasure(self.grid, np.maximum(self.densities[k], 0.0))

    def write_csv(self, path, momenta_path=None) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "cell", "density"])
            for k, t in enumerate(self.times):
                for i in range(self.grid.n_cells):
                    writer.writerow([repr(t), i, repr(self.densities[k, i])])
        if momenta_path is not None and self.has_momenta:
            with open(momenta_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["interval", "edge", "flux"])
                for k in range(self.n_intervals):
                    for e, f in enumerate(self.interior_flux[k]):
                        writer.writerow([k, e, repr(f)])
                    off = len(self.grid.interior_edges)
                    for e, f in enumerate(self.boundary_flux[k]):
                        writer.writerow([k, off + e, repr(f)])


# -- edge geometry -------------------------------------------------------------


class EdgeGeometry:
    """Incidence structure and action weights of a grid's edges."""

    def __init__(self, grid: Grid):
        self.grid = grid
        vol = grid.cell_volume
        sizes = np.asarray(grid.cell_size)
        ie, be = grid.interior_edges, grid.boundary_edges
        self.int_i = ie[:, 0] if ie.size else np.empty(0, dtype=int)
        self.int_j = ie[:, 1] if ie.size else np.empty(0, dtype=int)
        self.int_dx = sizes[ie[:, 2]] if ie.size else np.empty(0)
        self.bdry_cell = be[:, 0] if be.size else np.empty(0, dtype=int)
        self.bdry_dx = sizes[be[:, 1]] if be.size else np.empty(0)
        self.int_area = vol / self.int_dx if ie.size else np.empty(0)
        self.bdry_area = vol / self.bdry_dx if be.size else np.empty(0)
        self.n_int = len(self.int_i)
        self.n_bdry = len(self.bdry_cell)
        self.vol = vol

    def weights(self, p: float) -> tuple[np.ndarray, np.ndarray]:
        """Action weights (interior, boundary) multiplying alpha_p(f/A, s)."""
        w_int = np.full(self.n_int, self.vol)
        w_bdry = (
            (self.bdry_dx / 2.0) ** p
            * self.bdry_area**p
            / (p**p * self.vol ** (p - 1.0))
        )
        return w_int, w_bdry

    def divergence(self, f_int, f_bdry) -> np.ndarray:
        """Net outflow per cell given signed edge fluxes (mass per time)."""
        out = np.zeros(self.grid.n_cells)
        np.add.at(out, self.int_i, f_int)
        np.add.at(out, self.int_j, -f_int)
        np.add.at(out, self.bdry_cell, f_bdry)
        return out

    def divergence_matrix(self) -> sp.csr_matrix:
        n = self.grid.n_cells
        rows = np.concatenate([self.int_i, self.int_j, self.bdry_cell])
        cols = np.concatenate(
            [
                np.arange(self.n_int),
                np.arange(self.n_int),
                self.n_int + np.arange(self.n_bdry),
            ]
        )
        vals = np.concatenate(
            [np.ones(self.n_int), -np.ones(self.n_int), np.ones(self.n_bdry)]
        )
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, self.n_int + self.n_bdry))


def continuity_residual(curve: Curve) -> float:
    """Largest violation of vol * drho/dt + div(flux) = 0 over cells/intervals."""
    if not curve.has_momenta:
        raise ValueError("curve carries no momenta")
    geo = EdgeGeometry(curve.grid)
    vol = curve.grid.cell_volume
    worst = 0.0
    for k in range(curve.n_intervals):
        dt = curve.times[k + 1] - curve.times[k]
        div = geo.divergence(curve.interior_flux[k], curve.boundary_flux[k])
        res = vol * (curve.densities[k + 1] - curve.densities[k]) / dt + div
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


# -- action --------------------------------------------------------------------


def _edge_densities(curve: Curve, geo: EdgeGeometry, k: int):
    """Time-averaged edge densities on interval k (mean of the two nodes)."""
    rho = 0.5 * (curve.densities[k] + curve.densities[k + 1])
    s_int = 0.5 * (rho[geo.int_i] + rho[geo.int_j])
    s_bdry = rho[geo.bdry_cell]
    return s_int, s_bdry


def _alpha_sum(weights, flux, area, s, p):
    """sum_e w_e * alpha_p(f_e / A_e, s_e); returns inf on blocked edges."""
    j = np.abs(flux) / area
    bad = (s <= 0) & (j > 0)
    if np.any(bad):
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(s > 0, j**p / np.where(s > 0, s, 1.0) ** (p - 1), 0.0)
    return float(np.sum(weights * terms))


def action(curve: Curve, p: float = 2) -> float:
    """Total action of a curve with momenta; +inf on flux through zero density."""
    if not curve.has_momenta:
        raise ValueError("curve carries no momenta")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    geo = EdgeGeometry(curve.grid)
    w_int, w_bdry = geo.weights(p)
    total = 0.0
    for k in range(curve.n_intervals):
        rate = interval_action_rate(curve, geo, w_int, w_bdry, k, p)
        if math.isinf(rate):
            return math.inf
        total += (curve.times[k + 1] - curve.times[k]) * rate
    return total


def interval_action_rate(curve, geo, w_int, w_bdry, k, p) -> float:
    """Action per unit time on interval k (the squared-speed estimate for p=2)."""
    s_int, s_bdry = _edge_densities(curve, geo, k)
    part = _alpha_sum(w_int, curve.interior_flux[k], geo.int_area, s_int, p)
    if math.isinf(part):
        return math.inf
    part_b = _alpha_sum(w_bdry, curve.boundary_flux[k], geo.bdry_area, s_bdry, p)
    return part + part_b


def with_least_norm_momenta(curve: Curve) -> Curve:
    """Attach the minimal-norm fluxes solving the continuity equation.

    Deterministic reconstruction for density-only curves (for example linear
    interpolations) so momentum-based diagnostics can run on them.
    """
    geo = EdgeGeometry(curve.grid)
    div = geo.divergence_matrix()
    gram = (div @ div.T).toarray()
    vol = curve.grid.cell_volume
    K = curve.n_intervals
    fluxes = np.empty((K, geo.n_int + geo.n_bdry))
    for k in range(K):
        dt = curve.times[k + 1] - curve.times[k]
        rhs = -vol * (curve.densities[k + 1] - curve.densities[k]) / dt
        lam, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
        fluxes[k] = div.T @ lam
    return Curve(
        curve.grid,
        curve.times,
        curve.densities,
        interior_flux=fluxes[:, : geo.n_int],
        boundary_flux=fluxes[:, geo.n_int :],
    )


def metric_speed(curve: Curve, p: float = 2) -> np.ndarray:
    """Difference-quotient speeds Wb_p(rho_k, rho_{k+1}) / dt per interval."""
    speeds = np.empty(curve.n_intervals)
    for k in range(curve.n_intervals):
        dt = curve.times[k + 1] - curve.times[k]
        value, _ = wb_distance(curve.measure(k), curve.measure(k + 1), p)
        speeds[k] = value / dt
    return speeds


# -- geodesic solver (p = 2) ----------------------------------------------------


def _edge_prox(g_t, s_t, beta):
    """Closed-form prox of c * g^2 / s (s >= 0) with beta = 2c/penalty.

    Solves (s - s_t)(s + beta)^2 = (beta/2) g_t^2 for the unique root with
    s > 0 by vectorized Newton, then g = g_t * s / (s + beta).  Roots at or
    below zero collapse to (0, 0).
    """
    rhs = 0.5 * beta * g_t**2
    s = np.maximum(s_t, 0.0) + np.cbrt(np.maximum(rhs, 0.0))  # upper-ish start
    for _ in range(60):
        base = s + beta
        f = (s - s_t) * base**2 - rhs
        df = base**2 + 2.0 * (s - s_t) * base
        step = f / np.where(np.abs(df) > 1e-300, df, 1.0)
        s_new = s - step
        s_new = np.where(s_new <= -0.5 * beta, 0.5 * (s - 0.5 * beta), s_new)
        if np.max(np.abs(s_new - s)) < 1e-15 * (1.0 + np.max(np.abs(s_new))):
            s = s_new
            break
        s = s_new
    s = np.where(s > 0.0, s, 0.0)
    g = np.where(s > 0.0, g_t * s / (s + beta), 0.0)
    return g, s


class DynamicResult:
    def __init__(self, value, curve, kkt_residual, iterations):
        self.value = value
        self.curve = curve
        self.kkt_residual = kkt_residual
        self.iterations = iterations


def solve_dynamic(
    mu0: DiscreteMeasure,
    mu1: DiscreteMeasure,
    p: float = 2,
    n_time_steps: int = 16,
    tol: float = 1e-6,
    max_iter: int = 200_000,
    penalty: float | None = None,
) -> tuple[float, Curve]:
    """Minimize the action over curves joining mu0 to mu1 in unit time.

    Only the quadratic case is implemented: the action is jointly convex and
    the continuity constraint linear, and the problem is solved by ADMM with
    an exact per-edge prox.  Returns (value, curve) with value the p-th root
    of the minimal action; the emitted curve satisfies the interior
    continuity equation to 1e-8 or better.
    """
    if p != 2:
        raise ValueError("dynamic solving is implemented for p = 2 only")
    if mu0.grid is not mu1.grid:
        raise ValueError("measures must share one grid")
    if n_time_steps < 1:
        raise ValueError("need at least one time step")

    grid = mu0.grid
    geo = EdgeGeometry(grid)
    n = grid.n_cells
    K = n_time_steps
    E = geo.n_int + geo.n_bdry
    dt = 1.0 / K
    vol = grid.cell_volume
    w_int, w_bdry = geo.weights(2.0)
    # per-edge coefficient of g^2 / s in the time-integrated action
    c_edge = dt * np.concatenate(
        [w_int / geo.int_area**2, w_bdry / geo.bdry_area**2]
    )

    rho0, rho1 = mu0.density, mu1.density
    n_rho = (K - 1) * n
    n_x = n_rho + K * E

    div = geo.divergence_matrix()  # n x E

    # continuity: vol*(rho_{k+1} - rho_k)/dt + div f_k = 0 for k = 0..K-1
    rows_a, b = [], np.zeros(K * n)
    for k in range(K):
        blocks = sp.lil_matrix((n, n_x))
        if k > 0:
            blocks[:, (k - 1) * n : k * n] = -sp.eye(n) * (vol / dt)
        else:
            b[:n] += (vol / dt) * rho0
        if k < K - 1:
            blocks[:, k * n : (k + 1) * n] = sp.eye(n) * (vol / dt)
        else:
            b[(K - 1) * n :] -= (vol / dt) * rho1
        blocks[:, n_rho + k * E : n_rho + (k + 1) * E] = div
        rows_a.append(blocks.tocsr())
    A = sp.vstack(rows_a).tocsr()

    # z = B x: per interval, time-mean edge densities then fluxes.  Pinned
    # endpoint nodes contribute constants collected in s_const.
    def interval_density_matrix():
        rows, cols, vals = [], [], []
        s_const = np.zeros(K * E)

        def add_node(k_interval, node_k):
            base = k_interval * E
            if node_k == 0 or node_k == K:
                rho = rho0 if node_k == 0 else rho1
                s_const[base : base + geo.n_int] += 0.25 * (
                    rho[geo.int_i] + rho[geo.int_j]
                )
                s_const[base + geo.n_int : base + E] += 0.5 * rho[geo.bdry_cell]
                return
            off = (node_k - 1) * n
            for cells, coeff, edge_off in (
                (geo.int_i, 0.25, 0),
                (geo.int_j, 0.25, 0),
                (geo.bdry_cell, 0.5, geo.n_int),
            ):
                rows.extend(base + edge_off + np.arange(len(cells)))
                cols.extend(off + cells)
                vals.extend(np.full(len(cells), coeff))

        for k in range(K):
            add_node(k, k)
            add_node(k, k + 1)
        mat = sp.coo_matrix(
            (vals, (rows, cols)), shape=(K * E, n_x)
        ).tocsr()
        return mat, s_const

    S, s_const = interval_density_matrix()
    F = sp.hstack(
        [sp.csr_matrix((K * E, n_rho)), sp.eye(K * E, format="csr")]
    ).tocsr()
    # third z-block: node densities themselves, constrained >= 0 by their prox
    P = sp.hstack(
        [sp.eye(n_rho, format="csr"), sp.csr_matrix((n_rho, K * E))]
    ).tocsr()
    B = sp.vstack([S, F, P]).tocsr()
    b_z = np.concatenate([s_const, np.zeros(K * E), np.zeros(n_rho)])

    # KKT system for the x-update
    kkt = sp.bmat([[(B.T @ B).tocsc(), A.T], [A, None]], format="csc")
    solve_kkt = factorized(kkt)
    # normal equations of min_nu ||B^T y + A^T nu||, used by the gap certificate
    solve_aat = factorized(sp.csc_matrix(A @ A.T))

    if penalty is None:
        density_scale = max(float(rho0.max()), float(rho1.max()), 1e-6)
        penalty = 5.0 * float(np.median(c_edge) / dt) / density_scale
    beta = np.tile(2.0 * c_edge / penalty, K)
    relax = 1.8  # over-relaxation

    # start from constant-in-time interpolation with least-norm fluxes
    ddt = sp.csc_matrix(div @ div.T)
    div_solve = factorized(ddt)

    def least_norm_flux(rhs):
        return div.T @ div_solve(rhs)

    x = np.zeros(n_x)
    for k in range(K - 1):
        t = (k + 1) / K
        x[k * n : (k + 1) * n] = (1 - t) * rho0 + t * rho1
    dens_nodes = np.vstack([rho0, x[:n_rho].reshape(K - 1, n) if K > 1 else np.empty((0, n)), rho1])
    for k in range(K):
        rhs = -vol * (dens_nodes[k + 1] - dens_nodes[k]) / dt
        x[n_rho + k * E : n_rho + (k + 1) * E] = least_norm_flux(rhs)

    z = B @ x + b_z
    z[: K * E] = np.maximum(z[: K * E], 0.0)
    z[2 * K * E :] = np.maximum(z[2 * K * E :], 0.0)
    u = np.zeros(2 * K * E + n_rho)

    c_all = np.tile(c_edge, K)

    def emit(x_vec) -> Curve:
        """Feasible curve from an iterate: snap/clip densities, fix fluxes."""
        densities = np.vstack(
            [
                rho0,
                x_vec[:n_rho].reshape(K - 1, n) if K > 1 else np.empty((0, n)),
                rho1,
            ]
        )
        densities[np.abs(densities) < 1e-12 * max(1.0, densities.max())] = 0.0
        densities = np.maximum(densities, 0.0)
        fluxes = x_vec[n_rho:].reshape(K, E).copy()
        _rebalance_on_support(geo, div, densities, fluxes, vol, dt)
        return Curve(
            grid,
            np.linspace(0.0, 1.0, K + 1),
            densities,
            interior_flux=fluxes[:, : geo.n_int],
            boundary_flux=fluxes[:, geo.n_int :],
        )

    def dual_value(y):
        """Valid lower bound on the optimum from a projected dual point.

        The conjugate of c g^2/sigma (sigma >= 0) is the indicator of
        {y_sigma + y_g^2/(4c) <= 0} and the conjugate of the positivity
        indicator is the indicator of {y_rho <= 0}; projecting both gives a
        dual-feasible point, and the remaining stationarity defect is priced
        against a norm bound for the optimizer.
        """
        y_g = y[K * E : 2 * K * E]
        y_sig = np.minimum(y[: K * E], -(y_g**2) / (4.0 * c_all))
        y_rho = np.minimum(y[2 * K * E :], 0.0)
        y_proj = np.concatenate([y_sig, y_g, y_rho])
        bty = B.T @ y_proj
        nu = solve_aat(-(A @ bty))
        r_stat = bty + A.T @ nu
        radius = 3.0 * (1.0 + float(np.linalg.norm(x)))
        return float(y_proj @ b_z - nu @ b) - float(np.linalg.norm(r_stat)) * radius

    kkt_res = math.inf
    best_curve = None
    best_value = math.inf
    for it in range(1, max_iter + 1):
        # x-update: argmin ||Bx + b_z - (z - u)||^2 s.t. Ax = b
        target = z - u - b_z
        rhs = np.concatenate([B.T @ target, b])
        sol = solve_kkt(rhs)
        x = sol[:n_x]
        bx = B @ x + b_z

        # z-update with over-relaxation, then dual ascent
        bx_hat = relax * bx + (1.0 - relax) * z
        s_t = bx_hat[: K * E] + u[: K * E]
        g_t = bx_hat[K * E : 2 * K * E] + u[K * E : 2 * K * E]
        r_t = bx_hat[2 * K * E :] + u[2 * K * E :]
        g_new, s_new = _edge_prox(g_t, s_t, beta)
        z = np.concatenate([s_new, g_new, np.maximum(r_t, 0.0)])
        u += bx_hat - z

        if it % 100 == 0 or it == max_iter:
            candidate = emit(x)
            p_val = action(candidate, 2)
            if math.isfinite(p_val) and p_val < best_value:
                best_value = p_val
                best_curve = candidate
            if not math.isfinite(best_value):
                continue
            gap = best_value - dual_value(penalty * u)
            kkt_res = gap / (1.0 + best_value)
            if gap <= tol * (1.0 + best_value):
                break
    else:
        raise RuntimeError(
            f"dynamic solver did not reach tol={tol:g}; "
            f"last certified gap ratio {kkt_res:.3e}"
        )

    residual = continuity_residual(best_curve)
    if residual > 1e-8:
        raise RuntimeError(
            f"emitted curve violates continuity by {residual:.3e} (> 1e-8)"
        )
    result = DynamicResult(math.sqrt(best_value), best_curve, kkt_res, it)
    return result.value, result.curve


def _rebalance_on_support(geo, div, densities, fluxes, vol, dt):
    """Adjust fluxes so clipped densities satisfy continuity exactly.

    Edges whose time-mean density is zero join only zero-density cells, where
    the balance is 0 = 0; their flux is forced to zero and the least-squares
    correction runs on the live subgraph only, so no flux crosses a dead edge.
    """
    K = fluxes.shape[0]
    n = densities.shape[1]
    for k in range(K):
        rho_mean = 0.5 * (densities[k] + densities[k + 1])
        s_int = 0.5 * (rho_mean[geo.int_i] + rho_mean[geo.int_j])
        s_bdry = rho_mean[geo.bdry_cell]
        live = np.concatenate([s_int > 0.0, s_bdry > 0.0])
        fluxes[k, ~live] = 0.0
        rhs = -vol * (densities[k + 1] - densities[k]) / dt
        defect = rhs - div @ fluxes[k]
        if not np.any(live):
            continue
        # every cell touched by a live edge joins the equation set; the rest
        # are zero-density cells with zero dead fluxes, already in balance
        touched = np.zeros(n, dtype=bool)
        touched[geo.int_i[s_int > 0.0]] = True
        touched[geo.int_j[s_int > 0.0]] = True
        touched[geo.bdry_cell[s_bdry > 0.0]] = True
        sub = div[touched][:, live]
        gram = (sub @ sub.T).toarray()
        corr, *_ = np.linalg.lstsq(gram, defect[touched], rcond=None)
        fluxes[k, live] += sub.T @ corr
