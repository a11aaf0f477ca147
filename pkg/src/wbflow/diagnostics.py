"""Variational diagnostics: energy-dissipation functional, chain rule, slope.

The central instrument is the De Giorgi functional

    L_T = F(rho_T) - F(rho_0) + 1/2 int (speed^2 + dissipation) dt,

which is nonnegative on every curve and vanishes, in the continuum, exactly
on solutions of the associated Dirichlet diffusion problem.  Curves carrying
momenta use the action rate as the squared-speed estimator, which is
consistent under refinement; density-only curves fall back to difference
quotients of the static distance, which overprice smooth motion on a fixed
grid (the grid metric charges each hop linearly in the mass moved), so their
values carry an O(dx/dt) surcharge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamic import Curve, EdgeGeometry, interval_action_rate, metric_speed
from .energy import EnergySpec, dissipation, internal_energy
from .grid import Grid
from .measures import DiscreteMeasure
from .static import wb_distance

__all__ = ["de_giorgi", "chain_rule_check", "slope_experiment", "SlopeRow"]


def _speeds_squared(curve: Curve) -> np.ndarray:
    if curve.has_momenta:
        geo = EdgeGeometry(curve.grid)
        w_int, w_bdry = geo.weights(2.0)
        return np.array(
            [
                interval_action_rate(curve, geo, w_int, w_bdry, k, 2.0)
                for k in range(curve.n_intervals)
            ]
        )
    return metric_speed(curve, 2) ** 2


def de_giorgi(curve: Curve, spec: EnergySpec, mode: str = "trace") -> float:
    """De Giorgi functional of a curve, with left-node dissipation quadrature."""
    grid = curve.grid
    first = internal_energy(spec, curve.measure(0))
    last = internal_energy(spec, curve.measure(curve.n_intervals))
    speeds_sq = _speeds_squared(curve)
    total = last - first
    for k in range(curve.n_intervals):
        dt = curve.times[k + 1] - curve.times[k]
        diss = dissipation(spec, curve.measure(k), mode)
        total += 0.5 * dt * (speeds_sq[k] + diss)
    return float(total)


def chain_rule_check(curve: Curve, spec: EnergySpec) -> float:
    """Largest gap between dF/dt and the flux pairing at interior nodes.

    The pairing is sum over edges of (pressure difference) * flux / edge
    density, the discrete form of integrating <w, v> against the measure with
    rho w = grad L(rho).  Fluxes are averaged between the two intervals
    meeting at a node; a flux through an empty edge is an error.
    """
    if not curve.has_momenta:
        raise ValueError("chain rule check needs a curve with momenta")
    geo = EdgeGeometry(curve.grid)
    K = curve.n_intervals
    if K < 2:
        raise ValueError("need at least two intervals for interior nodes")
    energies = [
        internal_energy(spec, curve.measure(k)) for k in range(K + 1)
    ]
    l_face = float(spec.L(spec.lam))
    worst = 0.0
    for k in range(1, K):
        dt2 = curve.times[k + 1] - curve.times[k - 1]
        dfdt = (energies[k + 1] - energies[k - 1]) / dt2
        rho = curve.densities[k]
        pressure = spec.L(rho)
        f_int = 0.5 * (curve.interior_flux[k - 1] + curve.interior_flux[k])
        f_bdry = 0.5 * (curve.boundary_flux[k - 1] + curve.boundary_flux[k])
        s_int = 0.5 * (rho[geo.int_i] + rho[geo.int_j])
        s_bdry = rho[geo.bdry_cell]
        if np.any((s_int <= 0) & (f_int != 0)) or np.any(
            (s_bdry <= 0) & (f_bdry != 0)
        ):
            raise ValueError("flux through an empty edge; velocity undefined")
        with np.errstate(divide="ignore", invalid="ignore"):
            pair_int = np.where(
                s_int > 0,
                (pressure[geo.int_j] - pressure[geo.int_i])
                * f_int
                / np.where(s_int > 0, s_int, 1.0),
                0.0,
            )
            pair_bdry = np.where(
                s_bdry > 0,
                (l_face - pressure[geo.bdry_cell])
                * f_bdry
                / np.where(s_bdry > 0, s_bdry, 1.0),
                0.0,
            )
        pairing = float(np.sum(pair_int) + np.sum(pair_bdry))
        worst = max(worst, abs(dfdt - pairing))
    return worst


@dataclass(frozen=True)
class SlopeRow:
    eps: float
    j1: float
    j2: float
    ratio: float


def slope_experiment(
    spec: EnergySpec, mu: DiscreteMeasure, eps_list
) -> list[SlopeRow]:
    """Collar-replacement probe of the energy slope near the boundary.

    For each eps, the density is replaced by the reference level on the
    collar {dist < eps}; J1 is the energy carried by the collar, J2 the
    transport distance to the modified measure, and their ratio lower-bounds
    the slope at scale eps.  Each eps must be a whole number of cells and
    smaller than the domain inradius.
    """
    grid = mu.grid
    inradius = min((b - a) / 2 for a, b in grid.extents)
    dx = min(grid.cell_size)
    rows = []
    for eps in eps_list:
        if eps <= 0 or eps >= inradius:
            raise ValueError(f"eps={eps} outside (0, inradius={inradius})")
        ncells = eps / dx
        if abs(ncells - round(ncells)) > 1e-9:
            raise ValueError(f"eps={eps} is not a multiple of the cell size {dx}")
        collar = grid.boundary_distance < eps - 1e-12
        j1 = float(np.sum(spec.F(mu.density[collar])) * grid.cell_volume)
        modified = mu.density.copy()
        modified[collar] = spec.lam
        j2, _ = wb_distance(mu, DiscreteMeasure(grid, modified), 2)
        if j2 == 0.0:
            ratio = 0.0 if j1 == 0.0 else math.inf
        else:
            ratio = j1 / j2
        rows.append(SlopeRow(float(eps), j1, j2, ratio))
    return rows
