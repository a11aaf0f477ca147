"""Internal energy families and discrete dissipation functionals.

Two closed-form families are supported, both tilted so the energy density is
nonnegative with a unique zero at the reference level ``lam`` (the constant
boundary value of the associated diffusion problem):

* entropy: F(z) = z log(z / lam) - z + lam, driving linear diffusion with
  pressure L(z) = z - lam;
* power(alpha): F(z) = (z^alpha - alpha lam^(alpha-1) z)/(alpha - 1) + lam^alpha,
  driving porous-medium diffusion with pressure L(z) = z^alpha - lam^alpha.

The dissipation of a density rho is the discrete Dirichlet energy of G(rho),
where G' (r) = sqrt(r) F''(r).  In ``trace`` mode boundary faces carry the
ghost value G(lam) at half-cell spacing, so the functional is small only when
the density approaches lam at the boundary; ``free`` mode ignores the
boundary entirely.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .measures import DiscreteMeasure

__all__ = [
    "EnergySpec",
    "make_energy",
    "internal_energy",
    "dissipation",
    "dissipation_alpha_form",
    "alpha_p",
]


@dataclass(frozen=True)
class EnergySpec:
    """Closed-form evaluators for one energy family.

    ``h_concave`` records whether h(r) = (sqrt(r) F''(r))^(-2) is concave,
    which holds for the entropy family and for powers alpha <= 3/2; convexity
    properties of the edge-averaged dissipation are only guaranteed then.
    """

    variant: str  # "entropy" | "power"
    lam: float
    alpha: float | None = None
    h_concave: bool = True

    # -- energy density and derivatives ------------------------------------
    def F(self, z):
        z = np.asarray(z, dtype=float)
        if self.variant == "entropy":
            lam = self.lam
            with np.errstate(divide="ignore", invalid="ignore"):
                val = np.where(z > 0, z * np.log(np.where(z > 0, z, 1.0) / lam), 0.0)
            return val - z + lam
        a, lam = self.alpha, self.lam
        return (z**a - a * lam ** (a - 1) * z) / (a - 1) + lam**a

    def dF(self, z):
        z = np.asarray(z, dtype=float)
        if self.variant == "entropy":
            with np.errstate(divide="ignore"):
                return np.log(z / self.lam)
        a, lam = self.alpha, self.lam
        return a * (z ** (a - 1) - lam ** (a - 1)) / (a - 1)

    def d2F(self, z):
        z = np.asarray(z, dtype=float)
        if self.variant == "entropy":
            with np.errstate(divide="ignore"):
                return 1.0 / z
        return self.alpha * z ** (self.alpha - 2)

    # -- pressure -----------------------------------------------------------
    def L(self, z):
        z = np.asarray(z, dtype=float)
        if self.variant == "entropy":
            return z - self.lam
        return z**self.alpha - self.lam**self.alpha

    def dL(self, z):
        """L'(r) = r F''(r), the diffusion coefficient of the implicit solver."""
        z = np.asarray(z, dtype=float)
        if self.variant == "entropy":
            return np.ones_like(z)
        return self.alpha * z ** (self.alpha - 1)

    # -- dissipation-generating function ------------------------------------
    def G(self, z):
        z = np.asarray(z, dtype=float)
        if self.variant == "entropy":
            return 2.0 * np.sqrt(z)
        a = self.alpha
        return a * z ** (a - 0.5) / (a - 0.5)

    def h(self, z):
        """h(r) = (sqrt(r) F''(r))^(-2); the alpha-form edge coefficient."""
        z = np.asarray(z, dtype=float)
        if self.variant == "entropy":
            return z.copy()
        a = self.alpha
        expo = 3.0 - 2.0 * a
        with np.errstate(divide="ignore"):
            return z**expo / a**2

    def spec(self) -> dict:
        out = {"variant": self.variant, "lambda": self.lam}
        if self.variant == "power":
            out["alpha"] = self.alpha
        return out


def make_energy(variant: str, lam: float, alpha: float | None = None) -> EnergySpec:
    """Build an energy family.

    Entropy requires lam > 0 (the density ca not reach a zero boundary level
    through logarithmic pressure); power requires alpha > 1.  A power exponent
    above 3/2 is accepted with a warning: the edge-averaged dissipation is no
    longer convex and the corresponding property tests are skipped.
    """
    lam = float(lam)
    if variant == "entropy":
        if lam <= 0:
            raise ValueError("entropy family requires lam > 0")
        return EnergySpec("entropy", lam, None, True)
    if variant == "power":
        if alpha is None or alpha <= 1:
            raise ValueError("power family requires alpha > 1")
        if lam < 0:
            raise ValueError("lam must be >= 0")
        alpha = float(alpha)
        h_concave = alpha <= 1.5
        if not h_concave:
            warnings.warn(
                f"power alpha={alpha} > 1.5: edge coefficient h is not concave; "
                "dissipation convexity checks will be skipped",
                stacklevel=2,
            )
        return EnergySpec("power", lam, alpha, h_concave)
    raise ValueError(f"unknown energy variant {variant!r}")


def energy_from_spec(data: dict) -> EnergySpec:
    return make_energy(data["variant"], data["lambda"], data.get("alpha"))


def internal_energy(spec: EnergySpec, mu: DiscreteMeasure) -> float:
    """Total energy sum_i F(rho_i) * vol; nonnegative, zero only at rho = lam."""
    return float(np.sum(spec.F(mu.density)) * mu.grid.cell_volume)


def dissipation(spec: EnergySpec, mu: DiscreteMeasure, mode: str = "trace") -> float:
    """Discrete Dirichlet energy of G(rho).

    Interior edges contribute vol * ((G_j - G_i) / dx)^2; in ``trace`` mode
    each boundary face adds vol * ((G(lam) - G_i) / (dx/2))^2, the ghost-value
    encoding of the boundary level.
    """
    _check_mode(mode)
    grid = mu.grid
    g = spec.G(mu.density)
    vol = grid.cell_volume
    total = 0.0
    if grid.interior_edges.size:
        i = grid.interior_edges[:, 0]
        j = grid.interior_edges[:, 1]
        dx = np.asarray(grid.cell_size)[grid.interior_edges[:, 2]]
        total += float(np.sum(vol * ((g[j] - g[i]) / dx) ** 2))
    if mode == "trace" and grid.boundary_edges.size:
        c = grid.boundary_edges[:, 0]
        dx = np.asarray(grid.cell_size)[grid.boundary_edges[:, 1]]
        g_lam = spec.G(spec.lam)
        total += float(np.sum(vol * ((g_lam - g[c]) / (dx / 2.0)) ** 2))
    return total


def alpha_p(v, s, p: float = 2) -> float:
    """Jointly convex 1-homogeneous action density |v|^p / s^(p-1).

    Defined as 0 at (0, 0) and +inf for s = 0, v != 0.
    """
    if s > 0:
        return abs(v) ** p / s ** (p - 1)
    return 0.0 if v == 0 else math.inf


def _alpha2_sum(v, s):
    """Vectorized sum of alpha_2 over edges; +inf marker propagates."""
    v = np.asarray(v, dtype=float)
    s = np.asarray(s, dtype=float)
    bad = (s <= 0) & (v != 0)
    if np.any(bad):
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(s > 0, v**2 / np.where(s > 0, s, 1.0), 0.0)
    return float(np.sum(terms))


def dissipation_alpha_form(
    spec: EnergySpec, mu: DiscreteMeasure, mode: str = "trace"
) -> float:
    """Edge-averaged dissipation sum vol * alpha_2(density slope, h(mean density)).

    Agrees with :func:`dissipation` to first order under refinement for smooth
    densities, and is jointly convex in the density vector whenever h is
    concave.  Returns +inf when some edge has zero coefficient but a nonzero
    slope.
    """
    _check_mode(mode)
    grid = mu.grid
    rho = mu.density
    vol = grid.cell_volume
    total = 0.0
    if grid.interior_edges.size:
        i = grid.interior_edges[:, 0]
        j = grid.interior_edges[:, 1]
        dx = np.asarray(grid.cell_size)[grid.interior_edges[:, 2]]
        slopes = (rho[j] - rho[i]) / dx
        coeff = spec.h(0.5 * (rho[i] + rho[j]))
        part = _alpha2_sum(slopes, coeff)
        if math.isinf(part):
            return math.inf
        total += vol * part
    if mode == "trace" and grid.boundary_edges.size:
        c = grid.boundary_edges[:, 0]
        dx = np.asarray(grid.cell_size)[grid.boundary_edges[:, 1]]
        slopes = (spec.lam - rho[c]) / (dx / 2.0)
        coeff = spec.h(0.5 * (rho[c] + spec.lam))
        part = _alpha2_sum(slopes, coeff)
        if math.isinf(part):
            return math.inf
        total += vol * part
    return total


def _check_mode(mode):
    if mode not in ("free", "trace"):
        raise ValueError(f"mode must be 'free' or 'trace', got {mode!r}")
