"""Uniform box grids in one and two dimensions.

Cells are axis-aligned boxes of identical size; all quadrature is midpoint
(cell-center) quadrature.  Because the domain is a box, the distance from a
cell center to the boundary and the nearest boundary point are analytic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Grid", "build_grid", "nearest_boundary_point"]


@dataclass(frozen=True)
class Grid:
    """Uniform discretization of a box domain.

    Attributes:
        dimension: 1 or 2.
        extents: per-axis interval (a_k, b_k).
        cells_per_axis: number of cells along each axis.
        cell_size: per-axis spacing.
        centers: (n_cells, dimension) array of cell centers.
        cell_volume: product of the per-axis spacings.
        boundary_distance: per-cell distance from the center to the boundary.
        interior_edges: (n_edges, 3) int array of (cell_i, cell_j, axis) with
            cell_j the axis-positive neighbor of cell_i; each undirected edge
            stored once.
        boundary_edges: (n_bedges, 3) int array of (cell, axis, side) for cells
            whose face on `axis` (side 0 = lower, 1 = upper) lies on the
            boundary.
    """

    dimension: int
    extents: tuple[tuple[float, float], ...]
    cells_per_axis: tuple[int, ...]
    cell_size: tuple[float, ...] = field(repr=False)
    centers: np.ndarray = field(repr=False)
    cell_volume: float = field(repr=False)
    boundary_distance: np.ndarray = field(repr=False)
    interior_edges: np.ndarray = field(repr=False)
    boundary_edges: np.ndarray = field(repr=False)

    @property
    def n_cells(self) -> int:
        return self.centers.shape[0]

    def cell_index(self, multi_index: tuple[int, ...]) -> int:
        """Flat index of a cell from its per-axis index (x fastest)."""
        if self.dimension == 1:
            return int(multi_index[0])
        ix, iy = multi_index
        return int(ix + self.cells_per_axis[0] * iy)

    def spec(self) -> dict:
        """JSON-serializable description {dimension, extents, cells_per_axis}."""
        return {
            "dimension": self.dimension,
            "extents": [list(e) for e in self.extents],
            "cells_per_axis": list(self.cells_per_axis),
        }


def _normalize_extents(dimension, extents):
    # accept (0,1) for 1D as well as ((0,1),)
    if dimension == 1 and len(extents) == 2 and np.isscalar(extents[0]):
        extents = (tuple(extents),)
    extents = tuple(tuple(float(v) for v in e) for e in extents)
    if len(extents) != dimension:
        raise ValueError(f"expected {dimension} extent pairs, got {len(extents)}")
    for a, b in extents:
        if not b > a:
            raise ValueError(f"degenerate extent ({a}, {b})")
    return extents


def build_grid(dimension, extents, cells_per_axis) -> Grid:
    """Build a uniform grid on the box prod_k (a_k, b_k).

    Args:
        dimension: 1 or 2.
        extents: (a, b) in 1D, ((a1, b1), (a2, b2)) in 2D.
        cells_per_axis: int or per-axis ints, each >= 2.
    """
    if dimension not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {dimension}")
    extents = _normalize_extents(dimension, extents)
    if np.isscalar(cells_per_axis):
        cells_per_axis = (int(cells_per_axis),) * dimension
    cells_per_axis = tuple(int(n) for n in cells_per_axis)
    if len(cells_per_axis) != dimension or any(n < 2 for n in cells_per_axis):
        raise ValueError(f"need >= 2 cells per axis, got {cells_per_axis}")

    cell_size = tuple(
        (b - a) / n for (a, b), n in zip(extents, cells_per_axis)
    )
    axes = [
        a + (np.arange(n) + 0.5) * dx
        for (a, _), n, dx in zip(extents, cells_per_axis, cell_size)
    ]
    if dimension == 1:
        centers = axes[0][:, None]
    else:
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="xy")
        # x fastest: flat index = ix + nx * iy
        centers = np.column_stack([xx.ravel(), yy.ravel()])

    dist_per_axis = [
        np.minimum(centers[:, k] - extents[k][0], extents[k][1] - centers[:, k])
        for k in range(dimension)
    ]
    boundary_distance = np.min(np.stack(dist_per_axis, axis=0), axis=0)

    nx = cells_per_axis[0]
    ny = cells_per_axis[1] if dimension == 2 else 1
    interior, boundary = [], []
    for iy in range(ny):
        for ix in range(nx):
            cell = ix + nx * iy
            if ix + 1 < nx:
                interior.append((cell, cell + 1, 0))
            else:
                boundary.append((cell, 0, 1))
            if ix == 0:
                boundary.append((cell, 0, 0))
            if dimension == 2:
                if iy + 1 < ny:
                    interior.append((cell, cell + nx, 1))
                else:
                    boundary.append((cell, 1, 1))
                if iy == 0:
                    boundary.append((cell, 1, 0))

    return Grid(
        dimension=dimension,
        extents=extents,
        cells_per_axis=cells_per_axis,
        cell_size=cell_size,
        centers=centers,
        cell_volume=float(np.prod(cell_size)),
        boundary_distance=boundary_distance,
        interior_edges=np.array(sorted(interior), dtype=np.int64).reshape(-1, 3),
        boundary_edges=np.array(sorted(boundary), dtype=np.int64).reshape(-1, 3),
    )


def nearest_boundary_point(grid: Grid, cell: int) -> np.ndarray:
    """Closest point of the boundary to a cell center.

    Ties between equidistant faces are broken by smallest axis index, then by
    the lower face, so results are reproducible.
    """
    if not 0 <= cell < grid.n_cells:
        raise IndexError(f"cell {cell} out of range")
    center = grid.centers[cell]
    best = None
    for axis in range(grid.dimension):
        a, b = grid.extents[axis]
        for coord in (a, b):  # lower face first: tie-break order
            d = abs(center[axis] - coord)
            if best is None or d < best[0] - 1e-15:
                best = (d, axis, coord)
    d, axis, coord = best
    point = center.copy()
    point[axis] = coord
    return point
