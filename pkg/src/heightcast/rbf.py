"""Truncated-Gaussian smoothing of grid cell values.

The kernel of a cell with center ``p_c`` and edge length ``c`` is

    w(p) = exp(-(|p - p_c| / c)^2 / (2 sigma^2)) - exp(-TRUNCATION^2 / 2)

clamped to zero at and beyond distance ``TRUNCATION * sigma * c``; the
subtracted remainder makes it reach zero continuously there. A sample is
the weight-normalized sum of cell values over the influence list of the
containing cell.

All summations run through one segmented reduceat kernel so that a single
point query and a full raster fill produce bit-identical values. Sums are
anchored at the first influencer's value, which makes constant fields
reproduce exactly and keeps the water surface at or above the terrain
(the water value is terrain plus a separately summed non-negative depth).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import TRUNCATION, AdaptiveGrid, InfluenceTable, influencers_at

# remainder subtracted so the kernel reaches zero at the truncation radius
_CUT_SQ = TRUNCATION * TRUNCATION          # 12.25
_REMAINDER = math.exp(-_CUT_SQ / 2.0)      # exp(-6.125)
# squared-distance cutoff with one-ulp slack so boundary dust clamps to zero
_CUT_EDGE = _CUT_SQ * (1.0 - 1e-12)

LAYERS = ("terrain", "water")


@dataclass(frozen=True)
class RbfParams:
    """Smoothing parameters. `truncation` is fixed by the kernel shape."""

    sigma: float = 1.0
    truncation: float = TRUNCATION

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.truncation != TRUNCATION:
            raise ValueError("truncation is a fixed kernel constant")


@dataclass(frozen=True)
class SampleValue:
    """An approximated height plus diagnostics of the contributing sum."""

    value: float
    weight_sum: float
    influencer_count: int

    @property
    def defined(self) -> bool:
        return self.weight_sum > 0.0


def weight(center, cell_size: float, point, params: RbfParams) -> float:
    """Kernel weight of one cell at one position (exactly 0 when truncated)."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    dx = center[0] - point[0]
    dy = center[1] - point[1]
    cs = cell_size * params.sigma
    r2 = (dx * dx + dy * dy) / (cs * cs)
    if r2 >= _CUT_EDGE:
        return 0.0
    return max(0.0, math.exp(-r2 / 2.0) - _REMAINDER)


def weights_vec(dx, dy, cell_sizes, sigma):
    """Vectorized kernel weights for difference vectors (dx, dy)."""
    cs = cell_sizes * sigma
    r2 = (dx * dx + dy * dy) / (cs * cs)
    w = np.exp(-0.5 * r2) - _REMAINDER
    np.maximum(w, 0.0, out=w)
    w[r2 >= _CUT_EDGE] = 0.0
    return w


def eval_segments(points, flat_cells, seg_offsets, grid: AdaptiveGrid, sigma: float):
    """Weighted sums for N points against CSR-packed influencer segments.

    `points` is (N, 2); segment k of `flat_cells` (rows seg_offsets[k] to
    seg_offsets[k+1]) lists the candidate cells of point k in stored order.
    Returns (terrain, water, weight_sum, count) arrays of length N. Water
    equals terrain plus a clamped non-negative smoothed depth. Segments
    must be non-empty.

    The per-segment operation sequence is fixed; results do not depend on
    how points are batched, so raster fills match point queries bitwise.
    """
    points = np.asarray(points, dtype=np.float64)
    seg_offsets = np.asarray(seg_offsets, dtype=np.int64)
    n = len(points)
    if n == 0:
        z = np.empty(0, dtype=np.float64)
        return z, z.copy(), z.copy(), np.empty(0, dtype=np.int64)
    lengths = np.diff(np.append(seg_offsets, len(flat_cells)))
    if np.any(lengths <= 0):
        raise ValueError("every point needs a non-empty influencer segment")

    px = np.repeat(points[:, 0], lengths)
    py = np.repeat(points[:, 1], lengths)
    w = weights_vec(grid.centers[flat_cells, 0] - px,
                    grid.centers[flat_cells, 1] - py,
                    grid.sizes[flat_cells], sigma)

    starts = seg_offsets
    wsum = np.add.reduceat(w, starts)
    count = np.add.reduceat((w > 0.0).astype(np.int64), starts)

    # anchor sums at the first influencer so constant fields are exact
    t_anchor = grid.terrain[flat_cells[starts]]
    d_anchor = grid.water_depth[flat_cells[starts]]
    t_num = np.add.reduceat(w * (grid.terrain[flat_cells] - np.repeat(t_anchor, lengths)), starts)
    d_num = np.add.reduceat(w * (grid.water_depth[flat_cells] - np.repeat(d_anchor, lengths)), starts)

    with np.errstate(divide="ignore", invalid="ignore"):
        terrain = t_anchor + t_num / wsum
        depth = d_anchor + d_num / wsum
    np.maximum(depth, 0.0, out=depth)
    water = terrain + depth
    return terrain, water, wsum, count


def approximate(point, layer: str, grid: AdaptiveGrid, table: InfluenceTable,
                params: RbfParams) -> SampleValue:
    """Smoothed value of one layer at a world position.

    `layer` is "terrain" or "water" (water means terrain plus depth, i.e.
    the water surface elevation). Raises OutsideDomainError beyond the
    gridded area and ValueError if the influence table cannot support the
    position (zero weight sum, possible only for sigma below ~0.21).
    """
    if layer not in LAYERS:
        raise ValueError(f"unknown layer {layer!r}")
    if table.sigma != params.sigma:
        raise ValueError("influence table was built for a different sigma")
    idx = influencers_at(table, grid, point)
    pts = np.asarray([point], dtype=np.float64)
    terrain, water, wsum, count = eval_segments(
        pts, idx, np.zeros(1, dtype=np.int64), grid, params.sigma)
    if wsum[0] <= 0.0:
        raise ValueError(
            f"zero weight sum at {tuple(point)}: influence table inconsistent "
            f"with sigma={params.sigma}")
    value = terrain[0] if layer == "terrain" else water[0]
    return SampleValue(value=float(value), weight_sum=float(wsum[0]),
                       influencer_count=int(count[0]))
