"""Cascade raster fill: cache smoothed heights at every visible texel.

Each cascade raster holds both layers (terrain and water surface) plus a
validity mask. Only texels marked visible by the layout are evaluated;
of those, texels outside the gridded domain stay at the sentinel value,
which sits below the grid's height range so rays never land on them from
above. Evaluation batches texels by their containing grid cell (all such
texels share one influence list) and runs through the same segmented
kernel as single-point queries, so every texel is bit-identical to an
individual `approximate` call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cascade import CascadeLayout
from .grid import AdaptiveGrid, InfluenceTable
from .rbf import RbfParams, eval_segments

# cap on gathered (texel, influencer) pairs per evaluation batch
_BATCH_PAIRS = 4_000_000


@dataclass
class CascadeRaster:
    """Discretized heights of one cascade, both layers."""

    layout: CascadeLayout
    terrain: np.ndarray          # (res, res) float64, [iy, ix]
    water: np.ndarray            # water surface elevation
    valid: np.ndarray            # visible AND inside the gridded domain
    sentinel: float

    def layer(self, name: str) -> np.ndarray:
        if name == "terrain":
            return self.terrain
        if name == "water":
            return self.water
        raise ValueError(f"unknown layer {name!r}")

    def valid_range(self, name: str):
        """(min, max) over valid texels of a layer, or None if all invalid."""
        if not self.valid.any():
            return None
        vals = self.layer(name)[self.valid]
        return float(vals.min()), float(vals.max())


def discretize_cascade(layout: CascadeLayout, grid: AdaptiveGrid,
                       table: InfluenceTable, params: RbfParams) -> CascadeRaster:
    """Evaluate both smoothing layers at every visible texel of a layout."""
    if table.sigma != params.sigma:
        raise ValueError("influence table was built for a different sigma")
    res = layout.resolution
    sentinel = grid.height_range[0] - 1.0
    terrain = np.full((res, res), sentinel, dtype=np.float64)
    water = np.full((res, res), sentinel, dtype=np.float64)
    valid = np.zeros((res, res), dtype=bool)

    iy, ix = np.nonzero(layout.mask)
    if len(ix) == 0:
        return CascadeRaster(layout, terrain, water, valid, sentinel)

    px = layout.world_origin[0] + ix * layout.texel_size
    py = layout.world_origin[1] + iy * layout.texel_size
    points = np.column_stack([px, py])
    cells = grid.cells_at(points)
    inside = cells >= 0
    if not inside.any():
        return CascadeRaster(layout, terrain, water, valid, sentinel)

    points = points[inside]
    cells = cells[inside]
    ix, iy = ix[inside], iy[inside]

    # group texels by containing cell; each group shares one influence list
    order = np.argsort(cells, kind="stable")
    points, cells, ix, iy = points[order], cells[order], ix[order], iy[order]
    seg_len = table.list_lengths()[cells]

    ter = np.empty(len(points))
    wat = np.empty(len(points))
    start = 0
    while start < len(points):
        stop = start
        pairs = 0
        while stop < len(points) and (pairs == 0 or pairs + seg_len[stop] <= _BATCH_PAIRS):
            pairs += seg_len[stop]
            stop += 1
        sl = slice(start, stop)
        flat, offs = _gather_segments(table, cells[sl], seg_len[sl])
        t, w, wsum, _ = eval_segments(points[sl], flat, offs, grid, params.sigma)
        if np.any(wsum <= 0.0):
            bad = int(np.argmax(wsum <= 0.0))
            raise ValueError(
                f"zero weight sum at texel {(int(ix[sl][bad]), int(iy[sl][bad]))}: "
                f"influence table inconsistent with sigma={params.sigma}")
        ter[sl] = t
        wat[sl] = w
        start = stop

    terrain[iy, ix] = ter
    water[iy, ix] = wat
    valid[iy, ix] = True
    return CascadeRaster(layout, terrain, water, valid, sentinel)


def _gather_segments(table: InfluenceTable, cells: np.ndarray, seg_len: np.ndarray):
    """Flatten the influence lists of `cells` into one gather array."""
    total = int(seg_len.sum())
    offs = np.zeros(len(cells), dtype=np.int64)
    np.cumsum(seg_len[:-1], out=offs[1:])
    # grouped arange: position within each segment plus that list's start
    pos = np.arange(total, dtype=np.int64) - np.repeat(offs, seg_len)
    flat = table.indices[np.repeat(table.offsets[cells], seg_len) + pos]
    return flat, offs


def write_pgm(values: np.ndarray, lo: float, hi: float, target) -> None:
    """Write a 2D height array as a 16-bit PGM, affinely mapped from [lo, hi].

    Values below `lo` (e.g. the invalid-texel sentinel) clamp to 0. Rows
    are written top-to-bottom, matching image conventions.
    """
    if hi <= lo:
        hi = lo + 1.0
    scaled = np.rint((values - lo) / (hi - lo) * 65535.0)
    pix = np.clip(scaled, 0, 65535).astype(">u2")
    pix = pix[::-1, :]   # row 0 of the file is the top (max y)
    header = f"P5\n{pix.shape[1]} {pix.shape[0]}\n65535\n".encode("ascii")
    if hasattr(target, "write"):
        target.write(header)
        target.write(pix.tobytes())
    else:
        with open(target, "wb") as fh:
            fh.write(header)
            fh.write(pix.tobytes())
