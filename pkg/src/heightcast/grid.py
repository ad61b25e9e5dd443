"""Adaptive heightfield grid: data model, AHF file I/O, influence lists.

The grid is a flat collection of non-overlapping square cells whose edge
lengths are power-of-two multiples of a minimum cell size. Each cell stores
a terrain height and a water depth at its center. Cells are kept in
structure-of-arrays form for fast vectorized evaluation; `Cell` is a
convenience view over one row.

AHF text format (line-based, `#` starts a comment line):

    AHF 1
    domain <min_x> <min_y> <max_x> <max_y>
    min_cell <size>
    cells <count>
    <center_x> <center_y> <size> <terrain_height> <water_depth>   (x count)

Point-in-cell lookup uses a uniform index over min-cell tiles, which
requires every cell square to be aligned to the min-cell lattice anchored
at the domain minimum. Quadtree-derived data satisfies this by
construction; unaligned input is rejected at load time.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

# Truncation radius of the smoothing kernel, in units of sigma * cell_size.
TRUNCATION = 3.5


class GridFormatError(ValueError):
    """Malformed AHF input. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OutsideDomainError(ValueError):
    """A queried position is not covered by any grid cell."""


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, x, y) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax


@dataclass(frozen=True)
class Cell:
    """One grid cell (a read-only view of a grid row)."""

    center: tuple[float, float]
    size: float
    terrain_height: float
    water_depth: float


class AdaptiveGrid:
    """Immutable adaptive grid of square cells with a tile lookup index.

    Construction validates all structural invariants (power-of-two sizes,
    lattice alignment, containment, optional overlap check) and computes
    the height range over both layers.
    """

    def __init__(self, domain: Rect, min_cell_size: float,
                 centers, sizes, terrain, water_depth,
                 check_overlap: bool = True):
        if min_cell_size <= 0:
            raise GridFormatError("min_cell must be positive")
        if domain.width <= 0 or domain.height <= 0:
            raise GridFormatError("domain rectangle is degenerate")
        self.domain = domain
        self.min_cell_size = float(min_cell_size)
        self.centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 2)
        self.sizes = np.ascontiguousarray(sizes, dtype=np.float64)
        self.terrain = np.ascontiguousarray(terrain, dtype=np.float64)
        self.water_depth = np.ascontiguousarray(water_depth, dtype=np.float64)
        n = len(self.centers)
        if not (len(self.sizes) == len(self.terrain) == len(self.water_depth) == n):
            raise GridFormatError("cell attribute arrays disagree in length")

        self._validate_cells()
        self._tile_index = self._build_tile_index(check_overlap)

        if n:
            lo = float(self.terrain.min())
            hi = float((self.terrain + self.water_depth).max())
        else:
            lo = hi = 0.0
        self.height_range = (lo, hi)

        for arr in (self.centers, self.sizes, self.terrain, self.water_depth):
            arr.setflags(write=False)
        self._tile_index.setflags(write=False)

    # -- construction helpers -------------------------------------------------

    def _validate_cells(self):
        mc = self.min_cell_size
        d = self.domain
        for i in range(len(self.sizes)):
            c = self.sizes[i]
            if c <= 0:
                raise GridFormatError(f"cell {i}: size must be positive")
            ratio = c / mc
            k = round(math.log2(ratio)) if ratio > 0 else -1
            if k < 0 or abs(ratio - 2.0 ** k) > 1e-9 * 2.0 ** max(k, 0):
                raise GridFormatError(
                    f"cell {i}: size {c} is a non-power-of-two multiple of min_cell {mc}")
            x, y = self.centers[i]
            h = c / 2.0
            tol = 1e-6 * mc
            if (x - h < d.xmin - tol or x + h > d.xmax + tol
                    or y - h < d.ymin - tol or y + h > d.ymax + tol):
                raise GridFormatError(f"cell {i}: square extends outside the domain")
            # Tile lookup requires corners on the min-cell lattice.
            fx = (x - h - d.xmin) / mc
            fy = (y - h - d.ymin) / mc
            if abs(fx - round(fx)) > 1e-6 or abs(fy - round(fy)) > 1e-6:
                raise GridFormatError(
                    f"cell {i}: square is not aligned to the min_cell lattice")
        if np.any(self.water_depth < 0):
            i = int(np.argmax(self.water_depth < 0))
            raise GridFormatError(f"cell {i}: negative water_depth")

    def _build_tile_index(self, check_overlap):
        index, clash = self._paint_tiles(stop_on_overlap=check_overlap)
        if check_overlap and clash is not None:
            raise GridFormatError(f"cells {clash[0]} and {clash[1]} overlap")
        return index

    def _paint_tiles(self, stop_on_overlap):
        d, mc = self.domain, self.min_cell_size
        ntx = max(1, round(d.width / mc + 1e-9))
        nty = max(1, round(d.height / mc + 1e-9))
        # Cells may legitimately end mid-tile only if the domain is not a
        # whole number of tiles wide; round up so every cell fits.
        if ntx * mc < d.width - 1e-6 * mc:
            ntx = math.ceil(d.width / mc - 1e-9)
        if nty * mc < d.height - 1e-6 * mc:
            nty = math.ceil(d.height / mc - 1e-9)
        index = np.full((nty, ntx), -1, dtype=np.int32)
        for i in range(len(self.sizes)):
            c = self.sizes[i]
            h = c / 2.0
            x0 = int(round((self.centers[i, 0] - h - d.xmin) / mc))
            y0 = int(round((self.centers[i, 1] - h - d.ymin) / mc))
            span = int(round(c / mc))
            block = index[y0:y0 + span, x0:x0 + span]
            if np.any(block >= 0):
                other = int(block[block >= 0][0])
                if stop_on_overlap:
                    return index, (other, i)
            block[...] = i
        return index, None

    # -- queries --------------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return len(self.sizes)

    def cell(self, i: int) -> Cell:
        return Cell(center=(float(self.centers[i, 0]), float(self.centers[i, 1])),
                    size=float(self.sizes[i]),
                    terrain_height=float(self.terrain[i]),
                    water_depth=float(self.water_depth[i]))

    def cell_at(self, x: float, y: float) -> int:
        """Index of the cell containing (x, y), or -1 (outside / in a hole)."""
        d, mc = self.domain, self.min_cell_size
        tx = int(math.floor((x - d.xmin) / mc))
        ty = int(math.floor((y - d.ymin) / mc))
        if tx < 0 or ty < 0 or ty >= self._tile_index.shape[0] or tx >= self._tile_index.shape[1]:
            return -1
        return int(self._tile_index[ty, tx])

    def cells_at(self, points) -> np.ndarray:
        """Vectorized `cell_at` for an (N, 2) array of positions."""
        points = np.asarray(points, dtype=np.float64)
        d, mc = self.domain, self.min_cell_size
        tx = np.floor((points[:, 0] - d.xmin) / mc).astype(np.int64)
        ty = np.floor((points[:, 1] - d.ymin) / mc).astype(np.int64)
        nty, ntx = self._tile_index.shape
        ok = (tx >= 0) & (ty >= 0) & (tx < ntx) & (ty < nty)
        out = np.full(len(points), -1, dtype=np.int64)
        out[ok] = self._tile_index[ty[ok], tx[ok]]
        return out

    def find_overlap(self):
        """Return indices (i, j) of one overlapping cell pair, or None."""
        _, clash = self._paint_tiles(stop_on_overlap=True)
        return clash

    # -- serialization ---------------------------------------------------------

    def save(self, target) -> None:
        """Write the grid in AHF text format to a path or text stream."""
        if hasattr(target, "write"):
            self._write(target)
        else:
            with open(target, "w", encoding="ascii") as fh:
                self._write(fh)

    def _write(self, fh):
        d = self.domain
        fh.write("AHF 1\n")
        fh.write(f"domain {d.xmin!r} {d.ymin!r} {d.xmax!r} {d.ymax!r}\n")
        fh.write(f"min_cell {self.min_cell_size!r}\n")
        fh.write(f"cells {self.n_cells}\n")
        for i in range(self.n_cells):
            fh.write(f"{self.centers[i, 0]!r} {self.centers[i, 1]!r} "
                     f"{self.sizes[i]!r} {self.terrain[i]!r} {self.water_depth[i]!r}\n")


def load_grid(source, check_overlap: bool = True) -> AdaptiveGrid:
    """Parse an AHF stream, path, bytes, or string into an AdaptiveGrid.

    Raises GridFormatError with a 1-based line number on malformed input,
    including any non-comment content after the declared cell count.
    """
    text = _as_text(source)
    lines = text.splitlines()

    content = []  # (line_no, stripped) with comments/blanks removed
    for no, raw in enumerate(lines, start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        content.append((no, s))

    pos = 0

    def take(what):
        nonlocal pos
        if pos >= len(content):
            raise GridFormatError(f"unexpected end of file, expected {what}",
                                  line=len(lines) + 1)
        item = content[pos]
        pos += 1
        return item

    line_no, header = take("header 'AHF 1'")
    if header.split() != ["AHF", "1"]:
        raise GridFormatError("expected header 'AHF 1'", line=line_no)

    line_no, dom = take("domain line")
    parts = dom.split()
    if len(parts) != 5 or parts[0] != "domain":
        raise GridFormatError("expected 'domain <min_x> <min_y> <max_x> <max_y>'",
                              line=line_no)
    try:
        xmin, ymin, xmax, ymax = (float(v) for v in parts[1:])
    except ValueError:
        raise GridFormatError("domain values are not numbers", line=line_no) from None
    if not (xmax > xmin and ymax > ymin):
        raise GridFormatError("domain rectangle is degenerate", line=line_no)

    line_no, mcl = take("min_cell line")
    parts = mcl.split()
    if len(parts) != 2 or parts[0] != "min_cell":
        raise GridFormatError("expected 'min_cell <size>'", line=line_no)
    try:
        min_cell = float(parts[1])
    except ValueError:
        raise GridFormatError("min_cell value is not a number", line=line_no) from None
    if min_cell <= 0:
        raise GridFormatError("min_cell must be positive", line=line_no)

    line_no, cl = take("cells line")
    parts = cl.split()
    if len(parts) != 2 or parts[0] != "cells":
        raise GridFormatError("expected 'cells <count>'", line=line_no)
    try:
        count = int(parts[1])
    except ValueError:
        raise GridFormatError("cell count is not an integer", line=line_no) from None
    if count < 0:
        raise GridFormatError("cell count is negative", line=line_no)

    if len(content) - pos < count:
        raise GridFormatError(
            f"declared {count} cells but found {len(content) - pos}",
            line=len(lines) + 1)
    if len(content) - pos > count:
        extra_no, _ = content[pos + count]
        raise GridFormatError("unexpected content after the last cell", line=extra_no)

    centers = np.empty((count, 2), dtype=np.float64)
    sizes = np.empty(count, dtype=np.float64)
    terrain = np.empty(count, dtype=np.float64)
    depth = np.empty(count, dtype=np.float64)
    for i in range(count):
        line_no, row = content[pos + i]
        parts = row.split()
        if len(parts) != 5:
            raise GridFormatError("expected 5 values per cell line", line=line_no)
        try:
            vals = [float(v) for v in parts]
        except ValueError:
            raise GridFormatError("cell values are not numbers", line=line_no) from None
        centers[i] = vals[0], vals[1]
        sizes[i] = vals[2]
        terrain[i] = vals[3]
        depth[i] = vals[4]

    return AdaptiveGrid(Rect(xmin, ymin, xmax, ymax), min_cell,
                        centers, sizes, terrain, depth,
                        check_overlap=check_overlap)


def _as_text(source) -> str:
    if isinstance(source, str) and "\n" not in source:
        with open(source, "r", encoding="ascii") as fh:
            return fh.read()
    if isinstance(source, (bytes, bytearray)):
        return source.decode("ascii")
    if isinstance(source, str):
        return source
    if isinstance(source, io.TextIOBase):
        return source.read()
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("ascii")
    return data


class InfluenceTable:
    """Per-cell lists of potentially influencing cells, CSR-packed.

    Cell `i` appears in cell `a`'s list when the distance from `i`'s center
    to the closest point of `a`'s square is at most TRUNCATION * sigma *
    size(i) (boundary inclusive). This is conservative over the whole area
    of `a`, so a weight can be positive at a point only if its source cell
    is listed for the containing cell. Lists are sorted ascending and the
    cell itself is always present.
    """

    def __init__(self, offsets, indices, sigma: float):
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.sigma = float(sigma)
        self.offsets.setflags(write=False)
        self.indices.setflags(write=False)

    @property
    def n_cells(self) -> int:
        return len(self.offsets) - 1

    def influencers(self, i: int) -> np.ndarray:
        return self.indices[self.offsets[i]:self.offsets[i + 1]]

    def list_lengths(self) -> np.ndarray:
        return np.diff(self.offsets)


def influence_radii(grid: AdaptiveGrid, sigma: float) -> np.ndarray:
    """Truncation radius of every cell's kernel, in meters."""
    return TRUNCATION * sigma * grid.sizes


def build_influence_table(grid: AdaptiveGrid, sigma: float) -> InfluenceTable:
    """Precompute, for every cell, the cells that can influence its area.

    Candidate pairs come from KD-trees built per cell-size class (the
    sizes are power-of-two multiples of min_cell, so there are few
    classes); each candidate is then checked against the exact
    point-to-square distance predicate.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n = grid.n_cells
    if n == 0:
        return InfluenceTable(np.zeros(1, dtype=np.int64), np.empty(0, dtype=np.int64), sigma)

    classes = {}
    for cls in np.unique(grid.sizes):
        classes[float(cls)] = np.flatnonzero(grid.sizes == cls)
    trees = {cls: cKDTree(grid.centers[idx]) for cls, idx in classes.items()}

    half_diag = math.sqrt(0.5)
    src_all = []
    dst_all = []
    for c_src, idx_src in classes.items():
        radius = TRUNCATION * sigma * c_src
        tree_src = trees[c_src]
        for c_dst, idx_dst in classes.items():
            # center distance bound implied by the square-distance predicate
            r = (radius + half_diag * c_dst) * (1.0 + 1e-12) + 1e-12
            pairs = tree_src.query_ball_tree(trees[c_dst], r)
            for si, neigh in zip(idx_src, pairs):
                if neigh:
                    src_all.append(np.full(len(neigh), si, dtype=np.int64))
                    dst_all.append(idx_dst[np.asarray(neigh, dtype=np.int64)])

    src = np.concatenate(src_all) if src_all else np.empty(0, dtype=np.int64)
    dst = np.concatenate(dst_all) if dst_all else np.empty(0, dtype=np.int64)

    # exact predicate: distance from source center to target square
    half = grid.sizes[dst] / 2.0
    ax = np.maximum(np.abs(grid.centers[src, 0] - grid.centers[dst, 0]) - half, 0.0)
    ay = np.maximum(np.abs(grid.centers[src, 1] - grid.centers[dst, 1]) - half, 0.0)
    rad = TRUNCATION * sigma * grid.sizes[src]
    keep = ax * ax + ay * ay <= rad * rad
    src, dst = src[keep], dst[keep]

    order = np.lexsort((src, dst))
    src, dst = src[order], dst[order]
    counts = np.bincount(dst, minlength=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return InfluenceTable(offsets, src, sigma)


def influencers_at(table: InfluenceTable, grid: AdaptiveGrid, point) -> np.ndarray:
    """Influence list for the cell containing `point`.

    The list is a conservative superset; callers filter by actual positive
    weight during summation. Raises OutsideDomainError when the point is
    not inside any cell.
    """
    i = grid.cell_at(float(point[0]), float(point[1]))
    if i < 0:
        raise OutsideDomainError(f"position {tuple(point)} is outside the gridded domain")
    return table.influencers(i)
