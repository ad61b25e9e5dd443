"""Deterministic synthetic test grids.

Four kinds: `flat` and `ramp` are uniform grids; `hill` and `pond` are
quadtree refinements of smooth analytic fields (a few seeded Gaussian
hills, plus a parabolic circular pond for `pond`), refined most where
the field is steep so the result mixes several cell size classes.
All randomness comes from the seed; equal inputs give equal grids.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from .grid import AdaptiveGrid, Rect

SYNTH_KINDS = ("flat", "ramp", "hill", "pond")

_ROOT_CELLS = 8          # root tiles per side
_ROOT_SIZE = 256.0       # meters per root tile
_MAX_DEPTH = 6           # min cell = _ROOT_SIZE / 2**_MAX_DEPTH = 4 m


class _Fields:
    """Smooth analytic terrain and water-depth fields."""

    def __init__(self, kind: str, rng: np.random.Generator, extent: float):
        self.kind = kind
        self.extent = extent
        if kind in ("hill", "pond"):
            k = 3
            self.hill_pos = rng.uniform(0.22 * extent, 0.78 * extent, size=(k, 2))
            self.hill_rad = rng.uniform(0.10 * extent, 0.20 * extent, size=k)
            self.hill_amp = rng.uniform(40.0, 90.0, size=k)
        if kind == "pond":
            self.pond_pos = rng.uniform(0.35 * extent, 0.65 * extent, size=2)
            self.pond_rad = rng.uniform(0.07 * extent, 0.11 * extent)
            self.pond_depth = rng.uniform(2.5, 4.5)

    def terrain(self, x, y):
        if self.kind == "flat":
            return np.full_like(np.asarray(x, dtype=np.float64), 50.0)
        if self.kind == "ramp":
            return 20.0 + 0.05 * np.asarray(x, dtype=np.float64)
        z = np.full_like(np.asarray(x, dtype=np.float64), 12.0)
        for (hx, hy), rad, amp in zip(self.hill_pos, self.hill_rad, self.hill_amp):
            r2 = (x - hx) ** 2 + (y - hy) ** 2
            z = z + amp * np.exp(-0.5 * r2 / rad ** 2)
        return z

    def water_depth(self, x, y):
        if self.kind != "pond":
            return np.zeros_like(np.asarray(x, dtype=np.float64))
        r2 = (x - self.pond_pos[0]) ** 2 + (y - self.pond_pos[1]) ** 2
        return self.pond_depth * np.maximum(0.0, 1.0 - r2 / self.pond_rad ** 2)

    def detail(self, x, y, size):
        """Refinement priority of a cell: steep and large splits first."""
        h = size / 4.0
        gx = (self.terrain(x + h, y) - self.terrain(x - h, y)) / (2 * h)
        gy = (self.terrain(x, y + h) - self.terrain(x, y - h)) / (2 * h)
        dx = (self.water_depth(x + h, y) - self.water_depth(x - h, y)) / (2 * h)
        dy = (self.water_depth(x, y + h) - self.water_depth(x, y - h)) / (2 * h)
        slope = math.hypot(float(gx), float(gy)) + 8.0 * math.hypot(float(dx), float(dy))
        return size * (slope + 0.01)


def generate_synthetic(kind: str, seed: int, cells: int = 4096) -> AdaptiveGrid:
    """Build a deterministic synthetic grid of roughly `cells` cells."""
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    if cells < 1:
        raise ValueError("cells must be positive")
    rng = np.random.default_rng(seed)

    if kind in ("flat", "ramp"):
        side = max(1, round(math.sqrt(cells)))
        size = 4.0
        extent = side * size
        fields = _Fields(kind, rng, extent)
        ii, jj = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        cx = (ii.ravel() + 0.5) * size
        cy = (jj.ravel() + 0.5) * size
        centers = np.column_stack([cx, cy])
        terr = fields.terrain(cx, cy)
        depth = fields.water_depth(cx, cy)
        return AdaptiveGrid(Rect(0.0, 0.0, extent, extent), size, centers,
                            np.full(len(centers), size), terr, depth)

    extent = _ROOT_CELLS * _ROOT_SIZE
    fields = _Fields(kind, rng, extent)
    capacity = (_ROOT_CELLS * 2 ** _MAX_DEPTH) ** 2
    target = min(cells, capacity)

    # leaves as (depth, i, j); refine the highest-priority leaf until the
    # target count is reached, then ensure at least three size classes
    heap = []
    counter = 0
    leaves = {}

    def push(depth, i, j):
        nonlocal counter
        size = _ROOT_SIZE / 2 ** depth
        x = (i + 0.5) * size
        y = (j + 0.5) * size
        leaves[(depth, i, j)] = True
        if depth < _MAX_DEPTH:
            heapq.heappush(heap, (-fields.detail(x, y, size), counter, depth, i, j))
            counter += 1

    for i in range(_ROOT_CELLS):
        for j in range(_ROOT_CELLS):
            push(0, i, j)

    def split_best():
        while heap:
            _, _, depth, i, j = heapq.heappop(heap)
            if (depth, i, j) not in leaves:
                continue
            del leaves[(depth, i, j)]
            for di in (0, 1):
                for dj in (0, 1):
                    push(depth + 1, 2 * i + di, 2 * j + dj)
            return True
        return False

    while len(leaves) + 3 <= target:
        if not split_best():
            break
    while len({d for d, _, _ in leaves}) < 3:
        if not split_best():
            break

    keys = sorted(leaves.keys())
    n = len(keys)
    centers = np.empty((n, 2))
    sizes = np.empty(n)
    for row, (depth, i, j) in enumerate(keys):
        size = _ROOT_SIZE / 2 ** depth
        centers[row] = (i + 0.5) * size, (j + 0.5) * size
        sizes[row] = size
    terr = fields.terrain(centers[:, 0], centers[:, 1])
    depth_vals = fields.water_depth(centers[:, 0], centers[:, 1])
    min_cell = _ROOT_SIZE / 2 ** _MAX_DEPTH
    return AdaptiveGrid(Rect(0.0, 0.0, extent, extent), min_cell,
                        centers, sizes, terr, depth_vals)
