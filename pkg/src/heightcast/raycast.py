"""Heightfield ray casting with maximum-mipmap empty-space skipping.

A raster of N x N texels defines (N-1) x (N-1) bilinear patches between
adjacent texel centers. The maximum mipmap stores, at level 0, the
four-corner maximum of every patch (a bound over the whole patch
interior, since a bilinear surface attains its maximum at a corner), and
at higher levels the running 2x2 maximum, edge-padded as needed. A ray
can safely skip any node whose maximum lies strictly below the ray
segment over the node's footprint.

Ray-patch intersection substitutes the ray into the bilinear form, which
yields a quadratic in the ray parameter; a near-degenerate quadratic
coefficient falls back to the linear solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .discretize import CascadeRaster


@dataclass(frozen=True)
class HitRecord:
    """A ray-surface intersection."""

    t: float
    world_pos: tuple[float, float, float]
    layer: str
    cascade: int
    uv: tuple[float, float]
    patch: tuple[int, int]
    blend: tuple[int, float] | None = None   # (other cascade, weight) in overlaps


class MaxMipmap:
    """Pyramid of height maxima over a raster's bilinear patches."""

    def __init__(self, levels: list[np.ndarray], layer: str):
        self.levels = levels
        self.layer = layer
        # packed form for the compiled kernels
        self._flat = np.concatenate([lv.ravel() for lv in levels])
        self._off = np.zeros(len(levels), dtype=np.int64)
        np.cumsum([lv.size for lv in levels[:-1]], out=self._off[1:])
        self._w = np.array([lv.shape[1] for lv in levels], dtype=np.int64)
        self._h = np.array([lv.shape[0] for lv in levels], dtype=np.int64)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def node_max(self, level: int, nx: int, ny: int) -> float:
        return float(self.levels[level][ny, nx])


def build_max_mipmap(raster: CascadeRaster, layer: str) -> MaxMipmap:
    """Build the max pyramid for one layer of a raster, down to 1x1.

    Invalid texels contribute their sentinel value, which lies below every
    real height, so fully-invalid regions are skippable at any level.
    """
    heights = raster.layer(layer)
    res = heights.shape[0]
    if res < 2:
        raise ValueError("raster resolution must be at least 2")
    level0 = np.maximum(
        np.maximum(heights[:-1, :-1], heights[:-1, 1:]),
        np.maximum(heights[1:, :-1], heights[1:, 1:]),
    )
    levels = [np.ascontiguousarray(level0)]
    cur = level0
    while cur.shape[0] > 1 or cur.shape[1] > 1:
        h, w = cur.shape
        if h % 2 or w % 2:
            padded = np.full((h + h % 2, w + w % 2), -np.inf)
            padded[:h, :w] = cur
            cur = padded
        cur = np.maximum(
            np.maximum(cur[0::2, 0::2], cur[0::2, 1::2]),
            np.maximum(cur[1::2, 0::2], cur[1::2, 1::2]),
        )
        levels.append(np.ascontiguousarray(cur))
    return MaxMipmap(levels, layer)


# ---------------------------------------------------------------------------
# patch intersection


def _patch_roots(h00, h10, h01, h11, u0, v0, du, dv, z0, dz, seg_len):
    """Reference twin of `_kernels._patch_hit` (kept formula-identical)."""
    e10 = h10 - h00
    e01 = h01 - h00
    kk = h11 - h10 - h01 + h00
    a = du * dv * kk
    b = du * e10 + dv * e01 + kk * (u0 * dv + v0 * du) - dz
    c = h00 + u0 * e10 + v0 * e01 + kk * u0 * v0 - z0

    far = 1e300
    r1 = far
    r2 = far
    if abs(a) < 1e-12 * abs(b):
        if b != 0.0:
            r1 = -c / b
    else:
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            sq = math.sqrt(disc)
            q = -0.5 * (b + sq) if b >= 0.0 else -0.5 * (b - sq)
            if q != 0.0:
                r1 = q / a
                r2 = c / q
            else:
                r1 = 0.0
                r2 = -b / a
            if r2 < r1:
                r1, r2 = r2, r1

    for tau in (r1, r2):
        if 0.0 <= tau <= seg_len:
            u = min(max(u0 + tau * du, 0.0), 1.0)
            v = min(max(v0 + tau * dv, 0.0), 1.0)
            return tau, u, v
    return None


def intersect_bilinear_patch(origin, direction, corner_heights, patch_min,
                             patch_size: float, t_range=None):
    """Nearest intersection of a ray with one bilinear patch.

    `corner_heights` is (h00, h10, h01, h11): heights at (0,0), (1,0),
    (0,1), (1,1) of the square footprint starting at `patch_min` with
    edge `patch_size`. `direction` must be normalized. Returns
    (t, (u, v)) or None. `t_range` optionally restricts the accepted
    parameter interval; by default it is the ray's overlap with the
    footprint, starting at t=0.
    """
    ox, oy, oz = (float(v) for v in origin)
    dx, dy, dz = (float(v) for v in direction)
    h00, h10, h01, h11 = (float(v) for v in corner_heights)
    s = float(patch_size)
    u_org = (ox - float(patch_min[0])) / s
    v_org = (oy - float(patch_min[1])) / s
    du = dx / s
    dv = dy / s

    if t_range is None:
        t_lo, t_hi = 0.0, 1e300
        for pos, dd in ((u_org, du), (v_org, dv)):
            if dd != 0.0:
                ta = (0.0 - pos) / dd
                tb = (1.0 - pos) / dd
                if ta > tb:
                    ta, tb = tb, ta
                t_lo = max(t_lo, ta)
                t_hi = min(t_hi, tb)
            elif pos < 0.0 or pos > 1.0:
                return None
        if t_lo > t_hi:
            return None
    else:
        t_lo, t_hi = float(t_range[0]), float(t_range[1])
        if t_lo > t_hi:
            return None

    # re-anchor at the segment start for well-conditioned coefficients
    u0 = u_org + t_lo * du
    v0 = v_org + t_lo * dv
    z0 = oz + t_lo * dz
    res = _patch_roots(h00, h10, h01, h11, u0, v0, du, dv, z0, dz, t_hi - t_lo)
    if res is None:
        return None
    tau, u, v = res
    return t_lo + tau, (u, v)


# ---------------------------------------------------------------------------
# traversal


def _raster_ray(layout, origin, direction):
    s = layout.texel_size
    rx = (float(origin[0]) - layout.world_origin[0]) / s
    ry = (float(origin[1]) - layout.world_origin[1]) / s
    dx = float(direction[0]) / s
    dy = float(direction[1]) / s
    return rx, ry, float(origin[2]), dx, dy, float(direction[2])


def traverse_cascade(origin, direction, raster: CascadeRaster,
                     mipmap: MaxMipmap) -> HitRecord | None:
    """First patch intersection of a ray within one cascade raster."""
    vr = raster.valid_range(mipmap.layer)
    if vr is None:
        return None
    rx, ry, rz, dx, dy, dz = _raster_ray(raster.layout, origin, direction)
    n0 = raster.layout.resolution - 1
    hit, t, ix, iy, u, v = _kernels.traverse_single(
        raster.layer(mipmap.layer), raster.valid,
        mipmap._flat, mipmap._off, mipmap._w, mipmap._h, mipmap.n_levels,
        n0, rx, ry, rz, dx, dy, dz, vr[0], vr[1])
    if not hit:
        return None
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    pos = o + t * d
    return HitRecord(t=float(t), world_pos=(pos[0], pos[1], pos[2]),
                     layer=mipmap.layer, cascade=raster.layout.index,
                     uv=(float(u), float(v)), patch=(int(ix), int(iy)))


def cast_through_cascades(origin, direction, rasters, mipmaps,
                          layouts) -> HitRecord | None:
    """Trace a ray through the cascades, nearest first, blending overlaps.

    Stops at the first hit. When that hit's ground position falls in the
    overlap band shared with the next cascade, the next cascade is traced
    too and the result is the convex combination of both hits, with the
    blend weight ramping linearly from 0 at the band's near edge to 1 at
    its far edge. A one-sided miss leaves the single hit unblended.
    """
    n = len(layouts)
    for k in range(n):
        if layouts[k] is None or rasters[k] is None or mipmaps[k] is None:
            continue
        hit = traverse_cascade(origin, direction, rasters[k], mipmaps[k])
        if hit is None:
            continue
        nk = k + 1
        if nk < n and layouts[nk] is not None and rasters[nk] is not None \
                and mipmaps[nk] is not None:
            ov_lo = layouts[nk].polygon.near_offset
            ov_hi = layouts[k].polygon.far_offset
            if ov_hi > ov_lo:
                off = layouts[k].polygon.axis.offset_of(hit.world_pos[:2])
                if ov_lo <= off <= ov_hi:
                    other = traverse_cascade(origin, direction, rasters[nk],
                                             mipmaps[nk])
                    if other is not None:
                        w = (off - ov_lo) / (ov_hi - ov_lo)
                        t = (1.0 - w) * hit.t + w * other.t
                        o = np.asarray(origin, dtype=np.float64)
                        d = np.asarray(direction, dtype=np.float64)
                        pos = o + t * d
                        return HitRecord(
                            t=float(t), world_pos=(pos[0], pos[1], pos[2]),
                            layer=hit.layer, cascade=hit.cascade, uv=hit.uv,
                            patch=hit.patch,
                            blend=(layouts[nk].index, float(w)))
        return hit
    return None
