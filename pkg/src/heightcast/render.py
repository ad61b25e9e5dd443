"""Per-frame orchestration: plan cascades, fill rasters, cast rays, shade.

A frame is produced in two timed phases. The approximation phase fills
every active cascade raster (both layers) from the smoothed grid; the
ray-casting phase builds maximum mipmaps, traces one ray per pixel per
layer through the cascades (nearest first, blending hits inside overlap
bands), and shades: water hits by a depth colormap, terrain hits by
height-scaled grayscale with Lambertian lighting from the analytic patch
normal, misses by the background color. A pixel shows water only when
the water-surface hit is strictly nearer than the terrain hit.

The pixel loop is batched through the compiled traversal kernel with one
independent output lane per ray, so frames are byte-identical at any
worker thread count.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .cascade import CameraView, NothingVisibleError, plan_cascades
from .discretize import discretize_cascade
from .grid import AdaptiveGrid, InfluenceTable
from .raycast import build_max_mipmap
from .rbf import RbfParams

_COLOR_STOPS = np.array([(0.0, 0.0, 128.0),
                         (0.0, 180.0, 220.0),
                         (240.0, 248.0, 255.0)])
_LIGHT_DIR = np.array([-0.45, -0.35, 0.82])
_LIGHT_DIR = _LIGHT_DIR / np.linalg.norm(_LIGHT_DIR)


@dataclass(frozen=True)
class FrameConfig:
    width: int
    height: int
    camera: CameraView
    colormap_range: tuple[float, float] = (0.0, 5.0)
    background: tuple[int, int, int] = (30, 40, 60)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not self.colormap_range[0] < self.colormap_range[1]:
            raise ValueError("colormap range min must be below max")


@dataclass(frozen=True)
class CascadeSettings:
    resolution: int = 1024
    overlap: float | str = "auto"


@dataclass
class Frame:
    pixels: np.ndarray                  # (height, width, 3) uint8
    approximation_ms: float
    raycast_ms: float
    visible_texels: int = 0
    rays_hit: int = 0
    visible: bool = True
    debug: dict | None = field(default=None, repr=False)


def depth_colormap(depth, colormap_range, background=(0, 0, 0)):
    """Map water depth to the blue-cyan-white gradient; NaN -> background."""
    lo, hi = colormap_range
    if isinstance(depth, np.ndarray):
        rgb = _colormap_array(depth, lo, hi)
        bad = ~np.isfinite(depth)
        if bad.any():
            rgb[bad] = background
        return rgb
    if not math.isfinite(depth):
        return tuple(int(c) for c in background)
    rgb = _colormap_array(np.array([float(depth)]), lo, hi)[0]
    return int(rgb[0]), int(rgb[1]), int(rgb[2])


def _colormap_array(depth, lo, hi):
    t = np.clip((depth - lo) / (hi - lo), 0.0, 1.0)
    out = np.empty(t.shape + (3,), dtype=np.float64)
    low = t <= 0.5
    for ch in range(3):
        s0, s1, s2 = _COLOR_STOPS[0, ch], _COLOR_STOPS[1, ch], _COLOR_STOPS[2, ch]
        out[..., ch] = np.where(low,
                                s0 + (s1 - s0) * (2.0 * t),
                                s1 + (s2 - s1) * (2.0 * t - 1.0))
    out = np.rint(out)
    np.clip(out, 0, 255, out=out)
    return out.astype(np.uint8)


def camera_ray_dirs(camera: CameraView, width: int, height: int) -> np.ndarray:
    """Normalized ray direction per pixel center, row 0 at the top."""
    right, true_up, look = camera.basis()
    tan_half = math.tan(math.radians(camera.fov_y) / 2.0)
    xs = ((np.arange(width) + 0.5) / width * 2.0 - 1.0) * tan_half * camera.aspect
    ys = (1.0 - (np.arange(height) + 0.5) / height * 2.0) * tan_half
    dirs = (look[np.newaxis, np.newaxis, :]
            + xs[np.newaxis, :, np.newaxis] * right
            + ys[:, np.newaxis, np.newaxis] * true_up)
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    return dirs


class _LayerResolve:
    """Per-pixel outcome of casting one layer through all cascades."""

    def __init__(self, n):
        self.hit = np.zeros(n, dtype=bool)
        self.t = np.full(n, np.inf)
        self.near = np.full(n, -1, dtype=np.int32)   # cascade list index
        self.far = np.full(n, -1, dtype=np.int32)    # blend partner or -1
        self.w = np.zeros(n)
        self.raw = {}                                # k -> per-cascade arrays


def _batch_traverse(raster, mipmap, origin, dirs):
    layout = raster.layout
    vr = raster.valid_range(mipmap.layer)
    n = len(dirs)
    out = (np.zeros(n, dtype=np.uint8), np.zeros(n),
           np.full(n, -1, dtype=np.int32), np.full(n, -1, dtype=np.int32),
           np.zeros(n), np.zeros(n))
    if vr is None:
        return out
    s = layout.texel_size
    rx = np.full(n, (origin[0] - layout.world_origin[0]) / s)
    ry = np.full(n, (origin[1] - layout.world_origin[1]) / s)
    rz = np.full(n, origin[2])
    dx = np.ascontiguousarray(dirs[:, 0]) / s
    dy = np.ascontiguousarray(dirs[:, 1]) / s
    dz = np.ascontiguousarray(dirs[:, 2])
    _kernels.traverse_batch(
        raster.layer(mipmap.layer), raster.valid,
        mipmap._flat, mipmap._off, mipmap._w, mipmap._h, mipmap.n_levels,
        layout.resolution - 1, rx, ry, rz, dx, dy, dz, vr[0], vr[1],
        out[0], out[1], out[2], out[3], out[4], out[5])
    return out


def _resolve_layer(origin, dirs, rasters, mipmaps, layouts) -> _LayerResolve:
    """Vectorized equivalent of `cast_through_cascades` over all pixels."""
    n = len(dirs)
    res = _LayerResolve(n)
    active = [k for k in range(len(layouts))
              if layouts[k] is not None and rasters[k] is not None]
    for k in active:
        res.raw[k] = _batch_traverse(rasters[k], mipmaps[k], origin, dirs)

    unresolved = np.ones(n, dtype=bool)
    for pos, k in enumerate(active):
        hit_k = res.raw[k][0].astype(bool) & unresolved
        if not hit_k.any():
            continue
        t_k = res.raw[k][1]
        res.hit |= hit_k
        res.t[hit_k] = t_k[hit_k]
        res.near[hit_k] = k
        unresolved &= ~hit_k

        if pos + 1 < len(active) and active[pos + 1] == k + 1:
            nk = k + 1
            ov_lo = layouts[nk].polygon.near_offset
            ov_hi = layouts[k].polygon.far_offset
            if ov_hi > ov_lo:
                axis = layouts[k].polygon.axis
                hx = origin[0] + t_k * dirs[:, 0]
                hy = origin[1] + t_k * dirs[:, 1]
                off = ((hx - axis.anchor[0]) * axis.direction[0]
                       + (hy - axis.anchor[1]) * axis.direction[1])
                blend = (hit_k & (off >= ov_lo) & (off <= ov_hi)
                         & res.raw[nk][0].astype(bool))
                if blend.any():
                    w = (off[blend] - ov_lo) / (ov_hi - ov_lo)
                    res.far[blend] = nk
                    res.w[blend] = w
                    res.t[blend] = (1.0 - w) * t_k[blend] + w * res.raw[nk][1][blend]
    return res


def _gradients(raster, layer, raw, sel):
    """World-space (dz/dx, dz/dy) of the hit patches for `sel` pixels."""
    _, _, ix, iy, u, v = raw
    ix, iy, u, v = ix[sel], iy[sel], u[sel], v[sel]
    hh = raster.layer(layer)
    h00 = hh[iy, ix]
    h10 = hh[iy, ix + 1]
    h01 = hh[iy + 1, ix]
    h11 = hh[iy + 1, ix + 1]
    s = raster.layout.texel_size
    gx = ((h10 - h00) * (1.0 - v) + (h11 - h01) * v) / s
    gy = ((h01 - h00) * (1.0 - u) + (h11 - h10) * u) / s
    return gx, gy


def bilinear_sample(values: np.ndarray, layout, x, y):
    """Bilinear fetch of a raster layer at world positions (vectorized)."""
    s = layout.texel_size
    qx = np.clip((x - layout.world_origin[0]) / s, 0.0, layout.resolution - 1.0)
    qy = np.clip((y - layout.world_origin[1]) / s, 0.0, layout.resolution - 1.0)
    i = np.minimum(qx.astype(np.int64), layout.resolution - 2)
    j = np.minimum(qy.astype(np.int64), layout.resolution - 2)
    fu = qx - i
    fv = qy - j
    return ((values[j, i] * (1 - fu) + values[j, i + 1] * fu) * (1 - fv)
            + (values[j + 1, i] * (1 - fu) + values[j + 1, i + 1] * fu) * fv)


def render_frame(config: FrameConfig, grid: AdaptiveGrid, table: InfluenceTable,
                 params: RbfParams, settings: CascadeSettings = CascadeSettings(),
                 debug: bool = False) -> Frame:
    """Render one frame; see the module docstring for the pipeline."""
    h, w = config.height, config.width
    background = np.array(config.background, dtype=np.uint8)
    pixels = np.empty((h, w, 3), dtype=np.uint8)
    pixels[:] = background

    try:
        hull, polygons, layouts = plan_cascades(
            config.camera, grid, settings.resolution, settings.overlap)
    except NothingVisibleError:
        return Frame(pixels, 0.0, 0.0, 0, 0, visible=False,
                     debug={"visible": False} if debug else None)

    t0 = time.perf_counter()
    rasters = [discretize_cascade(l, grid, table, params) if l is not None else None
               for l in layouts]
    approximation_ms = (time.perf_counter() - t0) * 1000.0

    t1 = time.perf_counter()
    mips = {layer: [build_max_mipmap(r, layer) if r is not None else None
                    for r in rasters]
            for layer in ("terrain", "water")}

    origin = np.asarray(config.camera.eye, dtype=np.float64)
    dirs = camera_ray_dirs(config.camera, w, h).reshape(-1, 3)

    terrain = _resolve_layer(origin, dirs, rasters, mips["terrain"], layouts)
    water = _resolve_layer(origin, dirs, rasters, mips["water"], layouts)

    flat = pixels.reshape(-1, 3)
    t_shade = _shade_terrain(terrain, rasters, grid, origin, dirs)
    w_shade, w_depth = _shade_water(water, rasters, config, origin, dirs)

    use_water = water.hit & (water.t < terrain.t)
    use_terrain = terrain.hit & ~use_water
    flat[use_terrain] = t_shade[use_terrain]
    flat[use_water] = w_shade[use_water]

    raycast_ms = (time.perf_counter() - t1) * 1000.0
    visible_texels = int(sum(l.mask.sum() for l in layouts if l is not None))
    rays_hit = int((terrain.hit | water.hit).sum())

    dbg = None
    if debug:
        dbg = {"visible": True, "layouts": layouts, "rasters": rasters,
               "terrain": terrain, "water": water, "dirs": dirs,
               "water_depth": w_depth, "polygons": polygons, "hull": hull}
    return Frame(pixels, approximation_ms, raycast_ms, visible_texels,
                 rays_hit, debug=dbg)


def _blended_field(resolve, rasters, layer, compute):
    """Evaluate `compute(raster, raw, sel)` per cascade and blend overlaps.

    `compute` returns a tuple of arrays for the selected pixels; each is
    combined as (1-w)*near + w*far for blended pixels.
    """
    n = len(resolve.hit)
    parts = None
    for k, raw in resolve.raw.items():
        near_sel = resolve.hit & (resolve.near == k)
        far_sel = resolve.hit & (resolve.far == k)
        for sel, weight_of in ((near_sel, lambda s: 1.0 - resolve.w[s]),
                               (far_sel, lambda s: resolve.w[s])):
            if not sel.any():
                continue
            vals = compute(rasters[k], raw, sel)
            if parts is None:
                parts = [np.zeros(n) for _ in vals]
            # unblended pixels take the single value at full weight
            ww = np.where(resolve.far[sel] >= 0, weight_of(sel), 1.0)
            for arr, val in zip(parts, vals):
                arr[sel] += ww * val
    if parts is None:
        parts = [np.zeros(n)]
    return parts


def _shade_terrain(resolve, rasters, grid, origin, dirs):
    n = len(resolve.hit)
    shade = np.zeros((n, 3), dtype=np.uint8)
    if not resolve.hit.any():
        return shade
    (gx, gy) = _blended_field(resolve, rasters, "terrain",
                              lambda r, raw, sel: _gradients(r, "terrain", raw, sel))[:2]
    z = origin[2] + resolve.t * dirs[:, 2]
    lo, hi = grid.height_range
    span = max(hi - lo, 1e-9)
    sel = resolve.hit
    nx, ny, nz = -gx[sel], -gy[sel], np.ones(sel.sum())
    norm = np.sqrt(nx * nx + ny * ny + nz * nz)
    ndotl = np.maximum(
        (nx * _LIGHT_DIR[0] + ny * _LIGHT_DIR[1] + nz * _LIGHT_DIR[2]) / norm, 0.0)
    rel = np.clip((z[sel] - lo) / span, 0.0, 1.0)
    albedo = 0.30 + 0.55 * rel
    intensity = np.clip(albedo * (0.25 + 0.75 * ndotl), 0.0, 1.0)
    gray = np.rint(intensity * 255.0).astype(np.uint8)
    shade[sel] = gray[:, np.newaxis]
    return shade


def _shade_water(resolve, rasters, config, origin, dirs):
    n = len(resolve.hit)
    shade = np.zeros((n, 3), dtype=np.uint8)
    depth = np.full(n, np.nan)
    if not resolve.hit.any():
        return shade, depth

    def depth_at(raster, raw, sel):
        t = raw[1][sel]
        x = origin[0] + t * dirs[sel, 0]
        y = origin[1] + t * dirs[sel, 1]
        z = origin[2] + t * dirs[sel, 2]
        terr = bilinear_sample(raster.layer("terrain"), raster.layout, x, y)
        return (z - terr,)

    depth_sum = _blended_field(resolve, rasters, "water", depth_at)[0]
    sel = resolve.hit
    depth[sel] = depth_sum[sel]
    shade[sel] = depth_colormap(depth[sel], config.colormap_range,
                                config.background)
    return shade, depth


def write_ppm(pixels: np.ndarray, target) -> None:
    """Write an (H, W, 3) uint8 image as binary PPM (P6, maxval 255)."""
    h, w = pixels.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    if hasattr(target, "write"):
        target.write(header)
        target.write(pixels.astype(np.uint8).tobytes())
    else:
        with open(target, "wb") as fh:
            fh.write(header)
            fh.write(pixels.astype(np.uint8).tobytes())
