"""View-dependent cascade planning.

Per frame, the potentially visible ground area is the 2D convex hull of
the frustum/heightfield-box intersection volume projected onto the ground
plane. That hull is split along the projected view direction into three
depth ranges (logarithmic splits, near ranges small), clipped into three
convex polygons that overlap by a configurable distance, and each polygon
is fitted into a square raster.

Fitting rules keep sampling positions temporally stable: the polygon's
bounding box is widened per axis to an even multiple of the grid's
minimum cell size, the texel size is an integer fraction (or multiple) of
that minimum cell size, and the box origin is snapped to the texel
lattice anchored at the world origin. Texel centers therefore always lie
on one fixed world lattice modulo the minimum cell size, no matter how
the camera moves, and all widened-box corners land exactly on texel
centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import AdaptiveGrid


class NothingVisibleError(RuntimeError):
    """The view frustum does not intersect the heightfield volume."""


# ---------------------------------------------------------------------------
# camera


@dataclass(frozen=True)
class CameraView:
    """Perspective camera. Vectors are normalized on construction."""

    eye: tuple[float, float, float]
    look_dir: tuple[float, float, float]
    up: tuple[float, float, float]
    fov_y: float            # vertical field of view, degrees
    aspect: float           # width / height
    near_clip: float
    far_clip: float

    def __post_init__(self):
        if not 0.0 < self.fov_y < 180.0:
            raise ValueError("fov_y must be in (0, 180) degrees")
        if self.near_clip <= 0.0:
            raise ValueError("near_clip must be positive")
        if self.far_clip <= self.near_clip:
            raise ValueError("far_clip must exceed near_clip")
        if self.aspect <= 0.0:
            raise ValueError("aspect must be positive")
        look = _unit(np.asarray(self.look_dir, dtype=np.float64))
        up = _unit(np.asarray(self.up, dtype=np.float64))
        if np.linalg.norm(np.cross(look, up)) < 1e-9:
            raise ValueError("look_dir and up are parallel")
        object.__setattr__(self, "look_dir", tuple(look))
        object.__setattr__(self, "up", tuple(up))

    def basis(self):
        """Right-handed camera basis (right, true_up, look)."""
        look = np.asarray(self.look_dir)
        right = _unit(np.cross(look, np.asarray(self.up)))
        true_up = np.cross(right, look)
        return right, true_up, look

    def frustum_corners(self) -> np.ndarray:
        """(8, 3) corners: near quad then far quad, each CCW seen from eye."""
        eye = np.asarray(self.eye, dtype=np.float64)
        right, true_up, look = self.basis()
        tan_half = math.tan(math.radians(self.fov_y) / 2.0)
        out = np.empty((8, 3))
        for qi, dist in enumerate((self.near_clip, self.far_clip)):
            c = eye + dist * look
            hh = dist * tan_half
            hw = hh * self.aspect
            out[4 * qi + 0] = c - hw * right + hh * true_up
            out[4 * qi + 1] = c + hw * right + hh * true_up
            out[4 * qi + 2] = c + hw * right - hh * true_up
            out[4 * qi + 3] = c - hw * right - hh * true_up
        return out


def _unit(v):
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero-length vector")
    return v / n


def view_axis_2d(camera: CameraView) -> np.ndarray:
    """Unit 2D projection of the view direction onto the ground plane.

    A camera looking straight down has no meaningful projection; the
    projected up vector is substituted to keep the result deterministic.
    """
    v = np.asarray(camera.look_dir[:2], dtype=np.float64)
    if np.linalg.norm(v) < 1e-6:
        v = np.asarray(camera.up[:2], dtype=np.float64)
    if np.linalg.norm(v) < 1e-12:
        v = np.array([1.0, 0.0])
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# visible hull


_FRUSTUM_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 0),          # near ring
    (4, 5), (5, 6), (6, 7), (7, 4),          # far ring
    (0, 4), (1, 5), (2, 6), (3, 7),          # sides
)


def _frustum_planes(camera: CameraView, corners: np.ndarray):
    """Inward-facing (normal, point) pairs for the 6 frustum planes."""
    eye = np.asarray(camera.eye, dtype=np.float64)
    look = np.asarray(camera.look_dir, dtype=np.float64)
    planes = [(look, corners[0]), (-look, corners[4])]
    far = corners[4:]
    for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
        n = np.cross(far[a] - eye, far[b] - eye)
        n = n / np.linalg.norm(n)
        if np.dot(n, look) < 0:
            n = -n
        planes.append((n, eye))
    return planes


def _box_corners(rect, zlo, zhi) -> np.ndarray:
    xs = (rect.xmin, rect.xmax)
    ys = (rect.ymin, rect.ymax)
    return np.array([(x, y, z) for z in (zlo, zhi) for y in ys for x in xs])


_BOX_EDGES = (
    (0, 1), (2, 3), (0, 2), (1, 3),
    (4, 5), (6, 7), (4, 6), (5, 7),
    (0, 4), (1, 5), (2, 6), (3, 7),
)


def visible_hull(camera: CameraView, grid: AdaptiveGrid) -> np.ndarray:
    """CCW 2D convex hull of the visible part of the heightfield volume.

    The frustum is intersected with the heightfield bounding box (domain
    rectangle times height range) and all vertices of the intersection
    volume are projected straight down. Raises NothingVisibleError when
    the volume is empty or degenerate.
    """
    zlo, zhi = grid.height_range
    if zhi <= zlo:
        zhi = zlo + 1e-6
    box = _box_corners(grid.domain, zlo, zhi)
    fru = camera.frustum_corners()
    planes = _frustum_planes(camera, fru)
    d = grid.domain

    scale = max(1.0, camera.far_clip, d.width, d.height, zhi - zlo)
    eps = 1e-9 * scale

    def in_box(p):
        return (d.xmin - eps <= p[0] <= d.xmax + eps
                and d.ymin - eps <= p[1] <= d.ymax + eps
                and zlo - eps <= p[2] <= zhi + eps)

    def in_frustum(p):
        return all(np.dot(n, p - q) >= -eps for n, q in planes)

    pts = [p for p in fru if in_box(p)]
    pts += [p for p in box if in_frustum(p)]

    # frustum edges against box faces
    for a, b in _FRUSTUM_EDGES:
        pts += _edge_box_crossings(fru[a], fru[b], d, zlo, zhi, in_frustum, eps)
    # box edges against frustum planes
    for a, b in _BOX_EDGES:
        pa, pb = box[a], box[b]
        seg = pb - pa
        for n, q in planes:
            denom = np.dot(n, seg)
            if abs(denom) < 1e-15 * scale:
                continue
            t = np.dot(n, q - pa) / denom
            if -1e-12 <= t <= 1.0 + 1e-12:
                p = pa + t * seg
                if in_box(p) and in_frustum(p):
                    pts.append(p)

    if not pts:
        raise NothingVisibleError("view frustum misses the heightfield volume")
    hull = convex_hull_2d(np.asarray(pts)[:, :2])
    if len(hull) < 3 or polygon_area(hull) <= (1e-9 * scale) ** 2:
        raise NothingVisibleError("visible area is degenerate")
    return hull


def _edge_box_crossings(pa, pb, rect, zlo, zhi, in_frustum, eps):
    out = []
    seg = pb - pa
    bounds = ((0, rect.xmin), (0, rect.xmax), (1, rect.ymin), (1, rect.ymax),
              (2, zlo), (2, zhi))
    for axis, val in bounds:
        if abs(seg[axis]) < 1e-300:
            continue
        t = (val - pa[axis]) / seg[axis]
        if -1e-12 <= t <= 1.0 + 1e-12:
            p = pa + t * seg
            if (rect.xmin - eps <= p[0] <= rect.xmax + eps
                    and rect.ymin - eps <= p[1] <= rect.ymax + eps
                    and zlo - eps <= p[2] <= zhi + eps
                    and in_frustum(p)):
                out.append(p)
    return out


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, CCW, no repeated endpoint."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(seq):
        chain = []
        for p in seq:
            while len(chain) >= 2 and _cross2(chain[-1] - chain[-2], p - chain[-2]) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    return np.asarray(lower[:-1] + upper[:-1])


def _cross2(a, b):
    return a[0] * b[1] - a[1] * b[0]


def polygon_area(poly: np.ndarray) -> float:
    """Signed area (positive for CCW)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_contains(poly: np.ndarray, point, slack: float = 0.0) -> bool:
    """Point-in-convex-CCW-polygon test, dilated outward by `slack`."""
    p = np.asarray(point, dtype=np.float64)
    for i in range(len(poly)):
        a = poly[i]
        b = poly[(i + 1) % len(poly)]
        e = b - a
        if _cross2(e, p - a) < -slack * math.hypot(e[0], e[1]):
            return False
    return True


# ---------------------------------------------------------------------------
# depth splits and cascade polygons


@dataclass(frozen=True)
class ViewAxis:
    """Scalar offsets along the projected view direction from an anchor."""

    anchor: tuple[float, float]
    direction: tuple[float, float]   # unit 2D vector

    def offset_of(self, points):
        p = np.asarray(points, dtype=np.float64)
        d = np.asarray(self.direction)
        a = np.asarray(self.anchor)
        if p.ndim == 1:
            return float((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1])
        return (p[:, 0] - a[0]) * d[0] + (p[:, 1] - a[1]) * d[1]


@dataclass
class CascadePolygon:
    """Convex CCW clip region of one cascade with its depth range."""

    vertices: np.ndarray
    near_offset: float
    far_offset: float
    axis: ViewAxis


def split_depths(near_d: float, far_d: float) -> tuple[float, float]:
    """Logarithmic two-split of a positive depth range.

    Returns (d1, d2) with d1 = n * (f/n)^(1/3) and d2 = n * (f/n)^(2/3),
    computed via an exact cube root so perfect cubes split exactly.
    """
    if not 0.0 < near_d < far_d:
        raise ValueError("need 0 < near < far")
    r = float(np.cbrt(far_d / near_d))
    return near_d * r, near_d * r * r


def clip_cascade_polygons(hull: np.ndarray, view_dir_2d, overlap: float,
                          eye_2d) -> list[CascadePolygon | None]:
    """Split the hull into three overlapping cascade polygons.

    Depth offsets are measured along `view_dir_2d` from the camera's
    ground projection `eye_2d`. Cascade k is the hull clipped to
    [near_k, far_k] where near_1 and far_3 are the hull extremes, the
    interior bounds come from logarithmic splits, and the far bound of
    cascades 1 and 2 is pushed out by `overlap` so neighbors share a
    band. Empty results are returned as None (possible only as a suffix).
    """
    if overlap < 0:
        raise ValueError("overlap must be non-negative")
    d = np.asarray(view_dir_2d, dtype=np.float64)
    axis = ViewAxis(anchor=(float(eye_2d[0]), float(eye_2d[1])),
                    direction=tuple(d / np.linalg.norm(d)))
    offsets = axis.offset_of(hull)
    near, far = float(offsets.min()), float(offsets.max())
    span = far - near

    if span <= max(1e-9, 1e-12 * abs(far)):
        single = CascadePolygon(hull.copy(), near, far, axis)
        return [single, None, None]
    if far <= 0.0:
        # camera facing away from its own ground projection: logarithmic
        # splits are undefined, fall back to uniform thirds
        d1 = near + span / 3.0
        d2 = near + 2.0 * span / 3.0
    else:
        n_eff = max(near, 1e-3 * far)
        if n_eff >= far:
            single = CascadePolygon(hull.copy(), near, far, axis)
            return [single, None, None]
        d1, d2 = split_depths(n_eff, far)

    ranges = ((near, d1 + overlap), (d1, d2 + overlap), (d2, far))
    hull_area = polygon_area(hull)
    out: list[CascadePolygon | None] = []
    for k, (lo, hi) in enumerate(ranges):
        poly = hull
        if k > 0:
            poly = _clip_halfplane(poly, axis, lo, keep_above=True)
        if k < 2 and len(poly) >= 3:
            poly = _clip_halfplane(poly, axis, hi, keep_above=False)
        if len(poly) < 3 or abs(polygon_area(poly)) <= 1e-12 * hull_area:
            out.append(None)
        else:
            out.append(CascadePolygon(poly, lo, hi, axis))
    # a hole in the middle cannot happen geometrically; normalize any
    # floating-point fluke so active cascades form a prefix
    for k in range(1, 3):
        if out[k - 1] is None:
            out[k] = None
    return out


def _clip_halfplane(poly: np.ndarray, axis: ViewAxis, threshold: float,
                    keep_above: bool) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon against an offset line."""
    if len(poly) == 0:
        return poly
    s = axis.offset_of(poly) - threshold
    if not keep_above:
        s = -s
    out = []
    m = len(poly)
    for i in range(m):
        j = (i + 1) % m
        a, b = poly[i], poly[j]
        sa, sb = s[i], s[j]
        if sa >= 0.0:
            out.append(a)
        if (sa > 0.0) != (sb > 0.0) and sa != sb:
            t = sa / (sa - sb)
            if 0.0 < t < 1.0:
                out.append(a + t * (b - a))
    if len(out) < 3:
        return np.empty((0, 2))
    return np.asarray(out)


# ---------------------------------------------------------------------------
# layout fitting


@dataclass
class CascadeLayout:
    """World-to-raster mapping of one cascade plus its visibility mask.

    Texel (ix, iy) has its center at world_origin + (ix, iy)*texel_size.
    The widened polygon bounding box spans `box_steps` texel steps per
    axis starting at texel index `box_texel`; all four corners coincide
    with texel centers.
    """

    index: int
    polygon: CascadePolygon
    world_origin: np.ndarray
    texel_size: float
    resolution: int
    mask: np.ndarray = field(repr=False)
    box_texel: tuple[int, int] = (0, 0)
    box_steps: tuple[int, int] = (0, 0)

    def widened_box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.world_origin + np.asarray(self.box_texel) * self.texel_size
        hi = lo + np.asarray(self.box_steps) * self.texel_size
        return lo, hi

    def texel_centers_x(self) -> np.ndarray:
        return self.world_origin[0] + np.arange(self.resolution) * self.texel_size

    def texel_centers_y(self) -> np.ndarray:
        return self.world_origin[1] + np.arange(self.resolution) * self.texel_size


def _even_cells(span: float, mc: float) -> int:
    """Smallest even multiple of mc covering span, as a cell count."""
    return 2 * max(1, math.ceil(span / (2.0 * mc) - 1e-9))


def _lift_even_multiple(u: int, q: int) -> int:
    """Smallest even integer >= u that is divisible by q."""
    if q % 2 == 0:
        return q * math.ceil(u / q)
    return 2 * q * math.ceil(u / (2 * q))


def fit_layout(polygon: CascadePolygon, resolution: int, min_cell: float,
               min_texel_size: float | None = None) -> CascadeLayout:
    """Fit a cascade polygon into a square raster.

    The polygon bounding box is widened per axis to the smallest even
    multiple of `min_cell` that contains it (symmetrically about the box
    center), then positioned on the texel lattice. The texel size is
    min_cell/m for the largest integer m that still fits the box into the
    raster, or an integer multiple of min_cell when the box is larger
    than the raster can cover at min_cell resolution. `min_texel_size`
    forces at least that texel size so later cascades never get finer.

    The mask marks texels whose center lies inside the polygon dilated
    outward by one texel size, so every texel whose square touches the
    polygon is marked.
    """
    if resolution < 4:
        raise ValueError("resolution must be at least 4")
    verts = polygon.vertices
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    mc = float(min_cell)

    ux = _even_cells(float(hi[0] - lo[0]), mc)
    uy = _even_cells(float(hi[1] - lo[1]), mc)
    usable = resolution - 2            # leave a spare texel for snapping
    a2 = max(ux, uy)

    m = usable // a2 if a2 <= usable else 0
    if min_texel_size is not None and m >= 1:
        m_cap = int(mc / min_texel_size + 1e-9)
        m = min(m, m_cap)              # 0 switches to the coarse branch

    if m >= 1:
        texel = mc / m
        steps = (ux * m, uy * m)
        widened = (ux * mc, uy * mc)
    else:
        q = max(1, math.ceil(a2 / usable))
        if min_texel_size is not None:
            q = max(q, math.ceil(min_texel_size / mc - 1e-9))
        while True:
            lx = _lift_even_multiple(ux, q)
            ly = _lift_even_multiple(uy, q)
            if max(lx, ly) // q <= usable:
                break
            q += 1
        texel = q * mc
        steps = (lx // q, ly // q)
        widened = (lx * mc, ly * mc)

    origin = np.empty(2)
    box_texel = [0, 0]
    for ax in range(2):
        center = 0.5 * (float(lo[ax]) + float(hi[ax]))
        raw_min = center - widened[ax] / 2.0
        base = math.floor(raw_min / texel) * texel
        spare = (resolution - 1) - steps[ax]
        pad = spare // 2
        origin[ax] = base - pad * texel
        box_texel[ax] = pad

    mask = _visibility_mask(polygon.vertices, origin, texel, resolution)
    return CascadeLayout(index=0, polygon=polygon, world_origin=origin,
                         texel_size=texel, resolution=resolution, mask=mask,
                         box_texel=(box_texel[0], box_texel[1]),
                         box_steps=(steps[0], steps[1]))


def _visibility_mask(verts: np.ndarray, origin: np.ndarray, texel: float,
                     resolution: int) -> np.ndarray:
    xs = origin[0] + np.arange(resolution) * texel
    ys = origin[1] + np.arange(resolution) * texel
    px = xs[np.newaxis, :]
    py = ys[:, np.newaxis]
    mask = np.ones((resolution, resolution), dtype=bool)
    m = len(verts)
    for i in range(m):
        a = verts[i]
        b = verts[(i + 1) % m]
        ex, ey = b[0] - a[0], b[1] - a[1]
        cross = ex * (py - a[1]) - ey * (px - a[0])
        mask &= cross >= -texel * math.hypot(ex, ey)
    return mask


def fit_cascade_layouts(polygons, resolution: int, min_cell: float):
    """Fit all cascades, enforcing monotonically non-decreasing texel size."""
    layouts = []
    prev_texel = None
    for k, poly in enumerate(polygons):
        if poly is None:
            layouts.append(None)
            continue
        layout = fit_layout(poly, resolution, min_cell, min_texel_size=prev_texel)
        layout.index = k + 1
        prev_texel = layout.texel_size
        layouts.append(layout)
    return layouts


def plan_cascades(camera: CameraView, grid: AdaptiveGrid, resolution: int,
                  overlap) -> tuple[np.ndarray, list, list]:
    """Full per-frame cascade planning: hull, polygons, layouts.

    `overlap` is a distance in meters or "auto", which resolves to twice
    the texel size of the farthest active cascade (computed from a
    zero-overlap pre-pass). Raises NothingVisibleError when the frustum
    misses the heightfield.
    """
    hull = visible_hull(camera, grid)
    axis_dir = view_axis_2d(camera)
    eye_2d = np.asarray(camera.eye[:2], dtype=np.float64)

    if overlap == "auto":
        pre = clip_cascade_polygons(hull, axis_dir, 0.0, eye_2d)
        pre_layouts = fit_cascade_layouts(pre, resolution, grid.min_cell_size)
        active = [l for l in pre_layouts if l is not None]
        overlap = 2.0 * active[-1].texel_size if active else 2.0 * grid.min_cell_size
    else:
        overlap = float(overlap)

    polygons = clip_cascade_polygons(hull, axis_dir, overlap, eye_2d)
    layouts = fit_cascade_layouts(polygons, resolution, grid.min_cell_size)
    return hull, polygons, layouts


def dump_cascades(polygons, layouts, target) -> None:
    """Write cascade polygons and widened boxes as `k x y` vertex lines."""
    def emit(fh):
        fh.write("# cascade polygons\n")
        for k, poly in enumerate(polygons, start=1):
            if poly is None:
                continue
            for x, y in poly.vertices:
                fh.write(f"{k} {x!r} {y!r}\n")
        fh.write("# widened boxes\n")
        for k, layout in enumerate(layouts, start=1):
            if layout is None:
                continue
            (x0, y0), (x1, y1) = layout.widened_box()
            for x, y in ((x0, y0), (x1, y0), (x1, y1), (x0, y1)):
                fh.write(f"{k} {x!r} {y!r}\n")

    if hasattr(target, "write"):
        emit(target)
    else:
        with open(target, "w", encoding="ascii") as fh:
            emit(fh)
