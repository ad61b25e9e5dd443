"""Compiled ray traversal kernels.

Rays are traversed in raster coordinates (one bilinear patch per unit
square, the ray parameter t stays in world units). Traversal walks the
maximum mipmap iteratively with an explicit level cursor: descend when
the ray segment over a node may reach the node's stored maximum, step to
the next node otherwise, ascend one level after every step. A node is
skipped only when the ray segment over its footprint lies strictly above
the node maximum. Patches with any invalid corner never produce hits.

Cell coordinates are tracked as integers and advanced wall-by-wall, so
traversal terminates and visits cells in strict ray order regardless of
floating-point dust on crossing times.

The quadratic patch intersection here must stay formula-identical to
`raycast._patch_roots`; both re-anchor the ray at the segment start to
keep the coefficients well conditioned.
"""

import numpy as np
from numba import njit, prange

_FAR = 1e300


@njit(cache=True, inline="always")
def _patch_hit(h00, h10, h01, h11, u0, v0, du, dv, z0, dz, seg_len):
    """First surface crossing within [0, seg_len] of the re-anchored ray.

    (u0, v0, z0) is the ray state at segment start, patch-local.
    Returns (found, tau, u, v).
    """
    e10 = h10 - h00
    e01 = h01 - h00
    kk = h11 - h10 - h01 + h00
    a = du * dv * kk
    b = du * e10 + dv * e01 + kk * (u0 * dv + v0 * du) - dz
    c = h00 + u0 * e10 + v0 * e01 + kk * u0 * v0 - z0

    r1 = _FAR
    r2 = _FAR
    if abs(a) < 1e-12 * abs(b):
        if b != 0.0:
            r1 = -c / b
    else:
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            sq = np.sqrt(disc)
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
            u = u0 + tau * du
            v = v0 + tau * dv
            if u < 0.0:
                u = 0.0
            elif u > 1.0:
                u = 1.0
            if v < 0.0:
                v = 0.0
            elif v > 1.0:
                v = 1.0
            return True, tau, u, v
    return False, 0.0, 0.0, 0.0


@njit(cache=True)
def traverse_single(heights, valid, mflat, moff, mw, mh, nlev, n0,
                    rx, ry, rz, dx, dy, dz, hmin, hmax):
    """Trace one ray through one raster. Returns (hit, t, ix, iy, u, v)."""
    # clip to the patch-grid footprint and the valid height slab
    t0 = 0.0
    t1 = _FAR
    fn0 = float(n0)
    if dx != 0.0:
        ta = (0.0 - rx) / dx
        tb = (fn0 - rx) / dx
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
    elif rx < 0.0 or rx > fn0:
        return False, 0.0, -1, -1, 0.0, 0.0
    if dy != 0.0:
        ta = (0.0 - ry) / dy
        tb = (fn0 - ry) / dy
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
    elif ry < 0.0 or ry > fn0:
        return False, 0.0, -1, -1, 0.0, 0.0
    if dz != 0.0:
        ta = (hmin - rz) / dz
        tb = (hmax - rz) / dz
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
    elif rz < hmin or rz > hmax:
        return False, 0.0, -1, -1, 0.0, 0.0
    if t0 > t1:
        return False, 0.0, -1, -1, 0.0, 0.0

    px = rx + t0 * dx
    py = ry + t0 * dy
    cx = int(np.floor(px))
    cy = int(np.floor(py))
    if cx < 0:
        cx = 0
    elif cx > n0 - 1:
        cx = n0 - 1
    if cy < 0:
        cy = 0
    elif cy > n0 - 1:
        cy = n0 - 1

    t = t0
    level = nlev - 1
    while True:
        nx = cx >> level
        ny = cy >> level
        size = 1 << level
        x0 = float(nx << level)
        y0 = float(ny << level)
        x1 = x0 + size
        y1 = y0 + size

        tx = _FAR
        if dx > 0.0:
            tx = (x1 - rx) / dx
        elif dx < 0.0:
            tx = (x0 - rx) / dx
        ty = _FAR
        if dy > 0.0:
            ty = (y1 - ry) / dy
        elif dy < 0.0:
            ty = (y0 - ry) / dy
        t_wall = tx if tx <= ty else ty
        seg_end = t_wall if t_wall <= t1 else t1

        node_max = mflat[moff[level] + ny * mw[level] + nx]
        za = rz + t * dz
        zb = rz + seg_end * dz
        zmin = za if za <= zb else zb

        if zmin > node_max:
            pass                      # entirely above: skip this node
        elif level > 0:
            level -= 1                # may contain the surface: refine
            continue
        else:
            if (valid[cy, cx] and valid[cy, cx + 1]
                    and valid[cy + 1, cx] and valid[cy + 1, cx + 1]):
                h00 = heights[cy, cx]
                h10 = heights[cy, cx + 1]
                h01 = heights[cy + 1, cx]
                h11 = heights[cy + 1, cx + 1]
                u0 = (rx + t * dx) - float(cx)
                v0 = (ry + t * dy) - float(cy)
                z0 = rz + t * dz
                found, tau, u, v = _patch_hit(
                    h00, h10, h01, h11, u0, v0, dx, dy, z0, dz, seg_end - t)
                if found:
                    return True, t + tau, cx, cy, u, v

        # step across the nearest node wall
        if t_wall > t1:
            return False, 0.0, -1, -1, 0.0, 0.0
        if tx <= ty:
            t = tx
            if dx > 0.0:
                cx = (nx + 1) << level
            else:
                cx = (nx << level) - 1
            cyn = int(np.floor(ry + t * dy))
            ylo = ny << level
            yhi = ((ny + 1) << level) - 1
            if cyn < ylo:
                cyn = ylo
            elif cyn > yhi:
                cyn = yhi
            cy = cyn
        else:
            t = ty
            if dy > 0.0:
                cy = (ny + 1) << level
            else:
                cy = (ny << level) - 1
            cxn = int(np.floor(rx + t * dx))
            xlo = nx << level
            xhi = ((nx + 1) << level) - 1
            if cxn < xlo:
                cxn = xlo
            elif cxn > xhi:
                cxn = xhi
            cx = cxn
        if cx < 0 or cx > n0 - 1 or cy < 0 or cy > n0 - 1 or t > t1:
            return False, 0.0, -1, -1, 0.0, 0.0
        if level < nlev - 1:
            level += 1


@njit(cache=True, parallel=True)
def traverse_batch(heights, valid, mflat, moff, mw, mh, nlev, n0,
                   rx, ry, rz, dx, dy, dz, hmin, hmax,
                   out_hit, out_t, out_ix, out_iy, out_u, out_v):
    """Trace many rays; each lane writes only its own outputs."""
    for i in prange(rx.shape[0]):
        hit, t, ix, iy, u, v = traverse_single(
            heights, valid, mflat, moff, mw, mh, nlev, n0,
            rx[i], ry[i], rz[i], dx[i], dy[i], dz[i], hmin, hmax)
        out_hit[i] = 1 if hit else 0
        out_t[i] = t
        out_ix[i] = ix
        out_iy[i] = iy
        out_u[i] = u
        out_v[i] = v
