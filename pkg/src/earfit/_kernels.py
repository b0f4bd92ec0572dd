"""Numba kernels for the software rasterizer.

The pixel-ownership contract (shared with the brute-force test oracle, which
must reproduce it bit for bit):

  * pixel centers at (ix + 0.5, iy + 0.5);
  * edge function E(a, b, p) = (bx-ax)*(py-ay) - (by-ay)*(px-ax);
  * a triangle is degenerate and skipped when |E(v0, v1, v2)| <= 1e-12;
  * orientation-corrected weights w_i = E(opposite edge, p) * orient with
    orient = sign(E(v0, v1, v2));
  * a pixel is covered when every w_i > 0, or w_i == 0 and the (orientation
    corrected) edge satisfies the boundary rule
    (ay == by and bx > ax) or (by > ay), which assigns each shared edge to
    exactly one of its two triangles;
  * barycentric weights are w_i / |E(v0, v1, v2)|, fragment depth is their
    dot product with vertex depths, and the z-buffer keeps the strictly
    smallest depth (first triangle in index order wins ties).
"""

import numpy as np
from numba import njit

DEGENERATE_AREA = 1e-12


@njit(cache=True)
def _boundary_owned(ax, ay, bx, by):
    # Top-left style rule: true for exactly one direction of every edge.
    return (ay == by and bx > ax) or (by > ay)


@njit(cache=True)
def rasterize_kernel(v, depth, tris, height, width):
    """Hard z-buffered rasterization.

    Returns (tri_id, bary, zbuf): winning triangle index per pixel (-1 where
    uncovered), its barycentric weights, and the interpolated depth.
    """
    tri_id = np.full((height, width), -1, np.int32)
    zbuf = np.full((height, width), np.inf, np.float64)
    bary = np.zeros((height, width, 3), np.float64)
    for f in range(tris.shape[0]):
        i0, i1, i2 = tris[f, 0], tris[f, 1], tris[f, 2]
        x0, y0 = v[i0, 0], v[i0, 1]
        x1, y1 = v[i1, 0], v[i1, 1]
        x2, y2 = v[i2, 0], v[i2, 1]
        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if abs(area2) <= DEGENERATE_AREA:
            continue
        orient = 1.0 if area2 > 0.0 else -1.0
        abs_area2 = area2 * orient
        z0, z1, z2 = depth[i0], depth[i1], depth[i2]

        xmin = min(x0, min(x1, x2))
        xmax = max(x0, max(x1, x2))
        ymin = min(y0, min(y1, y2))
        ymax = max(y0, max(y1, y2))
        ix_lo = max(0, int(np.ceil(xmin - 0.5)))
        ix_hi = min(width - 1, int(np.floor(xmax - 0.5)))
        iy_lo = max(0, int(np.ceil(ymin - 0.5)))
        iy_hi = min(height - 1, int(np.floor(ymax - 0.5)))

        for iy in range(iy_lo, iy_hi + 1):
            py = iy + 0.5
            for ix in range(ix_lo, ix_hi + 1):
                px = ix + 0.5
                w0 = ((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)) * orient
                w1 = ((x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)) * orient
                w2 = ((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)) * orient
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                if w0 == 0.0:
                    owned = _boundary_owned(x1, y1, x2, y2) if orient > 0.0 else _boundary_owned(x2, y2, x1, y1)
                    if not owned:
                        continue
                if w1 == 0.0:
                    owned = _boundary_owned(x2, y2, x0, y0) if orient > 0.0 else _boundary_owned(x0, y0, x2, y2)
                    if not owned:
                        continue
                if w2 == 0.0:
                    owned = _boundary_owned(x0, y0, x1, y1) if orient > 0.0 else _boundary_owned(x1, y1, x0, y0)
                    if not owned:
                        continue
                b0 = w0 / abs_area2
                b1 = w1 / abs_area2
                b2 = w2 / abs_area2
                z = b0 * z0 + b1 * z1 + b2 * z2
                if z < zbuf[iy, ix]:
                    zbuf[iy, ix] = z
                    tri_id[iy, ix] = f
                    bary[iy, ix, 0] = b0
                    bary[iy, ix, 1] = b1
                    bary[iy, ix, 2] = b2
    return tri_id, bary, zbuf


@njit(cache=True)
def silhouette_distance_kernel(v, edge_a, edge_b, band, height, width):
    """Per-pixel distance to the nearest silhouette edge within ``band`` pixels.

    Returns (dist, edge_id, t): unsigned distance (inf outside the band), the
    index of the nearest edge (-1 outside the band) and the clamped
    projection parameter along that edge.
    """
    dist = np.full((height, width), np.inf, np.float64)
    edge_id = np.full((height, width), -1, np.int32)
    tpar = np.zeros((height, width), np.float64)
    for e in range(edge_a.shape[0]):
        ax, ay = v[edge_a[e], 0], v[edge_a[e], 1]
        bx, by = v[edge_b[e], 0], v[edge_b[e], 1]
        ex = bx - ax
        ey = by - ay
        ee = ex * ex + ey * ey
        ix_lo = max(0, int(np.ceil(min(ax, bx) - band - 0.5)))
        ix_hi = min(width - 1, int(np.floor(max(ax, bx) + band - 0.5)))
        iy_lo = max(0, int(np.ceil(min(ay, by) - band - 0.5)))
        iy_hi = min(height - 1, int(np.floor(max(ay, by) + band - 0.5)))
        for iy in range(iy_lo, iy_hi + 1):
            py = iy + 0.5
            for ix in range(ix_lo, ix_hi + 1):
                px = ix + 0.5
                if ee < 1e-24:
                    t = 0.0
                else:
                    t = ((px - ax) * ex + (py - ay) * ey) / ee
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                dx = px - (ax + t * ex)
                dy = py - (ay + t * ey)
                d = np.sqrt(dx * dx + dy * dy)
                if d <= band and d < dist[iy, ix]:
                    dist[iy, ix] = d
                    edge_id[iy, ix] = e
                    tpar[iy, ix] = t
    return dist, edge_id, tpar
