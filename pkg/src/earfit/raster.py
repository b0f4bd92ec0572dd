"""Differentiable software rasterizer.

Forward model: hard z-buffered rasterization of the triangle interior
(barycentric colour interpolation, clamped to [0, 1]) combined with a soft
silhouette band.  Each pixel gets a signed distance d to the nearest
silhouette edge (positive inside the coverage, negative outside) and a
coverage weight m = sigmoid(d / edge_sigma), clipped to exactly 0 / 1 beyond
|d| >= 16 * edge_sigma.  The pixel value is m * colour + (1 - m) * background
inside the band and exactly zero where m = 0.  Pixels outside the coverage
but inside the band take the colour of the closest point on the nearest
silhouette edge, which makes the image continuous as the silhouette sweeps
across pixel centers.

The backward pass returns analytic gradients of sum(d_image * image) with
respect to 2D vertex positions and vertex colours.  Depth only enters the
hard z-buffer, so its gradient is identically zero; gradient discontinuities
at depth-order flips are documented and excluded from finite-difference
checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import DEGENERATE_AREA, rasterize_kernel, silhouette_distance_kernel
from .projection import ProjectedShape

# Sigmoid argument beyond which coverage is clipped to exactly 0 or 1.
SIGMOID_CUTOFF = 16.0


@dataclass(frozen=True)
class RasterConfig:
    width: int
    height: int
    edge_sigma: float = 1.0
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")
        if self.edge_sigma < 0:
            raise ValueError("edge_sigma must be >= 0")


@dataclass(frozen=True)
class Fragments:
    """Per-pixel records enabling the backward pass and visibility queries."""

    tri_id: np.ndarray        # (H, W) int32, -1 where uncovered
    bary: np.ndarray          # (H, W, 3) barycentric weights of the winner
    zbuf: np.ndarray          # (H, W) interpolated winner depth, inf uncovered
    sil_edges: np.ndarray     # (E, 2) silhouette edge vertex indices
    sil_dist: np.ndarray      # (H, W) distance to nearest silhouette edge
    sil_edge_id: np.ndarray   # (H, W) int32 nearest edge index, -1 outside band
    sil_t: np.ndarray         # (H, W) projection parameter along that edge


@dataclass(frozen=True)
class RasterOutput:
    image: np.ndarray         # (H, W, 3) in [0, 1]
    mask: np.ndarray          # (H, W) coverage weights in [0, 1]
    fragments: Fragments


def silhouette_edges(v: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Edges on the boundary of the projected coverage.

    An edge is a silhouette edge when it borders fewer or more than two
    non-degenerate triangles, or when its two triangles fold onto the same
    side of the edge line in 2D.
    """
    v = np.asarray(v, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    p0, p1, p2 = v[triangles[:, 0]], v[triangles[:, 1]], v[triangles[:, 2]]
    area2 = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    valid = np.abs(area2) > DEGENERATE_AREA

    edge_faces: dict[tuple[int, int], list[int]] = {}
    for f in np.nonzero(valid)[0]:
        i0, i1, i2 = triangles[f]
        for a, b in ((i0, i1), (i1, i2), (i2, i0)):
            key = (a, b) if a < b else (b, a)
            edge_faces.setdefault(key, []).append(int(f))

    sil = []
    for (a, b), faces in sorted(edge_faces.items()):
        if len(faces) != 2:
            sil.append((a, b))
            continue
        ax, ay = v[a]
        ex, ey = v[b] - v[a]
        sides = []
        for f in faces:
            third = [i for i in triangles[f] if i != a and i != b][0]
            sides.append(ex * (v[third, 1] - ay) - ey * (v[third, 0] - ax))
        if sides[0] * sides[1] >= 0:
            sil.append((a, b))
    if not sil:
        return np.zeros((0, 2), dtype=np.int64)
    return np.asarray(sil, dtype=np.int64)


def _interp_colour(colours, triangles, tri_id, bary, covered):
    safe = np.where(covered, tri_id, 0)
    i0, i1, i2 = (triangles[safe, k] for k in range(3))
    return (bary[..., 0:1] * colours[i0] + bary[..., 1:2] * colours[i1]
            + bary[..., 2:3] * colours[i2])


def rasterize(proj: ProjectedShape, colours: np.ndarray, triangles: np.ndarray,
              cfg: RasterConfig) -> RasterOutput:
    """Render a projected coloured mesh; see module docstring for the model."""
    colours = np.asarray(colours, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if colours.shape != (proj.n_vertices, 3):
        raise ValueError(f"colours must be {proj.n_vertices} x 3, got {colours.shape}")
    if not (np.all(np.isfinite(proj.v)) and np.all(np.isfinite(colours)) and np.all(np.isfinite(proj.depth))):
        raise ValueError("rasterizer inputs must be finite")
    if triangles.size and (triangles.min() < 0 or triangles.max() >= proj.n_vertices):
        raise ValueError("triangle index out of range")

    v = np.ascontiguousarray(proj.v, dtype=float)
    depth = np.ascontiguousarray(proj.depth, dtype=float)
    tri_id, bary, zbuf = rasterize_kernel(v, depth, triangles, cfg.height, cfg.width)
    covered = tri_id >= 0
    c_hat = _interp_colour(colours, triangles, tri_id, bary, covered)
    c_int = np.clip(c_hat, 0.0, 1.0)

    if cfg.edge_sigma == 0.0:
        mask = covered.astype(float)
        image = np.where(covered[..., None], c_int, 0.0)
        frag = Fragments(tri_id=tri_id, bary=bary, zbuf=zbuf,
                         sil_edges=np.zeros((0, 2), dtype=np.int64),
                         sil_dist=np.full(tri_id.shape, np.inf),
                         sil_edge_id=np.full(tri_id.shape, -1, np.int32),
                         sil_t=np.zeros(tri_id.shape))
        return RasterOutput(image=image, mask=mask, fragments=frag)

    edges = silhouette_edges(v, triangles)
    band = SIGMOID_CUTOFF * cfg.edge_sigma
    if edges.shape[0]:
        sil_dist, sil_eid, sil_t = silhouette_distance_kernel(
            v, np.ascontiguousarray(edges[:, 0]), np.ascontiguousarray(edges[:, 1]),
            band, cfg.height, cfg.width)
    else:
        sil_dist = np.full(tri_id.shape, np.inf)
        sil_eid = np.full(tri_id.shape, -1, np.int32)
        sil_t = np.zeros(tri_id.shape)

    d_signed = np.where(covered, sil_dist, -sil_dist)
    s = d_signed / cfg.edge_sigma
    mask = 1.0 / (1.0 + np.exp(-np.clip(s, -SIGMOID_CUTOFF, SIGMOID_CUTOFF)))
    mask[s >= SIGMOID_CUTOFF] = 1.0
    mask[s <= -SIGMOID_CUTOFF] = 0.0

    # Colour of the closest silhouette point, used outside the coverage.
    in_band_out = (~covered) & (sil_eid >= 0)
    c_pix = c_int.copy()
    if np.any(in_band_out):
        eid = sil_eid[in_band_out]
        a = edges[eid, 0]
        b = edges[eid, 1]
        t = sil_t[in_band_out][:, None]
        c_pix[in_band_out] = np.clip((1.0 - t) * colours[a] + t * colours[b], 0.0, 1.0)

    bg = np.asarray(cfg.background, dtype=float)
    image = mask[..., None] * c_pix + (1.0 - mask[..., None]) * bg
    image[mask == 0.0] = 0.0

    frag = Fragments(tri_id=tri_id, bary=bary, zbuf=zbuf, sil_edges=edges,
                     sil_dist=sil_dist, sil_edge_id=sil_eid, sil_t=sil_t)
    return RasterOutput(image=image, mask=mask, fragments=frag)


def _scatter(acc: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    # Deterministic scatter-add via bincount, one column at a time.
    n = acc.shape[0]
    for c in range(acc.shape[1]):
        acc[:, c] += np.bincount(idx, weights=vals[:, c], minlength=n)


def rasterize_backward(out: RasterOutput, d_image: np.ndarray, proj: ProjectedShape,
                       colours: np.ndarray, triangles: np.ndarray,
                       cfg: RasterConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of sum(d_image * image) w.r.t. vertex positions, depth, colours.

    Depth gradients are identically zero (hard z-buffer).  ``out`` must have
    been produced by :func:`rasterize` on the same inputs.
    """
    d_image = np.asarray(d_image, dtype=float)
    colours = np.asarray(colours, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    if d_image.shape != (cfg.height, cfg.width, 3):
        raise ValueError(f"d_image must be {cfg.height} x {cfg.width} x 3, got {d_image.shape}")
    if colours.shape != (proj.n_vertices, 3):
        raise ValueError("colours shape mismatch")

    n = proj.n_vertices
    d_pos = np.zeros((n, 2))
    d_col = np.zeros((n, 3))
    d_depth = np.zeros(n)

    frag = out.fragments
    v = proj.v
    bg = np.asarray(cfg.background, dtype=float)
    covered = frag.tri_id >= 0

    # ---- interior term: barycentric interpolation inside covered pixels ----
    ys, xs = np.nonzero(covered)
    if ys.size:
        f = frag.tri_id[ys, xs]
        i0, i1, i2 = triangles[f, 0], triangles[f, 1], triangles[f, 2]
        b = frag.bary[ys, xs]
        m = out.mask[ys, xs]
        g = d_image[ys, xs]
        c0, c1, c2 = colours[i0], colours[i1], colours[i2]
        c_hat = b[:, 0:1] * c0 + b[:, 1:2] * c1 + b[:, 2:3] * c2
        unclamped = (c_hat >= 0.0) & (c_hat <= 1.0)
        gu = g * unclamped

        _scatter(d_col, i0, (m * b[:, 0])[:, None] * gu)
        _scatter(d_col, i1, (m * b[:, 1])[:, None] * gu)
        _scatter(d_col, i2, (m * b[:, 2])[:, None] * gu)

        # dP/db_a, then chain to vertex positions through the edge functions.
        s0 = m * (gu * c0).sum(axis=1)
        s1 = m * (gu * c1).sum(axis=1)
        s2 = m * (gu * c2).sum(axis=1)
        px = xs + 0.5
        py = ys + 0.5
        x0, y0 = v[i0, 0], v[i0, 1]
        x1, y1 = v[i1, 0], v[i1, 1]
        x2, y2 = v[i2, 0], v[i2, 1]
        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)

        # dA/dp_v and dN_a/dp_v (N_a is the unnormalized weight of vertex a).
        dA0 = np.stack([y1 - y2, x2 - x1], axis=1)
        dA1 = np.stack([y2 - y0, x0 - x2], axis=1)
        dA2 = np.stack([y0 - y1, x1 - x0], axis=1)
        dN0_d1 = np.stack([y2 - py, px - x2], axis=1)
        dN0_d2 = np.stack([py - y1, x1 - px], axis=1)
        dN1_d2 = np.stack([y0 - py, px - x0], axis=1)
        dN1_d0 = np.stack([py - y2, x2 - px], axis=1)
        dN2_d0 = np.stack([y1 - py, px - x1], axis=1)
        dN2_d1 = np.stack([py - y0, x0 - px], axis=1)

        inv_a = (1.0 / area2)[:, None]
        b0, b1, b2 = b[:, 0:1], b[:, 1:2], b[:, 2:3]
        g0 = inv_a * (s1[:, None] * dN1_d0 + s2[:, None] * dN2_d0
                      - (s0[:, None] * b0 + s1[:, None] * b1 + s2[:, None] * b2) * dA0)
        g1 = inv_a * (s0[:, None] * dN0_d1 + s2[:, None] * dN2_d1
                      - (s0[:, None] * b0 + s1[:, None] * b1 + s2[:, None] * b2) * dA1)
        g2 = inv_a * (s0[:, None] * dN0_d2 + s1[:, None] * dN1_d2
                      - (s0[:, None] * b0 + s1[:, None] * b1 + s2[:, None] * b2) * dA2)
        _scatter(d_pos, i0, g0)
        _scatter(d_pos, i1, g1)
        _scatter(d_pos, i2, g2)

    if cfg.edge_sigma == 0.0 or frag.sil_edges.shape[0] == 0:
        return d_pos, d_depth, d_col

    # ---- silhouette term: coverage weight and edge-projected colour ----
    edges = frag.sil_edges
    in_band = frag.sil_edge_id >= 0
    active = in_band & (out.mask > 0.0) & (out.mask < 1.0) & (frag.sil_dist > 1e-9)
    for inside in (True, False):
        sel = active & (covered if inside else ~covered)
        ys, xs = np.nonzero(sel)
        if not ys.size:
            continue
        eid = frag.sil_edge_id[ys, xs]
        a, bvert = edges[eid, 0], edges[eid, 1]
        t = frag.sil_t[ys, xs]
        dist = frag.sil_dist[ys, xs]
        m = out.mask[ys, xs]
        g = d_image[ys, xs]
        px = xs + 0.5
        py = ys + 0.5

        if inside:
            c_clamp = np.clip(_gather_interior(colours, triangles, frag, ys, xs), 0.0, 1.0)
        else:
            c_hat = (1.0 - t)[:, None] * colours[a] + t[:, None] * colours[bvert]
            c_clamp = np.clip(c_hat, 0.0, 1.0)
            unclamped = (c_hat >= 0.0) & (c_hat <= 1.0)
            gu = g * unclamped
            _scatter(d_col, a, (m * (1.0 - t))[:, None] * gu)
            _scatter(d_col, bvert, (m * t)[:, None] * gu)

        # d image / d m = colour - background.
        gm = (g * (c_clamp - bg)).sum(axis=1)
        sign = 1.0 if inside else -1.0
        coef = gm * m * (1.0 - m) / cfg.edge_sigma * sign

        ax, ay = v[a, 0], v[a, 1]
        bx, by = v[bvert, 0], v[bvert, 1]
        ex, ey = bx - ax, by - ay
        cx = ax + t * ex
        cy = ay + t * ey
        ux = (px - cx) / dist
        uy = (py - cy) / dist
        # Envelope theorem: d dist / d a = -(1-t) u, d dist / d b = -t u.
        ga = np.stack([coef * -(1.0 - t) * ux, coef * -(1.0 - t) * uy], axis=1)
        gb = np.stack([coef * -t * ux, coef * -t * uy], axis=1)

        if not inside:
            # The projection parameter also moves the sampled edge colour.
            interior_t = (t > 0.0) & (t < 1.0)
            ee = ex * ex + ey * ey
            dPdt = m * (gu * (colours[bvert] - colours[a])).sum(axis=1) * interior_t
            qx, qy = px - ax, py - ay
            dt_a_x = (-(ex + qx) + 2.0 * t * ex) / ee
            dt_a_y = (-(ey + qy) + 2.0 * t * ey) / ee
            dt_b_x = (qx - 2.0 * t * ex) / ee
            dt_b_y = (qy - 2.0 * t * ey) / ee
            ga[:, 0] += dPdt * dt_a_x
            ga[:, 1] += dPdt * dt_a_y
            gb[:, 0] += dPdt * dt_b_x
            gb[:, 1] += dPdt * dt_b_y

        _scatter(d_pos, a, ga)
        _scatter(d_pos, bvert, gb)

    return d_pos, d_depth, d_col


def _gather_interior(colours, triangles, frag, ys, xs):
    f = frag.tri_id[ys, xs]
    i0, i1, i2 = triangles[f, 0], triangles[f, 1], triangles[f, 2]
    b = frag.bary[ys, xs]
    return b[:, 0:1] * colours[i0] + b[:, 1:2] * colours[i1] + b[:, 2:3] * colours[i2]
