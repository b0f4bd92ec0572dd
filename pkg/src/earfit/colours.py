"""In-the-wild colour model construction.

For every landmark-annotated image the shape is aligned by the
Levenberg-Marquardt landmark fit, visible vertices sample the image
bilinearly at their projected positions (visibility from the rasterizer's
z-buffer), and the stacked per-vertex colour vectors feed a whitened PCA
with a fixed retained dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorpusError, SamplingError
from .fitting import fit_landmarks
from .models import ColourModel, MorphableModel, build_pca, reconstruct_shape
from .projection import ProjectedShape, project_sop
from .raster import RasterConfig, rasterize

# Depth slack when comparing a vertex against the z-buffer, as a fraction of
# the scene depth range.
_DEPTH_TOL = 0.02


@dataclass(frozen=True)
class VertexColourSample:
    colours: np.ndarray    # (N, 3) in [0, 1]
    validity: np.ndarray   # (N,) True where sampled from the image


def _bilinear(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    gx = np.clip(x - 0.5, 0.0, w - 1.0)
    gy = np.clip(y - 0.5, 0.0, h - 1.0)
    x0 = np.clip(np.floor(gx).astype(int), 0, w - 2) if w > 1 else np.zeros_like(gx, int)
    y0 = np.clip(np.floor(gy).astype(int), 0, h - 2) if h > 1 else np.zeros_like(gy, int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (gx - x0)[:, None]
    fy = (gy - y0)[:, None]
    top = (1 - fx) * image[y0, x0] + fx * image[y0, x1]
    bot = (1 - fx) * image[y1, x0] + fx * image[y1, x1]
    return (1 - fy) * top + fy * bot


def sample_vertex_colours(image: np.ndarray, proj: ProjectedShape,
                          triangles: np.ndarray) -> VertexColourSample:
    """Bilinearly sample the image at each visible vertex's projection.

    Occluded or out-of-bounds vertices are marked invalid and filled with the
    mean colour of the valid ones.
    """
    image = np.asarray(image, dtype=float)
    h, w = image.shape[:2]
    n = proj.n_vertices
    x, y = proj.v[:, 0], proj.v[:, 1]
    in_bounds = (x >= 0) & (x < w) & (y >= 0) & (y < h)
    if not np.any(in_bounds):
        raise SamplingError("every vertex projects outside the image")

    # hard z-buffer for visibility, colours irrelevant
    cfg = RasterConfig(width=w, height=h, edge_sigma=0.0)
    out = rasterize(proj, np.zeros((n, 3)), triangles, cfg)
    zbuf = out.fragments.zbuf
    depth_range = float(proj.depth.max() - proj.depth.min())
    tol = _DEPTH_TOL * depth_range + 1e-9

    # compare against the most permissive covered z-buffer entry among the
    # four neighbouring pixels
    gx = np.clip(x - 0.5, 0.0, w - 1.0)
    gy = np.clip(y - 0.5, 0.0, h - 1.0)
    x0 = np.clip(np.floor(gx).astype(int), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(gy).astype(int), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    neighbour_z = np.stack([zbuf[y0, x0], zbuf[y0, x1], zbuf[y1, x0], zbuf[y1, x1]])
    neighbour_z = np.where(np.isfinite(neighbour_z), neighbour_z, -np.inf)
    max_z = neighbour_z.max(axis=0)
    visible = in_bounds & np.isfinite(max_z) & (proj.depth <= max_z + tol)

    if not np.any(visible):
        raise SamplingError("no vertex passed the visibility test")
    colours = np.zeros((n, 3))
    colours[visible] = np.clip(_bilinear(image, x[visible], y[visible]), 0.0, 1.0)
    fill = colours[visible].mean(axis=0)
    colours[~visible] = fill
    return VertexColourSample(colours=colours, validity=visible)


def build_colour_model(corpus, model: MorphableModel, k: int = 40,
                       max_landmark_error: float = 0.1) -> tuple[ColourModel, dict]:
    """Fit + sample every corpus item, then whitened PCA over the colour stack.

    Items whose landmark fit or sampling fails are skipped; more than 50%
    failures raise :class:`CorpusError`.  Returns the colour model and a
    build report (per-image energies, skip list, achieved coverage).
    """
    if not corpus:
        raise CorpusError("empty corpus")
    rows = []
    per_image = []
    skipped = []
    for item in corpus:
        try:
            report = fit_landmarks(model, item.landmarks)
            e0 = report.trace[-1]["e0"]
            span = item.landmarks.max(axis=0) - item.landmarks.min(axis=0)
            diag = float(np.hypot(span[0], span[1]))
            if diag <= 0 or e0 / diag > max_landmark_error:
                raise SamplingError(f"landmark fit too poor (E0={e0:.3g}px)")
            shape = reconstruct_shape(model, report.code.alpha_s)
            proj = project_sop(shape, report.code.pose)
            sample = sample_vertex_colours(item.image, proj, model.triangles)
            rows.append(sample.colours.ravel())
            per_image.append({"id": item.id, "e0_px": float(e0),
                              "valid_vertices": int(sample.validity.sum())})
        except Exception as exc:  # noqa: BLE001 - per-item isolation is the point
            skipped.append({"id": item.id, "reason": str(exc)})
    if len(rows) < max(1, len(corpus) // 2) or len(rows) < 2:
        raise CorpusError(f"too many corpus failures: {len(skipped)} of {len(corpus)}")

    stack = np.asarray(rows)
    mean, basis, whitening = build_pca(stack, k=k)
    k_eff = whitening.k_white
    colour_basis = basis[:, :k_eff] * whitening.sigma[None, :]
    colour_model = ColourModel(mean_colour=mean, colour_basis=colour_basis,
                               coverage=whitening.coverage)
    report = {
        "schema": "colour-build/1",
        "images_used": len(rows),
        "images_skipped": skipped,
        "per_image": per_image,
        "k": int(k_eff),
        "coverage": float(whitening.coverage),
    }
    return colour_model, report
