"""Corpus I/O, rotation augmentation and synthetic ground-truth generation.

The synthetic model substitutes for a real ear model at desk scale.  Its mean
surface is a parametric height field over a (u, v) grid: an elongated blob
(u runs bottom to top, v across the width) with a ridge running along the rim
and a central depression, so the projected outline and relief are ear-like.
The deformation basis consists of orthonormalized smooth low-frequency fields
with a geometrically decaying variance spectrum.

Landmark semantics (55 indices, fixed order):
  * 0-24: outer contour ring, counterclockwise from the bottom (lobe) point;
    index 0 is the lobe bottom, index 12 the apex of the rim;
  * 25-39: 15 points along the inner ridge line;
  * 40-54: 15 points on a small ring around the central depression.

Default ear-direction endpoints are landmark 0 (lobe) to landmark 12 (rim
apex).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import EarfitError
from .fitting import CodeVector, canonical_scale
from .images import read_png, write_png
from .models import ColourModel, MorphableModel, N_LANDMARKS, WhiteningTransform, \
    reconstruct_colour, reconstruct_shape
from .projection import Pose, project_sop, rotation_from_euler, select_landmarks
from .raster import RasterConfig, rasterize

DEFAULT_LOBE_LANDMARK = 0
DEFAULT_HELIX_LANDMARK = 12


@dataclass
class AnnotatedImage:
    """An image with 55 ground-truth landmarks; synthetic items carry the
    generating code vector."""

    image: np.ndarray
    landmarks: np.ndarray
    id: str
    gt_code: CodeVector | None = None
    crop: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=float)
        self.landmarks = np.asarray(self.landmarks, dtype=float)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"image must be H x W x 3, got {self.image.shape}")
        if self.landmarks.shape != (N_LANDMARKS, 2):
            raise ValueError(f"landmarks must be {N_LANDMARKS} x 2, got {self.landmarks.shape}")
        h, w = self.image.shape[:2]
        lo = self.landmarks.min(axis=0)
        hi = self.landmarks.max(axis=0)
        if lo[0] < -0.1 * w or lo[1] < -0.1 * h or hi[0] > 1.1 * w or hi[1] > 1.1 * h:
            raise ValueError("landmarks fall outside the image bounds (10% margin)")


# ---------------------------------------------------------------------------
# ear direction and augmentation


def ear_direction(landmarks: np.ndarray, lobe_idx: int = DEFAULT_LOBE_LANDMARK,
                  helix_idx: int = DEFAULT_HELIX_LANDMARK) -> np.ndarray:
    """Unit vector from a lobe landmark to a helix landmark (image coordinates)."""
    landmarks = np.asarray(landmarks, dtype=float)
    if not (0 <= lobe_idx < N_LANDMARKS and 0 <= helix_idx < N_LANDMARKS) or lobe_idx == helix_idx:
        raise ValueError("lobe/helix indices must be distinct and in [0, 55)")
    d = landmarks[helix_idx] - landmarks[lobe_idx]
    n = np.linalg.norm(d)
    if n < 1e-12:
        raise EarfitError("lobe and helix landmarks coincide")
    return d / n


def ear_direction_angle(landmarks: np.ndarray, lobe_idx: int = DEFAULT_LOBE_LANDMARK,
                        helix_idx: int = DEFAULT_HELIX_LANDMARK) -> float:
    """Angle (radians) between the ear direction and the image up direction.

    Zero means the ear points straight up the image (y decreasing); positive
    angles lean toward +x.
    """
    d = ear_direction(landmarks, lobe_idx, helix_idx)
    return float(np.arctan2(d[0], -d[1]))


def rotate_landmarks(landmarks: np.ndarray, angle: float, center: np.ndarray) -> np.ndarray:
    """Rotate landmark positions by ``angle`` radians about ``center``."""
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return (np.asarray(landmarks, dtype=float) - center) @ rot.T + center


def augment(item: AnnotatedImage, count: int = 12, angle_range_deg: float = 60.0,
            seed: int = 0, lobe_idx: int = DEFAULT_LOBE_LANDMARK,
            helix_idx: int = DEFAULT_HELIX_LANDMARK) -> list[AnnotatedImage]:
    """Random rotations about the image center.

    Each output's ear-direction angle to the image Y-axis is an independent
    uniform draw in [-angle_range, +angle_range]; landmarks follow the same
    rotation and out-of-canvas regions use edge-replicate padding.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    h, w = item.image.shape[:2]
    center = np.array([w / 2.0, h / 2.0])
    current = ear_direction_angle(item.landmarks, lobe_idx, helix_idx)
    limit = np.deg2rad(angle_range_deg)
    out = []
    for k in range(count):
        target = rng.uniform(-limit, limit)
        phi = target - current
        lms = rotate_landmarks(item.landmarks, phi, center)
        image = _rotate_image(item.image, phi, center)
        out.append(AnnotatedImage(image=image, landmarks=lms,
                                  id=f"{item.id}.aug{k:02d}", gt_code=None))
    return out


def _rotate_image(image: np.ndarray, phi: float, center_xy: np.ndarray) -> np.ndarray:
    if phi == 0.0:
        return image.copy()
    c, s = np.cos(-phi), np.sin(-phi)
    # inverse map in (row, col) index order; pixel centers sit on indices
    matrix = np.array([[c, s], [-s, c]])
    center_idx = np.array([center_xy[1] - 0.5, center_xy[0] - 0.5])
    offset = center_idx - matrix @ center_idx
    out = np.empty_like(image)
    for ch in range(3):
        out[:, :, ch] = ndimage.affine_transform(image[:, :, ch], matrix, offset=offset,
                                                 order=1, mode="nearest")
    return out


# ---------------------------------------------------------------------------
# synthetic model generator


def _smooth_fields(rng: np.random.Generator, uu: np.ndarray, vv: np.ndarray,
                   n_fields: int, max_freq: int = 4) -> np.ndarray:
    """Random smooth scalar fields over the parameter grid; (n_points, n_fields)."""
    terms = []
    for m in range(max_freq):
        for n in range(max_freq):
            terms.append(np.cos(np.pi * m * uu) * np.cos(np.pi * n * vv))
            if m or n:
                terms.append(np.sin(np.pi * m * uu) * np.sin(np.pi * n * vv))
                terms.append(np.cos(np.pi * m * uu) * np.sin(np.pi * n * vv))
    basis = np.stack([t.ravel() for t in terms], axis=1)
    coeff = rng.normal(size=(basis.shape[1], n_fields))
    return basis @ coeff


def _grid_dims(n_vertices: int) -> tuple[int, int]:
    n_u = max(10, int(round(np.sqrt(n_vertices * 2.0))))
    n_v = max(6, n_vertices // n_u)
    return n_u, n_v


def _sign_fix(columns: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(columns), axis=0)
    flip = np.sign(columns[idx, np.arange(columns.shape[1])])
    flip[flip == 0] = 1.0
    return columns * flip


def generate_synthetic_model(n_vertices: int = 800, k_full: int = 120, seed: int = 0,
                             k_white: int = 40) -> tuple[MorphableModel, ColourModel]:
    """Deterministic ear-like synthetic shape + colour model (see module docstring)."""
    if n_vertices < 100:
        raise ValueError("n_vertices must be >= 100")
    rng = np.random.default_rng(seed)
    n_u, n_v = _grid_dims(n_vertices)
    u = np.linspace(0.0, 1.0, n_u)
    v = np.linspace(0.0, 1.0, n_v)
    uu, vv = np.meshgrid(u, v, indexing="ij")

    y = 2.0 * uu - 1.0
    half_width = (0.28 + 0.22 * uu) * np.sqrt(1.0 - y**2 + 0.06)
    s = 2.0 * vv - 1.0
    x = half_width * s
    ridge = -0.18 * np.exp(-(((np.abs(s) - 0.75) / 0.2) ** 2))
    concha = 0.15 * np.exp(-(((uu - 0.45) / 0.18) ** 2 + ((s - 0.05) / 0.3) ** 2))
    bend = 0.10 * y**2 + 0.05 * s**2
    z = ridge + concha + bend

    mean = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    n = mean.shape[0]

    tris = []
    for i in range(n_u - 1):
        for j in range(n_v - 1):
            a = i * n_v + j
            tris.append([a, a + 1, a + n_v])
            tris.append([a + 1, a + n_v + 1, a + n_v])
    triangles = np.asarray(tris, dtype=np.int64)

    landmarks = _landmark_table(n_u, n_v)

    k_full = min(k_full, 3 * n - 1)
    fields = np.concatenate([
        _smooth_fields(rng, uu, vv, k_full) * w
        for w in (0.6, 0.6, 1.0)  # x, y, z displacement fields
    ], axis=0).reshape(3, n, k_full).transpose(1, 0, 2).reshape(3 * n, k_full)
    q, _ = np.linalg.qr(fields)
    basis = _sign_fix(q)

    decay = 0.89
    sigma0 = 0.06
    eigvals = sigma0**2 * decay ** np.arange(k_full)
    k_white = min(k_white, k_full)
    coverage = float(eigvals[:k_white].sum() / eigvals.sum())
    recover = np.zeros((k_full, k_white))
    recover[np.arange(k_white), np.arange(k_white)] = np.sqrt(eigvals[:k_white])
    whitening = WhiteningTransform(recover_matrix=recover, k_white=k_white, coverage=coverage)

    model = MorphableModel(mean_shape=mean.ravel(), shape_basis=basis, triangles=triangles,
                           whitening=whitening, landmark_indices=landmarks)

    # colour model: skin-like mean with smooth whitened variation components
    base = np.array([0.72, 0.55, 0.45])
    shade = 0.85 + 0.1 * np.cos(np.pi * uu) * np.cos(np.pi * vv) - 0.35 * concha / 0.15 * 0.3
    mean_colour = np.clip(base[None, :] * shade.ravel()[:, None], 0.05, 0.95)

    k_colour = min(k_white, 3 * n - 1)
    cfields = np.concatenate([
        _smooth_fields(rng, uu, vv, k_colour) for _ in range(3)
    ], axis=0).reshape(3, n, k_colour).transpose(1, 0, 2).reshape(3 * n, k_colour)
    cq, _ = np.linalg.qr(cfields)
    cq = _sign_fix(cq)
    c_eigvals = 0.08**2 * 0.85 ** np.arange(k_colour)
    notional_total = 0.08**2 * (1.0 / (1.0 - 0.85))
    c_coverage = float(min(c_eigvals.sum() / notional_total, 1.0))
    colour_basis = cq * np.sqrt(c_eigvals)[None, :]
    colour_model = ColourModel(mean_colour=mean_colour.ravel(), colour_basis=colour_basis,
                               coverage=c_coverage)
    return model, colour_model


def _landmark_table(n_u: int, n_v: int) -> np.ndarray:
    """Parametric landmark locations mapped to grid vertex indices."""
    locs = []
    # outer contour: ellipse in (u, v) parameter space, starting at the bottom
    for i in range(25):
        theta = 2.0 * np.pi * i / 25.0
        cu = 0.5 - 0.48 * np.cos(theta)
        cv = 0.5 + 0.48 * np.sin(theta)
        locs.append((cu, cv))
    # inner ridge line near the rim
    for i in range(15):
        locs.append((0.12 + 0.76 * i / 14.0, 0.86))
    # ring around the central depression
    for i in range(15):
        theta = 2.0 * np.pi * i / 15.0
        locs.append((0.45 + 0.14 * np.cos(theta), 0.52 + 0.18 * np.sin(theta)))

    taken = set()
    indices = []
    for cu, cv in locs:
        iu = int(round(cu * (n_u - 1)))
        iv = int(round(cv * (n_v - 1)))
        idx = iu * n_v + iv
        # resolve grid collisions deterministically: nearest untaken index
        if idx in taken:
            for step in range(1, n_u * n_v):
                for cand in (idx + step, idx - step):
                    if 0 <= cand < n_u * n_v and cand not in taken:
                        idx = cand
                        break
                else:
                    continue
                break
        taken.add(idx)
        indices.append(idx)
    return np.asarray(indices, dtype=np.int64)


# ---------------------------------------------------------------------------
# synthetic corpus rendering

POSE_RANGES_DEG = {"azimuth": 20.0, "elevation": 20.0, "roll": 30.0}
F_NORM_RANGE = (0.75, 1.25)
CENTER_JITTER = 0.03  # fraction of the frame size


def draw_code_vector(model: MorphableModel, colour_model: ColourModel,
                     rng: np.random.Generator, width: int, height: int,
                     param_sigma: float = 1.0) -> CodeVector:
    """Random plausible code vector within the documented pose ranges."""
    def trunc_normal(k):
        x = rng.normal(0.0, 1.0, size=k)
        return np.clip(x, -2.5, 2.5) * param_sigma

    alpha_s = trunc_normal(model.k_white)
    alpha_c = trunc_normal(colour_model.k)
    r = np.deg2rad(np.array([
        rng.uniform(-POSE_RANGES_DEG["azimuth"], POSE_RANGES_DEG["azimuth"]),
        rng.uniform(-POSE_RANGES_DEG["elevation"], POSE_RANGES_DEG["elevation"]),
        rng.uniform(-POSE_RANGES_DEG["roll"], POSE_RANGES_DEG["roll"]),
    ]))
    f = rng.uniform(*F_NORM_RANGE) * canonical_scale(model, width, height)
    shape = reconstruct_shape(model, alpha_s)
    centroid = (shape @ rotation_from_euler(r).T)[:, :2].mean(axis=0)
    center = np.array([width / 2.0, height / 2.0])
    jitter = rng.uniform(-CENTER_JITTER, CENTER_JITTER, size=2) * np.array([width, height])
    t = center + jitter - f * centroid
    return CodeVector(pose=Pose(r=r, t=t, f=f), alpha_s=alpha_s, alpha_c=alpha_c)


def render_synthetic_corpus(model: MorphableModel, colour_model: ColourModel,
                            count: int, width: int = 128, height: int = 128,
                            param_sigma: float = 1.0, pixel_sigma: float = 0.0,
                            seed: int = 0, edge_sigma: float = 1.0) -> list[AnnotatedImage]:
    """Render ``count`` images from random code vectors, recording ground truth."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    cfg = RasterConfig(width=width, height=height, edge_sigma=edge_sigma)
    items = []
    for i in range(count):
        code = draw_code_vector(model, colour_model, rng, width, height, param_sigma)
        shape = reconstruct_shape(model, code.alpha_s)
        colours = reconstruct_colour(colour_model, code.alpha_c)
        proj = project_sop(shape, code.pose)
        out = rasterize(proj, colours, model.triangles, cfg)
        image = out.image
        if pixel_sigma > 0:
            image = np.clip(image + rng.normal(0.0, pixel_sigma, size=image.shape), 0.0, 1.0)
        landmarks = select_landmarks(proj, model.landmark_indices)
        items.append(AnnotatedImage(image=image, landmarks=landmarks,
                                    id=f"synth{i:04d}", gt_code=code))
    return items


# ---------------------------------------------------------------------------
# corpus file I/O


def write_landmark_file(path, landmarks: np.ndarray) -> None:
    landmarks = np.asarray(landmarks, dtype=float)
    lines = [f"{p[0]:.6f} {p[1]:.6f}" for p in landmarks]
    Path(path).write_text("\n".join(lines) + "\n")


def read_landmark_file(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        xs = line.split()
        if len(xs) != 2:
            raise ValueError(f"{path}: malformed landmark line {line!r}")
        rows.append([float(xs[0]), float(xs[1])])
    lms = np.asarray(rows, dtype=float)
    if lms.shape != (N_LANDMARKS, 2):
        raise ValueError(f"{path}: expected {N_LANDMARKS} landmarks, got {lms.shape[0]}")
    return lms


def save_corpus(items: list[AnnotatedImage], directory, seed: int | None = None,
                model_file: str | None = None) -> Path:
    """Write images, landmark files and a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for item in items:
        img_name = f"{item.id}.png"
        lm_name = f"{item.id}.lms"
        write_png(directory / img_name, item.image)
        write_landmark_file(directory / lm_name, item.landmarks)
        entry = {"id": item.id, "image": img_name, "landmarks": lm_name}
        if item.gt_code is not None:
            entry["gt_code"] = [float(x) for x in item.gt_code.flatten()]
            entry["gt_dims"] = [int(item.gt_code.alpha_s.size), int(item.gt_code.alpha_c.size)]
        if item.crop is not None:
            entry["crop"] = list(item.crop)
        entries.append(entry)
    manifest = {"schema": "corpus/1", "items": entries}
    if seed is not None:
        manifest["seed"] = seed
    if model_file is not None:
        manifest["model"] = model_file
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return path


def load_corpus(manifest_path) -> list[AnnotatedImage]:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema") != "corpus/1":
        raise ValueError(f"{manifest_path}: unknown manifest schema")
    directory = manifest_path.parent
    items = []
    for entry in manifest["items"]:
        image = read_png(directory / entry["image"])
        landmarks = read_landmark_file(directory / entry["landmarks"])
        gt = None
        if "gt_code" in entry:
            k_s, k_c = entry["gt_dims"]
            gt = CodeVector.unflatten(np.asarray(entry["gt_code"]), k_s, k_c)
        crop = tuple(entry["crop"]) if "crop" in entry else None
        items.append(AnnotatedImage(image=image, landmarks=landmarks, id=entry["id"],
                                    gt_code=gt, crop=crop))
    return items
