"""Loss functions and the two optimizers.

``fit_landmarks`` solves the landmark-only alignment with Levenberg-Marquardt
on the stacked 55 x 2 residual vector using an analytic Jacobian through
whitening, shape reconstruction and projection.  ``fit_photometric`` refines
the full code vector (pose + shape + colour parameters) against the image
with an adaptive-moment first-order method; the gradient is assembled by the
chain rule through the differentiable rasterizer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import FitDivergedError
from .models import ColourModel, MorphableModel, N_LANDMARKS, reconstruct_colour, reconstruct_shape
from .projection import (P_ORTHO, Pose, ProjectedShape, project_sop, rotation_derivatives,
                         rotation_from_euler, select_landmarks)
from .raster import RasterConfig, RasterOutput, rasterize, rasterize_backward

# Fraction of the image diagonal the mean shape spans at the canonical scale;
# the scale-box regulariser is expressed in these normalized units.
CANONICAL_FILL = 0.6


@dataclass(frozen=True)
class CodeVector:
    """Full latent state: pose plus whitened shape and colour parameters."""

    pose: Pose
    alpha_s: np.ndarray
    alpha_c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha_s", np.asarray(self.alpha_s, dtype=float).ravel())
        object.__setattr__(self, "alpha_c", np.asarray(self.alpha_c, dtype=float).ravel())

    def flatten(self) -> np.ndarray:
        """Order: r (3), T (2), f (1), alpha_s, alpha_c."""
        return np.concatenate([self.pose.r, self.pose.t, [self.pose.f], self.alpha_s, self.alpha_c])

    @classmethod
    def unflatten(cls, vec: np.ndarray, k_s: int, k_c: int) -> "CodeVector":
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size != 6 + k_s + k_c:
            raise ValueError(f"expected {6 + k_s + k_c} entries, got {vec.size}")
        pose = Pose(r=vec[:3], t=vec[3:5], f=vec[5])
        return cls(pose=pose, alpha_s=vec[6:6 + k_s], alpha_c=vec[6 + k_s:])


@dataclass(frozen=True)
class LossWeights:
    lambda_pix: float
    lambda_lm: float
    lambda_reg1: float
    lambda_reg2: float

    def __post_init__(self):
        vals = (self.lambda_pix, self.lambda_lm, self.lambda_reg1, self.lambda_reg2)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")
        if all(v == 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


PRESETS = {
    "with-landmarks": LossWeights(10.0, 1.0, 5e-2, 0.0),
    "without-landmarks": LossWeights(2.0, 0.0, 5e-2, 100.0),
}


@dataclass
class FitReport:
    code: CodeVector
    trace: list
    iterations: int
    converged: bool
    wall_clock: float
    degenerate_coverage: bool = False

    def final_loss(self) -> float:
        return self.trace[-1]["total"]


# ---------------------------------------------------------------------------
# individual loss terms


def landmark_energy(model: MorphableModel, alpha_s: np.ndarray, pose: Pose,
                    x_gt: np.ndarray) -> float:
    """Mean per-landmark Euclidean distance (pixels) between projection and truth."""
    x_gt = _check_landmarks(x_gt, "x_gt")
    shape = reconstruct_shape(model, alpha_s)
    proj = project_sop(shape, pose)
    x_hat = select_landmarks(proj, model.landmark_indices)
    return float(np.linalg.norm(x_hat - x_gt, axis=1).mean())


def pixel_loss(rendered: RasterOutput, image: np.ndarray) -> float:
    """MSE over the three channels of pixels where the coverage mask > 0.5.

    A render with no covered pixels returns the sentinel 1.0 so optimization
    can continue instead of dividing by zero.
    """
    image = np.asarray(image, dtype=float)
    if image.shape != rendered.image.shape:
        raise ValueError(f"image shape {image.shape} differs from render {rendered.image.shape}")
    sel = rendered.mask > 0.5
    if not np.any(sel):
        return 1.0
    diff = rendered.image[sel] - image[sel]
    return float((diff**2).mean())


def landmark_loss(x_pred: np.ndarray, x_gt: np.ndarray) -> float:
    """Mean per-landmark distance normalised by the ground-truth bbox diagonal."""
    x_pred = _check_landmarks(x_pred, "x_pred")
    x_gt = _check_landmarks(x_gt, "x_gt")
    diag = _bbox_diagonal(x_gt)
    if diag <= 0.0:
        raise ValueError("ground-truth landmark bounding box is degenerate")
    return float(np.linalg.norm(x_pred - x_gt, axis=1).mean() / diag)


def reg_statistical(alpha_s: np.ndarray, alpha_c: np.ndarray) -> float:
    """Squared Mahalanobis distance from the mean: sum of squares in whitened space."""
    alpha_s = np.asarray(alpha_s, dtype=float)
    alpha_c = np.asarray(alpha_c, dtype=float)
    return float((alpha_s**2).sum() + (alpha_c**2).sum())


def reg_scale(f: float) -> float:
    """Box penalty keeping the normalized scale inside [0.5, 1.5]."""
    if f < 0.5:
        return (0.5 - f) ** 2
    if f > 1.5:
        return (f - 1.5) ** 2
    return 0.0


def _reg_scale_grad(f: float) -> float:
    if f < 0.5:
        return 2.0 * (f - 0.5)
    if f > 1.5:
        return 2.0 * (f - 1.5)
    return 0.0


def _check_landmarks(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (N_LANDMARKS, 2):
        raise ValueError(f"{name} must be {N_LANDMARKS} x 2, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def _bbox_diagonal(x: np.ndarray) -> float:
    span = x.max(axis=0) - x.min(axis=0)
    return float(np.hypot(span[0], span[1]))


# ---------------------------------------------------------------------------
# cached per-model matrices

_matrix_cache: dict = {}


def shape_projection_matrix(model: MorphableModel) -> np.ndarray:
    """U_s @ U_w: maps whitened shape parameters directly to vertex offsets."""
    key = ("proj", id(model.shape_basis), id(model.whitening.recover_matrix))
    hit = _matrix_cache.get(key)
    if hit is not None and hit[0] is model.shape_basis:
        return hit[1]
    b = model.shape_basis @ model.whitening.recover_matrix
    _matrix_cache[key] = (model.shape_basis, b)
    return b


def canonical_scale(model: MorphableModel, width: int, height: int) -> float:
    """Pixels-per-model-unit at which the mean shape spans CANONICAL_FILL of the frame."""
    mean = model.mean_shape.reshape(-1, 3)
    span = mean[:, :2].max(axis=0) - mean[:, :2].min(axis=0)
    d0 = float(np.hypot(span[0], span[1]))
    return CANONICAL_FILL * float(np.hypot(width, height)) / d0


# ---------------------------------------------------------------------------
# total loss and gradient over the flattened code vector


def total_loss(model: MorphableModel, colour_model: ColourModel, code: CodeVector,
               image: np.ndarray, x_gt: np.ndarray | None, weights: LossWeights,
               cfg: RasterConfig) -> tuple[float, np.ndarray]:
    """Weighted four-term loss and its gradient over the flattened code vector."""
    total, grad, _terms, _degen = _total_loss_impl(model, colour_model, code, image,
                                                   x_gt, weights, cfg)
    return total, grad


def _total_loss_impl(model, colour_model, code, image, x_gt, weights, cfg):
    if weights.lambda_lm > 0 and x_gt is None:
        raise ValueError("landmark loss requested but no ground-truth landmarks given")
    image = np.asarray(image, dtype=float)

    shape = reconstruct_shape(model, code.alpha_s)
    colours = reconstruct_colour(colour_model, code.alpha_c)
    proj = project_sop(shape, code.pose)
    out = rasterize(proj, colours, model.triangles, cfg)

    n = model.n_vertices
    d_v = np.zeros((n, 2))
    d_col = np.zeros((n, 3))
    terms = {}
    degenerate = False

    # pixel term
    sel = out.mask > 0.5
    count = int(sel.sum())
    if count == 0:
        e_pix = 1.0
        degenerate = True
    else:
        diff = (out.image - image) * sel[..., None]
        e_pix = float((diff[sel] ** 2).mean())
        if weights.lambda_pix > 0:
            d_image = weights.lambda_pix * 2.0 * diff / (count * 3)
            dp, _dd, dc = rasterize_backward(out, d_image, proj, colours,
                                             model.triangles, cfg)
            d_v += dp
            d_col += dc
    terms["pix"] = e_pix

    # landmark term
    if x_gt is not None:
        x_gt = _check_landmarks(x_gt, "x_gt")
        x_pred = select_landmarks(proj, model.landmark_indices)
        diag = _bbox_diagonal(x_gt)
        if diag <= 0:
            raise ValueError("ground-truth landmark bounding box is degenerate")
        delta = x_pred - x_gt
        dist = np.linalg.norm(delta, axis=1)
        e_lm = float(dist.mean() / diag)
        terms["lm"] = e_lm
        if weights.lambda_lm > 0:
            safe = dist > 1e-12
            g_lm = np.zeros_like(delta)
            g_lm[safe] = delta[safe] / dist[safe, None]
            g_lm *= weights.lambda_lm / (N_LANDMARKS * diag)
            np.add.at(d_v, model.landmark_indices, g_lm)
    else:
        e_lm = 0.0
        terms["lm"] = 0.0

    # regularisers
    e_reg1 = reg_statistical(code.alpha_s, code.alpha_c)
    f_can = canonical_scale(model, cfg.width, cfg.height)
    f_norm = code.pose.f / f_can
    e_reg2 = reg_scale(f_norm)
    terms["reg1"] = e_reg1
    terms["reg2"] = e_reg2

    total = (weights.lambda_pix * e_pix + weights.lambda_lm * e_lm
             + weights.lambda_reg1 * e_reg1 + weights.lambda_reg2 * e_reg2)
    terms["total"] = float(total)

    # chain d_v back to pose and shape parameters
    rot = rotation_from_euler(code.pose.r)
    m_proj = P_ORTHO @ rot
    d_shape = code.pose.f * (d_v @ m_proj)
    d_t = d_v.sum(axis=0)
    d_f = float((d_v * (shape @ m_proj.T)).sum())
    drots = rotation_derivatives(code.pose.r)
    d_r = np.array([
        float((d_v * (code.pose.f * (shape @ (P_ORTHO @ drots[k]).T))).sum())
        for k in range(3)
    ])

    b = shape_projection_matrix(model)
    d_alpha_s = b.T @ d_shape.ravel()
    d_alpha_c = colour_model.colour_basis.T @ d_col.ravel()

    d_alpha_s += weights.lambda_reg1 * 2.0 * code.alpha_s
    d_alpha_c += weights.lambda_reg1 * 2.0 * code.alpha_c
    d_f += weights.lambda_reg2 * _reg_scale_grad(f_norm) / f_can

    grad = np.concatenate([d_r, d_t, [d_f], d_alpha_s, d_alpha_c])
    return float(total), grad, terms, degenerate


# ---------------------------------------------------------------------------
# Levenberg-Marquardt landmark-only fit


def landmark_init(model: MorphableModel, x_gt: np.ndarray) -> tuple[np.ndarray, Pose]:
    """Bounding-box heuristic: zero shape, identity rotation, scale and
    translation matching the ground-truth landmark bounding box."""
    x_gt = _check_landmarks(x_gt, "x_gt")
    mean = model.mean_shape.reshape(-1, 3)
    model_lm = mean[model.landmark_indices, :2]
    d_model = _bbox_diagonal(model_lm)
    d_gt = _bbox_diagonal(x_gt)
    f = d_gt / d_model if d_model > 0 else 1.0
    f = max(f, 1e-6)
    t = x_gt.mean(axis=0) - f * model_lm.mean(axis=0)
    return np.zeros(model.k_white), Pose(r=np.zeros(3), t=t, f=f)


def fit_landmarks(model: MorphableModel, x_gt: np.ndarray,
                  init: tuple[np.ndarray, Pose] | None = None,
                  max_iter: int = 200, energy_rtol: float = 1e-8,
                  grad_tol: float = 1e-10) -> FitReport:
    """Levenberg-Marquardt minimization of the landmark alignment energy."""
    t_start = time.perf_counter()
    x_gt = _check_landmarks(x_gt, "x_gt")
    if init is None:
        alpha0, pose0 = landmark_init(model, x_gt)
    else:
        alpha0, pose0 = init
        alpha0 = np.asarray(alpha0, dtype=float).ravel()

    k = model.k_white
    theta = np.concatenate([pose0.r, pose0.t, [pose0.f], alpha0])
    lm_idx = model.landmark_indices
    b_lm = shape_projection_matrix(model).reshape(-1, 3, k)[lm_idx]  # (55, 3, k)
    mean_lm = model.mean_shape.reshape(-1, 3)[lm_idx]

    def unpack(th):
        return th[:3], th[3:5], max(th[5], 1e-9), th[6:]

    def residuals_jac(th, with_jac=True):
        r_ang, t, f, alpha = unpack(th)
        s_lm = mean_lm + np.einsum("ldk,k->ld", b_lm, alpha)
        rot = rotation_from_euler(r_ang)
        m = P_ORTHO @ rot
        x_hat = f * s_lm @ m.T + t
        res = (x_hat - x_gt).ravel()
        if not with_jac:
            return res, None
        jac = np.zeros((2 * N_LANDMARKS, 6 + k))
        drots = rotation_derivatives(r_ang)
        for a in range(3):
            da = f * s_lm @ (P_ORTHO @ drots[a]).T
            jac[:, a] = da.ravel()
        jac[0::2, 3] = 1.0
        jac[1::2, 4] = 1.0
        jac[:, 5] = (s_lm @ m.T).ravel()
        proj_b = np.einsum("ij,ljk->lik", f * m, b_lm)  # (55, 2, k)
        jac[:, 6:] = proj_b.reshape(2 * N_LANDMARKS, k)
        return res, jac

    def energy(res):
        return float(np.linalg.norm(res.reshape(-1, 2), axis=1).mean())

    res, jac = residuals_jac(theta)
    if not np.all(np.isfinite(res)):
        raise FitDivergedError("non-finite residuals at initialization")
    e0 = energy(res)
    trace = [{"total": e0, "e0": e0}]
    mu = 1e-3
    nu = 2.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = jac.T @ res
        if np.linalg.norm(grad) < grad_tol:
            converged = True
            break
        jtj = jac.T @ jac
        diag = np.maximum(np.diag(jtj), 1e-12)
        accepted = False
        for _ in range(30):
            try:
                delta = np.linalg.solve(jtj + mu * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                mu *= nu
                continue
            theta_new = theta + delta
            theta_new[5] = max(theta_new[5], 1e-6)
            res_new, _ = residuals_jac(theta_new, with_jac=False)
            if not np.all(np.isfinite(res_new)):
                report = _lm_report(theta, trace, it, False, t_start, model)
                raise FitDivergedError("non-finite residuals during fit", best_report=report)
            cost = res @ res
            cost_new = res_new @ res_new
            pred = delta @ (mu * diag * delta - grad)
            rho = (cost - cost_new) / pred if pred > 0 else -1.0
            if cost_new < cost and rho > 0:
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                theta = theta_new
                res = res_new
                accepted = True
                break
            mu *= nu
            nu *= 2.0
        if not accepted:
            converged = True
            break
        e_new = energy(res)
        trace.append({"total": e_new, "e0": e_new})
        _res, jac = residuals_jac(theta)
        if abs(e0 - e_new) <= energy_rtol * max(e0, 1e-30):
            e0 = e_new
            converged = True
            break
        e0 = e_new
    return _lm_report(theta, trace, len(trace) - 1, converged, t_start, model)


def _lm_report(theta, trace, iterations, converged, t_start, model):
    pose = Pose(r=theta[:3], t=theta[3:5], f=max(theta[5], 1e-9))
    code = CodeVector(pose=pose, alpha_s=theta[6:], alpha_c=np.zeros(0))
    return FitReport(code=code, trace=trace, iterations=iterations,
                     converged=converged, wall_clock=time.perf_counter() - t_start)


# ---------------------------------------------------------------------------
# first-order photometric refinement


def pose_grid_init(model: MorphableModel, colour_model: ColourModel, image: np.ndarray,
                   cfg: RasterConfig,
                   rolls_deg=(-60, -45, -30, -15, 0, 15, 30, 45, 60),
                   f_norms=(0.7, 1.0, 1.3)) -> CodeVector:
    """Coarse grid over roll and scale; keeps the grid point with lowest pixel loss."""
    image = np.asarray(image, dtype=float)
    f_can = canonical_scale(model, cfg.width, cfg.height)
    mean = model.mean_shape.reshape(-1, 3)
    center = np.array([cfg.width / 2.0, cfg.height / 2.0])
    best = None
    colours = reconstruct_colour(colour_model, np.zeros(colour_model.k))
    for roll in rolls_deg:
        for fn in f_norms:
            r = np.array([0.0, 0.0, np.deg2rad(roll)])
            f = fn * f_can
            rot = rotation_from_euler(r)
            centroid2d = (mean @ rot.T)[:, :2].mean(axis=0)
            pose = Pose(r=r, t=center - f * centroid2d, f=f)
            proj = project_sop(mean, pose)
            out = rasterize(proj, colours, model.triangles, cfg)
            e = pixel_loss(out, image)
            if best is None or e < best[0]:
                best = (e, pose)
    return CodeVector(pose=best[1], alpha_s=np.zeros(model.k_white),
                      alpha_c=np.zeros(colour_model.k))


def fit_photometric(model: MorphableModel, colour_model: ColourModel, image: np.ndarray,
                    x_gt: np.ndarray | None, weights: LossWeights, init: CodeVector,
                    cfg: RasterConfig | None = None, max_iter: int = 400,
                    lr: float = 1e-2, plateau_patience: int = 30,
                    stop_rtol: float = 1e-6, stop_window: int = 20) -> FitReport:
    """Adaptive-moment first-order minimization of the total loss.

    Internally the pose block is rescaled (translation by the frame size,
    scale by the canonical scale) so a single step size suits all 86
    coordinates; gradients reported by :func:`total_loss` are unscaled.
    """
    t_start = time.perf_counter()
    image = np.asarray(image, dtype=float)
    if cfg is None:
        cfg = RasterConfig(width=image.shape[1], height=image.shape[0])
    f_can = canonical_scale(model, cfg.width, cfg.height)
    k_s, k_c = model.k_white, colour_model.k
    scale = np.ones(6 + k_s + k_c)
    scale[3] = scale[4] = float(max(cfg.width, cfg.height))
    scale[5] = f_can

    z = init.flatten() / scale
    m1 = np.zeros_like(z)
    m2 = np.zeros_like(z)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    cur_lr = lr

    def evaluate(zv):
        code = CodeVector.unflatten(zv * scale, k_s, k_c)
        total, grad, terms, degen = _total_loss_impl(model, colour_model, code, image,
                                                     x_gt, weights, cfg)
        return total, grad * scale, terms, degen

    total, grad_z, terms, degen = evaluate(z)
    if not np.isfinite(total):
        raise FitDivergedError("non-finite loss at initialization")
    trace = [terms]
    best = (total, z.copy())
    any_degen = degen
    since_best = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        m1 = beta1 * m1 + (1 - beta1) * grad_z
        m2 = beta2 * m2 + (1 - beta2) * grad_z**2
        m1h = m1 / (1 - beta1**it)
        m2h = m2 / (1 - beta2**it)
        z = z - cur_lr * m1h / (np.sqrt(m2h) + eps)
        z[5] = max(z[5], 1e-6 / f_can)  # keep scale positive
        total, grad_z, terms, degen = evaluate(z)
        any_degen = any_degen or degen
        if not np.isfinite(total) or not np.all(np.isfinite(grad_z)):
            report = _photo_report(best[1] * scale, trace, it, False, t_start, k_s, k_c, any_degen)
            raise FitDivergedError("non-finite loss during fit", best_report=report)
        trace.append(terms)
        if total < best[0] - 1e-15:
            best = (total, z.copy())
            since_best = 0
        else:
            since_best += 1
            if since_best >= plateau_patience:
                cur_lr = max(cur_lr * 0.5, 1e-5)
                since_best = 0
        if it >= stop_window:
            prev = trace[-1 - stop_window]["total"]
            if abs(prev - total) <= stop_rtol * max(abs(total), 1e-12):
                converged = True
                break
    return _photo_report(best[1] * scale, trace, it, converged, t_start, k_s, k_c, any_degen)


def _photo_report(vec, trace, iterations, converged, t_start, k_s, k_c, degen):
    code = CodeVector.unflatten(vec, k_s, k_c)
    return FitReport(code=code, trace=trace, iterations=iterations, converged=converged,
                     wall_clock=time.perf_counter() - t_start, degenerate_coverage=degen)
