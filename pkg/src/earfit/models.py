"""Statistical shape and colour models: PCA construction, whitening, reconstruction.

The shape model is a linear morphable model: a mean vertex vector plus an
orthonormal basis of deformation components.  Low-dimensional parameters live
in a whitened space (zero mean, unit variance per dimension); the whitening
transform recovers full PCA coefficients from them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVarianceError, ModelConstructionError

N_LANDMARKS = 55

# Eigenvalues below this fraction of the leading one are treated as numerical
# rank deficiency and never retained.
_RANK_RTOL = 1e-12


@dataclass(frozen=True)
class WhiteningTransform:
    """Maps whitened parameters back to full PCA coefficients.

    ``recover_matrix`` is (k_full, k_white): whitened parameters are
    multiplied by it to obtain the unwhitened coefficient vector.  Because
    PCA coefficients are axis-aligned, it is a diagonal scale embedded in
    the first ``k_white`` rows.
    """

    recover_matrix: np.ndarray
    k_white: int
    coverage: float

    def __post_init__(self):
        m = np.asarray(self.recover_matrix, dtype=float)
        if m.ndim != 2 or m.shape[1] != self.k_white:
            raise ValueError(f"recover_matrix shape {m.shape} inconsistent with k_white={self.k_white}")
        if not 0.0 < self.coverage <= 1.0 + 1e-12:
            raise ValueError(f"coverage must be in (0, 1], got {self.coverage}")
        object.__setattr__(self, "recover_matrix", m)

    @property
    def k_full(self) -> int:
        return self.recover_matrix.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        """Per-dimension scales of the whitened parameters."""
        return np.diagonal(self.recover_matrix)

    def unwhiten(self, alpha: np.ndarray) -> np.ndarray:
        """Recover full PCA coefficients from whitened parameters (no mean added)."""
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (self.k_white,):
            raise ValueError(f"expected parameter vector of length {self.k_white}, got shape {alpha.shape}")
        return self.recover_matrix @ alpha

    def whiten(self, beta: np.ndarray) -> np.ndarray:
        """Project full PCA coefficients onto the whitened space (left inverse of unwhiten)."""
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.k_full,):
            raise ValueError(f"expected coefficient vector of length {self.k_full}, got shape {beta.shape}")
        return beta[: self.k_white] / self.sigma


@dataclass(frozen=True)
class MorphableModel:
    """Linear 3D shape model with landmark vertex indices.

    ``mean_shape`` is a length-3N vector (x, y, z per vertex, row-major);
    ``shape_basis`` is 3N x k_full with orthonormal columns ordered by
    decreasing variance.
    """

    mean_shape: np.ndarray
    shape_basis: np.ndarray
    triangles: np.ndarray
    whitening: WhiteningTransform
    landmark_indices: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean_shape, dtype=float).ravel()
        basis = np.asarray(self.shape_basis, dtype=float)
        tris = np.asarray(self.triangles, dtype=np.int64)
        lms = np.asarray(self.landmark_indices, dtype=np.int64).ravel()
        if mean.size % 3 != 0 or mean.size < 9:
            raise ValueError(f"mean_shape length {mean.size} is not 3N with N >= 3")
        n = mean.size // 3
        if basis.ndim != 2 or basis.shape[0] != mean.size:
            raise ValueError(f"shape_basis shape {basis.shape} inconsistent with 3N={mean.size}")
        if basis.shape[1] != self.whitening.k_full:
            raise ValueError("shape_basis column count differs from whitening k_full")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError(f"triangles must be F x 3, got {tris.shape}")
        if tris.min(initial=0) < 0 or tris.max(initial=0) >= n:
            raise ValueError("triangle index out of range")
        if lms.size != N_LANDMARKS:
            raise ValueError(f"expected {N_LANDMARKS} landmark indices, got {lms.size}")
        if lms.min() < 0 or lms.max() >= n:
            raise ValueError("landmark index out of range")
        object.__setattr__(self, "mean_shape", mean)
        object.__setattr__(self, "shape_basis", basis)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "landmark_indices", lms)

    @property
    def n_vertices(self) -> int:
        return self.mean_shape.size // 3

    @property
    def k_white(self) -> int:
        return self.whitening.k_white


@dataclass(frozen=True)
class ColourModel:
    """Per-vertex RGB colour model; parameters are whitened (basis absorbs scale)."""

    mean_colour: np.ndarray
    colour_basis: np.ndarray
    coverage: float

    def __post_init__(self):
        mean = np.asarray(self.mean_colour, dtype=float).ravel()
        basis = np.asarray(self.colour_basis, dtype=float)
        if mean.size % 3 != 0:
            raise ValueError(f"mean_colour length {mean.size} is not 3N")
        if basis.ndim != 2 or basis.shape[0] != mean.size:
            raise ValueError(f"colour_basis shape {basis.shape} inconsistent with 3N={mean.size}")
        if not 0.0 < self.coverage <= 1.0 + 1e-12:
            raise ValueError(f"coverage must be in (0, 1], got {self.coverage}")
        object.__setattr__(self, "mean_colour", mean)
        object.__setattr__(self, "colour_basis", basis)

    @property
    def n_vertices(self) -> int:
        return self.mean_colour.size // 3

    @property
    def k(self) -> int:
        return self.colour_basis.shape[1]


def build_pca(samples: np.ndarray, target_coverage: float | None = None,
              k: int | None = None) -> tuple[np.ndarray, np.ndarray, WhiteningTransform]:
    """PCA with whitening via thin SVD of the centered data matrix.

    Exactly one of ``target_coverage`` (retain the smallest dimension whose
    cumulative variance fraction reaches it) or ``k`` (fixed dimension) must
    be given.  Returns (mean, basis, whitening) where basis columns are unit
    principal components ordered by decreasing variance and the whitening
    scales are the per-component standard deviations (sample convention,
    ddof=1).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ValueError(f"samples must be a 2D matrix, got shape {samples.shape}")
    m, d = samples.shape
    if m < 2 or d < 1:
        raise ModelConstructionError(f"need at least 2 samples of dimension >= 1, got {samples.shape}")
    if not np.all(np.isfinite(samples)):
        raise ModelConstructionError("samples contain non-finite values")
    if (target_coverage is None) == (k is None):
        raise ValueError("specify exactly one of target_coverage or k")
    if target_coverage is not None and not 0.0 < target_coverage <= 1.0:
        raise ValueError(f"target_coverage must be in (0, 1], got {target_coverage}")
    if k is not None and k < 1:
        raise ValueError(f"k must be >= 1, got {k}")

    mean = samples.mean(axis=0)
    centered = samples - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    eigvals = svals**2 / (m - 1)
    total = eigvals.sum()
    if total <= 0.0 or eigvals[0] <= 0.0:
        raise DegenerateVarianceError("samples have zero variance; no principal components")
    rank = int(np.sum(eigvals > _RANK_RTOL * eigvals[0]))
    eigvals = eigvals[:rank]
    basis = vt[:rank].T

    # Fix each component's sign so its largest-magnitude entry is positive.
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(rank)])
    flip[flip == 0] = 1.0
    basis = basis * flip

    cum = np.cumsum(eigvals)
    if target_coverage is not None:
        k_white = int(np.searchsorted(cum, target_coverage * total - 1e-15 * total) + 1)
        k_white = min(k_white, rank)
    else:
        k_white = min(k, rank)
    coverage = float(cum[k_white - 1] / total)

    sigma = np.sqrt(eigvals[:k_white])
    recover = np.zeros((rank, k_white))
    recover[np.arange(k_white), np.arange(k_white)] = sigma
    whitening = WhiteningTransform(recover_matrix=recover, k_white=k_white, coverage=coverage)
    return mean, basis, whitening


def unwhiten(whitening: WhiteningTransform, alpha: np.ndarray) -> np.ndarray:
    """Recover full PCA coefficients from whitened parameters (no mean term)."""
    return whitening.unwhiten(alpha)


def _check_params(alpha: np.ndarray, k: int, name: str) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size != k:
        raise ValueError(f"{name} must have length {k}, got {alpha.size}")
    if not np.all(np.isfinite(alpha)):
        raise ValueError(f"{name} contains non-finite values")
    return alpha


def reconstruct_shape(model: MorphableModel, alpha_s: np.ndarray) -> np.ndarray:
    """Vertex positions (N x 3) for whitened shape parameters."""
    alpha_s = _check_params(alpha_s, model.k_white, "alpha_s")
    beta = model.whitening.unwhiten(alpha_s)
    flat = model.mean_shape + model.shape_basis @ beta
    return flat.reshape(-1, 3)


def reconstruct_colour(model: ColourModel, alpha_c: np.ndarray) -> np.ndarray:
    """Per-vertex RGB (N x 3); values are not clamped here so gradients flow."""
    alpha_c = _check_params(alpha_c, model.k, "alpha_c")
    flat = model.mean_colour + model.colour_basis @ alpha_c
    return flat.reshape(-1, 3)
