import numpy as np
import pytest

from earfit.dataset import generate_synthetic_model, render_synthetic_corpus


@pytest.fixture(scope="session")
def small_model():
    """Small synthetic model shared across the suite (expensive-ish to build)."""
    return generate_synthetic_model(n_vertices=400, k_full=60, seed=1, k_white=20)


@pytest.fixture(scope="session")
def small_corpus(small_model):
    model, colour_model = small_model
    return render_synthetic_corpus(model, colour_model, 4, width=96, height=96, seed=3)


def random_mesh(rng, n_tris, lo=-2.0, hi=18.0, n_verts=None):
    """Random triangle soup with per-vertex depth and colours, for raster tests."""
    if n_verts is None:
        n_verts = 3 * n_tris
        tris = np.arange(n_verts, dtype=np.int64).reshape(n_tris, 3)
    else:
        tris = rng.integers(0, n_verts, size=(n_tris, 3)).astype(np.int64)
    v = rng.uniform(lo, hi, size=(n_verts, 2))
    depth = rng.uniform(-1.0, 1.0, size=n_verts)
    colours = rng.uniform(0.0, 1.0, size=(n_verts, 3))
    return v, depth, colours, tris
