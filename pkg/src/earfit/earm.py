"""EARM v1 model file format.

A single zip archive holding a JSON header plus raw binary blocks:

    header.json        metadata (see below)
    mean_shape.f64     3N little-endian float64
    shape_basis.f64    3N * k_full float64, row-major
    recover_matrix.f64 k_full * k_white float64, row-major
    triangles.u32      F * 3 little-endian uint32
    mean_colour.f64    3N float64 (optional)
    colour_basis.f64   3N * colour_k float64, row-major (optional)

Header keys: format ("EARM"), version (1), n_vertices, k_full, k_white,
coverage, n_triangles, landmark_indices (list of 55 ints), has_colour,
colour_k, colour_coverage.

Archives are written with a pinned timestamp and no compression so the same
model always produces byte-identical files.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

from .models import ColourModel, MorphableModel, WhiteningTransform

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_model(path, model: MorphableModel, colour: ColourModel | None = None) -> None:
    """Write a MorphableModel (and optional ColourModel) as an EARM v1 archive."""
    if colour is not None and colour.n_vertices != model.n_vertices:
        raise ValueError("colour model vertex count differs from shape model")
    header = {
        "format": "EARM",
        "version": 1,
        "n_vertices": model.n_vertices,
        "k_full": model.whitening.k_full,
        "k_white": model.whitening.k_white,
        "coverage": model.whitening.coverage,
        "n_triangles": int(model.triangles.shape[0]),
        "landmark_indices": [int(i) for i in model.landmark_indices],
        "has_colour": colour is not None,
        "colour_k": colour.k if colour is not None else 0,
        "colour_coverage": colour.coverage if colour is not None else 0.0,
    }
    path = Path(path)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "header.json", json.dumps(header, sort_keys=True, indent=1).encode())
        _write_entry(zf, "mean_shape.f64", model.mean_shape.astype("<f8").tobytes())
        _write_entry(zf, "shape_basis.f64", np.ascontiguousarray(model.shape_basis, dtype="<f8").tobytes())
        _write_entry(zf, "recover_matrix.f64",
                     np.ascontiguousarray(model.whitening.recover_matrix, dtype="<f8").tobytes())
        _write_entry(zf, "triangles.u32", np.ascontiguousarray(model.triangles, dtype="<u4").tobytes())
        if colour is not None:
            _write_entry(zf, "mean_colour.f64", colour.mean_colour.astype("<f8").tobytes())
            _write_entry(zf, "colour_basis.f64",
                         np.ascontiguousarray(colour.colour_basis, dtype="<f8").tobytes())


def _read_block(zf: zipfile.ZipFile, name: str, dtype, count: int) -> np.ndarray:
    raw = zf.read(name)
    expected = count * np.dtype(dtype).itemsize
    if len(raw) != expected:
        raise ValueError(f"block {name!r} has {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=dtype).astype(np.dtype(dtype).base)


def load_model(path) -> tuple[MorphableModel, ColourModel | None]:
    """Load an EARM v1 archive; returns (shape model, colour model or None)."""
    path = Path(path)
    with zipfile.ZipFile(path, "r") as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format") != "EARM" or header.get("version") != 1:
            raise ValueError(f"{path}: not an EARM v1 file")
        n = int(header["n_vertices"])
        k_full = int(header["k_full"])
        k_white = int(header["k_white"])
        n_tri = int(header["n_triangles"])
        mean_shape = _read_block(zf, "mean_shape.f64", "<f8", 3 * n)
        shape_basis = _read_block(zf, "shape_basis.f64", "<f8", 3 * n * k_full).reshape(3 * n, k_full)
        recover = _read_block(zf, "recover_matrix.f64", "<f8", k_full * k_white).reshape(k_full, k_white)
        triangles = _read_block(zf, "triangles.u32", "<u4", 3 * n_tri).reshape(n_tri, 3).astype(np.int64)
        whitening = WhiteningTransform(recover_matrix=recover, k_white=k_white,
                                       coverage=float(header["coverage"]))
        model = MorphableModel(mean_shape=mean_shape, shape_basis=shape_basis,
                               triangles=triangles, whitening=whitening,
                               landmark_indices=np.asarray(header["landmark_indices"]))
        colour = None
        if header.get("has_colour"):
            ck = int(header["colour_k"])
            mean_colour = _read_block(zf, "mean_colour.f64", "<f8", 3 * n)
            colour_basis = _read_block(zf, "colour_basis.f64", "<f8", 3 * n * ck).reshape(3 * n, ck)
            colour = ColourModel(mean_colour=mean_colour, colour_basis=colour_basis,
                                 coverage=float(header["colour_coverage"]))
    return model, colour
