"""Command-line interface.

One binary with subcommands; every command reads an optional TOML config
file and applies flag overrides on top (flags win).  All randomness flows
from a single seed, artifacts are byte-identical across re-runs, and the
resolved configuration is echoed to stdout before any work starts.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical divergence.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import dataset, evaluation
from .colours import build_colour_model
from .earm import load_model, save_model
from .errors import EarfitError, FitDivergedError
from .fitting import (CodeVector, LossWeights, PRESETS, canonical_scale, fit_landmarks,
                      fit_photometric, landmark_loss, pose_grid_init)
from .images import read_png, write_png
from .models import reconstruct_colour, reconstruct_shape
from .projection import Pose, project_sop, select_landmarks
from .raster import RasterConfig, rasterize

EXIT_DATA = 3
EXIT_DIVERGED = 4


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _resolve(config: dict, flags: dict, defaults: dict) -> dict:
    """Defaults, overridden by config-file keys, overridden by explicit flags."""
    out = dict(defaults)
    for key in defaults:
        if key in config:
            out[key] = config[key]
    for key, value in flags.items():
        if value is not None:
            out[key] = value
    return out


def _echo_config(command: str, resolved: dict) -> None:
    click.echo(json.dumps({"command": command, "config": resolved}, sort_keys=True))


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _code_to_dict(code: CodeVector) -> dict:
    return {
        "schema": "code/1",
        "r": [float(x) for x in code.pose.r],
        "t": [float(x) for x in code.pose.t],
        "f": float(code.pose.f),
        "alpha_s": [float(x) for x in code.alpha_s],
        "alpha_c": [float(x) for x in code.alpha_c],
    }


def _code_from_dict(data: dict) -> CodeVector:
    if data.get("schema") != "code/1":
        raise ValueError("unknown code vector schema")
    pose = Pose(r=np.asarray(data["r"], dtype=float), t=np.asarray(data["t"], dtype=float),
                f=float(data["f"]))
    return CodeVector(pose=pose, alpha_s=np.asarray(data["alpha_s"], dtype=float),
                      alpha_c=np.asarray(data["alpha_c"], dtype=float))


def _weights_from(resolved: dict) -> LossWeights:
    explicit = [resolved.get(k) for k in
                ("lambda_pix", "lambda_lm", "lambda_reg1", "lambda_reg2")]
    if any(v is not None for v in explicit):
        preset = PRESETS[resolved["preset"]]
        base = [preset.lambda_pix, preset.lambda_lm, preset.lambda_reg1, preset.lambda_reg2]
        vals = [float(e) if e is not None else b for e, b in zip(explicit, base)]
        return LossWeights(*vals)
    return PRESETS[resolved["preset"]]


@click.group()
def main() -> None:
    """Fit posed, coloured 3D ear meshes to single images."""


def _run(fn):
    """Translate domain exceptions into the documented exit codes."""
    try:
        fn()
    except FitDivergedError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_DIVERGED)
    except (EarfitError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_DATA)


# ---------------------------------------------------------------------------
# synth


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--vertices", type=int, default=None)
@click.option("--k-full", type=int, default=None)
@click.option("--k-white", type=int, default=None)
@click.option("--count", type=click.IntRange(min=1), default=None)
@click.option("--width", type=int, default=None)
@click.option("--height", type=int, default=None)
@click.option("--param-sigma", type=float, default=None)
@click.option("--pixel-sigma", type=float, default=None)
@click.option("--edge-sigma", type=float, default=None)
@click.option("--seed", type=int, default=None)
def synth(config_path, **flags):
    """Generate the synthetic model and render a ground-truth corpus."""
    defaults = {"out_dir": "synth_out", "vertices": 800, "k_full": 120, "k_white": 40,
                "count": 10, "width": 128, "height": 128, "param_sigma": 1.0,
                "pixel_sigma": 0.0, "edge_sigma": 1.0, "seed": 0}
    cfg = _resolve(_load_config(config_path), flags, defaults)
    _echo_config("synth", cfg)

    def work():
        out_dir = Path(cfg["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        model, colour_model = dataset.generate_synthetic_model(
            n_vertices=cfg["vertices"], k_full=cfg["k_full"], seed=cfg["seed"],
            k_white=cfg["k_white"])
        save_model(out_dir / "model.earm", model, colour_model)
        items = dataset.render_synthetic_corpus(
            model, colour_model, cfg["count"], width=cfg["width"], height=cfg["height"],
            param_sigma=cfg["param_sigma"], pixel_sigma=cfg["pixel_sigma"],
            seed=cfg["seed"], edge_sigma=cfg["edge_sigma"])
        dataset.save_corpus(items, out_dir, seed=cfg["seed"], model_file="model.earm")
        click.echo(f"wrote model + {len(items)} images to {out_dir}")

    _run(work)


# ---------------------------------------------------------------------------
# fit


@main.command()
@click.argument("image_path", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--model", "model_path", type=click.Path(), default=None)
@click.option("--landmarks", "landmarks_path", type=click.Path(), default=None)
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None)
@click.option("--lambda-pix", type=float, default=None)
@click.option("--lambda-lm", type=float, default=None)
@click.option("--lambda-reg1", type=float, default=None)
@click.option("--lambda-reg2", type=float, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--max-iter", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--edge-sigma", type=float, default=None)
@click.option("--seed", type=int, default=None)
def fit(image_path, config_path, **flags):
    """Fit the full code vector to one image; writes code, report and overlay."""
    defaults = {"model_path": None, "landmarks_path": None, "preset": "with-landmarks",
                "lambda_pix": None, "lambda_lm": None, "lambda_reg1": None,
                "lambda_reg2": None, "out_dir": "fit_out", "max_iter": 400,
                "lr": 1e-2, "edge_sigma": 1.0, "seed": 0}
    cfg = _resolve(_load_config(config_path), flags, defaults)
    cfg["image"] = image_path
    _echo_config("fit", cfg)
    if cfg["model_path"] is None:
        raise click.UsageError("--model is required")
    weights = _weights_from(cfg)
    if weights.lambda_lm > 0 and cfg["landmarks_path"] is None:
        raise click.UsageError("the active preset uses landmarks; pass --landmarks "
                               "or --preset without-landmarks")

    def work():
        model, colour_model = load_model(cfg["model_path"])
        if colour_model is None:
            raise ValueError(f"{cfg['model_path']}: model has no colour component")
        image = read_png(image_path)
        rcfg = RasterConfig(width=image.shape[1], height=image.shape[0],
                            edge_sigma=cfg["edge_sigma"])
        x_gt = None
        if cfg["landmarks_path"] is not None:
            x_gt = dataset.read_landmark_file(cfg["landmarks_path"])

        if x_gt is not None:
            lm_report = fit_landmarks(model, x_gt)
            init = CodeVector(pose=lm_report.code.pose, alpha_s=lm_report.code.alpha_s,
                              alpha_c=np.zeros(colour_model.k))
        else:
            init = pose_grid_init(model, colour_model, image, rcfg)

        out_dir = Path(cfg["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        try:
            report = fit_photometric(model, colour_model, image, x_gt, weights, init,
                                     cfg=rcfg, max_iter=cfg["max_iter"], lr=cfg["lr"])
        except FitDivergedError as exc:
            if exc.best_report is not None:
                _write_fit_outputs(out_dir, exc.best_report, model, colour_model,
                                   image, x_gt, rcfg, cfg["seed"])
            raise
        _write_fit_outputs(out_dir, report, model, colour_model, image, x_gt,
                           rcfg, cfg["seed"])
        click.echo(f"final loss {report.final_loss():.6g} after "
                   f"{report.iterations} iterations -> {out_dir}")

    _run(work)


def _write_fit_outputs(out_dir: Path, report, model, colour_model, image, x_gt,
                       rcfg: RasterConfig, seed: int) -> None:
    code = report.code
    _write_json(out_dir / "code.json", _code_to_dict(code))

    shape = reconstruct_shape(model, code.alpha_s)
    colours = reconstruct_colour(colour_model, code.alpha_c)
    proj = project_sop(shape, code.pose)
    render = rasterize(proj, colours, model.triangles, rcfg)
    m = render.mask[..., None]
    overlay = np.clip(0.5 * image + 0.5 * (m * render.image + (1 - m) * image), 0.0, 1.0)
    write_png(out_dir / "overlay.png", overlay)

    payload = {
        "schema": "fit/1",
        "seed": seed,
        "iterations": report.iterations,
        "converged": report.converged,
        "degenerate_coverage": report.degenerate_coverage,
        "final": report.trace[-1],
    }
    if x_gt is not None:
        x_pred = select_landmarks(proj, model.landmark_indices)
        payload["landmark_loss"] = landmark_loss(x_pred, x_gt)
    _write_json(out_dir / "report.json", payload)


# ---------------------------------------------------------------------------
# build-colour-model


@main.command("build-colour-model")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--corpus", "corpus_path", type=click.Path(), default=None)
@click.option("--model", "model_path", type=click.Path(), default=None)
@click.option("--k", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
def build_colour_model_cmd(config_path, **flags):
    """Build a colour model from a landmark-annotated corpus."""
    defaults = {"corpus_path": None, "model_path": None, "k": 40,
                "out_path": "colour_model.earm", "seed": 0}
    cfg = _resolve(_load_config(config_path), flags, defaults)
    _echo_config("build-colour-model", cfg)
    if cfg["corpus_path"] is None or cfg["model_path"] is None:
        raise click.UsageError("--corpus and --model are required")

    def work():
        model, _ = load_model(cfg["model_path"])
        corpus = dataset.load_corpus(cfg["corpus_path"])
        colour_model, report = build_colour_model(corpus, model, k=cfg["k"])
        out_path = Path(cfg["out_path"])
        save_model(out_path, model, colour_model)
        report["seed"] = cfg["seed"]
        _write_json(out_path.with_suffix(".build.json"), report)
        click.echo(f"colour model with k={colour_model.k} "
                   f"(coverage {colour_model.coverage:.4f}) -> {out_path}")

    _run(work)


# ---------------------------------------------------------------------------
# augment


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--corpus", "corpus_path", type=click.Path(), default=None)
@click.option("--count", type=click.IntRange(min=1), default=None)
@click.option("--range", "angle_range", type=float, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--jobs", type=click.IntRange(min=1), default=None)
@click.option("--seed", type=int, default=None)
def augment(config_path, **flags):
    """Write rotation-augmented copies of every corpus item."""
    defaults = {"corpus_path": None, "count": 12, "angle_range": 60.0,
                "out_dir": "augmented", "jobs": 1, "seed": 0}
    cfg = _resolve(_load_config(config_path), flags, defaults)
    _echo_config("augment", cfg)
    if cfg["corpus_path"] is None:
        raise click.UsageError("--corpus is required")

    def work():
        corpus = dataset.load_corpus(cfg["corpus_path"])

        def one(pair):
            idx, item = pair
            # per-item seed: deterministic regardless of job count
            return dataset.augment(item, count=cfg["count"],
                                   angle_range_deg=cfg["angle_range"],
                                   seed=cfg["seed"] + idx)

        batches = _map_jobs(one, list(enumerate(corpus)), cfg["jobs"])
        items = [x for batch in batches for x in batch]
        dataset.save_corpus(items, cfg["out_dir"], seed=cfg["seed"])
        click.echo(f"wrote {len(items)} augmented images to {cfg['out_dir']}")

    _run(work)


def _map_jobs(fn, work_items, jobs: int) -> list:
    if jobs <= 1 or len(work_items) <= 1:
        return [fn(x) for x in work_items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, work_items))


# ---------------------------------------------------------------------------
# eval


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--pred", "pred_path", type=click.Path(), default=None)
@click.option("--gt", "gt_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--overlays/--no-overlays", default=None)
@click.option("--seed", type=int, default=None)
def eval_cmd(config_path, **flags):
    """Evaluate predicted landmarks against ground truth, matched by item id."""
    defaults = {"pred_path": None, "gt_path": None, "out_dir": "eval_out",
                "overlays": False, "seed": 0}
    cfg = _resolve(_load_config(config_path), flags, defaults)
    _echo_config("eval", cfg)
    if cfg["pred_path"] is None or cfg["gt_path"] is None:
        raise click.UsageError("--pred and --gt are required")

    def work():
        pred = {it.id: it for it in dataset.load_corpus(cfg["pred_path"])}
        gt = dataset.load_corpus(cfg["gt_path"])
        missing = [it.id for it in gt if it.id not in pred]
        if missing:
            raise ValueError(f"predictions missing for ids: {missing[:5]}")
        report = evaluation.evaluate([pred[it.id].landmarks for it in gt],
                                     [it.landmarks for it in gt])
        overlays = None
        if cfg["overlays"]:
            overlays = [(it.id, it.image, pred[it.id].landmarks) for it in gt]
        paths = evaluation.emit_report(report, cfg["out_dir"], overlays=overlays)
        click.echo(f"mean error {report.mean:.6g} over {len(gt)} items; "
                   f"wrote {len(paths)} files to {cfg['out_dir']}")

    _run(work)


# ---------------------------------------------------------------------------
# render


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--model", "model_path", type=click.Path(), default=None)
@click.option("--code", "code_path", type=click.Path(), default=None)
@click.option("--width", type=int, default=None)
@click.option("--height", type=int, default=None)
@click.option("--edge-sigma", type=float, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
def render(config_path, **flags):
    """Render a code vector (zero/canonical if no code file is given)."""
    defaults = {"model_path": None, "code_path": None, "width": 128, "height": 128,
                "edge_sigma": 1.0, "out_path": "render.png", "seed": 0}
    cfg = _resolve(_load_config(config_path), flags, defaults)
    _echo_config("render", cfg)
    if cfg["model_path"] is None:
        raise click.UsageError("--model is required")

    def work():
        model, colour_model = load_model(cfg["model_path"])
        if colour_model is None:
            raise ValueError(f"{cfg['model_path']}: model has no colour component")
        w, h = cfg["width"], cfg["height"]
        if cfg["code_path"] is not None:
            code = _code_from_dict(json.loads(Path(cfg["code_path"]).read_text()))
        else:
            # canonical pose: no rotation, canonical scale, mean shape centered
            f = canonical_scale(model, w, h)
            centroid = model.mean_shape.reshape(-1, 3)[:, :2].mean(axis=0)
            t = np.array([w / 2.0, h / 2.0]) - f * centroid
            code = CodeVector(pose=Pose(r=np.zeros(3), t=t, f=f),
                              alpha_s=np.zeros(model.k_white),
                              alpha_c=np.zeros(colour_model.k))
        shape = reconstruct_shape(model, code.alpha_s)
        colours = reconstruct_colour(colour_model, code.alpha_c)
        proj = project_sop(shape, code.pose)
        out = rasterize(proj, colours, model.triangles,
                        RasterConfig(width=w, height=h, edge_sigma=cfg["edge_sigma"]))
        write_png(cfg["out_path"], out.image)
        click.echo(f"wrote {cfg['out_path']}")

    _run(work)


if __name__ == "__main__":
    main()
