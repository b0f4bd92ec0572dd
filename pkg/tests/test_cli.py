import json

import numpy as np
import pytest
from click.testing import CliRunner

from earfit.cli import main
from earfit.images import read_png


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    """A tiny CLI-generated corpus shared by the command tests."""
    out = tmp_path_factory.mktemp("clicorpus")
    runner = CliRunner()
    res = runner.invoke(main, ["synth", "--out", str(out), "--vertices", "300",
                               "--k-full", "40", "--k-white", "12", "--count", "3",
                               "--width", "80", "--height", "80", "--seed", "7"])
    assert res.exit_code == 0, res.output
    return out


def _run(args):
    return CliRunner().invoke(main, args)


class TestSynth:
    def test_writes_model_and_manifest(self, corpus_dir):
        assert (corpus_dir / "model.earm").exists()
        manifest = json.loads((corpus_dir / "manifest.json").read_text())
        assert manifest["schema"] == "corpus/1"
        assert manifest["seed"] == 7
        assert len(manifest["items"]) == 3

    def test_deterministic_rerun(self, corpus_dir, tmp_path):
        res = _run(["synth", "--out", str(tmp_path), "--vertices", "300",
                    "--k-full", "40", "--k-white", "12", "--count", "3",
                    "--width", "80", "--height", "80", "--seed", "7"])
        assert res.exit_code == 0
        for name in ["model.earm", "manifest.json", "synth0000.png", "synth0000.lms"]:
            assert (tmp_path / name).read_bytes() == (corpus_dir / name).read_bytes()

    def test_count_zero_is_usage_error(self, tmp_path):
        res = _run(["synth", "--out", str(tmp_path), "--count", "0"])
        assert res.exit_code == 2

    def test_echoes_resolved_config(self, tmp_path):
        res = _run(["synth", "--out", str(tmp_path / "c"), "--count", "1",
                    "--vertices", "300", "--k-full", "20", "--k-white", "8"])
        first = json.loads(res.output.splitlines()[0])
        assert first["command"] == "synth"
        assert first["config"]["count"] == 1


class TestFit:
    def test_fit_outputs_and_determinism(self, corpus_dir, tmp_path):
        args = ["fit", str(corpus_dir / "synth0000.png"),
                "--model", str(corpus_dir / "model.earm"),
                "--landmarks", str(corpus_dir / "synth0000.lms"),
                "--max-iter", "40"]
        res = _run(args + ["--out", str(tmp_path / "a")])
        assert res.exit_code == 0, res.output
        code = json.loads((tmp_path / "a" / "code.json").read_text())
        assert code["schema"] == "code/1"
        assert len(code["r"]) == 3 and len(code["t"]) == 2
        assert len(code["alpha_s"]) == 12
        report = json.loads((tmp_path / "a" / "report.json").read_text())
        assert report["schema"] == "fit/1"
        assert "landmark_loss" in report
        assert (tmp_path / "a" / "overlay.png").exists()

        res2 = _run(args + ["--out", str(tmp_path / "b")])
        assert res2.exit_code == 0
        for name in ["code.json", "report.json", "overlay.png"]:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_missing_landmarks_is_usage_error(self, corpus_dir, tmp_path):
        res = _run(["fit", str(corpus_dir / "synth0000.png"),
                    "--model", str(corpus_dir / "model.earm"),
                    "--out", str(tmp_path)])
        assert res.exit_code == 2

    def test_without_landmarks_preset_runs(self, corpus_dir, tmp_path):
        res = _run(["fit", str(corpus_dir / "synth0000.png"),
                    "--model", str(corpus_dir / "model.earm"),
                    "--preset", "without-landmarks", "--max-iter", "25",
                    "--out", str(tmp_path)])
        assert res.exit_code == 0, res.output
        assert (tmp_path / "code.json").exists()

    def test_missing_model_file_is_data_error(self, corpus_dir, tmp_path):
        res = _run(["fit", str(corpus_dir / "synth0000.png"),
                    "--model", str(tmp_path / "nope.earm"),
                    "--landmarks", str(corpus_dir / "synth0000.lms"),
                    "--out", str(tmp_path)])
        assert res.exit_code == 3


class TestRender:
    def test_zero_code_renders_mean(self, corpus_dir, tmp_path):
        out_png = tmp_path / "mean.png"
        res = _run(["render", "--model", str(corpus_dir / "model.earm"),
                    "--width", "80", "--height", "80", "--out", str(out_png)])
        assert res.exit_code == 0, res.output
        # oracle: direct render of the mean shape at the canonical pose
        from earfit.earm import load_model
        from earfit.fitting import canonical_scale
        from earfit.models import reconstruct_colour, reconstruct_shape
        from earfit.projection import Pose, project_sop
        from earfit.raster import RasterConfig, rasterize
        model, colour_model = load_model(corpus_dir / "model.earm")
        f = canonical_scale(model, 80, 80)
        centroid = model.mean_shape.reshape(-1, 3)[:, :2].mean(axis=0)
        pose = Pose(r=np.zeros(3), t=np.array([40.0, 40.0]) - f * centroid, f=f)
        want = rasterize(project_sop(reconstruct_shape(model, np.zeros(model.k_white)), pose),
                         reconstruct_colour(colour_model, np.zeros(colour_model.k)),
                         model.triangles, RasterConfig(80, 80)).image
        got = read_png(out_png)
        assert np.abs(got - want).max() < 0.01

    def test_render_code_file(self, corpus_dir, tmp_path):
        manifest = json.loads((corpus_dir / "manifest.json").read_text())
        entry = manifest["items"][0]
        k_s, k_c = entry["gt_dims"]
        vec = entry["gt_code"]
        code = {"schema": "code/1", "r": vec[:3], "t": vec[3:5], "f": vec[5],
                "alpha_s": vec[6:6 + k_s], "alpha_c": vec[6 + k_s:]}
        (tmp_path / "code.json").write_text(json.dumps(code))
        res = _run(["render", "--model", str(corpus_dir / "model.earm"),
                    "--code", str(tmp_path / "code.json"),
                    "--width", "80", "--height", "80",
                    "--out", str(tmp_path / "r.png")])
        assert res.exit_code == 0, res.output
        got = read_png(tmp_path / "r.png")
        want = read_png(corpus_dir / entry["image"])
        assert np.abs(got - want).max() < 0.02


class TestEvalCommand:
    def test_identical_manifests_zero_errors(self, corpus_dir, tmp_path):
        res = _run(["eval", "--pred", str(corpus_dir / "manifest.json"),
                    "--gt", str(corpus_dir / "manifest.json"),
                    "--out", str(tmp_path)])
        assert res.exit_code == 0, res.output
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["mean"] == 0.0
        assert all(e == 0.0 for e in report["errors"])

    def test_missing_pred_is_data_error(self, corpus_dir, tmp_path):
        res = _run(["eval", "--pred", str(tmp_path / "nope.json"),
                    "--gt", str(corpus_dir / "manifest.json"), "--out", str(tmp_path)])
        assert res.exit_code == 3


class TestAugmentCommand:
    def test_twelve_outputs_per_input(self, corpus_dir, tmp_path):
        res = _run(["augment", "--corpus", str(corpus_dir / "manifest.json"),
                    "--count", "12", "--range", "60", "--seed", "1",
                    "--out", str(tmp_path / "aug")])
        assert res.exit_code == 0, res.output
        manifest = json.loads((tmp_path / "aug" / "manifest.json").read_text())
        assert len(manifest["items"]) == 36

    def test_jobs_flag_does_not_change_output(self, corpus_dir, tmp_path):
        for jobs, name in (("1", "a"), ("3", "b")):
            res = _run(["augment", "--corpus", str(corpus_dir / "manifest.json"),
                        "--count", "4", "--seed", "1", "--jobs", jobs,
                        "--out", str(tmp_path / name)])
            assert res.exit_code == 0
        a_manifest = (tmp_path / "a" / "manifest.json").read_bytes()
        assert a_manifest == (tmp_path / "b" / "manifest.json").read_bytes()
        for item in json.loads(a_manifest)["items"]:
            assert ((tmp_path / "a" / item["image"]).read_bytes()
                    == (tmp_path / "b" / item["image"]).read_bytes())


class TestBuildColourModelCommand:
    def test_builds_and_reports(self, corpus_dir, tmp_path):
        out = tmp_path / "cm.earm"
        res = _run(["build-colour-model", "--corpus", str(corpus_dir / "manifest.json"),
                    "--model", str(corpus_dir / "model.earm"), "--k", "2",
                    "--out", str(out)])
        assert res.exit_code == 0, res.output
        from earfit.earm import load_model
        _, colour = load_model(out)
        assert colour is not None and colour.k == 2
        report = json.loads(out.with_suffix(".build.json").read_text())
        assert report["schema"] == "colour-build/1"
        assert report["images_used"] == 3


class TestConfigFile:
    def test_config_file_applies_and_flags_win(self, corpus_dir, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text('count = 2\nvertices = 300\nk_full = 20\nk_white = 8\n'
                       f'out_dir = "{tmp_path / "fromcfg"}"\nwidth = 64\nheight = 64\n')
        res = _run(["synth", "--config", str(cfg)])
        assert res.exit_code == 0, res.output
        manifest = json.loads((tmp_path / "fromcfg" / "manifest.json").read_text())
        assert len(manifest["items"]) == 2
        # flag overrides the config value
        res = _run(["synth", "--config", str(cfg), "--count", "1",
                    "--out", str(tmp_path / "flagwins")])
        assert res.exit_code == 0
        manifest = json.loads((tmp_path / "flagwins" / "manifest.json").read_text())
        assert len(manifest["items"]) == 1
