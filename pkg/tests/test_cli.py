import json
import hashlib

import numpy as np
import pytest

from hypersample import io
from hypersample.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_THRESHOLD, main
from hypersample.experiments import standard_scene
from hypersample.runner import RunConfig, default_view_indices, write_run, write_scene
from hypersample.synthetic import Plane, SceneSpec, Texture, render_video

W, H, T = 56, 32, 6


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_scene(root / "scene.json", standard_scene(0, num_frames=T, width=W, height=H))
    assert main(["synth", str(root / "scene.json"), str(root / "ds")]) == EXIT_OK
    return root


def write_config(path, **fields):
    base = {"schema": "hypersample.run/1", "dataset": "ds", "output": "run", "mode": "external",
            "num_frames": T, "width": W, "height": H, "steps": 3}
    base.update(fields)
    path.write_text(json.dumps(base))
    return path


class TestSynth:
    def test_minimal_plane_dataset(self, tmp_path):
        spec = SceneSpec(width=16, height=12, num_frames=8,
                         planes=[Plane([0, 1.4, 5], [1, 0, 0], [0, 1, 0], [5, 5], Texture())])
        write_scene(tmp_path / "s.json", spec)
        assert main(["synth", str(tmp_path / "s.json"), str(tmp_path / "a")]) == EXIT_OK
        out = tmp_path / "a"
        assert len(list((out / "frames").glob("*.ppm"))) == 8
        assert len(list((out / "depths").glob("*.depth"))) == 8
        assert len(io.read_poses(out / "poses.txt")) == 8
        assert (out / "intrinsics.txt").exists()
        assert main(["synth", str(tmp_path / "s.json"), str(tmp_path / "b")]) == EXIT_OK
        assert tree_bytes(out) == tree_bytes(tmp_path / "b")

    def test_unreadable_spec(self, tmp_path):
        assert main(["synth", str(tmp_path / "missing.json"), str(tmp_path / "o")]) == EXIT_DATA
        (tmp_path / "bad.json").write_text("{not json")
        assert main(["synth", str(tmp_path / "bad.json"), str(tmp_path / "o")]) == EXIT_DATA

    def test_unwritable_directory(self, tmp_path):
        write_scene(tmp_path / "s.json", SceneSpec(width=4, height=4, num_frames=1))
        (tmp_path / "file").write_text("x")
        assert main(["synth", str(tmp_path / "s.json"), str(tmp_path / "file" / "sub")]) == EXIT_DATA


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig(dataset="d", output="o")
        cfg.validate()
        assert (cfg.num_frames, cfg.height, cfg.width, cfg.steps, cfg.cfg_scale) == (49, 384, 672, 30, 6.0)
        assert default_view_indices(49) == [0, 12, 24, 36, 48]

    @pytest.mark.parametrize(
        "fields, message",
        [
            ({"steps": 0}, "'steps' must be a positive integer"),
            ({"mode": "sideways"}, "'mode' must be"),
            ({"schema": "hypersample.run/0"}, "schema must be"),
            ({"bogus": 1}, "unknown config field(s): bogus"),
            ({"downsample": 5}, "'downsample' 5 must divide"),
            ({"predictor": {"kind": "magic"}}, "predictor kind"),
            ({"mode": "internal", "target_indices": [0, 99]}, "'target_indices'"),
        ],
    )
    def test_validation_messages(self, dataset, capsys, fields, message):
        cfg = write_config(dataset / "bad.json", **fields)
        assert main(["generate", str(cfg)]) == EXIT_CONFIG
        assert message in capsys.readouterr().err

    def test_dimension_mismatch(self, dataset, capsys):
        cfg = write_config(dataset / "dims.json", width=64)
        assert main(["generate", str(cfg)]) == EXIT_CONFIG
        assert "dataset has 6 frames of 56x32" in capsys.readouterr().err

    def test_too_few_frames_for_sweep(self, tmp_path, capsys):
        write_scene(tmp_path / "s.json", standard_scene(0, num_frames=3, width=W, height=H))
        assert main(["synth", str(tmp_path / "s.json"), str(tmp_path / "ds")]) == EXIT_OK
        cfg = write_config(tmp_path / "c.json", num_frames=3)
        assert main(["generate", str(cfg)]) == EXIT_CONFIG
        assert "at least one frame per target view" in capsys.readouterr().err

    def test_missing_dataset(self, dataset):
        cfg = write_config(dataset / "nods.json", dataset="nowhere")
        assert main(["generate", str(cfg)]) == EXIT_DATA

    def test_missing_config(self, tmp_path):
        assert main(["generate", str(tmp_path / "none.json")]) == EXIT_CONFIG

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["generate"])
        assert exc.value.code == EXIT_CONFIG


class TestGenerate:
    def test_external_run_structure(self, dataset):
        cfg = write_config(dataset / "ext.json", output="ext")
        assert main(["generate", str(cfg)]) == EXIT_OK
        run = dataset / "ext"
        manifest = json.loads((run / "manifest.json").read_text())
        assert len(manifest["views"]) == 5
        assert sorted(p.name for p in (run / "views").iterdir()) == [f"view_{m:02d}" for m in range(1, 6)]
        assert manifest["observed_incremental_sizes"] == [1, 2, 3, 4, 5]
        assert manifest["incremental_growth"] == [1, 2, 3, 4, 5, 6]
        assert len(list((run / "aux").glob("*.ppm"))) == T
        assert "view 5 sampled in" in (run / "run.log").read_text()
        listed = {a["path"]: a["sha256"] for a in manifest["artifacts"]}
        on_disk = {k: hashlib.sha256(v).hexdigest() for k, v in tree_bytes(run).items()
                   if k not in ("manifest.json", "run.log")}
        assert listed == on_disk

    def test_internal_mode_has_no_aux(self, dataset):
        cfg = write_config(dataset / "int.json", output="int", mode="internal", target_indices=[0, 2, 5])
        assert main(["generate", str(cfg)]) == EXIT_OK
        manifest = json.loads((dataset / "int" / "manifest.json").read_text())
        assert manifest["aux"] is None and not (dataset / "int" / "aux").exists()
        assert len(manifest["views"]) == 3 and manifest["observed_incremental_sizes"] == [0, 1, 2]

    def test_same_config_byte_identical(self, dataset):
        cfg = write_config(dataset / "det.json", output="det1")
        assert main(["generate", str(cfg)]) == EXIT_OK
        assert main(["generate", str(cfg), "--output", str(dataset / "det2")]) == EXIT_OK
        a, b = tree_bytes(dataset / "det1"), tree_bytes(dataset / "det2")
        a.pop("run.log"), b.pop("run.log")
        ma, mb = json.loads(a.pop("manifest.json")), json.loads(b.pop("manifest.json"))
        assert a == b
        assert ma["artifacts"] == mb["artifacts"]

    def test_flags_override_config(self, dataset):
        cfg = write_config(dataset / "ovr.json", output="ovr")
        assert main(["generate", str(cfg), "--pipeline", "baseline", "--seed", "3", "--no-with-static"]) == EXIT_OK
        manifest = json.loads((dataset / "ovr" / "manifest.json").read_text())
        assert manifest["pipeline"] == "baseline" and manifest["config"]["seed"] == 3
        assert manifest["config"]["with_static"] is False

    def test_subprocess_predictor(self, dataset):
        import sys

        cfg = write_config(dataset / "sub.json", output="sub", pipeline="baseline",
                           predictor={"kind": "subprocess",
                                      "command": [sys.executable, "-m", "hypersample.protocol"]})
        ref = write_config(dataset / "ref.json", output="ref", pipeline="baseline")
        assert main(["generate", str(cfg)]) == EXIT_OK
        assert main(["generate", str(ref)]) == EXIT_OK
        a, b = tree_bytes(dataset / "sub" / "views"), tree_bytes(dataset / "ref" / "views")
        assert a == b


@pytest.fixture(scope="module")
def runs(dataset):
    spec = standard_scene(0, num_frames=T, width=W, height=H)
    qs = spec.target_poses()
    gt = [np.stack([g.frame for g in render_video(spec, q)]) for q in qs]
    write_run(dataset / "gt", gt, qs, "groundtruth")
    for name, pipeline in (("guided", "guided"), ("baseline", "baseline")):
        cfg = write_config(dataset / f"{name}.json", output=name, pipeline=pipeline, steps=10)
        assert main(["generate", str(cfg)]) == EXIT_OK
    return dataset


class TestEvaluate:
    def test_ground_truth_scores_zero(self, runs):
        assert main(["evaluate", str(runs / "gt"), "--dataset", str(runs / "ds"), "--out", str(runs / "r0")]) == 0
        report = json.loads((runs / "r0" / "report.json").read_text())
        assert report["runs"][0]["mean"] < 1e-6
        assert (runs / "r0" / "report.tsv").read_text().startswith("run\tpipeline\tmean")

    def test_guided_not_worse_than_baseline(self, runs):
        args = ["evaluate", str(runs / "guided"), str(runs / "baseline"), "--dataset", str(runs / "ds"),
                "--out", str(runs / "r1")]
        assert main(args) == EXIT_OK
        means = json.loads((runs / "r1" / "report.json").read_text())["means"]
        assert set(means) == {str(runs / "guided"), str(runs / "baseline")}
        assert means[str(runs / "guided")] <= means[str(runs / "baseline")]
        assert main(args + ["--max-score", "1e-4"]) == EXIT_THRESHOLD

    def test_missing_view_named(self, runs, capsys):
        import shutil

        shutil.copytree(runs / "gt", runs / "gt_broken")
        shutil.rmtree(runs / "gt_broken" / "views" / "view_03")
        assert main(["evaluate", str(runs / "gt_broken"), "--dataset", str(runs / "ds")]) == EXIT_DATA
        assert "view 3 is missing" in capsys.readouterr().err

    def test_mismatched_view_counts(self, runs, capsys):
        spec = standard_scene(0, num_frames=T, width=W, height=H)
        qs = spec.target_poses()[:3]
        write_run(runs / "three", [np.stack([g.frame for g in render_video(spec, q)]) for q in qs], qs, "gt")
        assert main(["evaluate", str(runs / "gt"), str(runs / "three"), "--dataset", str(runs / "ds")]) == EXIT_DATA
        assert "different view counts" in capsys.readouterr().err
