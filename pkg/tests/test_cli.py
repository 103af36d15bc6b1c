import json
import os
import subprocess
import sys

import pytest

from conftest import small_scene
from mocapfuse import cli, synth


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """A small generated dataset driven entirely through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    spec = small_scene(motion=synth.walk_like())
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(synth.spec_to_json(spec)))
    out = root / "data"
    rc = cli.main(["synth", "--spec", str(spec_path), "--frames", "30",
                   "--out", str(out)])
    assert rc == 0
    return root, out


@pytest.fixture(scope="module")
def init_run(dataset):
    root, data = dataset
    out = root / "init"
    rc = cli.main(["init", "--calib", str(data / "calib.json"),
                   "--pcm-dir", str(data / "pcm"), "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def track_run(dataset, init_run):
    root, data = dataset
    out = root / "track"
    rc = cli.main(["track", "--calib", str(data / "calib.json"),
                   "--pcm-dir", str(data / "pcm"),
                   "--skeleton", str(init_run / "skeleton.json"),
                   "--out", str(out)])
    assert rc == 0
    return out


class TestHappyPath:
    def test_synth_outputs(self, dataset):
        root, data = dataset
        for name in ("calib.json", "scene.json", "ground_truth.csv"):
            assert (data / name).exists()
        assert (data / "pcm" / "cam0" / "rot0" / "frame29.pcm").exists()

    def test_init_outputs(self, init_run):
        assert (init_run / "skeleton.json").exists()
        state = json.loads((init_run / "init_state.json").read_text())
        assert len(state["pose0"]) == 40
        assert state["first_track_frame"] >= 1

    def test_track_outputs(self, track_run):
        for name in ("positions.csv", "pose.csv", "run.json",
                     "diagnostics.csv"):
            assert (track_run / name).exists()
            assert not (track_run / (name + ".tmp")).exists()

    def test_eval_metrics(self, dataset, track_run, tmp_path):
        root, data = dataset
        out = tmp_path / "eval"
        rc = cli.main(["eval", "--pred", str(track_run / "positions.csv"),
                       "--gt", str(data / "ground_truth.csv"),
                       "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["mpjpe_mm"]["Total"] < 40.0
        assert summary["pck_percent"]["@150mm"]["Total"] == 100.0
        series = (out / "series.csv").read_text().strip().splitlines()
        assert len(series) > 1


class TestDeterminism:
    def test_repeated_track_runs_byte_identical(self, dataset, init_run,
                                                tmp_path):
        root, data = dataset
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            rc = cli.main(["track", "--calib", str(data / "calib.json"),
                           "--pcm-dir", str(data / "pcm"),
                           "--skeleton", str(init_run / "skeleton.json"),
                           "--init-state", str(init_run / "init_state.json"),
                           "--out", str(out)])
            assert rc == 0
            outputs.append(out)
        for name in ("positions.csv", "pose.csv", "diagnostics.csv"):
            assert (outputs[0] / name).read_bytes() == \
                (outputs[1] / name).read_bytes()


class TestFlags:
    def test_flag_overrides_recorded_in_run_metadata(self, dataset, init_run,
                                                     tmp_path):
        root, data = dataset
        out = tmp_path / "custom"
        rc = cli.main(["track", "--calib", str(data / "calib.json"),
                       "--pcm-dir", str(data / "pcm"),
                       "--skeleton", str(init_run / "skeleton.json"),
                       "--out", str(out),
                       "--lattice-s", "12", "--lattice-k", "2",
                       "--cutoff-hz", "8", "--rotation", "off",
                       "--filter-mode", "offline",
                       "--end-frame", "15"])
        assert rc == 0
        run = json.loads((out / "run.json").read_text())
        assert run["config"]["lattice"]["s"] == 12.0
        assert run["config"]["lattice"]["k"] == 2
        assert run["config"]["filter"]["cutoff_hz"] == 8.0
        assert run["config"]["filter"]["mode"] == "offline"
        assert run["config"]["lattice"]["rotation_enabled"] is False

    def test_config_file_with_flag_precedence(self, dataset, init_run,
                                              tmp_path):
        root, data = dataset
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({"lattice": {"s": 25.0, "k": 2},
                                   "filter": {"cutoff_hz": 3.0}}))
        out = tmp_path / "cfgrun"
        rc = cli.main(["track", "--config", str(cfg),
                       "--calib", str(data / "calib.json"),
                       "--pcm-dir", str(data / "pcm"),
                       "--skeleton", str(init_run / "skeleton.json"),
                       "--out", str(out), "--lattice-s", "14",
                       "--end-frame", "14"])
        assert rc == 0
        run = json.loads((out / "run.json").read_text())
        assert run["config"]["lattice"]["s"] == 14.0   # flag wins
        assert run["config"]["lattice"]["k"] == 2      # file survives
        assert run["config"]["filter"]["cutoff_hz"] == 3.0


class TestUsageErrors:
    def test_track_without_calib_is_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["track", "--pcm-dir", "x", "--skeleton", "s.json",
                      "--out", str(tmp_path)])
        assert exc.value.code == 2
        assert "--calib" in capsys.readouterr().err

    def test_init_without_pcm_dir_is_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["init", "--calib", "c.json", "--out", str(tmp_path)])
        assert exc.value.code == 2
        assert "--pcm-dir" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 2

    def test_help_lists_flags(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["track", "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for flag in ("--config", "--calib", "--pcm-dir", "--skeleton",
                     "--out", "--lattice-s", "--lattice-k", "--cutoff-hz",
                     "--rotation", "--filter-mode"):
            assert flag in out
        with pytest.raises(SystemExit):
            cli.main(["synth", "--help"])
        assert "--seed" in capsys.readouterr().out


class TestRuntimeErrors:
    def test_missing_input_file_exits_one(self, tmp_path, capsys):
        rc = cli.main(["eval", "--pred", str(tmp_path / "nope.csv"),
                       "--gt", str(tmp_path / "nope2.csv"),
                       "--out", str(tmp_path / "out")])
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("error: FileNotFoundError:")

    def test_bad_calibration_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "calib.json"
        bad.write_text("{not json")
        rc = cli.main(["init", "--calib", str(bad), "--pcm-dir", "x",
                       "--out", str(tmp_path / "out")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error: ")


class TestInstalledEntryPoint:
    def test_console_script_smoke(self, tmp_path):
        spec = small_scene(image_width=160, image_height=120, focal_px=150.0,
                           sigma_px=3.0, motion=synth.walk_like())
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(synth.spec_to_json(spec)))
        env = dict(os.environ, MOCAPFUSE_LOG="INFO")
        proc = subprocess.run(
            [sys.executable, "-m", "mocapfuse.cli", "synth",
             "--spec", str(spec_path), "--frames", "2",
             "--out", str(tmp_path / "out")],
            capture_output=True, text=True, env=env)
        assert proc.returncode == 0
        assert "wrote 2 frames" in proc.stdout
