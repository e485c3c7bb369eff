"""End-to-end tests for the command-line interface.

A module-scoped fixture drives the whole micro pipeline in-process through
``dispatch`` (synth -> ingest -> split -> train-rmp -> train-rmc) on a
16x16 dataset, then individual tests exercise eval, ablate, sweep-density
and export-maps against the resulting artifacts.
"""

import json
import subprocess
import sys
from types import SimpleNamespace

import numpy as np
import pytest

from fptc import __version__
from fptc.cli import MANIFEST_FILE, SPLITS_FILE, dispatch
from fptc.scene import SPLIT_NAMES
from fptc.training import load_checkpoint

SEED = 7
SCENE_COUNT = 12

# Everything scaled down so a full command finishes in about a second.
MICRO_CONFIG = """\
# micro-scale run configuration for tests
norm.rsrp_min_dbm = -110
norm.rsrp_max_dbm = 0

synth.grid_px = 16
synth.buildings_min = 1
synth.buildings_max = 3
synth.footprint_min_px = 2
synth.footprint_max_px = 5
synth.tx_margin_px = 2

net.levels = 3
net.base_channels = 8
net.max_channels = 16
net.sa_resolutions = 4
net.disc_levels = 3
net.rc_blocks = 1

train.measurement_count = 8
train.predict.epochs = 2
train.predict.batch_size = 4
train.correct.epochs = 2
train.correct.batch_size = 4

sweep.percentages = 2, 5
"""


def run(*argv):
    return dispatch([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Synthesize, validate, split and train both stages once."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "micro.cfg"
    config.write_text(MICRO_CONFIG)
    data = root / "data"
    out = root / "out"
    common = ("--config", config, "--data", data, "--seed", SEED)
    assert run("synth", *common, "--out", data, "--count", SCENE_COUNT) == 0
    assert run("ingest", *common, "--out", out) == 0
    assert run("split", *common, "--out", data) == 0
    assert run("train-rmp", *common, "--out", out) == 0
    assert run("train-rmc", *common, "--out", out) == 0
    return SimpleNamespace(root=root, config=config, data=data, out=out,
                           common=common)


# ---------------------------------------------------------------------------
# parser and error surface


class TestParser:
    def test_unknown_command_exits_2(self, capsys):
        assert dispatch(["frobnicate"]) == 2
        assert "invalid choice" in capsys.readouterr().err

    def test_missing_command_exits_2(self, capsys):
        assert dispatch([]) == 2

    def test_version_flag(self, capsys):
        assert dispatch(["--version"]) == 0
        assert capsys.readouterr().out.strip() == __version__

    def test_version_subprocess(self):
        proc = subprocess.run([sys.executable, "-m", "fptc.cli", "--version"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert proc.stdout.strip() == __version__


class TestConfigErrors:
    def test_unknown_key_exits_1(self, tmp_path, capsys):
        rc = run("synth", "--set", "bogus.key=1", "--out", tmp_path)
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert "bogus.key" in err

    def test_bad_value_names_key(self, tmp_path, capsys):
        rc = run("synth", "--set", "synth.count=abc", "--out", tmp_path)
        assert rc == 1
        assert "synth.count" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        rc = run("synth", "--config", tmp_path / "nope.cfg", "--out", tmp_path)
        assert rc == 1
        assert "missing config file" in capsys.readouterr().err

    def test_malformed_override(self, tmp_path, capsys):
        rc = run("synth", "--set", "seedzero", "--out", tmp_path)
        assert rc == 1
        assert "key=value" in capsys.readouterr().err

    def test_malformed_config_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("seed 3\n")
        rc = run("split", "--config", bad, "--data", tmp_path, "--out", tmp_path)
        assert rc == 1
        assert "expected 'key = value'" in capsys.readouterr().err


class TestSeedResolution:
    def test_env_seed_fallback(self, pipeline, tmp_path, monkeypatch):
        monkeypatch.setenv("FPTC_SEED", "123")
        assert run("split", "--data", pipeline.data, "--out", tmp_path) == 0
        manifest = json.loads((tmp_path / MANIFEST_FILE).read_text())
        assert manifest["seed"] == 123
        assert manifest["command"] == "split"

    def test_explicit_seed_beats_env(self, pipeline, tmp_path, monkeypatch):
        monkeypatch.setenv("FPTC_SEED", "123")
        assert run("split", "--data", pipeline.data, "--out", tmp_path,
                   "--seed", 9) == 0
        manifest = json.loads((tmp_path / MANIFEST_FILE).read_text())
        assert manifest["seed"] == 9

    def test_invalid_env_seed(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("FPTC_SEED", "pony")
        rc = run("split", "--data", tmp_path, "--out", tmp_path)
        assert rc == 1
        assert "FPTC_SEED" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# dataset commands


class TestSynth:
    def test_writes_scene_tree(self, pipeline):
        dirs = sorted(p.name for p in pipeline.data.iterdir() if p.is_dir())
        assert dirs == [f"scene_{i:05d}" for i in range(SCENE_COUNT)]
        first = pipeline.data / "scene_00000"
        for name in ("meta.json", "heights.csv", "ground_truth.csv"):
            assert (first / name).is_file()

    def test_manifest_written(self, pipeline, tmp_path):
        assert run("synth", "--config", pipeline.config, "--out", tmp_path,
                   "--seed", 3, "--count", 2) == 0
        manifest = json.loads((tmp_path / MANIFEST_FILE).read_text())
        assert manifest["command"] == "synth"
        assert manifest["config"]["synth.count"] == 2
        assert manifest["overrides"]["synth.count"] == 2

    def test_deterministic_for_seed(self, pipeline, tmp_path):
        for sub in ("a", "b"):
            assert run("synth", "--config", pipeline.config, "--out",
                       tmp_path / sub, "--seed", 11, "--count", 2) == 0
        for sid in ("scene_00000", "scene_00001"):
            a = (tmp_path / "a" / sid / "ground_truth.csv").read_bytes()
            b = (tmp_path / "b" / sid / "ground_truth.csv").read_bytes()
            assert a == b

    def test_prints_summary(self, pipeline, tmp_path, capsys):
        assert run("synth", "--config", pipeline.config, "--out", tmp_path,
                   "--seed", 3, "--count", 1) == 0
        assert "wrote 1 scenes under" in capsys.readouterr().out


class TestIngest:
    def test_validates_and_reports(self, pipeline, tmp_path, capsys):
        assert run("ingest", "--data", pipeline.data, "--out", tmp_path) == 0
        assert f"validated {SCENE_COUNT} scenes" in capsys.readouterr().out

    def test_empty_directory_fails(self, tmp_path, capsys):
        void = tmp_path / "void"
        void.mkdir()
        rc = run("ingest", "--data", void, "--out", tmp_path)
        assert rc == 1
        assert "no scene directories" in capsys.readouterr().err

    def test_missing_directory_fails(self, tmp_path, capsys):
        rc = run("ingest", "--data", tmp_path / "void", "--out", tmp_path)
        assert rc == 1
        assert "missing dataset directory" in capsys.readouterr().err

    def test_broken_scene_fails(self, pipeline, tmp_path, capsys):
        import shutil

        data = tmp_path / "data"
        shutil.copytree(pipeline.data / "scene_00000", data / "scene_00000")
        (data / "scene_00000" / "heights.csv").unlink()
        rc = run("ingest", "--data", data, "--out", tmp_path)
        assert rc == 1
        assert "heights.csv" in capsys.readouterr().err


class TestSplit:
    def test_manifest_contents(self, pipeline):
        splits = json.loads((pipeline.data / SPLITS_FILE).read_text())
        assert set(splits) == set(SPLIT_NAMES)
        sizes = tuple(len(splits[name]) for name in SPLIT_NAMES)
        assert sizes == (5, 4, 1, 1, 1)
        everything = [sid for name in SPLIT_NAMES for sid in splits[name]]
        assert sorted(everything) == sorted(
            f"scene_{i:05d}" for i in range(SCENE_COUNT))
        assert len(set(everything)) == SCENE_COUNT

    def test_prints_sizes(self, pipeline, tmp_path, capsys):
        assert run("split", "--data", pipeline.data, "--out", tmp_path,
                   "--seed", SEED) == 0
        out = capsys.readouterr().out
        assert "train_predict=5" in out and "test=1" in out


# ---------------------------------------------------------------------------
# training commands


class TestTraining:
    def test_rmp_outputs(self, pipeline):
        stage_dir = pipeline.out / "predict"
        for name in ("best.ckpt", "best.meta.txt", "training_log.csv"):
            assert (stage_dir / name).is_file()
        log = (stage_dir / "training_log.csv").read_text().splitlines()
        assert len(log) == 3  # header + one line per epoch
        assert log[0].startswith("epoch,")

    def test_rmc_outputs(self, pipeline):
        ckpt = load_checkpoint(pipeline.out / "correct")
        assert ckpt.train_config.stage == "correct"
        assert ckpt.train_config.measurement_count == 8

    def test_manifest_after_training(self, pipeline):
        manifest = json.loads((pipeline.out / MANIFEST_FILE).read_text())
        assert manifest["command"] == "train-rmc"
        assert set(manifest) == {"command", "config", "overrides", "seed",
                                 "versions"}
        assert set(manifest["versions"]) == {"python", "numpy", "scipy",
                                             "torch", "fptc"}
        assert manifest["versions"]["fptc"] == __version__
        assert manifest["overrides"]["data.dir"] == str(pipeline.data)
        assert manifest["config"]["net.sa_resolutions"] == [4]
        assert manifest["config"]["sweep.percentages"] == [2.0, 5.0]

    def test_retrain_log_is_byte_identical(self, pipeline, tmp_path):
        assert run("train-rmp", *pipeline.common, "--out", tmp_path) == 0
        first = (pipeline.out / "predict" / "training_log.csv").read_bytes()
        again = (tmp_path / "predict" / "training_log.csv").read_bytes()
        assert first == again

    def test_missing_splits_manifest(self, pipeline, tmp_path, capsys):
        rc = run("train-rmp", "--config", pipeline.config, "--data", tmp_path,
                 "--out", tmp_path, "--seed", SEED)
        assert rc == 1
        assert "missing split manifest" in capsys.readouterr().err

    def test_rmc_missing_priors(self, pipeline, tmp_path, capsys):
        rc = run("train-rmc", *pipeline.common, "--out", tmp_path)
        assert rc == 1
        assert "predict" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# evaluation, reporting and export commands


class TestEval:
    def test_writes_metrics_and_prints_means(self, pipeline, capsys):
        assert run("eval", *pipeline.common, "--out", pipeline.out,
                   "--rmc", pipeline.out / "correct") == 0
        assert (pipeline.out / "metrics.csv").is_file()
        assert (pipeline.out / "eval_meta.txt").is_file()
        out = capsys.readouterr().out
        assert "test predict: rmse=" in out
        assert "test correct: rmse=" in out

    def test_unknown_split_name(self, pipeline, capsys):
        rc = run("eval", *pipeline.common, "--out", pipeline.out,
                 "--split", "bogus")
        assert rc == 1
        assert "unknown split 'bogus'" in capsys.readouterr().err

    def test_missing_checkpoint_names_path(self, pipeline, tmp_path, capsys):
        rc = run("eval", *pipeline.common, "--out", tmp_path,
                 "--rmp", tmp_path / "nothing_here")
        assert rc == 1
        assert "nothing_here" in capsys.readouterr().err


class TestAblate:
    def test_full_suite(self, pipeline, tmp_path, capsys):
        assert run("ablate", *pipeline.common, "--out", tmp_path) == 0
        csv_lines = (tmp_path / "ablation.csv").read_text().splitlines()
        assert len(csv_lines) == 7  # header + six rows
        assert (tmp_path / "ablation.png").read_bytes()[:4] == b"\x89PNG"
        out = capsys.readouterr().out
        assert "predict baseline: rmse=" in out
        assert "correct -interpolated: rmse=" in out


class TestSweepDensity:
    def test_reuses_trained_corrector(self, pipeline, tmp_path, capsys):
        assert run("sweep-density", *pipeline.common, "--out", tmp_path,
                   "--rmp", pipeline.out / "predict",
                   "--rmc", pipeline.out / "correct") == 0
        csv_lines = (tmp_path / "density_sweep.csv").read_text().splitlines()
        assert len(csv_lines) == 3  # header + one row per percentage
        assert (tmp_path / "density_sweep.png").read_bytes()[:4] == b"\x89PNG"
        out = capsys.readouterr().out
        assert "(5 points)" in out and "(13 points)" in out

    def test_missing_corrector(self, pipeline, tmp_path, capsys):
        rc = run("sweep-density", *pipeline.common, "--out", tmp_path,
                 "--rmp", pipeline.out / "predict")
        assert rc == 1
        assert "correct" in capsys.readouterr().err


class TestExportMaps:
    def test_exports_all_stages(self, pipeline, tmp_path):
        assert run("export-maps", *pipeline.common, "--out", tmp_path,
                   "--rmp", pipeline.out / "predict",
                   "--rmc", pipeline.out / "correct", "--split", "test") == 0
        maps = tmp_path / "maps"
        names = sorted(p.name for p in maps.iterdir())
        assert len(names) == 6  # one test scene x {pre, gt, cor} x {png, csv}
        suffixes = {n.split("_")[-1] for n in names}
        assert suffixes == {"pre.png", "pre.csv", "gt.png", "gt.csv",
                            "cor.png", "cor.csv"}
        csv_path = next(p for p in maps.iterdir() if p.name.endswith("gt.csv"))
        values = np.loadtxt(csv_path, delimiter=",")
        assert values.shape == (16, 16)

    def test_without_corrector_skips_cor(self, pipeline, tmp_path):
        assert run("export-maps", *pipeline.common, "--out", tmp_path,
                   "--rmp", pipeline.out / "predict", "--split", "test") == 0
        names = [p.name for p in (tmp_path / "maps").iterdir()]
        assert names and not any("cor" in n for n in names)
