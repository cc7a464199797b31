import glob
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from optistate.cli import main
from optistate.config import read_kv
from optistate.report import read_columns, read_csv
from optistate.state import STATE_NAMES

TINY = """\
duration = 1.0
profile.train_per_terrain = 1
profile.train_duration = 1.5
profile.test_duration = 1.0
profile.camera.height = 16
profile.camera.width = 16
profile.vit.image_height = 16
profile.vit.image_width = 16
profile.vit.patch_size = 8
profile.vit.depth = 1
profile.vit_images = 24
profile.vit_train.epochs = 2
profile.vit_train.batch_size = 12
profile.gru.hidden_size = 8
profile.gru.n_layers = 1
profile.gru_train.epochs = 2
profile.gru_train.batch_size = 128
"""


def run(*argv):
    return main([*map(str, argv)])


def pipeline_run(root, config, seed=5):
    data, ckpt, ev = root / "data", root / "ckpt", root / "eval"
    common = ["--config", config, "--seed", seed, "-q"]
    assert run("simulate", "--out", data, *common) == 0
    assert run("train-vit", "--data", data, "--out", ckpt, *common) == 0
    vit = ckpt / "vit.osvt"
    assert run("train-gru", "--data", data, "--vit", vit, "--out", ckpt, *common) == 0
    assert run("train-gru", "--data", data, "--vit", vit, "--out", ckpt, "--ablate-vision", *common) == 0
    assert run("evaluate", "--data", data, "--vit", vit, "--out", ev, *common,
               "--gru", ckpt / "gru_optistate.osgr", "--gru", ckpt / "gru_no_vision.osgr") == 0
    assert run("report", "--run", ev, "-q") == 0
    return data, ckpt, ev


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    path.write_text(TINY)
    return path


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory, tiny_config):
    root = tmp_path_factory.mktemp("run")
    return pipeline_run(root, tiny_config)


def test_simulate_writes_train_and_test_sets(tiny_run):
    data, _, _ = tiny_run
    names = sorted(os.path.basename(p) for p in glob.glob(str(data / "*.ostd")))
    assert names == sorted([f"train_{k}_0.ostd" for k in ("flat", "slippery", "incline", "rough")]
                           + [f"test_{k}.ostd" for k in ("flat", "slippery", "incline", "rough")])
    man = read_kv(data / "simulate.manifest")
    assert man["command"] == "simulate" and man["seed"] == "5"


def test_default_suite_has_sixteen_training_runs():
    from optistate.profiles import PAPER, SMALL, suite
    for prof in (PAPER, SMALL):
        names = [n for n, _ in suite(prof)]
        assert sum(n.startswith("train_") for n in names) == 16
        assert sum(n.startswith("test_") for n in names) == 4
        assert len({c.seed for _, c in suite(prof)}) == 20


def test_training_writes_one_loss_row_per_epoch(tiny_run):
    _, ckpt, _ = tiny_run
    for name in ("vit_loss.csv", "gru_optistate_loss.csv", "gru_no_vision_loss.csv"):
        header, rows = read_csv(ckpt / name)
        assert header == ["epoch", "loss"] and len(rows) == 2
    for name in ("vit_loss.svg", "gru_optistate_loss.svg"):
        ET.parse(ckpt / name)
    assert os.path.exists(ckpt / "train-gru-optistate.manifest")


def test_evaluate_tables(tiny_run):
    _, _, ev = tiny_run
    header, rows = read_csv(ev / "rmse.csv")
    assert header == ["variant", "terrain", *STATE_NAMES, "mean"]
    variants = {r[0] for r in rows}
    assert variants == {"kf_only", "optistate", "no_vision"}
    header, rows = read_csv(ev / "improvement.csv")
    assert {r[1] for r in rows} == {"kf_only"}
    for t in ("flat", "slippery", "incline", "rough"):
        cols = read_columns(ev / f"estimates_{t}.csv")
        assert "optistate_mu_v_x" in cols and "kf_only_mu_v_x" not in cols
        assert np.all(cols["optistate_mu_v_x"] >= 0)
        ET.parse(ev / f"overlay_{t}.svg")


def test_report_bands_match_estimates(tiny_run):
    _, _, ev = tiny_run
    svg = ev / "report" / "band_optistate_flat.svg"
    root = ET.parse(svg).getroot()
    assert root.tag.endswith("svg")
    cols = read_columns(ev / "estimates_flat.csv")
    from optistate.report import band_figure
    t = cols["t"]
    x = np.column_stack([cols[f"optistate_{n}"] for n in STATE_NAMES])
    mu = np.column_stack([cols[f"optistate_mu_{n}"] for n in STATE_NAMES])
    fig = band_figure(t, x, mu)
    for i, ax in enumerate(fig.axes):
        verts = ax.collections[0].get_paths()[0].vertices
        n = len(t)
        lower = verts[1:n + 1, 1]
        upper = verts[n + 2:2 * n + 2, 1][::-1]
        np.testing.assert_allclose((upper - lower) / 2, mu[:, i], rtol=0, atol=1e-12)
    assert os.path.exists(ev / "report" / "summary.csv")


def test_reruns_are_bit_identical(tmp_path, tiny_run, tiny_config):
    again = pipeline_run(tmp_path, tiny_config)
    for first, second in zip(tiny_run, again):
        files = sorted(p for p in os.listdir(first) if not p.endswith(".manifest") and p != "report")
        assert files
        for name in files:
            assert (first / name).read_bytes() == (second / name).read_bytes(), name
    rep1, rep2 = tiny_run[2] / "report", again[2] / "report"
    for name in os.listdir(rep1):
        if not name.endswith(".manifest"):
            assert (rep1 / name).read_bytes() == (rep2 / name).read_bytes(), name


def test_kf_only_evaluation(tiny_run, tmp_path):
    data, _, _ = tiny_run
    assert run("evaluate", "--data", data, "--out", tmp_path, "--kf-only", "-q") == 0
    header, rows = read_csv(tmp_path / "rmse.csv")
    assert {r[0] for r in rows} == {"kf_only"}


def test_ablation_flag_needs_matching_checkpoint(tiny_run, tmp_path):
    data, ckpt, _ = tiny_run
    code = run("evaluate", "--data", data, "--out", tmp_path, "--ablate-kf-input", "-q",
               "--gru", ckpt / "gru_optistate.osgr", "--vit", ckpt / "vit.osvt")
    assert code == 2


def test_bad_terrain_is_a_usage_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("terrain.kind = lava\n")
    assert run("simulate", "--single", "--out", tmp_path, "--config", cfg, "-q") == 2
    assert "terrain.kind" in capsys.readouterr().err


def test_unknown_key_is_a_usage_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("gait.speed = 3\n")
    assert run("simulate", "--single", "--out", tmp_path, "--config", cfg, "-q") == 2
    assert "gait.speed" in capsys.readouterr().err


def test_single_trajectory(tmp_path):
    cfg = tmp_path / "one.cfg"
    cfg.write_text("duration = 0.2\nrender_depth = false\n")
    assert run("simulate", "--single", "--out", tmp_path, "--config", cfg, "-q") == 0
    assert os.path.exists(tmp_path / "trajectory.ostd")


def test_missing_vit_checkpoint_is_an_io_error(tiny_run, tmp_path):
    data, _, _ = tiny_run
    assert run("train-gru", "--data", data, "--vit", tmp_path / "none.osvt", "--out", tmp_path, "-q") == 4


def test_corrupt_dataset_is_an_io_error(tmp_path):
    (tmp_path / "test_flat.ostd").write_bytes(b"OSTD\x01\x00")
    assert run("evaluate", "--data", tmp_path, "--out", tmp_path / "o", "--kf-only", "-q") == 4


def test_empty_run_dir_is_a_usage_error(tmp_path):
    assert run("report", "--run", tmp_path, "-q") == 2


def test_diverging_training_exits_with_three(tiny_run, tiny_config, tmp_path):
    data, ckpt, _ = tiny_run
    cfg = tmp_path / "hot.cfg"
    cfg.write_text(tiny_config.read_text() + "profile.vit_train.lr = 1e200\n")
    assert run("train-vit", "--data", data, "--out", tmp_path, "--config", cfg, "-q") == 3


def test_negative_seed_is_rejected(tmp_path):
    assert run("simulate", "--single", "--out", tmp_path, "--seed", -1, "-q") == 2
