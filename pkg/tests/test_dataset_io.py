import numpy as np
import pytest
from dataclasses import replace

from optistate.config import CameraConfig, NoiseParams, SimConfig
from optistate.errors import FormatError
from optistate.sim.dataset_io import dataset_bytes, manifest_path, read_dataset, write_dataset
from optistate.sim.simulator import depth_tick, simulate
from optistate.sim.terrain import Terrain


@pytest.fixture(scope="module")
def small_ds():
    cfg = SimConfig(duration=0.5, seed=7, terrain=Terrain.preset("rough", seed=3),
                    camera=CameraConfig(height=16, width=24))
    return simulate(cfg)


def test_roundtrip_is_lossless(small_ds, tmp_path):
    path = tmp_path / "traj.ostd"
    write_dataset(small_ds, path)
    back = read_dataset(path)
    assert dataset_bytes(back) == dataset_bytes(small_ds)
    assert back.meta == small_ds.meta
    assert back.contact.dtype == bool
    assert np.array_equal(back.depth_index, small_ds.depth_index)


def test_manifest_records_config(small_ds, tmp_path):
    path = tmp_path / "traj.ostd"
    write_dataset(small_ds, path)
    text = open(manifest_path(path), encoding="utf-8").read()
    assert "seed = 7" in text
    assert "terrain.kind = rough" in text


def test_depth_is_held_between_camera_frames(small_ds):
    idx = small_ds.depth_index
    assert idx[0] == 0 and np.all(np.diff(idx) >= 0)
    assert len(small_ds.depth) == 30        # 0.5 s at 60 Hz
    assert small_ds.depth.dtype == np.float32


def test_one_minute_rate_arithmetic():
    cfg = SimConfig(duration=60.0)
    ticks = depth_tick(np.arange(cfg.n_frames), cfg.dt, cfg.camera.rate)
    assert cfg.n_frames == 12_000
    assert len(np.unique(ticks)) == 3600


def test_truncated_file_is_a_format_error(small_ds, tmp_path):
    path = tmp_path / "cut.ostd"
    path.write_bytes(dataset_bytes(small_ds)[:-10])
    with pytest.raises(FormatError):
        read_dataset(path)


def test_trailing_bytes_are_a_format_error(small_ds, tmp_path):
    path = tmp_path / "long.ostd"
    path.write_bytes(dataset_bytes(small_ds) + b"\0")
    with pytest.raises(FormatError):
        read_dataset(path)


@pytest.mark.parametrize("head", [b"XSTD", b"OSTD\x02\x00\x00\x00"])
def test_bad_magic_or_version_is_a_format_error(small_ds, tmp_path, head):
    path = tmp_path / "bad.ostd"
    path.write_bytes(head + dataset_bytes(small_ds)[len(head):])
    with pytest.raises(FormatError):
        read_dataset(path)


def test_missing_file_is_an_os_error(tmp_path):
    with pytest.raises(OSError):
        read_dataset(tmp_path / "nope.ostd")


def test_dataset_without_truth_roundtrips(small_ds, tmp_path):
    ds = replace(small_ds, truth=None)
    path = tmp_path / "blind.ostd"
    write_dataset(ds, path)
    back = read_dataset(path)
    assert back.truth is None or not back.has_truth


def test_noise_free_dataset_has_exact_truth(tmp_path):
    cfg = SimConfig(duration=0.2, noise=NoiseParams.zero(), render_depth=False)
    ds = simulate(cfg)
    write_dataset(ds, tmp_path / "a.ostd")
    back = read_dataset(tmp_path / "a.ostd")
    assert np.array_equal(back.truth, ds.aux["truth_clean"])
    assert back.depth.shape[0] == 0
