import json

import numpy as np
import pytest

from mtdrive import cli
from mtdrive.config import RunConfig, load_config


@pytest.fixture
def tiny_config(tmp_path):
    cfg = RunConfig.default()
    d = cfg.to_dict()
    d["model"] = {
        "variant": "plain",
        "input_shape": [3, 16, 16],
        "encoder_widths": [4, 8],
        "pose_fc_width": 8,
        "dropout_rate": 0.0,
    }
    d["pose_schedule"] = {"epochs": 2, "batch_size": 4, "lr": 0.005}
    d["joint_schedule"] = {"epochs": 2, "batch_size": 2, "lr": 1e-3}
    d["dataset"] = {"n": 12, "resolution": [16, 16], "split_ratio": 3.0}
    d["episode"] = {"v_ref": 10.0, "dt": 0.05, "max_steps": 300}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(d, indent=2, sort_keys=True))
    return path


def test_print_defaults(capsys):
    assert cli.main(["simulate", "--print-defaults"]) == 0
    out = capsys.readouterr().out
    parsed = json.loads(out)
    assert parsed["stanley"]["c2"] == 0.5
    assert parsed["stanley"]["c3"] == 2.5
    assert parsed["pi"]["kp"] == 2.0
    assert parsed["pi"]["ki"] == 0.5
    assert parsed["plant"]["wheelbase"] == 2.7


def test_config_round_trip(tmp_path, tiny_config):
    cfg = load_config(tiny_config)
    out = tmp_path / "resaved.json"
    cfg.save(out)
    assert json.loads(out.read_text()) == json.loads(tiny_config.read_text()) or cfg.to_dict() == load_config(out).to_dict()


def test_dataset_gen_deterministic(tmp_path, tiny_config):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["dataset", "gen", "--config", str(tiny_config), "--seed", "5", "--out", str(out)]) == 0
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    assert (a / "frame_00000.mtf").read_bytes() == (b / "frame_00000.mtf").read_bytes()


def test_train_eval_simulate_pipeline(tmp_path, tiny_config):
    ds = tmp_path / "ds"
    assert cli.main(["dataset", "gen", "--config", str(tiny_config), "--seed", "0", "--out", str(ds)]) == 0

    run1, run2 = tmp_path / "t1", tmp_path / "t2"
    for out in (run1, run2):
        code = cli.main(
            ["train", "--config", str(tiny_config), "--seed", "7", "--out", str(out),
             "--dataset", str(ds / "manifest.json"), "--stage", "both"]
        )
        assert code == 0
        assert (out / "model.ckpt").exists()
        assert (out / "train_pose_only.csv").exists()
        assert (out / "train_joint.csv").exists()
    assert (run1 / "train_joint.csv").read_bytes() == (run2 / "train_joint.csv").read_bytes()
    assert (run1 / "train_pose_only.csv").read_bytes() == (run2 / "train_pose_only.csv").read_bytes()

    ev1, ev2 = tmp_path / "e1", tmp_path / "e2"
    for out in (ev1, ev2):
        code = cli.main(
            ["eval-static", "--config", str(tiny_config), "--seed", "7", "--out", str(out),
             "--dataset", str(ds / "manifest.json"), "--model", str(run1 / "model.ckpt")]
        )
        assert code == 0
    assert (ev1 / "metrics.csv").read_bytes() == (ev2 / "metrics.csv").read_bytes()


def test_simulate_deterministic_csvs(tmp_path, tiny_config):
    a, b = tmp_path / "s1", tmp_path / "s2"
    for out in (a, b):
        code = cli.main(
            ["simulate", "--config", str(tiny_config), "--seed", "11", "--out", str(out), "--track", "straight"]
        )
        assert code == 0
    assert (a / "episode_000.csv").read_bytes() == (b / "episode_000.csv").read_bytes()
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


def test_simulate_exit_code_on_departure(tmp_path, tiny_config):
    cfg = json.loads(tiny_config.read_text())
    cfg["episode"].update({"start_offset": 7.0, "start_yaw_offset": -1.5, "v_ref": 20.0})
    bad = tmp_path / "depart.json"
    bad.write_text(json.dumps(cfg))
    out = tmp_path / "dep"
    assert cli.main(["simulate", "--config", str(bad), "--out", str(out), "--track", "straight"]) == 1
    out2 = tmp_path / "dep2"
    assert (
        cli.main(["simulate", "--config", str(bad), "--out", str(out2), "--track", "straight", "--allow-failures"])
        == 0
    )


def test_report_from_episode_csv(tmp_path, tiny_config):
    simdir = tmp_path / "sim"
    assert cli.main(["simulate", "--config", str(tiny_config), "--out", str(simdir), "--track", "s_bend"]) == 0
    rep = tmp_path / "rep"
    code = cli.main(["report", "--config", str(tiny_config), "--out", str(rep), str(simdir / "episode_000.csv")])
    assert code == 0
    assert (rep / "metrics.csv").exists()
    assert (rep / "trajectory_000.svg").exists()


def test_simulate_accepts_track_file(tmp_path, tiny_config):
    from mtdrive import track as tk

    track_file = tmp_path / "custom.track"
    tk.write_track(track_file, tk.make_preset_track("s_bend"))
    out = tmp_path / "filesim"
    code = cli.main(["simulate", "--config", str(tiny_config), "--out", str(out), "--track", str(track_file)])
    assert code == 0
    assert (out / "episode_000.csv").exists()


def test_simulate_nn_smoke(tmp_path, tiny_config):
    ds = tmp_path / "ds"
    assert cli.main(["dataset", "gen", "--config", str(tiny_config), "--seed", "0", "--out", str(ds)]) == 0
    tr = tmp_path / "tr"
    assert cli.main(
        ["train", "--config", str(tiny_config), "--seed", "0", "--out", str(tr),
         "--dataset", str(ds / "manifest.json"), "--stage", "joint"]
    ) == 0
    out = tmp_path / "nnsim"
    code = cli.main(
        ["simulate", "--config", str(tiny_config), "--out", str(out), "--track", "straight",
         "--perceptor", "nn", "--model", str(tr / "model.ckpt"), "--dataset", str(ds / "manifest.json"),
         "--allow-failures"]
    )
    assert code == 0
    assert (out / "episode_000.csv").exists()
