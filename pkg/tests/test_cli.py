import json

import numpy as np
import pytest

from icp_uncert import se3
from icp_uncert.cli import ellipse_polyline, run
from icp_uncert.config import ConfigError, RunConfig, dumps
from icp_uncert.io import save_cloud_csv
from icp_uncert.scenes import Scene, generate_scene


def write_config(tmp_path, cfg: dict, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


CORNER = {"kind": "room-corner", "extent": 2.0, "density": 250.0, "noise": {"sigma_white": 0.01, "sigma_bias": 0.01}}


def test_register_identical_clouds(tmp_path, capsys):
    _, Q = generate_scene(Scene("room-corner", 2.0, 250), se3.Pose.identity(), 0)
    save_cloud_csv(tmp_path / "q.csv", Q)
    cfg = write_config(tmp_path, {"dataset": {"reading": str(tmp_path / "q.csv"), "reference": str(tmp_path / "q.csv")}})
    assert run(["register", "--config", cfg]) == 0
    out = json.loads(capsys.readouterr().out)
    np.testing.assert_allclose(np.array(out["T_icp"]).reshape(4, 4), np.eye(4), atol=1e-6)


def test_missing_cloud_exits_2_with_path(tmp_path, capsys):
    cfg = write_config(tmp_path, {"dataset": {"reading": "/nope/a.csv", "reference": "/nope/b.csv"}})
    assert run(["register", "--config", cfg]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 2 and "/nope/a.csv" in err["message"]


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"scene": CORNER, "dataset": {"reading": "a"}})
    assert run(["register", "--config", cfg]) == 2
    cfg = write_config(tmp_path, {"scene": CORNER, "q_ini": "extreme"}, "b.json")
    assert run(["register", "--config", cfg]) == 2


def test_degenerate_scene_exits_3(tmp_path, capsys):
    cfg = write_config(tmp_path, {"scene": {"kind": "single-plane", "extent": 2.0, "density": 200.0}})
    assert run(["register", "--config", cfg]) == 3
    assert json.loads(capsys.readouterr().err)["error"] == "IllConditionedSystem"


def test_register_room_corner_converges(tmp_path, capsys):
    cfg = write_config(tmp_path, {"scene": CORNER, "q_ini": "easy"})
    assert run(["register", "--config", cfg, "--seed", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["converged"] is True
    assert np.abs(out["error"]).max() < 0.05


@pytest.mark.parametrize("method", ["proposed", "censi", "monte-carlo"])
def test_estimate_cov_methods(tmp_path, method):
    out = tmp_path / "cov.json"
    cfg = write_config(tmp_path, {"scene": CORNER, "samples": 10})
    assert run(["estimate-cov", "--config", cfg, "--method", method, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["method"] == method and len(doc["Q_icp"]) == 36
    if method == "proposed":
        Q = np.array(doc["Q_icp"])
        np.testing.assert_array_equal(Q, np.array(doc["Q_init_term"]) + np.array(doc["Q_sensor_term"]))
        assert len(doc["Q_joint"]) == 144
    else:
        assert "Q_init_term" not in doc


def test_estimate_cov_ellipse(tmp_path):
    out = tmp_path / "cov.json"
    cfg = write_config(tmp_path, {"scene": CORNER})
    assert run(["estimate-cov", "--config", cfg, "--method", "censi", "--ellipse", "--out", str(out)]) == 0
    lines = (tmp_path / "cov_ellipse.csv").read_text().splitlines()
    assert lines[0] == "x,y" and len(lines) == 51


def test_ellipse_polyline_is_three_sigma():
    pts = ellipse_polyline([1.0, 2.0], np.diag([4.0, 1.0]))
    assert pts.shape == (50, 2)
    r = ((pts[:, 0] - 1) / 2) ** 2 + (pts[:, 1] - 2) ** 2
    np.testing.assert_allclose(r, 9.0)


def test_outputs_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, {"scene": CORNER})
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(["estimate-cov", "--config", cfg, "--out", str(a)]) == 0
    assert run(["estimate-cov", "--config", cfg, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_sweep_writes_nine_rows_per_scene(tmp_path):
    out = tmp_path / "sweep.csv"
    scene = dict(CORNER, extent=10.0, density=3000 / 200)
    cfg = write_config(tmp_path, {"sweep": {"scenes": {"corner": scene}, "draws": 2}, "noise": {"sigma_white": 0.01, "sigma_bias": 0.01}})
    assert run(["sweep", "--config", cfg, "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("scene,true,assumed") and len(lines) == 1 + 9


def test_trajectory_command(tmp_path):
    out = tmp_path / "traj.csv"
    scene = {"kind": "corridor", "extent": 2.0, "density": 150.0, "noise": {"sigma_white": 0.01, "sigma_bias": 0.01}}
    cfg = write_config(tmp_path, {"scene": scene, "trajectory": {"n_scans": 3, "step": 0.25}, "noise": {"sigma_white": 0.01, "sigma_bias": 0.01}})
    assert run(["trajectory", "--config", cfg, "--fuse", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 3 * 2
    doc = json.loads((tmp_path / "traj_trajectory.json").read_text())
    assert set(doc["estimates"]) == {"icp_only", "independent", "fused"}


def test_synth_then_register_dataset(tmp_path, capsys):
    cfg = write_config(tmp_path, {"scene": CORNER})
    assert run(["synth", "--config", cfg, "--out", str(tmp_path / "clouds")]) == 0
    info = json.loads(capsys.readouterr().out)
    ds = {"reading": info["reading"], "reference": info["reference"], "T_ini": info["T_ini"], "T_true": info["T_true"]}
    cfg2 = write_config(tmp_path, {"dataset": ds}, "ds.json")
    assert run(["register", "--config", cfg2]) == 0
    out = json.loads(capsys.readouterr().out)
    assert np.abs(out["error"]).max() < 0.05


def test_synth_trajectory_roundtrip(tmp_path, capsys):
    scene = {"kind": "corridor", "extent": 2.0, "density": 150.0}
    cfg = write_config(tmp_path, {"scene": scene, "trajectory": {"n_scans": 3}})
    assert run(["synth", "--config", cfg, "--out", str(tmp_path / "t")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert len(info["scans"]) == 3


def test_config_roundtrip():
    cfg = RunConfig.from_dict({"scene": CORNER, "q_ini": list(np.eye(6).ravel() * 0.01), "method": "censi", "seed": 7})
    again = RunConfig.from_dict(json.loads(dumps(cfg.to_dict())))
    assert dumps(again.to_dict()) == dumps(cfg.to_dict())
    np.testing.assert_array_equal(again.Q_ini, cfg.Q_ini)


def test_config_rejects_unknown_keys_and_bad_q():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"scene": CORNER, "colour": 3})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"scene": CORNER, "q_ini": [1.0] * 35})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"scene": CORNER, "q_ini": [-1.0] + [0.0] * 35})


def test_dumps_uses_seventeen_digits():
    assert dumps({"x": 0.1}) == '{\n  "x": 0.10000000000000001\n}'
