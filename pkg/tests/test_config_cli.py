import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from sweepfuse import io
from sweepfuse.cli import main
from sweepfuse.config import RunConfig, config_from_dict, load_config, resolve_seed, save_config
from sweepfuse.errors import ConfigError
from sweepfuse.geometry import DepthRange

FIXTURE = Path(__file__).parent / "data"
SCENE = FIXTURE / "scene_0000"
FAST = ["--mode", "photometric", "--depth-count", "48", "--jobs", "1"]


# -- configuration ----------------------------------------------------------


def test_defaults_follow_reference_settings():
    c = RunConfig()
    assert (c.views_train, c.views_test, c.depth_range.count) == (5, 7, 192)
    assert (c.pyramid.levels, c.pyramid.eta) == (3, 2.0)
    assert (c.train.lr, c.train.decay, c.train.epochs) == (0.001, 0.9, 16)
    m = c.multimetric
    assert (m.eps_low, m.eps_high, m.tau1, m.tau2, c.fusion_conf) == (0.5, 0.9, 1.0, 0.01, 0.9)


def test_config_round_trip(tmp_path):
    c = RunConfig(mode="pixelwise", depth_range=DepthRange(400.0, 900.0, 32), seed=11)
    c.multimetric.tau2 = 0.02
    save_config(c, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back == c
    assert back.to_json() == c.to_json()


def test_unknown_fields_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"pyramid": {"levels": 3, "depth": 2}})


def test_invalid_values_rejected():
    for bad in ({"mode": "mystery"}, {"views_test": 1}, {"fusion_conf": 1.5}, {"multimetric": {"eps_low": 0.95}}):
        with pytest.raises(ConfigError):
            config_from_dict(bad)


def test_malformed_json(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")


def test_seed_environment_override(monkeypatch):
    monkeypatch.delenv("SWEEPFUSE_SEED", raising=False)
    assert resolve_seed(3) == 3
    monkeypatch.setenv("SWEEPFUSE_SEED", "42")
    assert resolve_seed(3) == 42
    monkeypatch.setenv("SWEEPFUSE_SEED", "x")
    with pytest.raises(ConfigError):
        resolve_seed(3)


# -- command line -----------------------------------------------------------


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("SWEEPFUSE_SEED", "7")
    shutil.copytree(FIXTURE, tmp_path / "data")
    return tmp_path


def test_synth_writes_dataset(workdir, capsys):
    assert main(["synth", "--out", "fresh", "--scenes", "1", "--views", "3", "--width", "32", "--height", "32"]) == 0
    assert (workdir / "fresh" / "scene_0000" / "manifest.json").exists()
    assert json.loads((workdir / "fresh" / "scene_0000" / "manifest.json").read_text())["seed"] == 7


def test_depth_writes_pfm_pair(workdir):
    assert main(["depth", "--ref", "0", *FAST]) == 0
    depth = io.read_pfm(workdir / "out" / "0000.pfm")
    conf = io.read_pfm(workdir / "out" / "0000_conf.pfm")
    assert depth.shape == conf.shape == (16, 16)
    assert np.all((depth >= 425) & (depth <= 935)) and np.all((conf >= 0) & (conf <= 1))


def test_depth_with_learned_mode_and_checkpoint(workdir):
    from sweepfuse import tensor as T
    from sweepfuse.networks import MVSModel

    T.save_parameters(workdir / "m.swft", MVSModel(3).state_dict())
    args = ["depth", "--ref", "1", "--mode", "voxelwise", "--depth-count", "8", "--views-test", "3"]
    assert main([*args, "--checkpoint", "m.swft"]) == 0
    assert io.read_pfm(workdir / "out" / "0001.pfm").shape == (16, 16)


def test_pyramid_fuse_eval_chain(workdir, capsys):
    assert main(["pyramid", "--levels", "3", *FAST]) == 0
    report = json.loads((workdir / "out" / "pyramid_report.json").read_text())
    assert report["levels"] == 3 and report["extents"] == [[16, 16], [8, 8], [4, 4]]
    assert set(report["replaced"]) == {"0", "1"}
    assert report["replaced_total"] == sum(sum(v) for v in report["replaced"].values())
    for i in range(5):
        assert io.read_pfm(workdir / "out" / f"{i:04d}_refined.pfm").shape == (16, 16)
        assert (workdir / "out" / f"{i:04d}_refined_conf.pfm").exists()

    assert main(["fuse", *FAST]) == 0
    points, colors = io.read_ply(workdir / "out" / "cloud.ply")
    assert len(points) > 0 and colors.dtype == np.uint8

    capsys.readouterr()
    assert main(["eval", "--pred", "out/cloud.ply", "--scene", "data/scene_0000", "--out", "out/eval.json"]) == 0
    report = json.loads((workdir / "out" / "eval.json").read_text())
    assert report["n_points"] == len(points)
    assert report["overall_mm"] == (report["accuracy_mm"] + report["completeness_mm"]) / 2


def test_eval_identical_clouds_is_zero(workdir, capsys):
    io.write_ply(workdir / "a.ply", np.random.default_rng(0).uniform(0, 100, (200, 3)))
    assert main(["eval", "--pred", "a.ply", "--gt", "a.ply"]) == 0
    assert json.loads(capsys.readouterr().out)["overall_mm"] == 0.0


def test_config_file_and_flag_override(workdir):
    c = RunConfig(mode="photometric", depth_range=DepthRange(425.0, 935.0, 16))
    save_config(c, workdir / "run.json")
    assert main(["depth", "--config", "run.json", "--out", "cfg"]) == 0
    assert main(["depth", "--config", "run.json", "--depth-count", "48", "--out", "flag"]) == 0
    a = io.read_pfm(workdir / "cfg" / "0000.pfm")
    b = io.read_pfm(workdir / "flag" / "0000.pfm")
    assert a.shape == b.shape and a.tobytes() != b.tobytes()


def test_train_command_writes_checkpoints(workdir):
    args = ["train", "--data", "data", "--out", "run", "--depth-count", "8", "--views-train", "3"]
    assert main([*args, "--epochs", "1", "--max-steps", "2"]) == 0
    summary = json.loads((workdir / "run" / "summary.json").read_text())
    assert summary["steps"] == 2
    assert (workdir / "run" / "ckpt_epoch000.swft").exists()
    assert len((workdir / "run" / "metrics.jsonl").read_text().splitlines()) == 1


def test_summary_command(capsys):
    assert main(["summary", "--json"]) == 0
    totals = json.loads(capsys.readouterr().out)["totals"]
    assert totals == {"featnet": 15368, "panet": 5137, "vanet": 894, "regnet": 41849}
    assert main(["summary"]) == 0
    assert "regnet" in capsys.readouterr().out


def test_gradcheck_ops_only(capsys):
    assert main(["gradcheck", "--ops-only"]) == 0
    assert "checks below" in capsys.readouterr().out


def test_exit_codes(workdir, capsys):
    assert main(["depth", "--no-such-flag"]) == 1
    assert main([]) == 1
    assert main(["depth", "--mode", "mystery"]) == 1
    assert main(["depth", "--ref", "9", *FAST]) == 1
    assert main(["depth", "--scene", "missing", *FAST]) == 2
    (workdir / "bad.ply").write_bytes(b"not a ply")
    assert main(["eval", "--pred", "bad.ply", "--gt", "bad.ply"]) == 2
    assert main(["eval", "--pred", "bad.ply"]) in (1, 2)
    assert main(["fuse", "--depths", "nowhere", *FAST]) == 2


def _snapshot(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.suffix in {".pfm", ".ply", ".json"}
    }


def run_chain(root: Path) -> dict[str, bytes]:
    out = root / "out"
    assert main(["pyramid", "--scene", str(SCENE), "--out", str(out), *FAST]) == 0
    assert main(["fuse", "--scene", str(SCENE), "--depths", str(out), "--out", str(out / "cloud.ply"), *FAST]) == 0
    assert main(["eval", "--pred", str(out / "cloud.ply"), "--scene", str(SCENE), "--out", str(out / "e.json")]) == 0
    return _snapshot(out)


def test_outputs_are_bitwise_reproducible(tmp_path, monkeypatch):
    monkeypatch.setenv("SWEEPFUSE_SEED", "7")
    a = run_chain(tmp_path / "a")
    b = run_chain(tmp_path / "b")
    assert a.keys() == b.keys() and len(a) >= 22
    assert all(a[k] == b[k] for k in a)
