import json

import pytest

from chartkp.cli import resolve_config, run


@pytest.fixture(scope="module")
def gt_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("gt")
    assert run(["synth", "--type", "line", "--count", "5", "--seed", "0", "--out-dir", str(d)]) == 0
    return d


def test_synth_writes_pairs(gt_dir):
    assert len(list(gt_dir.glob("line-*.json"))) == 5
    assert len(list(gt_dir.glob("line-*.png"))) == 5
    snap = json.loads((gt_dir / "synth.resolved.json").read_text())
    assert snap["settings"]["count"] == 5 and snap["settings"]["type"] == "line"


def test_eval_identity(gt_dir, capsys, tmp_path):
    assert run(["eval", "--pred", str(gt_dir), "--gt", str(gt_dir), "--json", str(tmp_path / "r.json")]) == 0
    out = capsys.readouterr().out
    row = [l for l in out.splitlines() if l.startswith("ALL")][0].split()
    assert row[1:4] == ["1.0000", "1.0000", "1.0000"]
    assert "6b-data" in out.splitlines()[0]
    rec = json.loads((tmp_path / "r.json").read_text())
    assert rec["overall"]["6a"] == 1.0 and len(rec["per_chart"]) == 5


def test_unknown_flag_exit_two(capsys):
    assert run(["eval", "--frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_set_key_exit_two(tmp_path):
    assert run(["synth", "--out-dir", str(tmp_path), "--set", "colour=red"]) == 2
    assert run(["train", "--out-dir", str(tmp_path), "--set", "backbone.depth=3"]) == 2


def test_runtime_error_exit_one(tmp_path, capsys):
    assert run(["predict", "--checkpoint", str(tmp_path / "missing.pt"), "--input", str(tmp_path),
                "--out-dir", str(tmp_path / "o")]) == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"]


def test_config_layering(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"count": 3, "canvas": [256, 256]}))
    cfg = resolve_config("synth", cfg_file, {"seed": 4}, ["count=7", "type=scatter"])
    assert (cfg["count"], cfg["seed"], cfg["type"]) == (7, 4, "scatter")
    cfg_file.write_text(json.dumps({"bogus": 1}))
    from chartkp.cli import UsageError
    with pytest.raises(UsageError):
        resolve_config("synth", cfg_file, {}, [])


def test_oracle_predict_then_eval(gt_dir, tmp_path, capsys):
    p1, p2 = tmp_path / "p1", tmp_path / "p2"
    assert run(["predict", "--oracle-heatmaps", "--input", str(gt_dir), "--out-dir", str(p1)]) == 0
    assert run(["--workdir", str(tmp_path), "predict", "--oracle-heatmaps", "--input", str(gt_dir),
                "--out-dir", "p2", "--jobs", "3"]) == 2  # --workdir belongs after the subcommand
    assert run(["predict", "--workdir", str(tmp_path), "--oracle-heatmaps", "--input", str(gt_dir),
                "--out-dir", "p2", "--jobs", "3", "--dump-heatmaps"]) == 0
    for f in sorted(p1.glob("line-*.json")):
        assert f.read_text() == (p2 / f.name).read_text()
    assert list(p2.glob("*.targets.png"))
    capsys.readouterr()
    assert run(["eval", "--pred", str(p1), "--gt", str(gt_dir)]) == 0
    row = [l for l in capsys.readouterr().out.splitlines() if l.startswith("ALL")][0].split()
    assert float(row[1]) >= 0.9


def test_train_predict_calibrate(gt_dir, tmp_path):
    run_dir = tmp_path / "run"
    args = ["train", "--manifest", str(gt_dir / "manifest.txt"), "--out-dir", str(run_dir),
            "--set", "epochs=1", "--set", "batch_size=4", "--set", "synthetic_ratio=0.0",
            "--set", "eval_every=0", "--set", "backbone.base_channels=8", "--set", "backbone.n_stages=1",
            "--set", "embed_dim=8"]
    assert run(args) == 0
    assert (run_dir / "train.resolved.json").exists() and (run_dir / "model.pt").exists()
    lines = (run_dir / "train_log.jsonl").read_text().splitlines()
    assert all("total" in json.loads(l) for l in lines)
    assert run(["predict", "--checkpoint", str(run_dir / "model.pt"), "--input", str(gt_dir),
                "--out-dir", str(tmp_path / "pred"), "--oracle-type", "--dump-postprocess"]) == 0
    assert len(list((tmp_path / "pred").glob("line-*.json"))) == 5
    assert run(["calibrate", "--checkpoint", str(run_dir / "model.pt"), "--input", str(gt_dir),
                "--out", str(tmp_path / "cal.pt"), "--set", "sample=5"]) == 1  # fewer than 10 maps
    cal_dir = tmp_path / "cal"
    assert run(["synth", "--type", "line", "--count", "12", "--seed", "1", "--out-dir", str(cal_dir)]) == 0
    assert run(["calibrate", "--checkpoint", str(run_dir / "model.pt"), "--input", str(cal_dir),
                "--out", str(tmp_path / "cal.pt")]) == 0
    assert (tmp_path / "cal.pt").exists()
