import json

import numpy as np
import pytest
import torch

from chartkp.annotation import save_annotation
from chartkp.data import ManifestEntry, NO_AUGMENTATION, write_manifest
from chartkp.nets import BackboneConfig
from chartkp.postprocess import PostprocessParams
from chartkp.trainer import (
    TrainConfig, calibrate_on, collate, forward_chart, load_model, predict, prediction_chart, train,
)
from chartkp.types import ChartType

TINY = TrainConfig(backbone=BackboneConfig("HGN", base_channels=8, n_stages=1), epochs=2, batch_size=2,
                   synthetic_ratio=0.0, eval_every=0, embed_dim=8, augmentation=NO_AUGMENTATION)


@pytest.fixture(scope="module")
def charts():
    from conftest import synth_chart
    return [synth_chart("line", s) for s in range(3)] + [synth_chart("bar-vertical", 1)]


def test_config_round_trip_and_unknown_keys():
    d = json.loads(json.dumps(TINY.to_dict()))
    assert TrainConfig.from_dict(d) == TINY
    with pytest.raises(ValueError):
        TrainConfig.from_dict({**d, "learning_rate": 1.0})
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_collate_pads_to_multiple(charts):
    from chartkp.data import build_training_example
    exs = [build_training_example(c, NO_AUGMENTATION, np.random.default_rng(0)) for c in charts[:2]]
    b = collate(exs, 32, 4)
    assert b.images.shape[-1] % 32 == 0 and b.targets.views.shape[-1] == b.images.shape[-1] // 4


def test_training_is_deterministic(tmp_path, charts):
    a = train(TINY, tmp_path / "a", train_charts=charts)
    b = train(TINY, tmp_path / "b", train_charts=charts)
    assert [r["total"] for r in a.history] == [r["total"] for r in b.history]
    assert (tmp_path / "a" / "config.json").exists() and a.last_path.exists()


def test_resume_continues_identically(tmp_path, charts):
    full = train(TINY, tmp_path / "full", train_charts=charts)
    train(TINY, tmp_path / "cut", train_charts=charts, max_epochs=1)
    resumed = train(TINY, tmp_path / "cut", train_charts=charts, resume=True)
    assert [r["total"] for r in resumed.history] == [r["total"] for r in full.history]
    assert resumed.epoch_losses == full.epoch_losses


def test_manifest_training_saves_best(tmp_path, charts):
    entries = [ManifestEntry(save_annotation(c, tmp_path / f"{c.chart_id}.json"), s)
               for c, s in zip(charts, ["train", "train", "val", "val"])]
    write_manifest(entries, tmp_path / "m.txt")
    cfg = TrainConfig.from_dict({**TINY.to_dict(), "epochs": 1, "eval_every": 1, "calibrate_every": 0})
    res = train(cfg, tmp_path / "run", manifest=tmp_path / "m.txt")
    assert res.best_path is not None and res.best_path.exists()
    assert 0.0 <= res.best_score <= 1.0


def test_predict_contract(tmp_path, charts):
    res = train(TINY, tmp_path / "p", train_charts=charts[:2], max_epochs=1)
    model, params = load_model(tmp_path / "p" / "model.pt")
    chart = charts[0]
    before = chart.image.copy()
    out1 = predict(model, chart, params, ChartType.SCATTER)
    out2 = predict(model, chart, params, ChartType.SCATTER)
    assert out1.chart_type == ChartType.SCATTER
    assert [s.y for s in out1.series] == [s.y for s in out2.series]
    assert np.array_equal(chart.image, before)
    pc = prediction_chart(chart, out1)
    assert pc.image is None and pc.chart_id == chart.chart_id
    hs, emb, _ = forward_chart(model, chart)
    assert hs.shape == (chart.image_size[0] // 4, chart.image_size[1] // 4) == emb.shape


def test_calibrate_on_returns_valid_params(tmp_path, charts):
    train(TINY, tmp_path / "c", train_charts=charts[:2], max_epochs=1)
    model, _ = load_model(tmp_path / "c" / "model.pt")
    p = calibrate_on(model, charts * 3, 4, PostprocessParams(), sample=10)
    assert 0.5 <= p.cc_threshold_factor <= 0.95
