import math
import struct

import numpy as np
import pytest

import tmclass


def write_gsf1(path, labels, records, num_layers, dim):
    """Writes the feature file the way an external exporter does."""
    with open(path, "wb") as f:
        f.write(b"GSF1")
        f.write(struct.pack("<5I", 1, len(records), num_layers, dim, len(labels)))
        for label in labels:
            raw = label.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
        for label, conditions, terminal in records:
            f.write(struct.pack("<I", tmclass.UNLABELED if label is None else label))
            f.write(np.asarray(conditions, dtype="<f4").tobytes())
            f.write(np.asarray(terminal, dtype="<f4").tobytes())


def test_codeword_and_classify():
    c = tmclass.encode_class(0, 8)
    assert np.allclose(c, [math.sin(2 * math.pi * l / 8) for l in range(8)])
    cb = tmclass.Codebook(["a", "b", "c"], 16)
    assert len(cb) == 3
    assert cb.codewords.shape == (3, 16)
    idx, scores = tmclass.classify(2.5 * cb.codeword(1), cb)
    assert idx == 1
    assert scores[1] == pytest.approx(1.0)
    with pytest.raises(tmclass.DimensionTooSmall):
        tmclass.Codebook(["a", "b", "c", "d"], 8)
    with pytest.raises(tmclass.DegenerateInput):
        tmclass.classify(np.zeros(16), cb)


def test_schedule_values():
    assert tmclass.schedule.alpha(0.5, 6.0) == pytest.approx(0.5, abs=1e-15)
    assert tmclass.schedule.std(0.5, 0.1) == pytest.approx(0.05)


def test_exporter_file_round_trip_and_inference(tmp_path):
    rng = np.random.default_rng(0)
    dim, layers = 16, 2
    labels = ["neutral", "happy", "sad"]
    records = [(i % 3 if i < 5 else None, rng.normal(size=(layers, dim)), rng.normal(size=dim)) for i in range(6)]
    path = tmp_path / "features.gsf"
    write_gsf1(path, labels, records, layers, dim)

    ds = tmclass.read_dataset(path)
    assert len(ds) == 6
    assert ds.labels == labels
    assert ds.label(5) is None
    assert ds.label(4) == 1
    np.testing.assert_array_equal(ds.terminal(2), records[2][2].astype(np.float32))
    np.testing.assert_array_equal(ds.conditions(3), records[3][1].astype(np.float32))

    ds.write(tmp_path / "copy.gsf")
    assert (tmp_path / "copy.gsf").read_bytes() == path.read_bytes()

    model, _ = tmclass.train(ds.subset([0, 1, 2, 3, 4]), estimator={"trunk_width": 16, "time_embed_dim": 8},
                             train={"batch_size": 4, "total_steps": 5})
    cb = tmclass.Codebook(labels, dim)
    preds = tmclass.infer(model, ds, cb, num_steps=4)
    assert len(preds) == 6
    assert all(0 <= p < 3 for p in preds)


def test_truncated_file_reports_offset(tmp_path):
    path = tmp_path / "bad.gsf"
    write_gsf1(path, ["a", "b"], [(0, np.zeros((1, 4)), np.zeros(4))], 1, 4)
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(tmclass.FormatError, match="offset"):
        tmclass.read_dataset(path)


def test_train_evaluate_save_load(tmp_path):
    ds = tmclass.generate_synthetic(num_classes=3, dim=16, num_condition_layers=2, samples_per_class=40, seed=4)
    train, _, test = tmclass.split(ds, 0.7, 0.0, 0.3, seed=1)
    model, losses = tmclass.train(train, estimator={"trunk_width": 32, "time_embed_dim": 8},
                                  train={"batch_size": 16, "total_steps": 600, "learning_rate": 1e-3, "seed": 2})
    assert np.mean(losses[-50:]) < np.mean(losses[:50])
    cb = tmclass.Codebook(ds.labels, 16)
    report = tmclass.evaluate(model, test, cb)
    assert report["count"] == len(test)
    assert report["accuracy"] >= 0.9

    model.save(tmp_path / "m.tmck")
    again = tmclass.load_model(tmp_path / "m.tmck")
    assert tmclass.infer(again, test, cb) == tmclass.infer(model, test, cb)


def test_bad_config_keys():
    with pytest.raises(tmclass.ConfigError):
        tmclass.generate_synthetic(num_clases=3)
