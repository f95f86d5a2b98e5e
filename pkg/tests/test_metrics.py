import csv
import json

import numpy as np
import pytest

from histoswin.metrics import confusion_matrix, metrics_from_confusion


def test_worked_example():
    r = metrics_from_confusion(np.array([[3, 2], [1, 4]]), loss=0.5)
    assert r.accuracy == pytest.approx(0.7)
    np.testing.assert_allclose(r.precision, [0.75, 4 / 6])
    np.testing.assert_allclose(r.recall, [0.6, 0.8])
    f1 = [2 * p * q / (p + q) for p, q in zip(r.precision, r.recall)]
    np.testing.assert_allclose(r.f1, f1)
    assert r.macro_precision == pytest.approx((0.75 + 4 / 6) / 2)
    assert r.total == 10 and r.loss == 0.5


def test_all_correct():
    r = metrics_from_confusion(confusion_matrix([0, 1, 2, 2], [0, 1, 2, 2], 3))
    assert r.accuracy == 1.0
    assert r.macro_precision == r.macro_recall == r.macro_f1 == 1.0
    assert r.absent_classes == []


def test_absent_class_flagged():
    r = metrics_from_confusion(confusion_matrix([0, 1, 1], [0, 1, 0], 3))
    assert r.absent_classes == [2]
    assert r.precision[2] == r.recall[2] == r.f1[2] == 0.0
    assert r.macro_recall == pytest.approx((1 + 0.5 + 0) / 3)


def test_zero_denominators():
    r = metrics_from_confusion(np.array([[0, 3], [0, 2]]))
    assert r.precision[0] == 0.0 and r.recall[0] == 0.0 and r.f1[0] == 0.0
    assert r.absent_classes == []


def test_confusion_orientation():
    conf = confusion_matrix([0, 0, 1], [1, 1, 1], 2)
    assert conf.tolist() == [[0, 2], [0, 1]]  # rows true, columns predicted


def test_writers(tmp_path):
    r = metrics_from_confusion(np.array([[3, 2], [1, 4]]), loss=0.25)
    data = json.loads(r.write_json(tmp_path / "m.json").read_text())
    assert data["accuracy"] == pytest.approx(0.7) and data["confusion"] == [[3, 2], [1, 4]]
    with r.write_csv(tmp_path / "m.csv", ["a", "b"]).open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["class", "precision", "recall", "f1", "support"]
    assert rows[1][0] == "a" and rows[1][4] == "5"
    assert [row[0] for row in rows[3:]] == ["macro", "accuracy", "loss"]
