import csv
from dataclasses import replace

import numpy as np
import pytest

from histoswin import train as tr
from histoswin.backbone import BackboneConfig
from histoswin.checkpoint import load_checkpoint
from histoswin.data.dataset import split_dataset, synth_dataset
from histoswin.data.transforms import AugmentConfig
from histoswin.errors import ConfigError, DataError, NumericError, ShapeError
from histoswin.model import HybridModelConfig, model_init
from histoswin.parallel import ENV_VAR, ordered_map, worker_count
from histoswin.train import (
    OptimizerState,
    TrainConfig,
    adam_step,
    evaluate,
    multi_run,
    train_loop,
)

TINY = HybridModelConfig(input_size=16, backbone=BackboneConfig((4, 8), (1, 1), (2, 1)), embed_dim=8,
                         heads=2, window=4, num_swin_blocks=1)


@pytest.fixture(scope="module")
def corpus():
    data = synth_dataset("blob_vs_stripe", 24, 16, seed=0)
    return data, split_dataset(data, seed=0)


def parts(corpus):
    data, split = corpus
    return [split.select(data, p) for p in ("train", "val", "test")]


class TestAdam:
    def test_zero_gradient(self, rng):
        params = {"w": rng.standard_normal((3, 2)).astype(np.float32)}
        before = params["w"].copy()
        state = OptimizerState.for_params(params)
        for _ in range(3):
            adam_step(params, {"w": np.zeros((3, 2), np.float32)}, state)
        assert np.array_equal(params["w"], before) and state.t == 3

    def test_zero_lr(self, rng):
        params = {"w": rng.standard_normal(4).astype(np.float32)}
        before = params["w"].copy()
        adam_step(params, {"w": np.ones(4, np.float32)}, OptimizerState.for_params(params, lr=0.0))
        assert np.array_equal(params["w"], before)

    def test_first_step_by_hand(self):
        params = {"w": np.array([1.0], np.float32)}
        state = OptimizerState.for_params(params)
        adam_step(params, {"w": np.array([0.5], np.float32)}, state)
        # t=1: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
        expected = np.float32(1.0) - np.float32(1e-4 * 0.5 / (0.5 + 1e-8))
        assert abs(params["w"][0] - expected) <= 1e-7
        assert state.m["w"][0] == np.float32(0.05) and state.v["w"][0] == np.float32(0.00025)

    def test_two_steps_against_formula(self):
        g1, g2, lr = 0.3, -0.7, 1e-2
        m = v = 0.0
        theta = 2.0
        for t, g in enumerate((g1, g2), start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            theta -= lr * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        params = {"w": np.array([2.0], np.float32)}
        state = OptimizerState.for_params(params, lr=lr)
        for g in (g1, g2):
            adam_step(params, {"w": np.array([g], np.float32)}, state)
        assert abs(params["w"][0] - theta) <= 1e-6

    def test_shape_mismatch(self):
        params = {"w": np.zeros(3, np.float32)}
        with pytest.raises(ShapeError):
            adam_step(params, {"w": np.zeros(4, np.float32)}, OptimizerState.for_params(params))


class TestEvaluate:
    def test_empty(self):
        with pytest.raises(DataError):
            evaluate(model_init(TINY), TINY, [])

    def test_never_augments(self, corpus, monkeypatch):
        def boom(*a, **k):
            raise AssertionError("augmentation during evaluation")
        monkeypatch.setattr(tr, "augment", boom)
        _, val, test = parts(corpus)
        report = evaluate(model_init(TINY), TINY, val + test)
        assert report.total == len(val + test)

    def test_threads_match_sequential(self, corpus, monkeypatch):
        data, _ = corpus
        params = model_init(TINY)
        threaded = evaluate(params, TINY, data, workers=3)
        monkeypatch.setenv(ENV_VAR, "0")
        assert worker_count() == 0
        sequential = evaluate(params, TINY, data)
        assert threaded.to_dict() == sequential.to_dict()


def test_worker_env(monkeypatch):
    monkeypatch.setenv(ENV_VAR, "two")
    with pytest.raises(ConfigError):
        worker_count()
    monkeypatch.setenv(ENV_VAR, "2")
    assert worker_count() == 2
    assert ordered_map(lambda x: x * x, range(7)) == [0, 1, 4, 9, 16, 25, 36]


class TestTrainLoop:
    def test_zero_epochs(self, corpus, tmp_path):
        train, val, _ = parts(corpus)
        params = model_init(TINY)
        ckpt = tmp_path / "best.ckpt"
        record, best = train_loop(TINY, params, train, val, TrainConfig(epochs=0), ckpt)
        assert record.epochs == [] and record.best_epoch == 0
        loaded, _ = load_checkpoint(ckpt)
        assert all(np.array_equal(loaded[k], params[k]) and np.array_equal(best[k], params[k]) for k in params)
        assert 0 <= record.best_val_acc <= 1

    def test_deterministic_record(self, corpus):
        train, val, _ = parts(corpus)
        tcfg = TrainConfig(epochs=2, batch_size=4, lr=1e-3, seed=5)
        a, pa = train_loop(TINY, model_init(TINY), train, val, tcfg)
        b, pb = train_loop(TINY, model_init(TINY), train, val, tcfg)
        assert a.epochs == b.epochs and a.batch_losses == b.batch_losses
        assert all(np.array_equal(pa[k], pb[k]) for k in pa)
        c, _ = train_loop(TINY, model_init(TINY), train, val, replace(tcfg, seed=6))
        assert c.batch_losses != a.batch_losses

    def test_record_and_checkpoint(self, corpus, tmp_path):
        train, val, _ = parts(corpus)
        ckpt = tmp_path / "best.ckpt"
        record, best = train_loop(TINY, model_init(TINY), train, val,
                                  TrainConfig(epochs=3, batch_size=4, lr=1e-3), ckpt)
        accs = [e.val_acc for e in record.epochs]
        assert record.best_epoch == accs.index(max(accs)) + 1
        assert [e.checkpointed for e in record.epochs][record.best_epoch - 1]
        loaded, _ = load_checkpoint(ckpt)
        assert all(np.array_equal(loaded[k], best[k]) for k in best)
        assert evaluate(loaded, TINY, val).to_dict() == evaluate(best, TINY, val).to_dict()
        with record.write_csv(tmp_path / "rec.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == tr.RECORD_COLUMNS == ("epoch", "train_acc", "train_loss", "val_acc", "val_loss",
                                                        "checkpointed")
        assert len(rows) == 4 and len(record.batch_losses[0]) == -(-len(train) // 4)

    def test_numeric_failure_reports_position(self, corpus):
        train, val, _ = parts(corpus)
        params = model_init(TINY)
        params["head.weight"][:] = np.inf
        with pytest.raises(NumericError, match="epoch 1, batch 0"):
            train_loop(TINY, params, train, val, TrainConfig(epochs=1, batch_size=4))

    def test_empty_split(self, corpus):
        train, _, _ = parts(corpus)
        with pytest.raises(DataError):
            train_loop(TINY, model_init(TINY), train, [], TrainConfig(epochs=1))

    @pytest.mark.parametrize("kw", [dict(epochs=-1), dict(batch_size=0), dict(lr=-1.0), dict(dropout=1.0)])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


class TestMultiRun:
    TCFG = TrainConfig(epochs=1, batch_size=8, lr=1e-3, augment=AugmentConfig(enabled=False))

    def test_single_run(self, corpus, tmp_path):
        data, split = corpus
        rep = multi_run(1, 3, TINY, data, split, self.TCFG, out_dir=tmp_path)
        run = rep.runs[0]
        assert run.seed == 3
        assert rep.mean["test_acc"] == run.test_acc and rep.std["test_acc"] == 0.0
        for name in ("best.ckpt", "train_record.csv", "test_metrics.json", "test_metrics.csv"):
            assert (tmp_path / "run_0" / name).exists()
        assert (tmp_path / "summary.csv").exists() and (tmp_path / "summary.json").exists()
        params, _ = load_checkpoint(tmp_path / "run_0" / "best.ckpt")
        test = split.select(data, "test")
        assert evaluate(params, replace(TINY, seed=3), test).to_dict() == run.test_report.to_dict()

    def test_identical_seeds_zero_std(self, corpus):
        data, split = corpus
        rep = multi_run(3, 0, TINY, data, split, self.TCFG, seeds=[4, 4, 4])
        assert all(v == 0.0 for v in rep.std.values())

    def test_mean_is_row_mean(self, corpus):
        data, split = corpus
        rep = multi_run(3, 10, TINY, data, split, self.TCFG)
        assert [r.seed for r in rep.runs] == [10, 11, 12]
        for col in rep.COLUMNS:
            vals = [getattr(r, col) for r in rep.runs]
            assert rep.mean[col] == pytest.approx(sum(vals) / 3, rel=1e-12)
            assert rep.std[col] == pytest.approx(np.std(vals, ddof=1), abs=1e-12)
        rows = rep.rows()
        assert [r["run"] for r in rows] == [0, 1, 2, "mean", "std"]

    def test_invalid(self, corpus):
        data, split = corpus
        with pytest.raises(ConfigError):
            multi_run(0, 0, TINY, data, split, self.TCFG)
        with pytest.raises(ConfigError):
            multi_run(2, 0, TINY, data, split, self.TCFG, seeds=[1])
