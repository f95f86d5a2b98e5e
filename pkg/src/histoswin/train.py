"""Adam, the training loop with best-validation checkpointing, evaluation and multi-run averaging.

Randomness is derived from the training seed only:

* shuffle order of epoch ``e``: ``default_rng([seed, e, 0, 1])``
* augmentation of train sample ``i`` in epoch ``e``: ``default_rng([seed, e, i])``
* dropout mask of batch ``b`` in epoch ``e``: ``default_rng([seed, e, b, 2])``
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .data.dataset import DatasetSplit, Sample
from .data.transforms import AugmentConfig, augment, augment_rng, normalize, resize_bilinear
from .errors import ConfigError, DataError, NumericError, ShapeError
from .metrics import MetricsReport, confusion_matrix, metrics_from_confusion
from .model import EVAL_CHUNK, HybridModelConfig, forward_batch, model_init
from .parallel import ordered_map
from .tensor import Tape, Tensor, backward, cross_entropy

RECORD_COLUMNS = ("epoch", "train_acc", "train_loss", "val_acc", "val_loss", "checkpointed")
SHUFFLE_STREAM, DROPOUT_STREAM = 1, 2


# ------------------------------------------------------------------ optimizer

@dataclass
class OptimizerState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], **hyper) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **hyper)


def adam_step(params: dict, grads: Mapping[str, np.ndarray], state: OptimizerState) -> dict:
    """One Adam update, applied to ``params`` in place (also returned).

    ``t`` is incremented first, so the first step uses bias corrections
    ``1 - beta**1``.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None or np.shape(g) != p.shape or state.m[name].shape != p.shape:
            got = None if g is None else np.shape(g)
            raise ShapeError(f"adam_step: gradient for {name!r} has shape {got}, parameter {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** state.t, 1.0 - b2 ** state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        m, v = state.m[name], state.v[name]
        m *= p.dtype.type(b1)
        m += p.dtype.type(1 - b1) * g
        v *= p.dtype.type(b2)
        v += p.dtype.type(1 - b2) * (g * g)
        m_hat = m / p.dtype.type(c1)
        v_hat = v / p.dtype.type(c2)
        p -= p.dtype.type(state.lr) * m_hat / (np.sqrt(v_hat) + p.dtype.type(state.eps))
    return params


# ---------------------------------------------------------------- preparation

def prepare_image(image: np.ndarray, cfg: HybridModelConfig) -> np.ndarray:
    """Resize to the model input if needed and apply ImageNet normalization."""
    image = np.asarray(image, dtype=np.float32)
    size = (cfg.input_size, cfg.input_size)
    if image.ndim != 3 or image.shape[0] != cfg.backbone.in_channels:
        raise ShapeError(f"expected a {cfg.backbone.in_channels}×H×W image, got {image.shape}")
    if image.shape[1:] != size:
        image = resize_bilinear(image, size)
    return normalize(image)


def prepare_batch(samples: Sequence[Sample], cfg: HybridModelConfig) -> np.ndarray:
    return np.stack([prepare_image(s.image, cfg) for s in samples])


# ------------------------------------------------------------------ evaluation

def evaluate(params: Mapping, cfg: HybridModelConfig, samples: Sequence[Sample],
             workers: Optional[int] = None) -> MetricsReport:
    """Metrics of un-augmented predictions; chunks may run on worker threads."""
    if not samples:
        raise DataError("cannot evaluate an empty sample set")
    x = prepare_batch(samples, cfg)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    if labels.min() < 0 or labels.max() >= cfg.num_classes:
        raise DataError(f"labels outside [0, {cfg.num_classes})")
    starts = range(0, len(x), EVAL_CHUNK)
    probs = np.concatenate(ordered_map(lambda i: forward_batch(x[i:i + EVAL_CHUNK], params, cfg).data,
                                       starts, workers))
    loss = float(cross_entropy(probs, labels).data)
    conf = confusion_matrix(labels, probs.argmax(axis=1), cfg.num_classes)
    return metrics_from_confusion(conf, loss)


# -------------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-4
    dropout: float = 0.1
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if isinstance(self.augment, Mapping):
            object.__setattr__(self, "augment", AugmentConfig(**self.augment))
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"] = self.augment.to_dict()
        return d


@dataclass
class EpochStats:
    epoch: int
    train_acc: float
    train_loss: float
    val_acc: float
    val_loss: float
    checkpointed: bool


@dataclass
class TrainRecord:
    """Per-epoch history. Epochs are numbered from 1; ``best_epoch`` 0 means the initial parameters."""
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = float("nan")
    checkpoint_path: Optional[str] = None
    batch_losses: list = field(default_factory=list)  # one list per epoch

    @property
    def best(self) -> Optional[EpochStats]:
        return self.epochs[self.best_epoch - 1] if self.best_epoch > 0 else None

    @property
    def final_train_loss(self) -> float:
        return self.epochs[-1].train_loss if self.epochs else float("nan")

    @property
    def best_train_loss(self) -> float:
        return self.best.train_loss if self.best else float("nan")

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RECORD_COLUMNS)
            for e in self.epochs:
                w.writerow([e.epoch, f"{e.train_acc:.6f}", f"{e.train_loss:.6f}", f"{e.val_acc:.6f}",
                            f"{e.val_loss:.6f}", int(e.checkpointed)])
        return path


def _copy(params: Mapping) -> dict:
    return {k: np.array(v, dtype=np.float32, copy=True) for k, v in params.items()}


def train_step(params: dict, state: OptimizerState, x: np.ndarray, y: np.ndarray, cfg: HybridModelConfig,
               dropout: float = 0.0, rng: Optional[np.random.Generator] = None) -> tuple[float, np.ndarray]:
    """Forward, loss, backward and one Adam update. Returns ``(loss, probabilities)``."""
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
    tape = Tape()
    with tape:
        probs = forward_batch(x, leaves, cfg, dropout_rate=dropout, rng=rng)
        loss = cross_entropy(probs, y)
    backward(loss, tape)
    adam_step(params, {k: t.grad for k, t in leaves.items()}, state)
    return float(loss.data), probs.data


def train_loop(cfg: HybridModelConfig, params: Mapping, train: Sequence[Sample], val: Sequence[Sample],
               tcfg: TrainConfig = TrainConfig(), checkpoint_path=None) -> tuple[TrainRecord, dict]:
    """Train with Adam, keeping the parameters of the best validation epoch.

    The initial parameters are checkpointed before the first epoch; after
    that a checkpoint is written only when validation accuracy strictly
    improves, so ties keep the earliest epoch. Returns the record and the
    best parameters.
    """
    if not train or not val:
        raise DataError("training needs non-empty train and val splits")
    params = _copy(params)
    state = OptimizerState.for_params(params, lr=tcfg.lr)
    record = TrainRecord(checkpoint_path=None if checkpoint_path is None else str(checkpoint_path))
    best = _copy(params)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, best, cfg)
    labels = np.array([s.label for s in train], dtype=np.int64)
    seed = tcfg.seed
    best_acc = -1.0

    for epoch in range(1, tcfg.epochs + 1):
        order = np.random.default_rng([seed, epoch, 0, SHUFFLE_STREAM]).permutation(len(train))
        losses, correct, weighted = [], 0, 0.0
        for b, start in enumerate(range(0, len(order), tcfg.batch_size)):
            idx = order[start:start + tcfg.batch_size]
            x = np.stack([prepare_image(augment(train[i].image, tcfg.augment, augment_rng(seed, epoch, i))
                                        if tcfg.augment.enabled else train[i].image, cfg) for i in idx])
            y = labels[idx]
            rng = np.random.default_rng([seed, epoch, b, DROPOUT_STREAM])
            try:
                loss, probs = train_step(params, state, x, y, cfg, tcfg.dropout, rng)
            except NumericError as exc:
                raise NumericError(f"non-finite values at epoch {epoch}, batch {b}: {exc}") from None
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}: {loss}")
            losses.append(loss)
            weighted += loss * len(idx)
            correct += int(np.count_nonzero(probs.argmax(axis=1) == y))
        report = evaluate(params, cfg, val)
        improved = report.accuracy > best_acc
        if improved:
            best_acc = report.accuracy
            best = _copy(params)
            record.best_epoch, record.best_val_acc = epoch, report.accuracy
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, best, cfg)
        record.epochs.append(EpochStats(epoch, correct / len(train), weighted / len(train),
                                        report.accuracy, report.loss, improved))
        record.batch_losses.append(losses)
    if tcfg.epochs == 0:
        record.best_val_acc = evaluate(best, cfg, val).accuracy
    return record, best


# ------------------------------------------------------------------- multi-run

@dataclass
class RunResult:
    run: int
    seed: int
    train_acc: float
    val_acc: float
    test_acc: float
    best_train_loss: float
    final_train_loss: float
    record: TrainRecord
    test_report: MetricsReport
    params: dict = field(repr=False, default_factory=dict)


@dataclass
class MultiRunReport:
    runs: list
    mean: dict
    std: dict

    COLUMNS = ("train_acc", "val_acc", "test_acc", "best_train_loss", "final_train_loss")

    def rows(self) -> list[dict]:
        out = [{"run": r.run, "seed": r.seed, **{c: getattr(r, c) for c in self.COLUMNS}} for r in self.runs]
        out.append({"run": "mean", "seed": "", **self.mean})
        out.append({"run": "std", "seed": "", **self.std})
        return out

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=("run", "seed") + self.COLUMNS)
            w.writeheader()
            w.writerows(self.rows())
        return path

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps({"runs": self.rows()[:-2], "mean": self.mean, "std": self.std}, indent=2) + "\n")
        return path


def summarize(runs: Sequence[RunResult]) -> MultiRunReport:
    """Mean and sample standard deviation (ddof=1; 0 for a single run) per column."""
    mean, std = {}, {}
    for c in MultiRunReport.COLUMNS:
        vals = np.array([getattr(r, c) for r in runs], dtype=np.float64)
        mean[c] = float(vals.mean())
        # shifting by the first value keeps identical runs at exactly zero spread
        std[c] = float((vals - vals[0]).std(ddof=1)) if len(vals) > 1 else 0.0
    return MultiRunReport(list(runs), mean, std)


def multi_run(runs: int, base_seed: int, cfg: HybridModelConfig, samples: Sequence[Sample], split: DatasetSplit,
              tcfg: TrainConfig = TrainConfig(), out_dir=None, seeds: Optional[Sequence[int]] = None) -> MultiRunReport:
    """Train and test ``runs`` times with seeds ``base_seed + r`` (or explicit ``seeds``).

    Each run re-initializes the model and reseeds training from its seed; the
    data split is shared. With ``out_dir``, run ``r`` writes its checkpoint,
    record and test metrics under ``out_dir/run_{r}``.
    """
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    seeds = [base_seed + r for r in range(runs)] if seeds is None else list(seeds)
    if len(seeds) != runs:
        raise ConfigError(f"{len(seeds)} seeds given for {runs} runs")
    train, val, test = (split.select(samples, part) for part in ("train", "val", "test"))
    results = []
    for r, seed in enumerate(seeds):
        run_cfg = replace(cfg, seed=int(seed))
        run_dir = None
        if out_dir is not None:
            run_dir = Path(out_dir) / f"run_{r}"
            run_dir.mkdir(parents=True, exist_ok=True)
        ckpt = None if run_dir is None else run_dir / "best.ckpt"
        record, best = train_loop(run_cfg, model_init(run_cfg), train, val, replace(tcfg, seed=int(seed)), ckpt)
        report = evaluate(best, run_cfg, test)
        if run_dir is not None:
            record.write_csv(run_dir / "train_record.csv")
            report.write_json(run_dir / "test_metrics.json")
            report.write_csv(run_dir / "test_metrics.csv")
        stats = record.best
        results.append(RunResult(r, int(seed), stats.train_acc if stats else float("nan"),
                                 record.best_val_acc, report.accuracy, record.best_train_loss,
                                 record.final_train_loss, record, report, best))
    summary = summarize(results)
    if out_dir is not None:
        summary.write_csv(Path(out_dir) / "summary.csv")
        summary.write_json(Path(out_dir) / "summary.json")
    return summary
