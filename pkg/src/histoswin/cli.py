"""Command-line entry point: ``histoswin {synth,train,evaluate,explain,features}``.

Every subcommand accepts ``--config FILE`` (JSON); explicit flags override
file values. Exit codes: 0 success, 1 usage/config error, 2 data error,
3 numeric error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import checkpoint_hash, load_checkpoint
from .contour import features_report_folder, write_features_csv
from .data.dataset import SYNTH_CLASSES, DatasetSplit, load_folder, split_dataset, synth_dataset, write_folder
from .data.io import load_image
from .data.transforms import AugmentConfig, channel_means_normalized, denormalize
from .errors import ConfigError, ContractError, DataError, HistoSwinError, NumericError, ShapeError
from .explain import (
    attribution_rows,
    embedding_model,
    global_importance,
    kernel_shap,
    lime_explain,
    model_predictor,
    occlusion_map,
    pca_fit,
    render_heatmap,
    write_importance_csv,
    write_manifest,
)
from .model import HybridModelConfig, embed
from .train import TrainConfig, evaluate, multi_run, prepare_batch, prepare_image

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
LOCK_NAME = ".histoswin.lock"
SPLIT_NAME = "split.json"


class UsageError(HistoSwinError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------- config

@dataclass
class RunConfig:
    """Resolved configuration of one command.

    JSON schema (all keys optional)::

        {"seed": 0, "output_dir": "out",
         "model": {HybridModelConfig fields},
         "data": {"root": "dir", "split": "split.json"}
              or {"synth": {"kind": "blob_vs_stripe", "n": 200, "size": 64}},
         "augment": {AugmentConfig fields},
         "train": {"epochs": 20, "batch_size": 16, "lr": 1e-4, "dropout": 0.1, "runs": 1},
         "explain": {"patch": 16, "stride": 16, "grid": 8, "samples": 1000,
                     "kernel_width": 0.25, "ridge": 1e-3, "components": 8, "background": 16}}
    """
    seed: int = 0
    output_dir: Optional[str] = None
    model: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    augment: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    explain: dict = field(default_factory=dict)

    SECTIONS = ("model", "data", "augment", "train", "explain")

    @classmethod
    def from_file(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        p = Path(path)
        if not p.is_file():
            raise DataError(f"{p}: config file not found")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be an object")
        unknown = set(doc) - {"seed", "output_dir", *cls.SECTIONS}
        if unknown:
            raise ConfigError(f"{p}: unknown keys {sorted(unknown)}")
        for s in cls.SECTIONS:
            if not isinstance(doc.get(s, {}), dict):
                raise ConfigError(f"{p}: section {s!r} must be an object")
        if "seed" in doc and not isinstance(doc["seed"], int):
            raise ConfigError(f"{p}: seed must be an integer")
        return cls(**doc)

    def set(self, section: str, key: str, value) -> None:
        if value is not None:
            getattr(self, section)[key] = value

    def model_config(self) -> HybridModelConfig:
        try:
            return HybridModelConfig.from_dict(self.model)
        except TypeError as exc:
            raise ConfigError(f"model config: {exc}") from None

    def augment_config(self) -> AugmentConfig:
        try:
            return AugmentConfig(**self.augment)
        except TypeError as exc:
            raise ConfigError(f"augment config: {exc}") from None

    def train_config(self) -> TrainConfig:
        opts = {k: v for k, v in self.train.items() if k != "runs"}
        try:
            return TrainConfig(seed=self.seed, augment=self.augment_config(), **opts)
        except TypeError as exc:
            raise ConfigError(f"train config: {exc}") from None

    def to_dict(self) -> dict:
        return {"seed": self.seed, "output_dir": self.output_dir, **{s: getattr(self, s) for s in self.SECTIONS}}


def _require_path(path, what: str, directory: bool = False) -> Path:
    p = Path(path)
    ok = p.is_dir() if directory else p.is_file()
    if not ok:
        raise DataError(f"{p}: {what} not found")
    return p


@contextmanager
def _locked(out_dir: Path):
    """Claim ``out_dir`` for this process via an exclusive lock file."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"{out_dir}: output directory is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


def _output_dir(rc: RunConfig) -> Path:
    if not rc.output_dir:
        raise UsageError("an output directory is required (--out or output_dir in the config)")
    return Path(rc.output_dir)


def _load_data(rc: RunConfig, cfg: HybridModelConfig):
    """Samples, class names and split from a folder (with optional manifest) or a synth spec."""
    data = rc.data
    if data.get("root"):
        root = _require_path(data["root"], "dataset directory", directory=True)
        split_path = data.get("split") or (root / SPLIT_NAME if (root / SPLIT_NAME).is_file() else None)
        if split_path is not None:
            _require_path(split_path, "split manifest")
        samples, classes = load_folder(root, cfg.input_size)
        split = DatasetSplit.load(split_path) if split_path else split_dataset(samples, rc.seed, num_classes=len(classes))
    elif data.get("synth"):
        spec = dict(data["synth"])
        kind = spec.get("kind", "blob_vs_stripe")
        samples = synth_dataset(kind, int(spec.get("n", 200)), int(spec.get("size", cfg.input_size)),
                                int(spec.get("seed", rc.seed)))
        classes = list(SYNTH_CLASSES[kind])
        split = split_dataset(samples, rc.seed, num_classes=len(classes))
    else:
        raise UsageError("no dataset given (--data DIR or a data section in the config)")
    if len(classes) != cfg.num_classes:
        raise ConfigError(f"dataset has {len(classes)} classes but the model expects {cfg.num_classes}")
    return samples, classes, split


# ------------------------------------------------------------------- commands

def cmd_synth(rc: RunConfig) -> int:
    spec = rc.data.get("synth", {})
    kind, n, size = spec.get("kind", "blob_vs_stripe"), int(spec.get("n", 200)), int(spec.get("size", 64))
    out = _output_dir(rc)
    samples = synth_dataset(kind, n, size, rc.seed)
    split = split_dataset(samples, rc.seed)
    with _locked(out):
        try:
            write_folder(samples, out)
            split.save(out / SPLIT_NAME)
        except OSError as exc:
            raise DataError(f"{out}: cannot write dataset ({exc.strerror or exc})") from None
    print(f"wrote {n} images to {out} (train/val/test {len(split.train)}/{len(split.val)}/{len(split.test)})")
    return EXIT_OK


def cmd_train(rc: RunConfig) -> int:
    cfg = replace(rc.model_config(), seed=rc.seed)
    tcfg = rc.train_config()
    runs = int(rc.train.get("runs", 1))
    out = _output_dir(rc)
    samples, classes, split = _load_data(rc, cfg)
    with _locked(out):
        (out / "config.json").write_text(json.dumps(rc.to_dict(), indent=2) + "\n")
        split.save(out / SPLIT_NAME)
        summary = multi_run(runs, rc.seed, cfg, samples, split, tcfg, out_dir=out)
    for r in summary.runs:
        print(f"run {r.run} seed {r.seed}: train {r.train_acc:.4f} val {r.val_acc:.4f} test {r.test_acc:.4f}")
    m, s = summary.mean, summary.std
    print(f"mean test accuracy {m['test_acc']:.4f} ± {s['test_acc']:.4f} over {runs} run(s)")
    return EXIT_OK


def cmd_evaluate(rc: RunConfig, checkpoint: str, part: str) -> int:
    ckpt = _require_path(checkpoint, "checkpoint")
    expected = rc.model_config() if rc.model else None
    params, cfg = load_checkpoint(ckpt, expected)
    out = _output_dir(rc)
    samples, classes, split = _load_data(rc, cfg)
    chosen = samples if part == "all" else split.select(samples, part)
    if not chosen:
        raise DataError(f"split {part!r} is empty")
    with _locked(out):
        report = evaluate(params, cfg, chosen)
        report.write_json(out / f"{part}_metrics.json")
        report.write_csv(out / f"{part}_metrics.csv", classes)
    print(f"{part}: accuracy {report.accuracy:.4f}, macro F1 {report.macro_f1:.4f} on {report.total} images")
    return EXIT_OK


def _train_samples(rc: RunConfig, cfg: HybridModelConfig):
    if not (rc.data.get("root") or rc.data.get("synth")):
        return None
    samples, _, split = _load_data(rc, cfg)
    return split.select(samples, "train")


def cmd_explain(rc: RunConfig, checkpoint: str, image_path: str, method: str, target: Optional[int]) -> int:
    ckpt = _require_path(checkpoint, "checkpoint")
    img_file = _require_path(image_path, "image")
    expected = rc.model_config() if rc.model else None
    params, cfg = load_checkpoint(ckpt, expected)
    out = _output_dir(rc)
    image = load_image(img_file)
    x = prepare_image(image, cfg)
    shown = denormalize(x)
    predict = model_predictor(params, cfg)
    probs = predict(x[None])[0]
    target = int(np.argmax(probs)) if target is None else int(target)
    if not 0 <= target < cfg.num_classes:
        raise ConfigError(f"target class {target} outside [0, {cfg.num_classes})")
    ex = rc.explain
    seed = rc.seed
    artifacts, extra = {}, {"prediction": probs.tolist()}
    train = _train_samples(rc, cfg)
    with _locked(out):
        if method == "occlusion":
            baseline = (channel_means_normalized(np.stack([s.image for s in train])) if train
                        else x.mean(axis=(1, 2)))
            m = occlusion_map(predict, x, target, int(ex.get("patch", 16)), int(ex.get("stride", 16)), baseline)
            np.savetxt(out / "occlusion.csv", m.drops, delimiter=",", fmt="%.9g")
            pgm, ppm, _ = render_heatmap(m.drops, shown, out / "occlusion")
            artifacts.update(values=out / "occlusion.csv", heatmap=pgm, overlay=ppm)
            hyper = m.hyperparameters()
            hyper["baseline_source"] = "train-split channel means" if train else "image channel means"
            extra["base_confidence"] = m.base_confidence
        elif method == "lime":
            e = lime_explain(predict, x, target, int(ex.get("grid", 8)), int(ex.get("samples", 1000)),
                             float(ex.get("kernel_width", 0.25)), float(ex.get("ridge", 1e-3)), seed)
            np.savetxt(out / "lime_weights.csv", e.weight_map(), delimiter=",", fmt="%.9g")
            pgm, ppm, _ = render_heatmap(e.weight_map(), shown, out / "lime")
            artifacts.update(values=out / "lime_weights.csv", heatmap=pgm, overlay=ppm)
            hyper = e.hyperparameters()
            extra.update(intercept=e.intercept, r2=e.r2)
        else:
            if not train:
                raise UsageError("shap needs training data for the PCA fit (--data or a synth spec)")
            k = int(ex.get("components", 8))
            n_bg = int(ex.get("background", 16))
            budget = ex.get("budget", "enumerate")
            emb = embed(prepare_batch(train, cfg), params, cfg)
            pca = pca_fit(emb, k)
            pick = np.sort(np.random.default_rng(seed).permutation(len(train))[:n_bg])
            background = pca.transform(emb[pick])
            z = pca.transform(embed(x[None], params, cfg))[0]
            att = kernel_shap(embedding_model(params, pca, target), z, background, budget, seed, target)
            write_importance_csv(attribution_rows(att), out / "shap_attribution.csv")
            artifacts["attribution"] = out / "shap_attribution.csv"
            hyper = {"components": k, "background": n_bg, "budget": budget, "target": target,
                     "pca_fit": "train split embeddings"}
            extra.update(base_value=att.base_value, output=att.output, efficiency_gap=att.efficiency_gap,
                         explained_variance_ratio=pca.explained_variance_ratio.tolist())
            if int(ex.get("global_samples", 0)) > 0:
                atts = [kernel_shap(embedding_model(params, pca, target), row, background, budget, seed, target)
                        for row in pca.transform(emb[:int(ex["global_samples"])])]
                write_importance_csv(global_importance(atts), out / "shap_global_importance.csv")
                artifacts["global_importance"] = out / "shap_global_importance.csv"
        manifest = write_manifest(out / f"{method}_manifest.json", input_id=str(img_file), method=method, seed=seed,
                                  checkpoint_hash=checkpoint_hash(ckpt), hyperparameters=hyper,
                                  artifacts=artifacts, extra=extra)
    print(f"{method}: target class {target}, artifacts in {out} ({manifest.name})")
    return EXIT_OK


def cmd_features(rc: RunConfig, out_file: Optional[str]) -> int:
    root = _require_path(rc.data.get("root") or "", "image directory", directory=True) if rc.data.get("root") else None
    if root is None:
        raise UsageError("features needs --data DIR")
    rows = features_report_folder(root)
    if out_file:
        target = Path(out_file)
    else:
        target = _output_dir(rc) / "contour_features.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_features_csv(rows, target)
    failed = sum(1 for r in rows if r["error"])
    print(f"wrote {len(rows)} rows to {target} ({failed} failed)")
    return EXIT_OK


# -------------------------------------------------------------------- parsing

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration (default: none)")
    p.add_argument("--seed", type=int, help="master seed (default: config value or 0)")
    p.add_argument("--out", help="output directory (default: config output_dir)")


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset root with one subdirectory per class (default: config data.root)")
    p.add_argument("--split", help="split manifest JSON (default: <data>/split.json if present, else computed)")
    p.add_argument("--synth", choices=sorted(SYNTH_CLASSES),
                   help="use a generated corpus instead of --data (default: none)")
    p.add_argument("--n", type=int, help="synthetic corpus size (default: 200)")
    p.add_argument("--size", type=int, help="synthetic image side in pixels (default: model input size)")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input-size", type=int, help="model input side in pixels (default: 64)")
    p.add_argument("--embed-dim", type=int, help="token embedding width (default: 32)")
    p.add_argument("--heads", type=int, help="attention heads (default: 2)")
    p.add_argument("--window", type=int, help="attention window side (default: 4)")
    p.add_argument("--blocks", type=int, help="number of windowed attention blocks (default: 2)")
    p.add_argument("--classes", type=int, help="number of classes (default: 2)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="histoswin", description="Hybrid residual/windowed-attention image classifier toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic class-folder dataset and split manifest")
    _common(p)
    p.add_argument("--kind", choices=sorted(SYNTH_CLASSES), default=None,
                   help="corpus type (default: blob_vs_stripe)")
    p.add_argument("--n", type=int, help="number of images (default: 200)")
    p.add_argument("--size", type=int, help="image side in pixels (default: 64)")

    p = sub.add_parser("train", help="train (optionally several runs) and evaluate on the test split")
    _common(p)
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--epochs", type=int, help="epochs per run (default: 20)")
    p.add_argument("--batch-size", type=int, help="mini-batch size (default: 16)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default: 1e-4)")
    p.add_argument("--dropout", type=float, help="dropout rate on the pooled embedding (default: 0.1)")
    p.add_argument("--runs", type=int, help="independent runs with seeds seed+0..runs-1 (default: 1)")
    p.add_argument("--no-augment", action="store_true", help="disable training augmentation (default: enabled)")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a split")
    _common(p)
    _data_flags(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file (required)")
    p.add_argument("--part", choices=("train", "val", "test", "all"), default="test",
                   help="which split to evaluate (default: test)")

    p = sub.add_parser("explain", help="occlusion, LIME or SHAP explanation of one image")
    _common(p)
    _data_flags(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file (required)")
    p.add_argument("--image", required=True, help="image to explain (required)")
    p.add_argument("--method", choices=("occlusion", "lime", "shap"), required=True, help="explainer (required)")
    p.add_argument("--target", type=int, help="class to explain (default: predicted class)")
    p.add_argument("--patch", type=int, help="occlusion patch side (default: 16)")
    p.add_argument("--stride", type=int, help="occlusion stride (default: 16)")
    p.add_argument("--grid", type=int, help="LIME superpixel grid side (default: 8)")
    p.add_argument("--samples", type=int, help="LIME perturbation count (default: 1000)")
    p.add_argument("--kernel-width", type=float, help="LIME proximity kernel width (default: 0.25)")
    p.add_argument("--ridge", type=float, help="LIME ridge penalty (default: 1e-3)")
    p.add_argument("--components", type=int, help="SHAP principal components (default: 8)")
    p.add_argument("--background", type=int, help="SHAP background rows from the train split (default: 16)")
    p.add_argument("--global-samples", type=int,
                   help="also rank components over this many train embeddings (default: 0, off)")

    p = sub.add_parser("features", help="contour feature report over a class-folder image tree")
    _common(p)
    p.add_argument("--data", help="image root with one subdirectory per class (required unless in config)")
    p.add_argument("--csv", help="output CSV path (default: <out>/contour_features.csv)")
    return parser


def _resolve(args) -> RunConfig:
    rc = RunConfig.from_file(args.config)
    if args.seed is not None:
        rc.seed = args.seed
    if args.out is not None:
        rc.output_dir = args.out
    a = vars(args)
    if a.get("data") is not None:
        rc.data = {"root": args.data, **({"split": rc.data["split"]} if "split" in rc.data else {})}
    if a.get("split") is not None:
        rc.data["split"] = args.split
    if args.command == "synth":
        synth = dict(rc.data.get("synth", {}))
        for key in ("kind", "n", "size"):
            if a.get(key) is not None:
                synth[key] = a[key]
        rc.data["synth"] = synth
    elif a.get("synth") is not None or "synth" in rc.data:
        synth = dict(rc.data.get("synth", {}))
        if a.get("synth") is not None:
            synth["kind"] = args.synth
            rc.data.pop("root", None)
        for key in ("n", "size"):
            if a.get(key) is not None:
                synth[key] = a[key]
        if synth and not rc.data.get("root"):
            rc.data["synth"] = synth
    for flag, key in (("input_size", "input_size"), ("embed_dim", "embed_dim"), ("heads", "heads"),
                      ("window", "window"), ("blocks", "num_swin_blocks"), ("classes", "num_classes")):
        rc.set("model", key, a.get(flag))
    for key in ("epochs", "batch_size", "lr", "dropout", "runs"):
        rc.set("train", key, a.get(key))
    if a.get("no_augment"):
        rc.augment["enabled"] = False
    for key in ("patch", "stride", "grid", "samples", "kernel_width", "ridge", "components", "background",
                "global_samples"):
        rc.set("explain", key, a.get(key))
    return rc


def _dispatch(args, rc: RunConfig) -> int:
    if args.command == "synth":
        return cmd_synth(rc)
    if args.command == "train":
        return cmd_train(rc)
    if args.command == "evaluate":
        return cmd_evaluate(rc, args.checkpoint, args.part)
    if args.command == "explain":
        return cmd_explain(rc, args.checkpoint, args.image, args.method, args.target)
    return cmd_features(rc, args.csv)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, ShapeError, OSError)):
        return EXIT_DATA
    return EXIT_USAGE


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = _resolve(args)
        return _dispatch(args, rc)
    except (HistoSwinError, OSError) as exc:
        kind = type(exc).__name__
        print(f"histoswin {args.command}: {kind}: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
