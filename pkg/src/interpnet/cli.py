"""Command line: ``interpnet {gen-data,train,evaluate,explain}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.

Config files are YAML mappings; every key is optional and flags win::

    data: toy.jsonl              # dataset file (line-delimited JSON)
    split: [0.7, 0.15, 0.15]     # train / validation / test fractions
    variant: interpnet1          # interpnet0..3 or captioning
    seed: 0
    out: runs/toy
    beam_width: 1
    model: {hidden_width: 64, embed_dim: 32, lstm_hidden_dim: 64,
            max_decode_len: 30, vocab_min_count: 1}
    train: {classifier_epochs: 100, explainer_epochs: 100, patience: 10,
            batch_size: 32, classifier_lr: 0.001, explainer_lr: 0.001}
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from interpnet.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from interpnet.classifier import VARIANTS
from interpnet.dataset import (
    DatasetError,
    SyntheticSpec,
    dumps_dataset,
    generate_synthetic,
    load_dataset,
    num_classes,
    split,
)
from interpnet.metrics import MetricReport, evaluate
from interpnet.model import ConfigError
from interpnet.plotting import plot_report, plot_sweep, plot_training_curves
from interpnet.text import detokenize
from interpnet.training import DivergenceError, ModelConfig, TrainConfig, train_full

log = logging.getLogger("interpnet")

VARIANT_ORDER = ("interpnet0", "interpnet1", "interpnet2", "interpnet3", "captioning")
VARIANT_LABELS = {
    "interpnet0": "InterpNET_0 (output only)",
    "interpnet1": "InterpNET_1 (1 hidden layer)",
    "interpnet2": "InterpNET_2 (2 hidden layers)",
    "interpnet3": "InterpNET_3 (3 hidden layers)",
    "captioning": "Captioning (input only)",
}
CHECKPOINT = "model.json"


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    data: str | None = None
    split: tuple[float, ...] = (0.7, 0.15, 0.15)
    variant: str = "interpnet1"
    seed: int = 0
    out: str = "runs/default"
    beam_width: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    given: frozenset = frozenset()  # top-level keys set by the file or flags

    def validate(self, need_data: bool = True):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {sorted(VARIANTS)}, got {self.variant!r}")
        if need_data and not self.data:
            raise ConfigError("no dataset given (config 'data' or --data)")
        if need_data and not Path(self.data).is_file():
            raise ConfigError(f"dataset file {self.data} does not exist")
        if self.beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        if len(self.split) != 3:
            raise ConfigError("split needs three fractions (train, validation, test)")


def _section(cls, values, name):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from None


def load_run_config(path: str | None, overrides: dict) -> RunConfig:
    raw = {}
    if path:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    top = {f.name for f in fields(RunConfig)} - {"given"}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    given = frozenset(raw)
    model = _section(ModelConfig, raw.pop("model", None), "model")
    train_cfg = _section(TrainConfig, raw.pop("train", None), "train")
    try:
        cfg = RunConfig(model=model, train=train_cfg, **raw)
        cfg.split = tuple(float(f) for f in cfg.split)
        cfg.seed, cfg.beam_width = int(cfg.seed), int(cfg.beam_width)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    cfg.train.seed = cfg.seed
    cfg.given = given
    return cfg


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(num_classes=args.num_classes, feature_dim=args.feature_dim,
                         noise_std=args.noise_std, attributes_per_class=args.attributes_per_class,
                         examples_per_class=args.examples_per_class, templates=args.templates,
                         seed=args.seed)
    try:
        records = generate_synthetic(spec)
    except ValueError as exc:
        raise UsageError(f"invalid synthetic spec: {exc}") from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps_dataset(records))
    print(f"wrote {len(records)} records to {out}")
    return 0


def _splits(cfg: RunConfig):
    records = load_dataset(cfg.data)
    return records, split(records, cfg.split, cfg.seed)


def _train_one(cfg: RunConfig, variant: str, records, parts, out: Path):
    train, val, _ = parts
    net, train_log = train_full(train, val, variant, cfg.model, cfg.train, num_classes(records))
    out.mkdir(parents=True, exist_ok=True)
    run = {"data": cfg.data, "split": list(cfg.split), "seed": cfg.seed}
    save_checkpoint(net, out / CHECKPOINT, run)
    train_log.write(out / "train_log.jsonl")
    plot_training_curves(train_log, out / "training_curves.png")
    print(f"{variant}: {len(train_log.phase('classifier'))} classifier epochs, "
          f"{len(train_log.phase('explainer'))} explainer epochs -> {out / CHECKPOINT}")


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, {"data": args.data, "seed": args.seed, "out": args.out,
                                        "variant": args.variant})
    cfg.validate()
    records, parts = _splits(cfg)
    out = Path(cfg.out)
    if args.sweep:
        for variant in VARIANT_ORDER:
            _train_one(cfg, variant, records, parts, out / variant)
    else:
        _train_one(cfg, cfg.variant, records, parts, out)
    return 0


def _load_for_eval(checkpoint: Path, cfg: RunConfig, explicit_variant: bool):
    net, run = load_checkpoint(checkpoint)
    if explicit_variant and cfg.variant != net.variant:
        raise ConfigError(f"checkpoint {checkpoint} holds variant {net.variant!r}, "
                          f"config asks for {cfg.variant!r}")
    data = cfg.data or run.get("data")
    if not data or not Path(data).is_file():
        raise ConfigError(f"dataset {data!r} for {checkpoint} not found")
    split_fracs = tuple(run.get("split", cfg.split)) if cfg.data is None else cfg.split
    seed = run.get("seed", cfg.seed) if cfg.data is None else cfg.seed
    records = load_dataset(data)
    if records[0].features.shape[0] != net.classifier.config.input_dim:
        raise ConfigError(f"dataset features have {records[0].features.shape[0]} dims, "
                          f"checkpoint expects {net.classifier.config.input_dim}")
    test = split(records, split_fracs, seed)[2]
    return net, test


def _write_report(report: MetricReport, out: Path, stem: str = "report"):
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(report.to_json())
    s = report.summary()
    cider = "" if s["cider"] is None else f"{s['cider']:.6f}"
    (out / f"{stem}.tsv").write_text(
        "bleu\tmeteor_lite\tcider\taccuracy\n"
        f"{s['bleu']:.6f}\t{s['meteor_lite']:.6f}\t{cider}\t{s['accuracy']:.6f}\n")
    plot_report(report, out / f"{stem}.png")


def format_table(rows: list[tuple[str, dict]]) -> str:
    """Variant x metric grid, one row per variant; CIDEr is shown x10."""
    head = ("", "METEOR-lite", "BLEU", "CIDEr", "Classification Accuracy")
    body = []
    for name, m in rows:
        cider = "n/a" if m["cider"] is None else f"{m['cider'] * 10:.1f}"
        body.append((VARIANT_LABELS.get(name, name), f"{m['meteor_lite']:.1f}", f"{m['bleu']:.1f}",
                     cider, f"{100 * m['accuracy']:.1f}%"))
    widths = [max(len(r[i]) for r in (head, *body)) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in (head, *body)]
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config, {"data": args.data, "seed": args.seed, "out": args.out,
                                        "variant": args.variant, "beam_width": args.beam_width})
    cfg.validate(need_data=False)
    out = Path(cfg.out)
    if args.sweep:
        root = Path(args.checkpoint) if args.checkpoint else out
        rows = []
        for variant in VARIANT_ORDER:
            ckpt = root / variant / CHECKPOINT
            if not ckpt.is_file():
                raise ConfigError(f"sweep checkpoint {ckpt} is missing")
            cfg.variant = variant
            net, test = _load_for_eval(ckpt, cfg, explicit_variant=True)
            report = evaluate(net, test, beam_width=cfg.beam_width)
            _write_report(report, out / variant)
            rows.append((variant, report.summary()))
        table = format_table(rows)
        (out / "sweep.txt").write_text(table)
        with open(out / "sweep.tsv", "w") as fh:
            fh.write("variant\tbleu\tmeteor_lite\tcider\taccuracy\n")
            for name, m in rows:
                cider = "" if m["cider"] is None else f"{m['cider']:.6f}"
                fh.write(f"{name}\t{m['bleu']:.6f}\t{m['meteor_lite']:.6f}\t"
                         f"{cider}\t{m['accuracy']:.6f}\n")
        plot_sweep(rows, out / "sweep.png")
        print(table, end="")
        return 0
    ckpt = Path(args.checkpoint) if args.checkpoint else out / CHECKPOINT
    net, test = _load_for_eval(ckpt, cfg, explicit_variant="variant" in cfg.given)
    report = evaluate(net, test, beam_width=cfg.beam_width)
    _write_report(report, out)
    print(json.dumps(report.summary(), sort_keys=True))
    return 0


def _read_features(path: str) -> np.ndarray:
    text = Path(path).read_text()
    try:
        values = json.loads(text) if text.lstrip().startswith("[") else [float(t) for t in text.split()]
        x = np.asarray(values, dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"cannot parse feature file {path}: {exc}") from None
    if x.ndim != 1 or x.size == 0 or not np.all(np.isfinite(x)):
        raise UsageError(f"feature file {path} must hold one finite vector")
    return x


def cmd_explain(args) -> int:
    net, _ = load_checkpoint(args.checkpoint)
    if args.features:
        x = _read_features(args.features)
    else:
        if not (args.dataset and args.id):
            raise UsageError("give --features FILE or --dataset FILE --id RECORD_ID")
        by_id = {r.id: r for r in load_dataset(args.dataset)}
        if args.id not in by_id:
            raise UsageError(f"no record with id {args.id!r} in {args.dataset}")
        x = by_id[args.id].features
    if x.shape[0] != net.classifier.config.input_dim:
        raise UsageError(f"feature vector has {x.shape[0]} values, model expects "
                         f"{net.classifier.config.input_dim}")
    k, p, words = net.explain(x, beam_width=args.beam_width)[0]
    print(f"class={k} p={p:.6f} explanation={detokenize(words)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="interpnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic classify-and-explain dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--num-classes", type=int, default=5)
    g.add_argument("--examples-per-class", type=int, default=40)
    g.add_argument("--feature-dim", type=int, default=16)
    g.add_argument("--noise-std", type=float, default=0.5)
    g.add_argument("--attributes-per-class", type=int, default=2)
    g.add_argument("--templates", type=int, default=1)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="two-phase training (classifier, then explainer)")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--variant", choices=sorted(VARIANTS))
    t.add_argument("--sweep", action="store_true", help="train every variant into OUT/<variant>/")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score explanations and accuracy on the test split")
    e.add_argument("--config")
    e.add_argument("--checkpoint", help="checkpoint file (or sweep root directory with --sweep)")
    e.add_argument("--data")
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.add_argument("--variant", choices=sorted(VARIANTS))
    e.add_argument("--sweep", action="store_true", help="evaluate all five variants")
    e.add_argument("--beam-width", type=int)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("explain", help="classify one feature vector and explain it")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--features", help="file with one vector (JSON list or whitespace-separated)")
    x.add_argument("--dataset")
    x.add_argument("--id")
    x.add_argument("--beam-width", type=int, default=1)
    x.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (UsageError, ConfigError, DatasetError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
