"""Command line: gen-data, train, eval, infer, explain, grad-check.

Exit codes: 0 success, 1 verification or metric failure, 2 usage or config
error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional

from . import gradcheck
from . import tensor as T
from .errors import ConfigError, InfeasibleSpecError, ParseError, VQAError
from .facts import FactVocabularies
from .metrics import Taxonomy, report
from .question import Vocabulary
from .reasons import explain
from .toyworld import WorldSpec, generate, load_samples, load_split, save_dataset
from .training import Checkpoint, TrainConfig, toy_train_config, train, write_history_csv

log = logging.getLogger("coattn_vqa")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


@dataclass
class DataConfig:
    n: int = 1700
    splits: Optional[List[int]] = field(default_factory=lambda: [1000, 200, 500])  # train/val/test; None means 70/15/15

    def to_dict(self):
        return asdict(self)


@dataclass
class RunConfig:
    world: WorldSpec = field(default_factory=WorldSpec)
    train: TrainConfig = field(default_factory=toy_train_config)
    data: DataConfig = field(default_factory=DataConfig)
    top_k: int = 3

    SECTIONS = {"world": WorldSpec, "train": TrainConfig, "data": DataConfig}

    def to_dict(self):
        return {"world": self.world.to_dict(), "train": self.train.to_dict(), "data": self.data.to_dict(), "top_k": self.top_k}

    @classmethod
    def from_dict(cls, d: Dict) -> "RunConfig":
        cfg = cls()
        for key, value in d.items():
            if key == "top_k":
                cfg.top_k = int(value)
                continue
            section = cls.SECTIONS.get(key)
            if section is None:
                raise ConfigError(f"unknown config key {key!r}")
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            names = {f.name for f in fields(section)}
            for sub in value:
                if sub not in names:
                    raise ConfigError(f"unknown config key '{key}.{sub}'")
            setattr(cfg, key, replace(getattr(cfg, key), **value))  # unset keys keep the toy defaults
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", exc.lineno, path) from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(raw)

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _effective_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    # flags override the config file
    if getattr(args, "spec", None):
        try:
            spec = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", exc.lineno, args.spec) from None
        cfg.world = WorldSpec.from_dict(spec)
    for flag, section, key in (
        ("seed", "world", "seed"),
        ("n", "data", "n"),
        ("max_epochs", "train", "max_epochs"),
        ("lr", "train", "lr"),
        ("batch_size", "train", "batch_size"),
        ("d", "train", "d"),
        ("patience", "train", "patience"),
        ("train_seed", "train", "seed"),
        ("top_k", None, "top_k"),
    ):
        value = getattr(args, flag, None)
        if value is None:
            continue
        if section is None:
            setattr(cfg, key, value)
        else:
            setattr(getattr(cfg, section), key, value)
    if getattr(args, "n", None) is not None and not getattr(args, "splits", None):
        cfg.data.splits = None
    if getattr(args, "splits", None):
        cfg.data.splits = [int(x) for x in args.splits.split(",")]
    return cfg


def _print_config(cfg: RunConfig):
    print(json.dumps(cfg.to_dict(), indent=2))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    cfg = _effective_config(args)
    if args.print_config:
        _print_config(cfg)
        return EXIT_OK
    if not args.out:
        raise ConfigError("gen-data needs --out")
    sizes = tuple(cfg.data.splits) if cfg.data.splits else None
    ds = generate(cfg.world, cfg.data.n, sizes)
    save_dataset(ds, args.out)
    cfg.dump(Path(args.out) / "config.json")
    print(f"wrote {len(ds.train)}/{len(ds.val)}/{len(ds.test)} train/val/test samples to {args.out}")
    return EXIT_OK


def _load_vocabs(data_dir):
    d = Path(data_dir)
    vocab = Vocabulary.load(d / "vocab.txt")
    fv = FactVocabularies.from_dict(json.loads((d / "fact_vocab.json").read_text(encoding="utf-8")))
    return vocab, fv


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    if args.print_config:
        _print_config(cfg)
        return EXIT_OK
    if not args.data or not args.out:
        raise ConfigError("train needs --data and --out")
    vocab, fv = _load_vocabs(args.data)
    train_s, val_s = load_split(args.data, "train"), load_split(args.data, "val")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    ck = train(train_s, val_s, cfg.train, vocab, fv, on_epoch=lambda r: print(f"epoch {r.epoch:3d}  loss {r.train_loss:.4f}  val_acc {r.val_acc:.4f}", flush=True))
    ck.save(out / "checkpoint.bin")
    write_history_csv(ck.history, out / "history.csv")
    print(f"best epoch {ck.best_epoch}, val accuracy {ck.best_val_acc:.4f}; checkpoint written to {out / 'checkpoint.bin'}")
    return EXIT_OK


def _samples_from(path, split):
    p = Path(path)
    if p.is_dir():
        return load_split(p, split)
    return load_samples(p)


def cmd_eval(args) -> int:
    model = Checkpoint.load(args.ckpt).model()
    samples = _samples_from(args.data, args.split)
    if not samples:
        raise ConfigError("no samples to evaluate")
    preds = [a for a, _ in model.predict(samples)]
    tax = Taxonomy.load(args.taxonomy) if args.taxonomy else None
    rep = report([s.question for s in samples], preds, [s.answer for s in samples], tax, strict=args.strict_wups)
    text = rep.to_text()
    if args.report:
        prefix = Path(args.report)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        Path(str(prefix) + ".json").write_text(json.dumps(rep.to_dict(), indent=2) + "\n", encoding="utf-8")
        Path(str(prefix) + ".txt").write_text(text, encoding="utf-8")
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    sys.stdout.write(text)
    if args.min_accuracy is not None and rep.accuracy < args.min_accuracy:
        print(f"accuracy {rep.accuracy:.4f} below required {args.min_accuracy:.4f}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _pick(samples, index):
    if index is None:
        return samples
    if not 0 <= index < len(samples):
        raise ConfigError(f"--index {index} outside {len(samples)} samples")
    return [samples[index]]


def cmd_infer(args) -> int:
    model = Checkpoint.load(args.ckpt).model()
    samples = _pick(_samples_from(args.sample, args.split), args.index)
    for s, (a, p) in zip(samples, model.predict(samples)):
        print(json.dumps({"id": s.id, "question": s.question, "answer": a, "prob": p}))
    return EXIT_OK


def cmd_explain(args) -> int:
    model = Checkpoint.load(args.ckpt).model()
    samples = _pick(_samples_from(args.sample, args.split), args.index)
    if args.emit_heatmaps:
        Path(args.emit_heatmaps).mkdir(parents=True, exist_ok=True)
    results = []
    for s in samples:
        prefix = Path(args.emit_heatmaps) / f"sample{s.id}" if args.emit_heatmaps else None
        res = {"id": s.id, "question": s.question}
        res.update(explain(s, model, args.top_k, prefix))
        results.append(res)
        print(f"Q: {s.question}")
        print(f"A: {res['answer']} ({res['answer_prob']:.4f})")
        for r in res["reasons"]:
            print(f"  {r['rank']}. [{r['score']:.4f}] {r['text']}")
    if args.json:
        Path(args.json).write_text(json.dumps(results, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    if args.fault_op:
        with T.inject_fault(args.fault_op):
            rep = gradcheck.run(args.dims)
    else:
        rep = gradcheck.run(args.dims)
    print(rep.summary())
    return EXIT_OK if rep.ok else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coattn-vqa", description="Tri-modal co-attention VQA on a synthetic toy world.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a toy dataset")
    g.add_argument("--config", help="JSON run config")
    g.add_argument("--spec", help="JSON world spec (overrides the config's world section)")
    g.add_argument("--seed", type=int)
    g.add_argument("--n", type=int, help="number of samples")
    g.add_argument("--splits", help="train,val,test sizes summing to n")
    g.add_argument("--out")
    g.add_argument("--print-config", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--data", help="dataset directory from gen-data")
    t.add_argument("--out", help="output directory")
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--d", type=int)
    t.add_argument("--seed", dest="train_seed", type=int)
    t.add_argument("--print-config", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True, help="dataset directory or JSONL file")
    e.add_argument("--split", default="test")
    e.add_argument("--taxonomy")
    e.add_argument("--strict-wups", action="store_true", help="binary WUPS thresholding")
    e.add_argument("--report", help="output prefix for .json and .txt")
    e.add_argument("--min-accuracy", type=float, help="exit 1 below this accuracy")
    e.set_defaults(func=cmd_eval)

    for name, func, helptext in (("infer", cmd_infer, "answer questions"), ("explain", cmd_explain, "answer with reasons and attention")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--sample", required=True, help="JSONL file or dataset directory")
        p.add_argument("--split", default="test")
        p.add_argument("--index", type=int, help="only the sample at this position")
        if name == "explain":
            p.add_argument("--top-k", type=int, default=3)
            p.add_argument("--emit-heatmaps", metavar="DIR")
            p.add_argument("--json", help="write the full explanation here")
        p.set_defaults(func=func)

    c = sub.add_parser("grad-check", help="finite-difference gradient verification")
    c.add_argument("--dims", choices=sorted(gradcheck.DIMS), default="default")
    c.add_argument("--fault-op", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_grad_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InfeasibleSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except VQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
