"""RMSProp training with early stopping, and the binary checkpoint format."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ParseError
from .facts import FactVocabularies
from .metrics import exact_accuracy
from .model import AnswerVocabulary, Model, ModelConfig, build_model
from .question import Vocabulary

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "coattn-vqa-checkpoint/1"


@dataclass
class TrainConfig:
    lr: float = 2e-4
    decay: float = 0.99
    eps: float = 1e-8
    max_epochs: int = 256
    patience: int = 5
    batch_size: int = 32
    seed: int = 42
    d: int = 64
    h: Optional[int] = None
    d_hw: Optional[int] = None
    d_hp: Optional[int] = None
    d_hq: Optional[int] = None
    max_len: int = 12
    top_answers: int = 3000
    share_fact_attention: bool = False
    weight_decay: float = 0.0
    emb_std: float = 0.01

    def validate(self):
        if self.lr < 0 or not 0 <= self.decay < 1 or self.eps < 0 or self.weight_decay < 0 or self.emb_std < 0:
            raise ConfigError("lr, decay, eps, weight_decay and emb_std must be nonnegative (decay below 1)")
        for name in ("max_epochs", "patience", "batch_size", "d", "max_len", "top_answers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.patience >= self.max_epochs and self.max_epochs > 1:
            # a patience that can never trigger is harmless but almost always a typo
            log.warning("patience %d >= max_epochs %d", self.patience, self.max_epochs)
        return self

    def dims(self):
        return {k: getattr(self, k) for k in ("d", "h", "d_hw", "d_hp", "d_hq", "share_fact_attention", "emb_std")}

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown training key {unknown[0]!r}")
        return cls(**d)



def toy_train_config(**overrides) -> TrainConfig:
    """Settings tuned for the small toy world and a 50-epoch budget.

    Compared to the large-data defaults: a 5x higher learning rate, unit
    variance embeddings (tiny ones stall subject matching in facts) and
    light weight decay.
    """
    base = dict(lr=1e-3, max_epochs=50, patience=15, emb_std=1.0, weight_decay=1e-4)
    base.update(overrides)
    return TrainConfig(**base).validate()


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: Dict[str, np.ndarray]
    vocab: List[str]
    fact_vocab: Dict
    answers: List[str]
    seed: int
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    dropped: int = 0

    def model(self) -> Model:
        return Model(
            self.model_config,
            self.params,
            Vocabulary(self.vocab),
            FactVocabularies.from_dict(self.fact_vocab),
            AnswerVocabulary(self.answers),
            self.train_config.max_len,
        )

    @property
    def best_val_acc(self) -> float:
        return max((r.val_acc for r in self.history), default=float("nan"))

    def save(self, path):
        """Decimal manifest length line, JSON manifest, then little-endian float64 arrays."""
        names = sorted(self.params)
        entries, blobs, offset = [], [], 0
        for name in names:
            arr = np.ascontiguousarray(self.params[name], dtype="<f8")
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
            blobs.append(arr.tobytes())
            offset += arr.nbytes
        manifest = {
            "format": CHECKPOINT_FORMAT,
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "vocab": self.vocab,
            "fact_vocab": self.fact_vocab,
            "answers": self.answers,
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "dropped": self.dropped,
            "history": [asdict(r) for r in self.history],
            "params": entries,
        }
        body = json.dumps(manifest, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(f"{len(body)}\n".encode("ascii"))
            fh.write(body)
            for blob in blobs:
                fh.write(blob)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        raw = Path(path).read_bytes()
        nl = raw.find(b"\n")
        try:
            size = int(raw[:nl].decode("ascii"))
            manifest = json.loads(raw[nl + 1 : nl + 1 + size].decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise ParseError(f"not a checkpoint ({exc})", None, path) from None
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise ParseError(f"unknown checkpoint format {manifest.get('format')!r}", None, path)
        data = raw[nl + 1 + size :]
        params = {}
        for e in manifest["params"]:
            chunk = data[e["offset"] : e["offset"] + e["nbytes"]]
            if len(chunk) != e["nbytes"]:
                raise ParseError(f"truncated array {e['name']}", None, path)
            params[e["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(e["shape"])
        return cls(
            ModelConfig.from_dict(manifest["model_config"]),
            TrainConfig.from_dict(manifest["train_config"]),
            params,
            manifest["vocab"],
            manifest["fact_vocab"],
            manifest["answers"],
            manifest["seed"],
            [EpochRecord(**r) for r in manifest["history"]],
            manifest["best_epoch"],
            manifest.get("dropped", 0),
        )


def accuracy(model: Model, samples: Sequence, batch_size: int = 64) -> float:
    preds = [a for a, _ in model.predict(samples, batch_size)]
    return exact_accuracy(preds, [s.answer for s in samples])


def gradient_arrays(model: Model, batch):
    loss = model.loss(batch)
    backward_grads = T.backward(loss)
    out = {}
    for name, t in model.params.items():
        g = backward_grads.get(t)
        out[name] = np.zeros(t.shape) if g is None else g
    return out, loss.item()


def train(
    train_samples: Sequence,
    val_samples: Sequence,
    config: TrainConfig,
    vocab: Vocabulary,
    fact_vocabs: FactVocabularies,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> Checkpoint:
    """Minimise mean cross-entropy with RMSProp; return the best-validation checkpoint."""
    config.validate()
    if not val_samples:
        raise ContractError("empty validation split")
    usable = [s for s in train_samples if not s.excluded]
    answers = AnswerVocabulary.from_answers([s.answer for s in usable], config.top_answers)
    kept = [s for s in usable if s.answer and answers.id(s.answer) is not None]
    dropped = len(train_samples) - len(kept)
    if dropped:
        log.info("dropped %d training samples (excluded or answer outside vocabulary)", dropped)
    if not kept:
        raise ContractError("empty effective training set")

    rng = np.random.default_rng(config.seed)
    d_in = kept[0].regions.d_in
    model = build_model(vocab, fact_vocabs, answers, d_in, rng, config.max_len, **config.dims())
    arrays = model.arrays()
    state = T.RmsPropState.zeros_like(arrays, config.decay, config.eps)

    history: List[EpochRecord] = []
    best_acc, best_epoch, best_arrays = -1.0, 0, arrays
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(kept))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = model.collate([kept[i] for i in order[start : start + config.batch_size]])
            grads, loss = gradient_arrays(model, batch)
            if config.weight_decay:
                grads = {k: g + config.weight_decay * arrays[k] for k, g in grads.items()}
            arrays, state = T.rmsprop_step(arrays, grads, state, config.lr, config.decay, config.eps)
            model.set_params(arrays)
            losses.append(loss)
        val_acc = accuracy(model, val_samples)
        rec = EpochRecord(epoch, float(np.mean(losses)), val_acc)
        history.append(rec)
        log.info("epoch %d  train_loss %.4f  val_acc %.4f", epoch, rec.train_loss, rec.val_acc)
        if on_epoch is not None:
            on_epoch(rec)
        if val_acc > best_acc:
            best_acc, best_epoch, best_arrays, stale = val_acc, epoch, {k: v.copy() for k, v in arrays.items()}, 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    return Checkpoint(
        model.cfg,
        config,
        best_arrays,
        vocab.tokens(),
        fact_vocabs.to_dict(),
        answers.answers,
        config.seed,
        history,
        best_epoch,
        dropped,
    )


def write_history_csv(history: Sequence[EpochRecord], path):
    lines = ["epoch,train_loss,val_acc"] + [f"{r.epoch},{r.train_loss!r},{r.val_acc!r}" for r in history]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
