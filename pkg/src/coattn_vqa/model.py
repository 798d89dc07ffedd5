"""The full answer model: encoders, three-level co-attention and the fusion MLP."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .coattention import LEVELS, STEPS, AttentionParams, CoAttentionOutput, LevelParams, multilevel_coattend
from .errors import ConfigError, DimensionError, VocabularyError
from .facts import FactVocabularies, encode_fact_ids, fact_dims
from .metrics import normalize_answer
from .question import LstmLayer, Vocabulary, encode_question, tokenize
from .regions import embed_regions
from .tensor import Tensor


@dataclass
class ModelConfig:
    n_words: int
    n_subjects: int
    n_relations: int
    n_objects: int
    n_answers: int
    d_in: int
    d: int = 64
    h: Optional[int] = None
    d_hw: Optional[int] = None
    d_hp: Optional[int] = None
    d_hq: Optional[int] = None
    lstm_layers: int = 2
    share_fact_attention: bool = False
    emb_std: float = 0.01

    def __post_init__(self):
        self.h = self.d if self.h is None else self.h
        self.d_hw = self.d if self.d_hw is None else self.d_hw
        self.d_hp = self.d if self.d_hp is None else self.d_hp
        self.d_hq = 2 * self.d if self.d_hq is None else self.d_hq
        fact_dims(self.d)
        if not self.emb_std >= 0:
            raise ConfigError("emb_std must be nonnegative")
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name not in ("share_fact_attention", "emb_std") and v < 1:
                raise ConfigError(f"model dimension {f.name} must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class AnswerVocabulary:
    """Closed answer set, most frequent first (ties alphabetical)."""

    def __init__(self, answers: Sequence[str]):
        self.answers = list(answers)
        self._ids = {a: i for i, a in enumerate(self.answers)}
        if len(self._ids) != len(self.answers):
            raise VocabularyError("duplicate answers")

    @classmethod
    def from_answers(cls, answers: Sequence[str], top: int = 3000) -> "AnswerVocabulary":
        counts = Counter(normalize_answer(a) for a in answers)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([a for a, _ in ranked[:top]])

    def id(self, answer: str) -> Optional[int]:
        return self._ids.get(normalize_answer(answer))

    def __getitem__(self, idx):
        return self.answers[idx]

    def __len__(self):
        return len(self.answers)

    def __contains__(self, answer):
        return self.id(answer) is not None


def _glorot(rng, fan_out, fan_in, shape=None):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_out, fan_in))


def n_guides(step: str, share_fact_attention: bool = False) -> int:
    """Number of non-zero guidance vectors a co-attention step receives."""
    if step == "q0":
        return 0
    if step == "f0":
        return 2 if share_fact_attention else 1
    return 2


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    d, h = cfg.d, cfg.h
    d_s, d_r, d_o = fact_dims(d)
    p: Dict[str, np.ndarray] = {}
    p["word_emb"] = rng.normal(0.0, cfg.emb_std, size=(cfg.n_words, d))
    for s in (1, 2, 3):
        p[f"conv{s}"] = _glorot(rng, d, s * d)
    for layer in range(cfg.lstm_layers):
        p[f"lstm{layer}.w_ih"] = _glorot(rng, 4 * d, d)
        p[f"lstm{layer}.w_hh"] = _glorot(rng, 4 * d, d)
        b = np.zeros(4 * d)
        b[d : 2 * d] = 1.0
        p[f"lstm{layer}.b"] = b
    p["fact.subj_emb"] = rng.normal(0.0, cfg.emb_std, size=(cfg.n_subjects, d_s))
    p["fact.rel_emb"] = rng.normal(0.0, cfg.emb_std, size=(cfg.n_relations, d_r))
    p["fact.obj_emb"] = rng.normal(0.0, cfg.emb_std, size=(cfg.n_objects, d_o))
    p["region.w_emb"] = _glorot(rng, d, cfg.d_in)
    for level in LEVELS:
        for step in STEPS:
            if step == "f" and cfg.share_fact_attention:
                continue
            pre = f"att.{level}.{step}"
            p[pre + ".w_x"] = _glorot(rng, h, d)
            # guidance weights exist only where the guidance can be nonzero
            for k in range(1, n_guides(step, cfg.share_fact_attention) + 1):
                p[pre + f".w_g{k}"] = _glorot(rng, h, d)
            p[pre + ".w"] = _glorot(rng, 1, h, shape=(h,))
    p["mlp.w_w"] = _glorot(rng, cfg.d_hw, d)
    p["mlp.w_p"] = _glorot(rng, cfg.d_hp, d + cfg.d_hw)
    p["mlp.w_q"] = _glorot(rng, cfg.d_hq, d + cfg.d_hp)
    p["mlp.w_h"] = _glorot(rng, cfg.n_answers, cfg.d_hq)
    return p


@dataclass
class MlpParams:
    w_w: Tensor
    w_p: Tensor
    w_q: Tensor
    w_h: Tensor


def fuse_predict(levels: Sequence[CoAttentionOutput], mlp: MlpParams) -> Tensor:
    """Answer distribution from the word, phrase and question level summaries."""
    if len(levels) != 3:
        raise DimensionError("fuse_predict needs word, phrase and question levels")
    sums = [T.add(T.add(o.q, o.v), o.f) for o in levels]
    h_w = T.tanh(T.linear(sums[0], mlp.w_w))
    h_p = T.tanh(T.linear(T.concat([sums[1], h_w], axis=-1), mlp.w_p))
    h_q = T.tanh(T.linear(T.concat([sums[2], h_p], axis=-1), mlp.w_q))
    return T.softmax(T.linear(h_q, mlp.w_h))


@dataclass
class Batch:
    q_ids: np.ndarray
    q_mask: np.ndarray
    raw: np.ndarray
    v_mask: np.ndarray
    s_ids: np.ndarray
    r_ids: np.ndarray
    o_ids: np.ndarray
    conf: np.ndarray
    f_real: np.ndarray
    f_mask: np.ndarray
    n_facts: np.ndarray
    targets: np.ndarray  # -1 where the gold answer is outside the answer vocabulary

    def __len__(self):
        return len(self.targets)


@dataclass
class ForwardResult:
    p: Tensor
    levels: List[CoAttentionOutput]
    summed_alpha_f: np.ndarray
    batch: Batch


class Model:
    """Parameters plus the vocabularies needed to turn samples into tensors."""

    def __init__(self, cfg: ModelConfig, params: Dict[str, np.ndarray], vocab: Vocabulary, fact_vocabs: FactVocabularies, answers: AnswerVocabulary, max_len: int = 12):
        self.cfg = cfg
        self.vocab = vocab
        self.fact_vocabs = fact_vocabs
        self.answers = answers
        self.max_len = max_len
        expected = init_params(cfg, np.random.default_rng(0))
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        if missing or extra:
            raise ConfigError(f"parameter names differ: missing {missing[:3]}, unexpected {extra[:3]}")
        for k, v in expected.items():
            if np.shape(params[k]) != v.shape:
                raise DimensionError(f"parameter {k} has shape {np.shape(params[k])}, expected {v.shape}")
        self.set_params(params)

    def set_params(self, arrays: Dict[str, np.ndarray]):
        self.params = {k: Tensor(arrays[k], requires_grad=True, name=k) for k in sorted(arrays)}

    def arrays(self) -> Dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    # -- parameter views ---------------------------------------------------

    def attention_params(self, level: str, step: str) -> AttentionParams:
        if step == "f" and self.cfg.share_fact_attention:
            step = "f0"
        P = self.params
        pre = f"att.{level}.{step}"
        return AttentionParams(P[pre + ".w_x"], P.get(pre + ".w_g1"), P.get(pre + ".w_g2"), P[pre + ".w"])

    def level_params(self, level: str) -> LevelParams:
        return LevelParams(*(self.attention_params(level, s) for s in STEPS))

    def lstm_layers(self) -> List[LstmLayer]:
        P = self.params
        return [LstmLayer(P[f"lstm{i}.w_ih"], P[f"lstm{i}.w_hh"], P[f"lstm{i}.b"]) for i in range(self.cfg.lstm_layers)]

    def mlp_params(self) -> MlpParams:
        P = self.params
        return MlpParams(P["mlp.w_w"], P["mlp.w_p"], P["mlp.w_q"], P["mlp.w_h"])

    # -- batching ----------------------------------------------------------

    def collate(self, samples: Sequence) -> Batch:
        if not samples:
            raise DimensionError("empty batch")
        B = len(samples)
        toks = [tokenize(s.question, self.vocab, self.max_len) for s in samples]
        t_len = max(t.length for t in toks)
        q_ids = np.stack([t.ids[:t_len] for t in toks])
        q_mask = np.stack([t.mask[:t_len] for t in toks])
        grids = [s.regions for s in samples]
        n = grids[0].n_regions
        if any(g.n_regions != n for g in grids):
            raise DimensionError("samples in one batch must share a region grid size")
        raw = np.stack([g.raw for g in grids])
        if raw.shape[-1] != self.cfg.d_in:
            raise DimensionError(f"region features have width {raw.shape[-1]}, model expects {self.cfg.d_in}")
        m = max(1, max(len(s.facts) for s in samples))
        s_ids = np.zeros((B, m), dtype=np.int64)
        r_ids = np.zeros((B, m), dtype=np.int64)
        o_ids = np.zeros((B, m), dtype=np.int64)
        conf = np.zeros((B, m))
        real = np.zeros((B, m), dtype=bool)
        n_facts = np.zeros(B, dtype=np.int64)
        fv = self.fact_vocabs
        for b, s in enumerate(samples):
            n_facts[b] = len(s.facts)
            for j, f in enumerate(s.facts):
                s_ids[b, j], r_ids[b, j], o_ids[b, j] = fv.ids(f)
                conf[b, j] = f.confidence
                real[b, j] = True
        f_mask = real.copy()
        f_mask[n_facts == 0, 0] = True  # a lone all-zero null fact
        targets = np.array([-1 if (i := self.answers.id(s.answer)) is None else i for s in samples], dtype=np.int64)
        return Batch(q_ids, q_mask, raw, np.ones((B, n), dtype=bool), s_ids, r_ids, o_ids, conf, real, f_mask, n_facts, targets)

    # -- forward -----------------------------------------------------------

    def forward_batch(self, batch: Batch) -> ForwardResult:
        P = self.params
        qf = encode_question(batch.q_ids, batch.q_mask, P["word_emb"], [P["conv1"], P["conv2"], P["conv3"]], self.lstm_layers())
        V = embed_regions(Tensor._wrap(batch.raw.copy()), P["region.w_emb"])
        F = encode_fact_ids(batch.s_ids, batch.r_ids, batch.o_ids, batch.conf, batch.f_real, P["fact.subj_emb"], P["fact.rel_emb"], P["fact.obj_emb"])
        outs, summed = multilevel_coattend(
            [qf.Qw, qf.Qp, qf.Qq], V, F, batch.q_mask, batch.v_mask, batch.f_mask, [self.level_params(lv) for lv in LEVELS]
        )
        p = fuse_predict(outs, self.mlp_params())
        return ForwardResult(p, outs, summed, batch)

    def loss(self, batch: Batch) -> Tensor:
        if (batch.targets < 0).any():
            raise VocabularyError("batch contains answers outside the answer vocabulary")
        return T.cross_entropy(self.forward_batch(batch).p, batch.targets)

    def predict(self, samples: Sequence, batch_size: int = 64):
        """``[(answer, probability), ...]`` for every sample."""
        out = []
        with T.no_grad():
            for start in range(0, len(samples), batch_size):
                res = self.forward_batch(self.collate(samples[start : start + batch_size]))
                P = res.p.data
                best = np.argmax(P, axis=-1)
                out += [(self.answers[int(k)], float(P[i, k])) for i, k in enumerate(best)]
        return out


def forward(sample, model: Model) -> ForwardResult:
    """Single-sample forward pass (a batch of one)."""
    return model.forward_batch(model.collate([sample]))


def build_model(vocab: Vocabulary, fact_vocabs: FactVocabularies, answers: AnswerVocabulary, d_in: int, rng, max_len: int = 12, **dims) -> Model:
    cfg = ModelConfig(
        n_words=len(vocab),
        n_subjects=len(fact_vocabs.subjects),
        n_relations=len(fact_vocabs.relations),
        n_objects=len(fact_vocabs.objects),
        n_answers=len(answers),
        d_in=d_in,
        **dims,
    )
    return Model(cfg, init_params(cfg, rng), vocab, fact_vocabs, answers, max_len)
