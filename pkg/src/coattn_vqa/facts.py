"""Fact triplets: grammar checks, the text file format, and encoding to F."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, GrammarError, ParseError, VocabularyError
from .tensor import Tensor

IMG = "_img"
SCENE = "_scene"
ATT = "_att"
CONTAIN = "_contain"
SPECIAL_TOKENS = (IMG, SCENE, ATT, CONTAIN)

KINDS = ("scene", "img_att", "contain", "obj_att", "relation")


@dataclass(frozen=True)
class FactTriplet:
    kind: str
    subject: str
    relation: str
    object: str
    confidence: float = 1.0

    def as_tuple(self):
        return (self.subject, self.relation, self.object)


def infer_kind(subject: str, relation: str, obj: str) -> str:
    if subject == IMG:
        return {SCENE: "scene", ATT: "img_att", CONTAIN: "contain"}.get(relation, "relation")
    if relation == ATT:
        return "obj_att"
    return "relation"


@dataclass
class FactVocabularies:
    """Separate subject / relation / object vocabularies (ids are list positions)."""

    subjects: List[str]
    relations: List[str]
    objects: List[str]
    superclass: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self._s = _index(self.subjects, "subject")
        self._r = _index(self.relations, "relation")
        self._o = _index(self.objects, "object")
        if IMG not in self._s:
            raise VocabularyError(f"subject vocabulary must contain {IMG}")
        for tok in (SCENE, ATT, CONTAIN):
            if tok not in self._r:
                raise VocabularyError(f"relation vocabulary must contain {tok}")

    def subject_id(self, tok):
        return _lookup(self._s, tok, "subject")

    def relation_id(self, tok):
        return _lookup(self._r, tok, "relation")

    def object_id(self, tok):
        return _lookup(self._o, tok, "object")

    def ids(self, fact: FactTriplet):
        return self.subject_id(fact.subject), self.relation_id(fact.relation), self.object_id(fact.object)

    def to_dict(self):
        return {
            "subjects": list(self.subjects),
            "relations": list(self.relations),
            "objects": list(self.objects),
            "superclass": dict(sorted(self.superclass.items())),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["subjects"]), list(d["relations"]), list(d["objects"]), dict(d.get("superclass", {})))


def _index(tokens, what):
    out = {}
    for i, t in enumerate(tokens):
        if t in out:
            raise VocabularyError(f"duplicate {what} token {t!r}")
        out[t] = i
    return out


def _lookup(table, tok, what):
    try:
        return table[tok]
    except KeyError:
        raise VocabularyError(f"{what} token {tok!r} not in vocabulary") from None


def validate_triplet(fact: FactTriplet, vocabs: Optional[FactVocabularies] = None) -> Optional[str]:
    """Return ``None`` if ``fact`` is well formed, else the violated rule."""
    s, r, o = fact.as_tuple()
    c = fact.confidence
    if not isinstance(c, (int, float)) or math.isnan(c) or not 0.0 <= c <= 1.0:
        return "confidence range"
    if fact.kind not in KINDS:
        return f"unknown kind {fact.kind!r}"
    if o in SPECIAL_TOKENS:
        return "object may not be a special token"
    if fact.kind == "scene" and not (s == IMG and r == SCENE):
        return "scene grammar"
    if fact.kind == "img_att" and not (s == IMG and r == ATT):
        return "img_att grammar"
    if fact.kind == "contain" and not (s == IMG and r == CONTAIN):
        return "contain grammar"
    if fact.kind == "obj_att" and not (r == ATT and s != IMG):
        return "obj_att grammar"
    if fact.kind == "relation" and (s == IMG or r in SPECIAL_TOKENS):
        return "relation grammar"
    if vocabs is not None:
        try:
            vocabs.ids(fact)
        except VocabularyError as exc:
            return str(exc)
    return None


def check_triplet(fact: FactTriplet, vocabs: Optional[FactVocabularies] = None) -> FactTriplet:
    problem = validate_triplet(fact, vocabs)
    if problem is not None:
        raise GrammarError(f"{problem}: {fact}")
    return fact


def fact_dims(d: int):
    """Split ``d`` into (subject, relation, object) widths; the last coordinate is confidence."""
    if d < 4 or d % 4:
        raise DimensionError(f"feature width must be a positive multiple of 4, got {d}")
    return d // 4, d // 4, d // 2 - 1


@dataclass
class FactFeatures:
    F: Tensor  # (M, d); a single zero row when there are no facts
    mask: np.ndarray  # bool[M], attention support
    n_facts: int


def encode_fact_ids(s_ids, r_ids, o_ids, conf, real, Es: Tensor, Er: Tensor, Eo: Tensor) -> Tensor:
    """Rows ``[Es[s]; Er[r]; Eo[o]; c]``; rows where ``real`` is false are all zero.

    Id/conf/real arrays share one shape (``(M,)`` or ``(B, M)``).
    """
    conf = np.asarray(conf, dtype=np.float64)
    real = np.asarray(real, dtype=bool)
    parts = [
        T.gather_rows(Es, s_ids),
        T.gather_rows(Er, r_ids),
        T.gather_rows(Eo, o_ids),
        T.Tensor._wrap(np.where(real, conf, 0.0)[..., None]),
    ]
    return T.mask_rows(T.concat(parts, axis=-1), real)


def encode_facts(facts: Sequence[FactTriplet], vocabs: FactVocabularies, Es: Tensor, Er: Tensor, Eo: Tensor) -> FactFeatures:
    for f in facts:
        check_triplet(f, vocabs)
    if not facts:
        d = Es.shape[1] + Er.shape[1] + Eo.shape[1] + 1
        return FactFeatures(T.zeros((1, d)), np.ones(1, dtype=bool), 0)
    ids = np.array([vocabs.ids(f) for f in facts], dtype=np.int64)
    conf = np.array([f.confidence for f in facts])
    real = np.ones(len(facts), dtype=bool)
    F = encode_fact_ids(ids[:, 0], ids[:, 1], ids[:, 2], conf, real, Es, Er, Eo)
    return FactFeatures(F, real.copy(), len(facts))


def format_fact(fact: FactTriplet) -> str:
    return f"{fact.kind} {fact.subject} {fact.relation} {fact.object} {fact.confidence!r}"


def parse_fact_line(line: str, lineno=None, path=None, vocabs=None) -> FactTriplet:
    parts = line.split()
    if len(parts) != 5:
        raise ParseError(f"expected 'kind subject relation object confidence', got {len(parts)} fields", lineno, path)
    kind, s, r, o, c = parts
    try:
        conf = float(c)
    except ValueError:
        raise ParseError(f"confidence {c!r} is not a number", lineno, path) from None
    if not (math.isfinite(conf) and 0.0 <= conf <= 1.0):
        raise ParseError(f"confidence {conf} outside [0, 1]", lineno, path)
    fact = FactTriplet(kind, s, r, o, conf)
    problem = validate_triplet(fact, vocabs)
    if problem is not None:
        raise ParseError(problem, lineno, path)
    return fact


def load_facts(path, vocabs: Optional[FactVocabularies] = None) -> List[FactTriplet]:
    text = Path(path).read_text(encoding="utf-8")
    facts = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        facts.append(parse_fact_line(stripped, lineno, path, vocabs))
    return facts


def save_facts(facts: Sequence[FactTriplet], path):
    Path(path).write_text("".join(format_fact(f) + "\n" for f in facts), encoding="utf-8")
