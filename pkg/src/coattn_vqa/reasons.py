"""Rank facts by summed attention and render them as sentences."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .coattention import LEVELS, attention_record, heatmap_pixels, write_pgm
from .errors import ContractError, DimensionError, VocabularyError
from .facts import FactTriplet, FactVocabularies, check_triplet


@dataclass(frozen=True)
class RankedFact:
    index: int
    score: float
    rank: int


@dataclass(frozen=True)
class Reason:
    text: str
    fact: FactTriplet
    score: float
    rank: int

    def to_dict(self):
        f = self.fact
        return {
            "rank": self.rank,
            "score": self.score,
            "text": self.text,
            "fact": {"kind": f.kind, "s": f.subject, "r": f.relation, "o": f.object, "conf": f.confidence},
        }


def rank_facts(summed, k: int = 3) -> List[RankedFact]:
    """Top ``min(k, M)`` facts by score, descending; ties go to the lower index."""
    scores = np.asarray(summed, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise DimensionError(f"expected a non-empty score vector, got shape {scores.shape}")
    if k < 1:
        raise ValueError("k must be at least 1")
    order = np.argsort(-scores, kind="stable")[:k]
    return [RankedFact(int(i), float(scores[i]), r) for r, i in enumerate(order, 1)]


def render_reason(fact: FactTriplet, vocabs: Optional[FactVocabularies] = None) -> str:
    if vocabs is not None:
        check_triplet(fact, vocabs)
    kind, subj, rel, obj = fact.kind, fact.subject, fact.relation, fact.object
    if kind == "scene":
        return f"This image happens in the scene of {obj}."
    if kind == "img_att":
        sup = vocabs.superclass.get(obj) if vocabs is not None else None
        return f"This image contains the {sup or 'attribute'} of {obj}."
    if kind == "contain":
        return f"This image contains the object of {obj}."
    if kind == "obj_att":
        return f"The {subj} is {obj}."
    if kind == "relation":
        return f"The {subj} is {rel} the {obj}."
    raise VocabularyError(f"unknown fact kind {kind!r}")


def reasons_for(facts, summed, vocabs: Optional[FactVocabularies] = None, k: int = 3) -> List[Reason]:
    if not facts:
        return []
    if len(summed) < len(facts):
        raise DimensionError("fewer scores than facts")
    return [Reason(render_reason(facts[r.index], vocabs), facts[r.index], r.score, r.rank) for r in rank_facts(summed[: len(facts)], k)]


def explain(sample, model, k: int = 3, heatmap_prefix=None) -> Dict:
    """Answer, top-``k`` reasons and per-level attention for one sample.

    With ``heatmap_prefix`` one PGM per level is written to
    ``<prefix>_<level>.pgm``.
    """
    from .model import forward

    if k < 1:
        raise ContractError("k must be at least 1")
    res = forward(sample, model)
    p = res.p.data[0]
    best = int(np.argmax(p))
    n_q = int(res.batch.q_mask[0].sum())
    n_f = len(sample.facts)
    reasons = reasons_for(sample.facts, res.summed_alpha_f[0], model.fact_vocabs, k)
    out = {
        "answer": model.answers[best],
        "answer_prob": float(p[best]),
        "reasons": [r.to_dict() for r in reasons],
        "attention": [attention_record(lv, o, n_q, n_f, index=0) for lv, o in zip(LEVELS, res.levels)],
    }
    if heatmap_prefix is not None:
        grid = sample.regions
        paths = []
        for lv, o in zip(LEVELS, res.levels):
            path = Path(f"{heatmap_prefix}_{lv}.pgm")
            write_pgm(path, heatmap_pixels(o.alpha_v.data[0], grid.height, grid.width))
            paths.append(str(path))
        out["heatmaps"] = paths
    return out
