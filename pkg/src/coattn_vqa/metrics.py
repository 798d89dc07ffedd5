"""Answer normalisation, exact accuracy, Wu-Palmer similarity and WUPS."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import DimensionError, ParseError, TaxonomyError

ROOT_MARKER = "ROOT"
QUESTION_TYPES = ("what", "where", "when", "who", "why", "how")
ARTICLES = frozenset({"a", "an", "the"})
NUMBER_WORDS = {
    "zero": "0", "one": "1", "two": "2", "three": "3", "four": "4", "five": "5",
    "six": "6", "seven": "7", "eight": "8", "nine": "9", "ten": "10",
}
_PUNCT = re.compile(r"[.,!?;:\"()]")
_STRAY_APOSTROPHE = re.compile(r"(?<![A-Za-z0-9])'|'(?![A-Za-z0-9])")


def normalize_answer(text: str, number_words: Optional[Dict[str, str]] = None) -> str:
    numbers = NUMBER_WORDS if number_words is None else number_words
    text = _PUNCT.sub(" ", text.lower())
    text = _STRAY_APOSTROPHE.sub(" ", text)
    out = []
    for tok in text.split():
        tok = numbers.get(tok, tok)
        if tok in ARTICLES:
            continue
        out.append(tok)
    return " ".join(out)


def exact_accuracy(preds: Sequence[str], golds: Sequence[str]) -> float:
    if len(preds) != len(golds):
        raise DimensionError(f"{len(preds)} predictions for {len(golds)} answers")
    if not golds:
        raise ValueError("exact_accuracy of an empty list")
    hits = sum(normalize_answer(p) == normalize_answer(g) for p, g in zip(preds, golds))
    return hits / len(golds)


def question_type(question: str) -> str:
    words = question.lower().split()
    if words and words[0] in QUESTION_TYPES:
        return words[0]
    return "other"


class Taxonomy:
    """Rooted tree over answer tokens; the root has depth 1."""

    def __init__(self, parent: Dict[str, str]):
        roots = [c for c, p in parent.items() if p == ROOT_MARKER]
        if len(roots) != 1:
            raise TaxonomyError(f"expected exactly one node with parent {ROOT_MARKER}, found {len(roots)}")
        self.root = roots[0]
        self.parent = dict(parent)
        self.depth: Dict[str, int] = {}
        for node in self.parent:
            self._resolve(node)

    def _resolve(self, node):
        chain = []
        seen = set()
        cur = node
        while cur not in self.depth:
            if cur in seen:
                raise TaxonomyError(f"cycle through {cur!r}")
            seen.add(cur)
            chain.append(cur)
            if cur == self.root:
                self.depth[cur] = 1
                chain.pop()
                break
            nxt = self.parent.get(cur)
            if nxt is None:
                raise TaxonomyError(f"{cur!r} does not reach the root")
            cur = nxt
        for n in reversed(chain):
            self.depth[n] = self.depth[self.parent[n]] + 1

    def __contains__(self, token):
        return token in self.depth

    def ancestors(self, token) -> List[str]:
        """``token`` and its ancestors, nearest first."""
        if token not in self.depth:
            raise TaxonomyError(f"{token!r} not in taxonomy")
        out = [token]
        while out[-1] != self.root:
            out.append(self.parent[out[-1]])
        return out

    def lca(self, a, b) -> str:
        up = set(self.ancestors(a))
        for node in self.ancestors(b):
            if node in up:
                return node
        raise TaxonomyError("disconnected taxonomy")  # unreachable for a rooted tree

    def pairs(self) -> List[Tuple[str, str]]:
        return sorted(self.parent.items(), key=lambda kv: (self.depth[kv[0]], kv[0]))

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[str, str]]) -> "Taxonomy":
        parent = {}
        for child, par in pairs:
            if child in parent:
                raise TaxonomyError(f"{child!r} has two parents")
            parent[child] = par
        return cls(parent)

    @classmethod
    def load(cls, path) -> "Taxonomy":
        parent = {}
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError("expected 'child parent'", lineno, path)
            child, par = parts
            if child in parent:
                raise ParseError(f"{child!r} has two parents", lineno, path)
            parent[child] = par
        return cls(parent)

    def save(self, path):
        Path(path).write_text("".join(f"{c} {p}\n" for c, p in self.pairs()), encoding="utf-8")


def wup(a: str, b: str, tax: Taxonomy) -> float:
    """Wu-Palmer similarity ``2 * depth(lca) / (depth(a) + depth(b))``."""
    if a not in tax or b not in tax:
        missing = a if a not in tax else b
        raise TaxonomyError(f"{missing!r} not in taxonomy")
    if a == b:
        return 1.0
    return 2.0 * tax.depth[tax.lca(a, b)] / (tax.depth[a] + tax.depth[b])


def _token_score(a: str, b: str, tax: Taxonomy, threshold: float, strict: bool) -> float:
    if a == b:
        return 1.0
    if a not in tax or b not in tax:
        return 0.0
    s = wup(a, b, tax)
    if strict:
        return 1.0 if s >= threshold else 0.0
    return s if s >= threshold else 0.1 * s


def _directed(src: List[str], dst: List[str], tax, threshold, strict) -> float:
    prod = 1.0
    for a in src:
        prod *= max(_token_score(a, b, tax, threshold, strict) for b in dst)
    return prod


def wups_pair(pred: str, gold: str, tax: Taxonomy, threshold: float, strict: bool = False) -> float:
    p = normalize_answer(pred).split()
    g = normalize_answer(gold).split()
    if p == g:
        return 1.0
    if not p or not g:
        return 0.0
    return min(_directed(p, g, tax, threshold, strict), _directed(g, p, tax, threshold, strict))


def wups(preds: Sequence[str], golds: Sequence[str], tax: Taxonomy, threshold: float, strict: bool = False) -> float:
    """Mean WUPS@threshold; below-threshold similarities are down-weighted by 0.1
    (or score 0 when ``strict``)."""
    if len(preds) != len(golds):
        raise DimensionError(f"{len(preds)} predictions for {len(golds)} answers")
    if not golds:
        raise ValueError("wups of an empty list")
    return sum(wups_pair(p, g, tax, threshold, strict) for p, g in zip(preds, golds)) / len(golds)


@dataclass
class EvalReport:
    total: int
    accuracy: float
    type_accuracy: Dict[str, float]
    type_counts: Dict[str, int]
    wups_09: Optional[float] = None
    wups_00: Optional[float] = None
    warnings: List[str] = field(default_factory=list)

    def to_dict(self):
        return {
            "total": self.total,
            "accuracy": self.accuracy,
            "type_accuracy": self.type_accuracy,
            "type_counts": self.type_counts,
            "wups@0.9": self.wups_09,
            "wups@0.0": self.wups_00,
            "warnings": list(self.warnings),
        }

    def to_text(self) -> str:
        rows = [("type", "count", "share", "accuracy")]
        for qt in QUESTION_TYPES + ("other",):
            n = self.type_counts.get(qt, 0)
            acc = self.type_accuracy.get(qt)
            rows.append((qt, str(n), f"{100.0 * n / self.total:.1f}%", "-" if acc is None else f"{100.0 * acc:.2f}"))
        rows.append(("overall", str(self.total), "100.0%", f"{100.0 * self.accuracy:.2f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths))) for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        if self.wups_09 is not None:
            lines.append(f"WUPS@0.9: {100.0 * self.wups_09:.2f}")
            lines.append(f"WUPS@0.0: {100.0 * self.wups_00:.2f}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines) + "\n"


def report(questions: Sequence[str], preds: Sequence[str], golds: Sequence[str], tax: Optional[Taxonomy] = None, strict: bool = False) -> EvalReport:
    if not (len(questions) == len(preds) == len(golds)):
        raise DimensionError("questions, predictions and answers differ in length")
    if not golds:
        raise ValueError("report of an empty list")
    buckets: Dict[str, List[int]] = {}
    for i, q in enumerate(questions):
        buckets.setdefault(question_type(q), []).append(i)
    counts = {qt: len(buckets.get(qt, [])) for qt in QUESTION_TYPES + ("other",)}
    type_acc = {
        qt: exact_accuracy([preds[i] for i in idx], [golds[i] for i in idx]) for qt, idx in sorted(buckets.items())
    }
    rep = EvalReport(len(golds), exact_accuracy(preds, golds), type_acc, counts)
    if tax is None:
        rep.warnings.append("no taxonomy supplied; WUPS omitted")
    else:
        rep.wups_09 = wups(preds, golds, tax, 0.9, strict)
        rep.wups_00 = wups(preds, golds, tax, 0.0, strict)
    return rep
