"""Three-level question encoding: word embeddings, n-gram phrase features, LSTM."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, ParseError, VocabularyError
from .tensor import Tensor

PAD = 0
UNK = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
DEFAULT_MAX_LEN = 12

# window offsets for unigram / bigram / trigram filters, zero padded at both ends
WINDOW_OFFSETS = {1: (0,), 2: (0, 1), 3: (-1, 0, 1)}


class Vocabulary:
    """Token <-> id bijection with PAD=0 and UNK=1 reserved."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: List[str] = [PAD_TOKEN, UNK_TOKEN]
        self._stoi: Dict[str, int] = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token in self._stoi:
            return self._stoi[token]
        if not token or any(c.isspace() for c in token):
            raise VocabularyError(f"invalid vocabulary token {token!r}")
        self._stoi[token] = len(self._itos)
        self._itos.append(token)
        return self._stoi[token]

    def id(self, token: str) -> int:
        return self._stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self._itos):
            raise VocabularyError(f"id {idx} outside vocabulary of size {len(self)}")
        return self._itos[idx]

    def tokens(self) -> List[str]:
        """Non-reserved tokens in id order."""
        return self._itos[2:]

    def __contains__(self, token):
        return token in self._stoi

    def __len__(self):
        return len(self._itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._itos == other._itos

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.tokens()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        vocab = cls()
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            tok = line.strip()
            if not tok:
                raise ParseError("empty vocabulary line", lineno, path)
            if tok in vocab:
                raise ParseError(f"duplicate token {tok!r}", lineno, path)
            vocab.add(tok)
        return vocab


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray  # int64[T_max]
    mask: np.ndarray  # bool[T_max]

    @property
    def length(self) -> int:
        return int(self.mask.sum())


@dataclass
class QuestionFeatures:
    Qw: Tensor
    Qp: Tensor
    Qq: Tensor
    mask: np.ndarray

    def levels(self):
        return (("word", self.Qw), ("phrase", self.Qp), ("question", self.Qq))


def tokenize(text: str, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    words = text.lower().split()
    if not words:
        raise ContractError("empty question after normalisation")
    words = words[:max_len]
    ids = np.zeros(max_len, dtype=np.int64)
    mask = np.zeros(max_len, dtype=bool)
    for i, w in enumerate(words):
        ids[i] = vocab.id(w)
        mask[i] = True
    return TokenSequence(ids, mask)


def embed_words(ids, mask, E: Tensor) -> Tensor:
    """Qw: embedding rows for real tokens, zero rows at PAD positions."""
    ids = np.asarray(ids)
    return T.mask_rows(T.gather_rows(E, ids), mask)


def phrase_features(Qw: Tensor, mask, conv: Sequence[Tensor]) -> Tensor:
    """Qp: tanh n-gram convolutions (n = 1, 2, 3), max over n per coordinate.

    ``conv[s-1]`` is the ``d x (s*d)`` filter bank for window size ``s``.
    Works on ``(T, d)`` or batched ``(B, T, d)`` input.
    """
    if len(conv) != 3:
        raise DimensionError("phrase_features needs three filter banks")
    d = Qw.shape[-1]
    responses = []
    for size, W in zip((1, 2, 3), conv):
        if W.shape != (d, size * d):
            raise DimensionError(f"filter bank for size {size} has shape {W.shape}")
        offsets = WINDOW_OFFSETS[size]
        parts = [Qw if o == 0 else T.shift(Qw, o, axis=-2) for o in offsets]
        window = parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)
        responses.append(T.tanh(T.linear(window, W)))
    return T.mask_rows(T.max_elementwise(responses), mask)


@dataclass
class LstmLayer:
    w_ih: Tensor  # (4h, d_in), gate order i, f, g, o
    w_hh: Tensor  # (4h, h)
    b: Tensor  # (4h,)


def lstm_layer(X: Tensor, mask, layer: LstmLayer) -> Tensor:
    """Run one LSTM layer; masked steps carry state forward and emit zeros."""
    mask = np.asarray(mask, dtype=bool)
    hdim = layer.w_hh.shape[1]
    steps = X.shape[-2]
    lead = X.shape[:-2]
    xproj = T.add_bias(T.linear(X, layer.w_ih), layer.b)
    h = T.zeros(lead + (hdim,))
    c = T.zeros(lead + (hdim,))
    zero = h
    outputs = []
    for t in range(steps):
        z = T.add(T.select(xproj, t, axis=-2), T.linear(h, layer.w_hh))
        hc = T.lstm_cell(z, c)
        h_new = T.slice_last(hc, 0, hdim)
        c_new = T.slice_last(hc, hdim, 2 * hdim)
        m = mask[..., t]
        if m.all():
            c, h = c_new, h_new
            outputs.append(h_new)
        else:
            c = T.where_rows(m, c_new, c)
            h = T.where_rows(m, h_new, h)
            outputs.append(T.where_rows(m, h_new, zero))
    return T.stack(outputs, axis=-2)


def lstm_encode(Qp: Tensor, mask, layers: Sequence[LstmLayer]) -> Tensor:
    """Qq: top-layer hidden states of stacked unidirectional LSTMs."""
    out = Qp
    for layer in layers:
        out = lstm_layer(out, mask, layer)
    return out


def encode_question(ids, mask, E: Tensor, conv: Sequence[Tensor], lstm: Sequence[LstmLayer]):
    Qw = embed_words(ids, mask, E)
    Qp = phrase_features(Qw, mask, conv)
    Qq = lstm_encode(Qp, mask, lstm)
    return QuestionFeatures(Qw, Qp, Qq, np.asarray(mask, dtype=bool))
