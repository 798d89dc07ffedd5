"""Guided attention and the five-step question/fact/image co-attention."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor

LEVELS = ("word", "phrase", "question")
STEPS = ("q0", "f0", "v", "q", "f")


@dataclass
class AttentionParams:
    w_x: Tensor  # (h, d)
    w_g1: Optional[Tensor]  # (h, d); None where the first guidance is always zero
    w_g2: Optional[Tensor]
    w: Tensor  # (h,)


@dataclass
class LevelParams:
    q0: AttentionParams
    f0: AttentionParams
    v: AttentionParams
    q: AttentionParams
    f: AttentionParams


@dataclass
class CoAttentionOutput:
    q: Tensor
    v: Tensor
    f: Tensor
    alpha_q: Tensor
    alpha_v: Tensor
    alpha_f: Tensor
    q0: Tensor
    f0: Tensor


def atten(X: Tensor, g1: Optional[Tensor], g2: Optional[Tensor], params: AttentionParams, mask=None):
    """Attend over the rows of ``X`` (``(..., N, d)``) guided by ``g1`` and ``g2``.

    H_i = tanh(W_x x_i + W_g1 g1 + W_g2 g2), alpha = softmax(w . H_i) over the
    unmasked rows, result = sum_i alpha_i x_i.  ``None`` guidance means the
    zero vector; with no bias terms its contribution is skipped outright.
    Returns ``(x_tilde, alpha)``.
    """
    n = X.shape[-2]
    if mask is None:
        mask = np.ones(X.shape[:-1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != X.shape[:-1]:
        raise DimensionError(f"mask {mask.shape} does not match features {X.shape}")
    pre = T.linear(X, params.w_x)
    guide = None
    for g, W in ((g1, params.w_g1), (g2, params.w_g2)):
        if g is None:
            continue
        if W is None:
            raise DimensionError("guidance given to an attention without guidance weights")
        if g.shape != X.shape[:-2] + (X.shape[-1],):
            raise DimensionError(f"guidance {g.shape} does not fit features {X.shape}")
        term = T.linear(g, W)
        guide = term if guide is None else T.add(guide, term)
    if guide is not None:
        pre = T.add(pre, T.expand(guide, axis=-2, n=n))
    scores = T.matmul(T.tanh(pre), params.w)
    alpha = T.softmax_masked(scores, mask)
    return T.weighted_sum(alpha, X), alpha


def sequential_coattend(Q: Tensor, V: Tensor, F: Tensor, q_mask, v_mask, f_mask, level: LevelParams) -> CoAttentionOutput:
    """Question summary, then facts, image, question and facts again."""
    q0, _ = atten(Q, None, None, level.q0, q_mask)
    f0, _ = atten(F, q0, None, level.f0, f_mask)
    v, alpha_v = atten(V, q0, f0, level.v, v_mask)
    q, alpha_q = atten(Q, v, f0, level.q, q_mask)
    f, alpha_f = atten(F, v, q, level.f, f_mask)
    return CoAttentionOutput(q, v, f, alpha_q, alpha_v, alpha_f, q0, f0)


def multilevel_coattend(question_levels: Sequence[Tensor], V: Tensor, F: Tensor, q_mask, v_mask, f_mask, params: Sequence[LevelParams]):
    """Run the co-attention once per question level.

    Returns ``(outputs, summed_alpha_f)`` where the sum of the three final
    fact distributions drives reason ranking.
    """
    if len(question_levels) != 3 or len(params) != 3:
        raise DimensionError("expected word, phrase and question levels")
    outputs = [sequential_coattend(Q, V, F, q_mask, v_mask, f_mask, lp) for Q, lp in zip(question_levels, params)]
    summed = outputs[0].alpha_f.data + outputs[1].alpha_f.data + outputs[2].alpha_f.data
    return outputs, summed


# ---------------------------------------------------------------------------
# export


def attention_record(level: str, out: CoAttentionOutput, n_q=None, n_f=None, index=None) -> Dict:
    """JSON-ready attention weights of one level; ``index`` picks a batch row."""
    aq, av, af = out.alpha_q.data, out.alpha_v.data, out.alpha_f.data
    if index is not None:
        aq, av, af = aq[index], av[index], af[index]
    if n_q is not None:
        aq = aq[..., :n_q]
    if n_f is not None:
        af = af[..., :n_f]
    return {"level": level, "alpha_q": aq.tolist(), "alpha_v": av.tolist(), "alpha_f": af.tolist()}


def heatmap_pixels(alpha_v, height: int, width: int) -> np.ndarray:
    """Min-max normalise a row-major region distribution to 8-bit grey levels."""
    a = np.asarray(alpha_v, dtype=np.float64).reshape(height, width)
    lo, hi = a.min(), a.max()
    if hi - lo <= 0:
        return np.zeros((height, width), dtype=np.uint8)
    return np.rint(255.0 * (a - lo) / (hi - lo)).astype(np.uint8)


def write_pgm(path, pixels: np.ndarray):
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos].decode("ascii"))
    pos += 1
    if fields[0] != "P5":
        raise ValueError("not a binary PGM")
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8).reshape(h, w)


def dump_attention_json(records, path):
    Path(path).write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
