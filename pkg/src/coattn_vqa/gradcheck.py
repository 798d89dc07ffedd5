"""Finite-difference gradient checks: per primitive op and for the full model.

The full-model check compares tape gradients with central differences of an
independent plain-numpy forward pass.  That forward is vectorised over a
leading perturbation axis, so every coordinate of every parameter is checked
with a handful of array evaluations instead of one Python-level forward per
coordinate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .coattention import LEVELS, STEPS
from .errors import ConfigError, ContractError
from .facts import ATT, CONTAIN, IMG, SCENE, FactVocabularies
from .model import AnswerVocabulary, Batch, Model, ModelConfig, init_params
from .question import WINDOW_OFFSETS, Vocabulary
from .tensor import Tensor

TOLERANCE = 1e-4
STEP = 1e-5

# ---------------------------------------------------------------------------
# per-op cases


@dataclass
class OpCase:
    op: str
    fn: Callable[..., Tensor]
    inputs: List[np.ndarray]
    deps: Tuple[str, ...] = ()  # other ops the case passes through


def _u(rng, *shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def op_cases(rng: np.random.Generator) -> List[OpCase]:
    """One randomly drawn case per differentiable primitive."""
    ids = rng.integers(0, 5, size=(2, 3))
    mask = np.array([[True, True, False], [True, False, True]])
    row_mask = np.array([True, False, True])
    target = rng.integers(0, 4, size=3)
    return [
        OpCase("matmul", T.matmul, [_u(rng, 2, 3, 4), _u(rng, 4, 2)]),
        OpCase("linear", T.linear, [_u(rng, 2, 3, 4), _u(rng, 5, 4)]),
        OpCase("transpose", T.transpose, [_u(rng, 3, 4)]),
        OpCase("add", T.add, [_u(rng, 2, 3), _u(rng, 2, 3)]),
        OpCase("sub", T.sub, [_u(rng, 2, 3), _u(rng, 2, 3)]),
        OpCase("mul", T.mul, [_u(rng, 2, 3), _u(rng, 2, 3)]),
        OpCase("scale", lambda a: T.scale(a, 0.7), [_u(rng, 2, 3)]),
        OpCase("neg", T.neg, [_u(rng, 4)]),
        OpCase("tanh", T.tanh, [_u(rng, 2, 3)]),
        OpCase("sigmoid", T.sigmoid, [_u(rng, 2, 3)]),
        OpCase("lstm_cell", T.lstm_cell, [_u(rng, 2, 12), _u(rng, 2, 3)]),
        OpCase("sum", T.sum, [_u(rng, 2, 3)]),
        OpCase("mean", T.mean, [_u(rng, 2, 3)]),
        OpCase("reshape", lambda a: T.reshape(a, (3, 2)), [_u(rng, 2, 3)]),
        OpCase("expand", lambda a: T.expand(a, axis=-2, n=3), [_u(rng, 2, 4)]),
        OpCase("add_bias", T.add_bias, [_u(rng, 2, 3, 4), _u(rng, 4)]),
        OpCase("slice_last", lambda a: T.slice_last(a, 1, 3), [_u(rng, 2, 4)]),
        OpCase("select", lambda a: T.select(a, 1, axis=-2), [_u(rng, 2, 3, 4)]),
        OpCase("stack", lambda a, b: T.stack([a, b], axis=-2), [_u(rng, 2, 3), _u(rng, 2, 3)]),
        OpCase("concat", lambda a, b: T.concat([a, b], axis=-1), [_u(rng, 2, 3), _u(rng, 2, 2)]),
        OpCase("shift", lambda a: T.shift(a, -1, axis=-2), [_u(rng, 2, 4, 3)]),
        OpCase("gather_rows", lambda E: T.gather_rows(E, ids), [_u(rng, 5, 3)]),
        OpCase("max_elementwise", lambda a, b, c: T.max_elementwise([a, b, c]), [_u(rng, 2, 3) for _ in range(3)]),
        OpCase("mask_rows", lambda a: T.mask_rows(a, row_mask), [_u(rng, 3, 4)]),
        OpCase("where_rows", lambda a, b: T.where_rows(row_mask, a, b), [_u(rng, 3, 2), _u(rng, 3, 2)]),
        OpCase("weighted_sum", T.weighted_sum, [_u(rng, 2, 3), _u(rng, 2, 3, 4)]),
        OpCase("softmax_masked", lambda a: T.softmax_masked(a, mask), [_u(rng, 2, 3)]),
        OpCase(
            "cross_entropy",
            lambda a: T.cross_entropy(T.softmax(a), target),
            [_u(rng, 3, 4)],
            deps=("softmax_masked",),
        ),
    ]


def check_op(case: OpCase, rng: np.random.Generator, h: float = STEP) -> float:
    """Worst relative error between the op's vector-Jacobian product and
    central differences of ``sum(seed * op(inputs))``."""
    leaves = [Tensor(x, requires_grad=True) for x in case.inputs]
    out = case.fn(*leaves)
    seed = rng.uniform(0.5, 1.5, size=out.shape) * rng.choice([-1.0, 1.0], size=out.shape)
    grads = T.vjp(out, seed)
    worst = 0.0
    for k, leaf in enumerate(leaves):

        def f(x, k=k):
            args = [Tensor(a) for a in case.inputs]
            args[k] = x
            return float(np.sum(seed * case.fn(*args).data))

        num = T.finite_diff_grad(f, case.inputs[k], h)
        worst = max(worst, T.max_relative_error(grads.get(leaf, np.zeros(leaf.shape)), num))
    return worst


def check_ops(seeds: Sequence[int] = (0,), tol: float = TOLERANCE) -> Dict[str, float]:
    """Worst error per op over ``seeds``."""
    worst: Dict[str, float] = {}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for case in op_cases(rng):
            worst[case.op] = max(worst.get(case.op, 0.0), check_op(case, rng))
    return worst


def broken_ops(op_errors: Dict[str, float], tol: float = TOLERANCE) -> List[str]:
    """Ops whose check fails and is not explained by a failing dependency."""
    deps = {c.op: c.deps for c in op_cases(np.random.default_rng(0))}
    bad = {op for op, e in op_errors.items() if not e <= tol}
    return sorted(op for op in bad if not any(d in bad for d in deps.get(op, ())))


# ---------------------------------------------------------------------------
# independent forward pass, vectorised over a leading perturbation axis
#
# Every parameter carries a leading axis of size 1 (shared) or P (one copy per
# perturbation); every activation has shape (P, B, ...).


def _lin(x, W):
    Wt = np.swapaxes(W, -1, -2)
    Wt = Wt.reshape(Wt.shape[:1] + (1,) * (x.ndim - 3) + Wt.shape[1:])
    return x @ Wt


def _lead(v, ndim):
    return v.reshape(v.shape[:1] + (1,) * (ndim - 2) + v.shape[1:])


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softmax(x, mask):
    x = np.where(mask, x, -np.inf)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _atten(X, guides, P, pre, mask):
    z = _lin(X, P[pre + ".w_x"])
    for k, g in enumerate(guides, 1):
        if g is not None:
            z = z + _lin(g, P[pre + f".w_g{k}"])[..., None, :]
    scores = (np.tanh(z) * _lead(P[pre + ".w"], z.ndim)).sum(axis=-1)
    alpha = _softmax(scores, mask)
    return (alpha[..., None] * X).sum(axis=-2)


def reference_loss(P: Dict[str, np.ndarray], batch: Batch, cfg: ModelConfig) -> np.ndarray:
    """Mean cross-entropy for every slice of the perturbation axis."""
    qm = batch.q_mask[None, :, :, None]
    Qw = np.where(qm, P["word_emb"][:, batch.q_ids], 0.0)
    t_len = Qw.shape[-2]
    responses = []
    for size in (1, 2, 3):
        parts = []
        for o in WINDOW_OFFSETS[size]:
            s = np.zeros_like(Qw)
            if o >= 0:
                s[..., : t_len - o, :] = Qw[..., o:, :]
            else:
                s[..., -o:, :] = Qw[..., : t_len + o, :]
            parts.append(s)
        responses.append(np.tanh(_lin(np.concatenate(parts, axis=-1), P[f"conv{size}"])))
    Qp = np.where(qm, np.maximum(np.maximum(responses[0], responses[1]), responses[2]), 0.0)

    X = Qp
    for layer in range(cfg.lstm_layers):
        w_hh = P[f"lstm{layer}.w_hh"]
        hd = w_hh.shape[-1]
        xproj = _lin(X, P[f"lstm{layer}.w_ih"]) + _lead(P[f"lstm{layer}.b"], X.ndim)
        h = np.zeros(xproj.shape[:-2] + (hd,))
        c = np.zeros_like(h)
        outs = []
        for t in range(t_len):
            z = xproj[..., t, :] + _lin(h, w_hh)
            i, f, g, o = _sig(z[..., :hd]), _sig(z[..., hd : 2 * hd]), np.tanh(z[..., 2 * hd : 3 * hd]), _sig(z[..., 3 * hd :])
            c_new = f * c + i * g
            h_new = o * np.tanh(c_new)
            m = batch.q_mask[None, :, t, None]
            c = np.where(m, c_new, c)
            h = np.where(m, h_new, h)
            outs.append(np.where(m, h_new, 0.0))
        X = np.stack(outs, axis=-2)
    Qq = X

    V = np.tanh(_lin(batch.raw[None], P["region.w_emb"]))
    parts = [P["fact.subj_emb"][:, batch.s_ids], P["fact.rel_emb"][:, batch.r_ids], P["fact.obj_emb"][:, batch.o_ids]]
    lead = max(p.shape[0] for p in parts)
    parts = [np.broadcast_to(p, (lead,) + p.shape[1:]) for p in parts]
    conf = np.broadcast_to(np.where(batch.f_real, batch.conf, 0.0)[None, ..., None], (lead,) + batch.conf.shape + (1,))
    F = np.where(batch.f_real[None, ..., None], np.concatenate(parts + [conf], axis=-1), 0.0)

    sums = []
    for level, Q in zip(LEVELS, (Qw, Qp, Qq)):
        names = {s: f"att.{level}.{'f0' if s == 'f' and cfg.share_fact_attention else s}" for s in STEPS}
        q0 = _atten(Q, [], P, names["q0"], batch.q_mask)
        f0 = _atten(F, [q0], P, names["f0"], batch.f_mask)
        v = _atten(V, [q0, f0], P, names["v"], batch.v_mask)
        q = _atten(Q, [v, f0], P, names["q"], batch.q_mask)
        f = _atten(F, [v, q], P, names["f"], batch.f_mask)
        sums.append(q + v + f)
    h_w = np.tanh(_lin(sums[0], P["mlp.w_w"]))
    h_p = np.tanh(_lin(_cat(sums[1], h_w), P["mlp.w_p"]))
    h_q = np.tanh(_lin(_cat(sums[2], h_p), P["mlp.w_q"]))
    probs = _softmax(_lin(h_q, P["mlp.w_h"]), True)
    picked = probs[:, np.arange(len(batch)), batch.targets]
    return -np.log(np.maximum(picked, T.LOG_FLOOR)).mean(axis=-1)


def _cat(a, b):
    lead = max(a.shape[0], b.shape[0])
    a = np.broadcast_to(a, (lead,) + a.shape[1:])
    b = np.broadcast_to(b, (lead,) + b.shape[1:])
    return np.concatenate([a, b], axis=-1)


def reference_grad(arrays: Dict[str, np.ndarray], name: str, batch: Batch, cfg: ModelConfig, h: float = STEP, chunk: int = 512) -> np.ndarray:
    """Central differences of :func:`reference_loss` for every coordinate of ``name``."""
    shared = {k: v[None] for k, v in arrays.items()}
    base = arrays[name]
    flat = base.reshape(-1)
    out = np.zeros(flat.size)
    for start in range(0, flat.size, chunk):
        idx = np.arange(start, min(start + chunk, flat.size))
        k = len(idx)
        pert = np.repeat(flat[None], 2 * k, axis=0)
        pert[np.arange(k), idx] += h
        pert[k + np.arange(k), idx] -= h
        params = dict(shared)
        params[name] = pert.reshape((2 * k,) + base.shape)
        L = reference_loss(params, batch, cfg)
        out[idx] = (L[:k] - L[k:]) / (2.0 * h)
    return out.reshape(base.shape)


# ---------------------------------------------------------------------------
# full-model check


DIMS = {
    # d, question length T, regions N, facts M, answers C
    "default": dict(d=8, T=4, N=4, M=3, C=5),
    "tiny": dict(d=4, T=3, N=2, M=2, C=3),
}


def tiny_problem(dims: str = "default", seed: int = 0, share_fact_attention: bool = False) -> Tuple[Model, Batch]:
    """A random model and a three-sample batch exercising padding, a partial
    fact list and an image without facts."""
    if dims not in DIMS:
        raise ConfigError(f"unknown dims {dims!r}; choose from {sorted(DIMS)}")
    D = DIMS[dims]
    d, t_len, n, m, c = D["d"], D["T"], D["N"], D["M"], D["C"]
    rng = np.random.default_rng(seed)
    vocab = Vocabulary([f"w{i}" for i in range(6)])
    fv = FactVocabularies([IMG, "s1", "s2"], [SCENE, ATT, CONTAIN, "on"], [f"o{i}" for i in range(5)])
    answers = AnswerVocabulary([f"a{i}" for i in range(c)])
    d_in = 6
    cfg = ModelConfig(len(vocab), 3, 4, 5, c, d_in, d=d, share_fact_attention=share_fact_attention)
    model = Model(cfg, init_params(cfg, rng), vocab, fv, answers, max_len=t_len)

    B = 3
    q_mask = np.ones((B, t_len), dtype=bool)
    q_mask[1, t_len - 1 :] = False
    q_ids = np.where(q_mask, rng.integers(2, len(vocab), size=(B, t_len)), 0)
    f_real = np.ones((B, m), dtype=bool)
    f_real[1, m - 1 :] = False
    f_real[2] = False
    f_mask = f_real.copy()
    f_mask[2, 0] = True
    batch = Batch(
        q_ids=q_ids,
        q_mask=q_mask,
        raw=rng.normal(size=(B, n, d_in)),
        v_mask=np.ones((B, n), dtype=bool),
        s_ids=np.where(f_real, rng.integers(0, 3, size=(B, m)), 0),
        r_ids=np.where(f_real, rng.integers(0, 4, size=(B, m)), 0),
        o_ids=np.where(f_real, rng.integers(0, 5, size=(B, m)), 0),
        conf=np.where(f_real, rng.uniform(0.3, 1.0, size=(B, m)), 0.0),
        f_real=f_real,
        f_mask=f_mask,
        n_facts=f_real.sum(axis=1),
        targets=rng.integers(0, c, size=B),
    )
    return model, batch


@dataclass
class GradCheckReport:
    param_errors: Dict[str, float]
    op_errors: Dict[str, float] = field(default_factory=dict)
    loss_gap: float = 0.0
    seconds: float = 0.0
    tol: float = TOLERANCE

    @property
    def worst(self) -> Tuple[str, float]:
        name = max(self.param_errors, key=self.param_errors.get)
        return name, self.param_errors[name]

    @property
    def broken_ops(self) -> List[str]:
        return broken_ops(self.op_errors, self.tol)

    @property
    def ok(self) -> bool:
        return self.worst[1] <= self.tol and not self.broken_ops

    def summary(self) -> str:
        name, err = self.worst
        lines = [
            f"parameters checked: {len(self.param_errors)} tensors, worst {name} rel err {err:.3e} (tol {self.tol:g})",
            f"reference/tape loss gap: {self.loss_gap:.3e}",
        ]
        if self.op_errors:
            op, op_err = max(self.op_errors.items(), key=lambda kv: kv[1])
            lines.append(f"primitive ops checked: {len(self.op_errors)}, worst {op} rel err {op_err:.3e}")
        for op in self.broken_ops:
            lines.append(f"broken gradient in op: {op}")
        lines.append(f"runtime: {self.seconds:.2f} s")
        lines.append("PASS" if self.ok else "FAIL")
        return "\n".join(lines)


def check_model(model: Model, batch: Batch, h: float = STEP, tol: float = TOLERANCE, names: Optional[Sequence[str]] = None) -> GradCheckReport:
    """Tape gradients of the mean cross-entropy against central differences of
    the independent forward pass, for every coordinate of every parameter."""
    arrays = model.arrays()
    loss = model.loss(batch)
    ref = reference_loss({k: v[None] for k, v in arrays.items()}, batch, model.cfg)[0]
    gap = abs(float(ref) - loss.item())
    if gap > 1e-9:
        T.get_tape().clear()
        raise ContractError(f"reference forward disagrees with the model (loss gap {gap:.3e})")
    grads = T.backward(loss)
    errors = {}
    for name in names or sorted(arrays):
        tens = model.params[name]
        analytic = grads.get(tens, np.zeros(tens.shape))
        errors[name] = T.max_relative_error(analytic, reference_grad(arrays, name, batch, model.cfg, h))
    return GradCheckReport(errors, loss_gap=gap, tol=tol)


def run(dims: str = "default", seed: int = 0, op_seeds: Sequence[int] = (0,)) -> GradCheckReport:
    """The full suite: every primitive op, then the whole model."""
    start = time.perf_counter()
    op_errors = check_ops(op_seeds)
    model, batch = tiny_problem(dims, seed)
    rep = check_model(model, batch)
    rep.op_errors = op_errors
    rep.seconds = time.perf_counter() - start
    return rep
