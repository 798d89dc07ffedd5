"""Dense float64 tensors with a reverse-mode differentiation tape.

Every operation in this module is a plain function taking and returning
:class:`Tensor` objects.  When any input requires a gradient (and recording
is enabled) the operation appends one node to the calling thread's tape.
:func:`backward` walks that tape in reverse creation order and leaves the
accumulated gradient on each leaf tensor's ``grad`` attribute.

Broadcasting is deliberately narrow: elementwise ops accept identical shapes
or a scalar operand, and every other shape change goes through an explicit
op (``expand``, ``add_bias``, ``reshape`` ...) so each gradient rule stays
easy to audit.  Most ops do accept leading batch axes.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import (
    ContractError,
    DimensionError,
    DistributionError,
    EmptySupportError,
    NonFiniteError,
    VocabularyError,
)

LOG_FLOOR = 1e-12

_state = threading.local()


def _local():
    try:
        _state.tape
    except AttributeError:
        _state.tape = Tape()
        _state.grad_enabled = True
        _state.faults = {}
    return _state


class Tensor:
    """Immutable n-d array of float64 values, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "name")
    __array_priority__ = 100  # make ndarray + Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor construction")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr)  # ufuncs on 0-d arrays return numpy scalars
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.node_id = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def __float__(self):
        return self.item()

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=5)}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape) -> Tensor:
    return Tensor._wrap(np.zeros(shape))


def ones(shape) -> Tensor:
    return Tensor._wrap(np.ones(shape))


def _check_finite(arr: np.ndarray, where: str):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value in {where}")


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


# ---------------------------------------------------------------------------
# tape


@dataclass
class _Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable


@dataclass
class Tape:
    """Ordered record of executed ops; one per thread."""

    nodes: List[_Node] = field(default_factory=list)

    def record(self, op: str, inputs: tuple, output: Tensor, backward: Callable):
        output.node_id = len(self.nodes)
        self.nodes.append(_Node(op, inputs, output, backward))

    def clear(self):
        for node in self.nodes:
            node.output.node_id = None
        self.nodes = []

    def __len__(self):
        return len(self.nodes)


def get_tape() -> Tape:
    return _local().tape


@contextmanager
def no_grad():
    """Evaluate ops without recording anything on the tape."""
    st = _local()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


@contextmanager
def inject_fault(op: str, factor: float = 1.5):
    """Scale the input gradients of every ``op`` node by ``factor``.

    Test and self-check hook: a gradient check run inside this context must
    fail and name ``op``.
    """
    st = _local()
    st.faults[op] = factor
    try:
        yield
    finally:
        st.faults.pop(op, None)


def _make(op: str, data: np.ndarray, inputs: tuple, backward: Callable, check: bool = True) -> Tensor:
    # check=False for ops whose output is finite whenever their inputs are
    if check and not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced a non-finite value")
    out = Tensor._wrap(data)
    st = _local()
    if st.grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        st.tape.record(op, inputs, out, backward)
    return out


def backward(loss: Tensor) -> Dict[Tensor, np.ndarray]:
    """Backpropagate from a scalar ``loss`` and consume the tape.

    Sets ``grad`` on every leaf tensor that requires a gradient and returns a
    mapping from those leaves to their gradients.  Leaves that the loss does
    not depend on receive a zero gradient if they appear on the tape.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    return vjp(loss, np.ones(loss.shape))


def vjp(out: Tensor, seed) -> Dict[Tensor, np.ndarray]:
    """Like :func:`backward` but for any output, seeded with ``d(loss)/d(out) = seed``."""
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != out.shape:
        raise DimensionError(f"seed {seed.shape} does not match output {out.shape}")
    tape = get_tape()
    nid = out.node_id
    if nid is None or nid >= len(tape.nodes) or tape.nodes[nid].output is not out:
        raise ContractError("output is not on the current tape")
    faults = _local().faults
    grads: Dict[int, np.ndarray] = {id(out): seed}
    leaves: Dict[int, Tensor] = {}
    for node in reversed(tape.nodes[: nid + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        factor = faults.get(node.op)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if factor is not None:
                ig = ig * factor
            if inp.node_id is None:
                leaves[id(inp)] = inp
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
    result = {}
    for key, leaf in leaves.items():
        leaf.grad = grads.get(key, np.zeros(leaf.shape))
        result[leaf] = leaf.grad
    tape.clear()
    return result


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supported forms: ``(..., k) @ (k, n)``, ``(..., k) @ (k,)`` and batched
    ``(B, m, k) @ (B, k, n)``.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    A, B = a.data, b.data
    if A.ndim == 0 or B.ndim == 0:
        raise DimensionError("matmul needs at least 1-d operands")
    if B.ndim in (1, 2):
        k = B.shape[0]
        if A.shape[-1] != k:
            raise DimensionError(f"matmul inner extents differ: {A.shape} @ {B.shape}")
        out = A @ B

        def bw(g):
            if B.ndim == 2:
                ga = g @ B.T
                gb = A.reshape(-1, k).T @ g.reshape(-1, B.shape[1])
            else:
                ga = g[..., None] * B
                gb = A.reshape(-1, k).T @ g.reshape(-1)
            return ga, gb

    elif B.ndim == 3 and A.ndim == 3:
        if A.shape[0] != B.shape[0] or A.shape[2] != B.shape[1]:
            raise DimensionError(f"batched matmul shapes differ: {A.shape} @ {B.shape}")
        out = A @ B

        def bw(g):
            return g @ B.transpose(0, 2, 1), A.transpose(0, 2, 1) @ g

    else:
        raise DimensionError(f"unsupported matmul shapes {A.shape} @ {B.shape}")
    return _make("matmul", out, (a, b), bw)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """``x @ w.T`` for a weight stored as (out, in); x may carry leading axes."""
    X, W = x.data, w.data
    if W.ndim != 2 or X.shape[-1] != W.shape[1]:
        raise DimensionError(f"linear: input {X.shape} does not fit weight {W.shape}")
    out = X @ W.T

    def bw(g):
        return g @ W, g.reshape(-1, W.shape[0]).T @ X.reshape(-1, W.shape[1])

    return _make("linear", out, (x, w), bw)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError("transpose is defined for 2-d tensors only")
    return _make("transpose", a.data.T.copy(), (a,), lambda g: (g.T,), check=False)


# ---------------------------------------------------------------------------
# elementwise


def _binary_operands(a, b, op):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return a, b
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")
    A, B = a.data, b.data
    return _make(
        "mul", A * B, (a, b), lambda g: (_reduce_to(g * B, A.shape), _reduce_to(g * A, B.shape))
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,), check=False)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make("tanh", y, (a,), lambda g: (g * (1.0 - y * y),), check=False)


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),), check=False)


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_cell(z: Tensor, c: Tensor) -> Tensor:
    """Fused LSTM cell.  ``z`` holds the gate pre-activations in i, f, g, o order
    (``(..., 4h)``), ``c`` the previous cell state.  Returns ``[h_new, c_new]``
    concatenated along the last axis.
    """
    hd = c.shape[-1]
    if z.shape != c.shape[:-1] + (4 * hd,):
        raise DimensionError(f"lstm_cell: gates {z.shape} vs state {c.shape}")
    zd = z.data
    i = _sig(zd[..., :hd])
    f = _sig(zd[..., hd : 2 * hd])
    g = np.tanh(zd[..., 2 * hd : 3 * hd])
    o = _sig(zd[..., 3 * hd :])
    c_new = f * c.data + i * g
    tc = np.tanh(c_new)
    out = np.concatenate([o * tc, c_new], axis=-1)

    def bw(grad):
        gh, gc = grad[..., :hd], grad[..., hd:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [dc * g * i * (1.0 - i), dc * c.data * f * (1.0 - f), dc * i * (1.0 - g * g), gh * tc * o * (1.0 - o)],
            axis=-1,
        )
        return dz, dc * f

    return _make("lstm_cell", out, (z, c), bw, check=False)


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name: ``add``, ``mul``, ``tanh``, ``scale``, ``sub``, ``sigmoid``."""
    table = {"add": add, "sub": sub, "mul": mul, "tanh": tanh, "scale": scale, "sigmoid": sigmoid}
    try:
        fn = table[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _make("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape
    return _make(
        "mean", np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shape).copy(),)
    )


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _make("reshape", out.copy(), (a,), lambda g: (g.reshape(old),), check=False)


def expand(a: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis at ``axis`` and repeat ``a`` ``n`` times along it."""
    out = np.repeat(np.expand_dims(a.data, axis), n, axis=axis)
    return _make("expand", out, (a,), lambda g: (g.sum(axis=axis),), check=False)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add ``b`` to every trailing block of ``x`` (``b.shape == x.shape[-b.ndim:]``)."""
    if b.ndim == 0 or x.shape[x.ndim - b.ndim :] != b.shape:
        raise DimensionError(f"add_bias: bias {b.shape} does not match tail of {x.shape}")
    lead = tuple(range(x.ndim - b.ndim))
    return _make("add_bias", x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)))


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape
    out = a.data[..., start:stop].copy()

    def bw(g):
        ga = np.zeros(shape)
        ga[..., start:stop] = g
        return (ga,)

    return _make("slice_last", out, (a,), bw, check=False)


def select(a: Tensor, index: int, axis: int) -> Tensor:
    """Pick one index along ``axis`` (the axis is dropped)."""
    shape = a.shape
    out = np.take(a.data, index, axis=axis)

    def bw(g):
        ga = np.zeros(shape)
        idx = [slice(None)] * len(shape)
        idx[axis] = index
        ga[tuple(idx)] = g
        return (ga,)

    return _make("select", out, (a,), bw, check=False)


def stack(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise DimensionError("stack of an empty list")
    if any(p.shape != parts[0].shape for p in parts):
        raise DimensionError("stack needs equal shapes")
    out = np.stack([p.data for p in parts], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return _make("stack", out, parts, bw, check=False)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise DimensionError("concat of an empty list")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make("concat", out, parts, bw, check=False)


def shift(a: Tensor, offset: int, axis: int) -> Tensor:
    """``out[t] = a[t + offset]`` along ``axis``, zero where that falls outside."""
    out = np.zeros(a.shape)
    n = a.shape[axis]

    def window(lo, hi):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(lo, hi)
        return tuple(idx)

    if abs(offset) < n:
        if offset >= 0:
            out[window(0, n - offset)] = a.data[window(offset, n)]
        else:
            out[window(-offset, n)] = a.data[window(0, n + offset)]

    def bw(g):
        ga = np.zeros(g.shape)
        if abs(offset) < n:
            if offset >= 0:
                ga[window(offset, n)] = g[window(0, n - offset)]
            else:
                ga[window(0, n + offset)] = g[window(-offset, n)]
        return (ga,)

    return _make("shift", out, (a,), bw, check=False)


def gather_rows(E: Tensor, ids) -> Tensor:
    """Embedding lookup: rows of ``E`` at integer ``ids`` (any shape)."""
    ids = np.asarray(ids)
    if ids.size and not np.issubdtype(ids.dtype, np.integer):
        raise VocabularyError(f"ids must be integers, got dtype {ids.dtype}")
    ids = ids.astype(np.int64)
    vocab = E.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)].ravel()[0]
        raise VocabularyError(f"id {int(bad)} outside vocabulary of size {vocab}")
    shape = E.shape

    def bw(g):
        gE = np.zeros(shape)
        np.add.at(gE, ids.ravel(), g.reshape(-1, shape[1]))
        return (gE,)

    return _make("gather_rows", E.data[ids], (E,), bw, check=False)


def max_elementwise(parts: Sequence[Tensor]) -> Tensor:
    """Coordinate-wise maximum; on ties the gradient goes to the first part."""
    parts = tuple(parts)
    if not parts or any(p.shape != parts[0].shape for p in parts):
        raise DimensionError("max_elementwise needs one or more equally shaped tensors")
    stacked = np.stack([p.data for p in parts])
    winner = np.argmax(stacked, axis=0)
    out = np.take_along_axis(stacked, winner[None], axis=0)[0]

    def bw(g):
        return tuple(np.where(winner == i, g, 0.0) for i in range(len(parts)))

    return _make("max_elementwise", out, parts, bw, check=False)


def mask_rows(x: Tensor, mask) -> Tensor:
    """Zero the rows of ``x`` (shape ``(..., T, d)``) where ``mask`` (``(..., T)``) is false."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.shape[:-1]:
        raise DimensionError(f"mask {m.shape} does not match rows of {x.shape}")
    keep = m[..., None]
    return _make("mask_rows", np.where(keep, x.data, 0.0), (x,), lambda g: (np.where(keep, g, 0.0),), check=False)


def where_rows(mask, a: Tensor, b: Tensor) -> Tensor:
    """Per-row choice: ``a`` where ``mask`` holds, else ``b``.  Rows are the last axis."""
    if a.shape != b.shape:
        raise DimensionError(f"where_rows: {a.shape} vs {b.shape}")
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape[:-1]:
        raise DimensionError(f"mask {m.shape} does not match rows of {a.shape}")
    keep = m[..., None]
    out = np.where(keep, a.data, b.data)
    return _make(
        "where_rows", out, (a, b), lambda g: (np.where(keep, g, 0.0), np.where(keep, 0.0, g)), check=False
    )


def weighted_sum(alpha: Tensor, X: Tensor) -> Tensor:
    """``sum_i alpha[..., i] * X[..., i, :]``."""
    if X.ndim < 2 or alpha.shape != X.shape[:-1]:
        raise DimensionError(f"weighted_sum: weights {alpha.shape} vs features {X.shape}")
    A, XX = alpha.data, X.data
    out = np.einsum("...n,...nd->...d", A, XX)

    def bw(g):
        return np.einsum("...d,...nd->...n", g, XX), A[..., None] * g[..., None, :]

    return _make("weighted_sum", out, (alpha, X), bw)


# ---------------------------------------------------------------------------
# probabilities


def softmax_masked(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis restricted to ``mask``; masked entries are exactly 0."""
    X = x.data
    if mask is None:
        m = np.ones(X.shape, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != X.shape:
            raise DimensionError(f"mask {m.shape} does not match logits {X.shape}")
    if X.ndim == 0:
        raise DimensionError("softmax needs at least one axis")
    if not m.any(axis=-1).all():
        raise EmptySupportError("softmax over an all-masked row")
    top = np.max(np.where(m, X, -np.inf), axis=-1, keepdims=True)
    e = np.where(m, np.exp(np.where(m, X - top, 0.0)), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make("softmax_masked", p, (x,), bw, check=False)


def softmax(x: Tensor) -> Tensor:
    return softmax_masked(x, None)


def cross_entropy(p: Tensor, target) -> Tensor:
    """Mean of ``-log(max(p[target], 1e-12))`` over the batch.

    ``p`` is a probability vector ``(C,)`` with an integer target, or a batch
    ``(B, C)`` with ``B`` integer targets.
    """
    P = p.data
    single = P.ndim == 1
    if single:
        P2 = P[None]
        t = np.asarray([target])
    else:
        P2 = P
        t = np.asarray(target)
    if P2.ndim != 2 or t.shape != (P2.shape[0],):
        raise DimensionError(f"cross_entropy: probabilities {P.shape} vs targets {np.shape(target)}")
    if (P2 < 0).any() or (np.abs(P2.sum(axis=1) - 1.0) > 1e-6).any():
        raise DistributionError("cross_entropy needs rows that are probability vectors")
    t = t.astype(np.int64)
    C = P2.shape[1]
    if (t < 0).any() or (t >= C).any():
        raise VocabularyError(f"target outside {C} classes")
    rows = np.arange(len(t))
    picked = P2[rows, t]
    clamped = np.maximum(picked, LOG_FLOOR)
    n = len(t)
    loss = np.asarray(-np.log(clamped).sum() / n)

    def bw(g):
        gp = np.zeros(P2.shape)
        live = picked >= LOG_FLOOR
        gp[rows, t] = np.where(live, -g / (n * clamped), 0.0)
        return (gp[0] if single else gp,)

    return _make("cross_entropy", loss, (p,), bw)


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class RmsPropState:
    """Running mean of squared gradients per parameter name."""

    mean_sq: Dict[str, np.ndarray]
    decay: float = 0.99
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray], decay=0.99, eps=1e-8):
        return cls({k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in params.items()}, decay, eps)


def rmsprop_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: RmsPropState,
    lr: float = 2e-4,
    decay: Optional[float] = None,
    eps: Optional[float] = None,
):
    """One RMSProp update.  Pure: returns ``(new_params, new_state)``.

    ``s <- decay * s + (1 - decay) * g**2``;
    ``theta <- theta - lr * g / (sqrt(s) + eps)``.
    """
    decay = state.decay if decay is None else decay
    eps = state.eps if eps is None else eps
    if set(params) != set(grads) or set(params) != set(state.mean_sq):
        raise DimensionError("params, grads and optimizer state must share the same names")
    new_params, new_sq = {}, {}
    for name in params:
        theta = np.asarray(params[name], dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        s = state.mean_sq[name]
        if theta.shape != g.shape or theta.shape != s.shape:
            raise DimensionError(f"shape mismatch for parameter {name!r}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}; step aborted")
        s_new = decay * s + (1.0 - decay) * (g * g)
        denom = np.sqrt(s_new) + eps
        step = np.divide(g, denom, out=np.zeros_like(g), where=denom > 0)
        new_params[name] = theta - lr * step
        new_sq[name] = s_new
    return new_params, RmsPropState(new_sq, decay, eps)


# ---------------------------------------------------------------------------
# oracle


def finite_diff_grad(f: Callable[[Tensor], object], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    work = base.copy()
    flat = work.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(_scalar(f(Tensor(work))))
            flat[i] = orig - h
            fm = float(_scalar(f(Tensor(work))))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def _scalar(v):
    if isinstance(v, Tensor):
        return v.item()
    return v


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """``max |a - b| / max(|a|, |b|, floor)`` over all coordinates."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"cannot compare shapes {a.shape} and {b.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def parameters(tensors: Iterable[Tensor]) -> List[Tensor]:
    return [t for t in tensors if t.requires_grad]
