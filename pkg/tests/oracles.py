"""Independent reference computations shared by the unit and acceptance tests.

The hand oracles use plain Python floats and explicit loops, never the
package's tensor code, so they check the equations rather than re-run them.
"""

import math

import numpy as np

from coattn_vqa import tensor as T
from coattn_vqa.coattention import AttentionParams, LevelParams, atten, sequential_coattend
from coattn_vqa.model import MlpParams, fuse_predict
from coattn_vqa.tensor import Tensor

# -- plain-float helpers -----------------------------------------------------


def mv(W, x):
    return [sum(W[i][j] * x[j] for j in range(len(x))) for i in range(len(W))]


def vadd(*vs):
    return [sum(c) for c in zip(*vs)]


def softmax(xs):
    top = max(xs)
    e = [math.exp(x - top) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def hand_atten(X, g1, g2, Wx, Wg1, Wg2, w):
    """Guided attention over the rows of ``X`` with zero-vector guidance for ``None``."""
    scores = []
    for x in X:
        pre = mv(Wx, x)
        if g1 is not None:
            pre = vadd(pre, mv(Wg1, g1))
        if g2 is not None:
            pre = vadd(pre, mv(Wg2, g2))
        scores.append(sum(wi * math.tanh(p) for wi, p in zip(w, pre)))
    a = softmax(scores)
    out = [sum(a[i] * X[i][k] for i in range(len(X))) for k in range(len(X[0]))]
    return out, a


def hand_sequential(Q, V, F, P):
    """The five co-attention steps; ``P[step] = (Wx, Wg1, Wg2, w)``."""
    q0, _ = hand_atten(Q, None, None, *P["q0"])
    f0, _ = hand_atten(F, q0, None, *P["f0"])
    v, av = hand_atten(V, q0, f0, *P["v"])
    q, aq = hand_atten(Q, v, f0, *P["q"])
    f, af = hand_atten(F, v, q, *P["f"])
    return {"q0": q0, "f0": f0, "v": v, "q": q, "f": f, "alpha_v": av, "alpha_q": aq, "alpha_f": af}


def hand_fuse(sums, Ww, Wp, Wq, Wh):
    hw = [math.tanh(z) for z in mv(Ww, sums[0])]
    hp = [math.tanh(z) for z in mv(Wp, sums[1] + hw)]
    hq = [math.tanh(z) for z in mv(Wq, sums[2] + hp)]
    return softmax(mv(Wh, hq))


# -- fixtures ----------------------------------------------------------------

ATTENTION_EXAMPLE = {
    "X": [[1.0, 0.0], [0.0, 0.0]],
    "Wx": [[1.0, 0.0], [0.0, 1.0]],
    "w": [1.0, 1.0],
}


def tiny_level(rng):
    """Hand-set d = h = 2 parameters for all five steps (values rounded to 0.1)."""
    def m():
        return (np.round(rng.uniform(-1, 1, size=(2, 2)), 1)).tolist()

    P = {}
    for step in ("q0", "f0", "v", "q", "f"):
        P[step] = (m(), m(), m(), np.round(rng.uniform(-1, 1, size=2), 1).tolist())
    return P


def as_level(P):
    def ap(step):
        Wx, Wg1, Wg2, w = P[step]
        return AttentionParams(Tensor(Wx), Tensor(Wg1), Tensor(Wg2), Tensor(w))

    return LevelParams(*(ap(s) for s in ("q0", "f0", "v", "q", "f")))


def attention_errors(seed=0):
    """Max abs deviation of the package from the hand oracles on the attention fixtures."""
    ex = ATTENTION_EXAMPLE
    params = AttentionParams(Tensor(ex["Wx"]), Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2))), Tensor(ex["w"]))
    x_t, a = atten(Tensor(ex["X"]), Tensor(np.zeros(2)), Tensor(np.zeros(2)), params)
    hx, ha = hand_atten(ex["X"], None, None, ex["Wx"], None, None, ex["w"])
    worst = max(abs(p - q) for p, q in zip(list(x_t.data) + list(a.data), hx + ha))

    rng = np.random.default_rng(seed)
    Q = np.round(rng.uniform(-1, 1, (2, 2)), 1).tolist()
    V = np.round(rng.uniform(-1, 1, (2, 2)), 1).tolist()
    F = np.round(rng.uniform(-1, 1, (2, 2)), 1).tolist()
    P = tiny_level(rng)
    out = sequential_coattend(Tensor(Q), Tensor(V), Tensor(F), None, None, None, as_level(P))
    hand = hand_sequential(Q, V, F, P)
    got = {
        "q0": out.q0, "f0": out.f0, "v": out.v, "q": out.q, "f": out.f,
        "alpha_v": out.alpha_v, "alpha_q": out.alpha_q, "alpha_f": out.alpha_f,
    }
    for k, v in got.items():
        worst = max(worst, max(abs(p - q) for p, q in zip(v.data.tolist(), hand[k])))
    return worst, (list(a.data), list(x_t.data))


def fusion_error(seed=0):
    rng = np.random.default_rng(seed)

    def m(r, c):
        return np.round(rng.uniform(-1, 1, size=(r, c)), 1).tolist()

    Ww, Wp, Wq, Wh = m(2, 2), m(2, 4), m(2, 4), m(2, 2)
    parts = [[np.round(rng.uniform(-1, 1, 2), 1).tolist() for _ in range(3)] for _ in range(3)]
    sums = [vadd(*p) for p in parts]
    hand = hand_fuse(sums, Ww, Wp, Wq, Wh)

    class Level:  # the fusion reads only q, v, f
        def __init__(self, q, v, f):
            self.q, self.v, self.f = Tensor(q), Tensor(v), Tensor(f)

    p = fuse_predict([Level(*lv) for lv in parts], MlpParams(*(Tensor(W) for W in (Ww, Wp, Wq, Wh)))).data
    return max(abs(a - b) for a, b in zip(p.tolist(), hand))


# -- random attention instances ----------------------------------------------


def _random_params(rng, d, h, guided=True):
    g = (lambda: Tensor(rng.normal(size=(h, d)))) if guided else (lambda: None)
    return AttentionParams(Tensor(rng.normal(size=(h, d))), g(), g(), Tensor(rng.normal(size=h)))


def _random_mask(rng, B, n):
    m = rng.random((B, n)) < 0.7
    m[np.arange(B), rng.integers(0, n, size=B)] = True
    return m


def attention_invariant_failures(n_instances=10_000, batch=10, seed=0):
    """Check alpha, convex-hull and step-1 invariants on random instances.

    Every chunk draws fresh dimensions and parameters and ``batch`` input
    instances; half the chunks run a bare ``atten`` call, the rest a full
    five-step co-attention.  Returns a list of failure descriptions.
    """
    rng = np.random.default_rng(seed)
    failures = []
    done = 0
    chunk = 0
    while done < n_instances:
        B = min(batch, n_instances - done)
        d, h = (int(x) for x in rng.integers(1, 6, size=2))
        Tn, N, M = (int(x) for x in rng.integers(1, 7, size=3))
        scale = float(rng.choice([0.1, 1.0, 5.0]))
        Q = rng.normal(scale=scale, size=(B, Tn, d))
        V = rng.normal(scale=scale, size=(B, N, d))
        F = rng.normal(scale=scale, size=(B, M, d))
        qm, vm, fm = _random_mask(rng, B, Tn), _random_mask(rng, B, N), _random_mask(rng, B, M)
        checks = []
        if chunk % 2 == 0:
            p = _random_params(rng, d, h)
            g1 = Tensor(rng.normal(size=(B, d))) if rng.random() < 0.5 else None
            g2 = Tensor(rng.normal(size=(B, d))) if rng.random() < 0.5 else None
            x_t, a = atten(Tensor(V), g1, g2, p, vm)
            checks.append(("atten", V, vm, x_t.data, a.data))
        else:
            level = LevelParams(*(_random_params(rng, d, h) for _ in range(5)))
            out = sequential_coattend(Tensor(Q), Tensor(V), Tensor(F), qm, vm, fm, level)
            checks += [
                ("alpha_q", Q, qm, out.q.data, out.alpha_q.data),
                ("alpha_v", V, vm, out.v.data, out.alpha_v.data),
                ("alpha_f", F, fm, out.f.data, out.alpha_f.data),
            ]
            V2 = V + rng.normal(size=V.shape)
            F2 = F + rng.normal(size=F.shape)
            out2 = sequential_coattend(Tensor(Q), Tensor(V2), Tensor(F2), qm, vm, fm, level)
            if out2.q0.data.tobytes() != out.q0.data.tobytes():
                failures.append(f"chunk {chunk}: q0 changed under V/F perturbation")
        for name, X, mask, x_t, a in checks:
            if (a < 0).any():
                failures.append(f"chunk {chunk} {name}: negative weight")
            if (np.abs(a.sum(axis=-1) - 1.0) > 1e-9).any():
                failures.append(f"chunk {chunk} {name}: weights do not sum to 1")
            if (a[~mask] != 0).any():
                failures.append(f"chunk {chunk} {name}: mass on a masked entry")
            big = np.where(mask[..., None], X, -np.inf).max(axis=-2)
            small = np.where(mask[..., None], X, np.inf).min(axis=-2)
            slack = 1e-12 * np.abs(X).max()  # rounding of the weighted sum itself
            if (x_t > big + slack).any() or (x_t < small - slack).any():
                failures.append(f"chunk {chunk} {name}: outside the convex hull")
        done += B
        chunk += 1
    T.get_tape().clear()
    return failures


# -- WUPS --------------------------------------------------------------------

# root -> {animal -> {cat, dog}, vehicle -> {car, bike}}; depths 1, 2, 3
TAXONOMY_PAIRS = [
    ("entity", "ROOT"),
    ("animal", "entity"),
    ("vehicle", "entity"),
    ("cat", "animal"),
    ("dog", "animal"),
    ("car", "vehicle"),
    ("bike", "vehicle"),
]

# (kind, a, b, threshold, hand value); wup = 2 * depth(lca) / (depth(a) + depth(b))
WUPS_FIXTURES = [
    ("wup", "cat", "cat", None, 1.0),
    ("wup", "cat", "dog", None, 2 * 2 / (3 + 3)),
    ("wup", "entity", "cat", None, 2 * 1 / (1 + 3)),
    ("wup", "cat", "car", None, 2 * 1 / (3 + 3)),
    ("wup", "animal", "cat", None, 2 * 2 / (2 + 3)),
    ("wup", "animal", "vehicle", None, 2 * 1 / (2 + 2)),
    ("wups", "cat", "dog", 0.9, 0.1 * 2 * 2 / (3 + 3)),
    ("wups", "cat", "dog", 0.0, 2 * 2 / (3 + 3)),
    # multi-token: min over the two directed products of best matches
    ("wups", "cat dog", "cat", 0.9, min(1.0 * (0.1 * 4 / 6), 1.0)),
    ("wups", "the Animal", "cat", 0.9, 0.1 * 2 * 2 / (2 + 3)),
]


def wups_fixture_errors():
    from coattn_vqa.metrics import Taxonomy, wup, wups_pair

    tax = Taxonomy.from_pairs(TAXONOMY_PAIRS)
    out = []
    for kind, a, b, tau, want in WUPS_FIXTURES:
        got = wup(a, b, tax) if kind == "wup" else wups_pair(a, b, tax, tau)
        out.append(abs(got - want))
    return out


# -- reason templates --------------------------------------------------------

# the five template rows of the example table plus the super-class example;
# the contain row is printed without a space before the object there, which
# is a typesetting artefact of the template table's "object of obj."
REASON_FIXTURES = [
    (("scene", "_img", "_scene", "office"), "This image happens in the scene of office."),
    (("img_att", "_img", "_att", "wedding"), "This image contains the attribute of wedding."),
    (("contain", "_img", "_contain", "dog"), "This image contains the object of dog."),
    (("obj_att", "shirt", "_att", "red"), "The shirt is red."),
    (("relation", "man", "hold", "umbrella"), "The man is hold the umbrella."),
    (("img_att", "_img", "_att", "surfing"), "This image contains the action of surfing."),
]


def reason_vocabs():
    from coattn_vqa.facts import FactVocabularies

    return FactVocabularies(
        ["_img", "shirt", "man"],
        ["_scene", "_att", "_contain", "hold"],
        ["office", "wedding", "dog", "red", "umbrella", "surfing"],
        {"surfing": "action"},
    )


def reason_mismatches():
    from coattn_vqa.facts import FactTriplet
    from coattn_vqa.reasons import render_reason

    vocabs = reason_vocabs()
    bad = []
    for (kind, s, r, o), want in REASON_FIXTURES:
        got = render_reason(FactTriplet(kind, s, r, o), vocabs)
        if got.encode("utf-8") != want.encode("utf-8"):
            bad.append((got, want))
    return bad
