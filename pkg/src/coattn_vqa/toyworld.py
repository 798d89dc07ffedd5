"""Deterministic synthetic images, facts and templated questions.

Each image places a few objects on a grid; its region features are fixed
per-(object, colour) signature vectors plus Gaussian noise, and its facts are
the ground-truth scene / contain / attribute / relation triplets.  Every
question records the index of the single fact that answers it.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, InfeasibleSpecError, ParseError
from .facts import ATT, CONTAIN, IMG, SCENE, FactTriplet, FactVocabularies, validate_triplet
from .metrics import ROOT_MARKER, Taxonomy, question_type
from .question import Vocabulary
from .regions import RegionGrid

OBJECT_POOL = {
    "person": ["man", "woman", "boy", "girl"],
    "animal": ["dog", "cat", "horse"],
    "vehicle": ["bike", "car", "boat"],
    "furniture": ["table", "chair"],
}
COLOR_POOL = {"warm": ["red", "orange", "yellow", "pink", "brown"], "cool": ["green", "blue", "purple", "gray"], "neutral": ["white", "black"]}
SIZE_POOL = ["small", "large", "tiny", "huge"]
SCENE_POOL = {"outdoor": ["beach", "street", "park", "forest", "harbor"], "indoor": ["office", "kitchen", "bedroom"]}
# relation token -> gerund used in "who is ..." questions (None: not an action)
RELATION_POOL = [("on", None), ("near", None), ("hold", "holding"), ("ride", "riding"), ("under", None), ("watch", "watching")]

TEMPLATES = {
    "color": "what color is the {x}",
    "on": "what is on the {x}",
    "who": "who is {x}",
    "where": "where is the {x}",
    "scene": "what is in the image",
    "count": "how many objects are there",
}
_TEMPLATE_RE = {k: re.compile("^" + re.escape(v).replace(re.escape("{x}"), r"(\S+)") + "$") for k, v in TEMPLATES.items()}


@dataclass
class WorldSpec:
    grid_h: int = 4
    grid_w: int = 4
    n_objects: int = 12
    n_colors: int = 6
    n_sizes: int = 2
    n_relations: int = 4
    n_scenes: int = 5
    min_objects: int = 2
    max_objects: int = 4
    min_questions: int = 1
    max_questions: int = 1
    d_in: int = 32
    noise_sigma: float = 0.1
    relation_prob: float = 0.75
    counting: bool = False
    seed: int = 42

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("noise_sigma", "relation_prob", "n_sizes"):
                if not v >= 0:
                    raise ConfigError(f"{f.name} must be nonnegative")
            elif f.name not in ("counting", "seed") and v < 1:
                raise ConfigError(f"{f.name} must be positive")
        if self.min_objects > self.max_objects or self.min_questions > self.max_questions:
            raise ConfigError("min exceeds max in a range")
        if self.max_objects > self.grid_h * self.grid_w:
            raise InfeasibleSpecError(
                f"{self.max_objects} objects per image do not fit {self.grid_h * self.grid_w} regions"
            )
        if self.n_relations > len(RELATION_POOL):
            raise ConfigError(f"at most {len(RELATION_POOL)} relations are available")
        if self.max_objects > self.n_objects:
            raise InfeasibleSpecError("more objects per image than object types")
        return self

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown world key {unknown[0]!r}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def _names(pool, n, stem):
    if isinstance(pool, dict):
        flat = [name for group in pool.values() for name in group]
    else:
        flat = list(pool)
    out = flat[:n]
    out += [f"{stem}{i}" for i in range(len(out) + 1, n + 1)]
    return out


def _group_of(pool, name, default):
    for group, members in pool.items():
        if name in members:
            return group
    return default


@dataclass
class ToySample:
    id: int
    regions: RegionGrid
    facts: List[FactTriplet]
    question: str
    answer: str
    qtype: str
    support: Optional[int]
    excluded: bool = False

    def to_json(self) -> str:
        obj = {
            "id": self.id,
            "regions": {
                "h": self.regions.height,
                "w": self.regions.width,
                "din": self.regions.d_in,
                "data": self.regions.raw.ravel().tolist(),
            },
            "facts": [{"kind": f.kind, "s": f.subject, "r": f.relation, "o": f.object, "conf": f.confidence} for f in self.facts],
            "question": self.question,
            "answer": self.answer,
            "qtype": self.qtype,
            "support": self.support,
        }
        if self.excluded:
            obj["excluded"] = True
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ToySample":
        obj = json.loads(line)
        reg = obj["regions"]
        data = np.asarray(reg["data"], dtype=np.float64)
        raw = data.reshape(int(reg["h"]) * int(reg["w"]), int(reg["din"]))
        facts = [FactTriplet(f["kind"], f["s"], f["r"], f["o"], float(f["conf"])) for f in obj["facts"]]
        support = obj["support"]
        return cls(
            int(obj["id"]),
            RegionGrid(int(reg["h"]), int(reg["w"]), raw),
            facts,
            obj["question"],
            obj["answer"],
            obj["qtype"],
            None if support is None else int(support),
            bool(obj.get("excluded", False)),
        )


class World:
    """Vocabularies, taxonomy and feature signatures for one :class:`WorldSpec`."""

    def __init__(self, spec: WorldSpec):
        self.spec = spec.validate()
        self.objects = _names(OBJECT_POOL, spec.n_objects, "object")
        self.colors = _names(COLOR_POOL, spec.n_colors, "color")
        self.sizes = _names(SIZE_POOL, spec.n_sizes, "size")
        self.scenes = _names(SCENE_POOL, spec.n_scenes, "scene")
        self.relations = [r for r, _ in RELATION_POOL[: spec.n_relations]]
        self.gerunds = {r: g for r, g in RELATION_POOL[: spec.n_relations] if g is not None}
        self.numbers = [str(i) for i in range(1, spec.max_objects + 1)] if spec.counting else []

        rng = np.random.default_rng([spec.seed, 1])
        n_cells = len(self.objects) * len(self.colors)
        self.signatures = rng.normal(0.0, 1.0, size=(n_cells, spec.d_in))
        self.backgrounds = rng.normal(0.0, 0.5, size=(len(self.scenes), spec.d_in))

    def signature(self, obj: int, color: int) -> np.ndarray:
        return self.signatures[obj * len(self.colors) + color]

    def question_vocab(self) -> Vocabulary:
        words = []
        for key, tmpl in TEMPLATES.items():
            if key == "count" and not self.spec.counting:
                continue
            words += [w for w in tmpl.split() if w != "{x}"]
        words += self.objects + list(self.gerunds.values())
        return Vocabulary(dict.fromkeys(words))

    def fact_vocabs(self) -> FactVocabularies:
        superclass = {n: "number" for n in self.numbers}
        return FactVocabularies(
            [IMG] + self.objects,
            [SCENE, ATT, CONTAIN] + self.relations,
            self.objects + self.colors + self.sizes + self.scenes + self.numbers,
            superclass,
        )

    def taxonomy(self) -> Taxonomy:
        pairs = [("entity", ROOT_MARKER)]
        for top in ("object", "color", "size", "scene"):
            pairs.append((top, "entity"))
        for group in OBJECT_POOL:
            pairs.append((group, "object"))
        for group in COLOR_POOL:
            pairs.append((f"{group}_color", "color"))
        for group in SCENE_POOL:
            pairs.append((group, "scene"))
        for o in self.objects:
            pairs.append((o, _group_of(OBJECT_POOL, o, "object")))
        for c in self.colors:
            g = _group_of(COLOR_POOL, c, None)
            pairs.append((c, f"{g}_color" if g else "color"))
        for s in self.sizes:
            pairs.append((s, "size"))
        for s in self.scenes:
            pairs.append((s, _group_of(SCENE_POOL, s, "scene")))
        if self.numbers:
            pairs.append(("number", "entity"))
            pairs += [(n, "number") for n in self.numbers]
        return Taxonomy.from_pairs(pairs)

    # -- generation ---------------------------------------------------------

    def _place(self, rng, k):
        H, W = self.spec.grid_h, self.spec.grid_w
        cells = [int(rng.integers(H * W))]
        while len(cells) < k:
            taken = set(cells)
            frontier = sorted(
                {
                    nb
                    for c in cells
                    for nb in _neighbours(c, H, W)
                    if nb not in taken
                }
            )
            if not frontier:
                frontier = [c for c in range(H * W) if c not in taken]
            cells.append(frontier[int(rng.integers(len(frontier)))])
        return cells

    def make_image(self, rng):
        sp = self.spec
        k = int(rng.integers(sp.min_objects, sp.max_objects + 1))
        objs = [int(i) for i in rng.choice(len(self.objects), size=k, replace=False)]
        cells = self._place(rng, k)
        colors = [int(c) for c in rng.integers(len(self.colors), size=k)]
        sizes = [int(s) for s in rng.integers(len(self.sizes), size=k)] if self.sizes else []
        scene = int(rng.integers(len(self.scenes)))
        H, W = sp.grid_h, sp.grid_w

        rels = []  # (subject slot, relation idx, object slot)
        linked = set()
        for i in (int(x) for x in rng.permutation(k)):
            if rng.random() >= sp.relation_prob:
                continue
            nbs = [j for j in range(k) if j != i and cells[j] in _neighbours(cells[i], H, W) and frozenset((i, j)) not in linked]
            if not nbs:
                continue
            j = nbs[int(rng.integers(len(nbs)))]
            r = int(rng.integers(len(self.relations)))
            rels.append((i, r, j))
            linked.add(frozenset((i, j)))

        on = self.objects
        facts = [FactTriplet("scene", IMG, SCENE, self.scenes[scene])]
        facts += [FactTriplet("contain", IMG, CONTAIN, on[o]) for o in objs]
        facts += [FactTriplet("obj_att", on[o], ATT, self.colors[c]) for o, c in zip(objs, colors)]
        facts += [FactTriplet("obj_att", on[o], ATT, self.sizes[s]) for o, s in zip(objs, sizes)]
        facts += [FactTriplet("relation", on[objs[i]], self.relations[r], on[objs[j]]) for i, r, j in rels]
        if sp.counting:
            facts.append(FactTriplet("img_att", IMG, ATT, str(k)))
        order = [int(x) for x in rng.permutation(len(facts))]
        facts = [facts[i] for i in order]

        raw = np.tile(self.backgrounds[scene], (H * W, 1))
        for o, c, cell in zip(objs, colors, cells):
            raw[cell] = self.signature(o, c)
        raw = raw + rng.normal(0.0, sp.noise_sigma, size=raw.shape)
        return RegionGrid(H, W, raw), facts

    def candidates(self, facts: Sequence[FactTriplet]) -> Dict[str, List[Tuple[str, str, int]]]:
        """Answerable questions per template as (question, answer, support)."""
        colors = set(self.colors)
        out: Dict[str, List[Tuple[str, str, int]]] = {}

        def put(key, x, answer, idx):
            out.setdefault(key, []).append((TEMPLATES[key].format(x=x), answer, idx))

        rel_facts = [(i, f) for i, f in enumerate(facts) if f.kind == "relation"]
        for i, f in enumerate(facts):
            if f.kind == "obj_att" and f.object in colors:
                put("color", f.subject, f.object, i)
            elif f.kind == "scene":
                put("scene", None, f.object, i)
            elif f.kind == "img_att" and f.object in self.numbers:
                put("count", None, f.object, i)
        for i, f in rel_facts:
            if f.relation == "on" and sum(g.relation == "on" and g.object == f.object for _, g in rel_facts) == 1:
                put("on", f.object, f.subject, i)
            if f.relation in self.gerunds and sum(g.relation == f.relation for _, g in rel_facts) == 1:
                put("who", self.gerunds[f.relation], f.subject, i)
            if sum(g.subject == f.subject for _, g in rel_facts) == 1:
                put("where", f.subject, f.object, i)
        return out

    def answer_rule(self, question: str, fact: FactTriplet) -> Optional[str]:
        """Answer ``question`` from ``fact`` alone; ``None`` if the fact does not fit."""
        for key, rx in _TEMPLATE_RE.items():
            m = rx.match(question)
            if not m:
                continue
            x = m.group(1) if m.groups() else None
            if key == "color" and fact.kind == "obj_att" and fact.subject == x and fact.object in self.colors:
                return fact.object
            if key == "on" and fact.kind == "relation" and fact.relation == "on" and fact.object == x:
                return fact.subject
            if key == "who" and fact.kind == "relation" and self.gerunds.get(fact.relation) == x:
                return fact.subject
            if key == "where" and fact.kind == "relation" and fact.subject == x:
                return fact.object
            if key == "scene" and fact.kind == "scene":
                return fact.object
            if key == "count" and fact.kind == "img_att" and fact.object in self.numbers:
                return fact.object
            return None
        return None

    def image_samples(self, image_index: int, first_id: int) -> List[ToySample]:
        rng = np.random.default_rng([self.spec.seed, 2, image_index])
        grid, facts = self.make_image(rng)
        cands = self.candidates(facts)
        keys = [k for k in TEMPLATES if k in cands]
        n_q = int(rng.integers(self.spec.min_questions, self.spec.max_questions + 1))
        out = []
        for q in range(n_q):
            key = keys[int(rng.integers(len(keys)))]
            question, answer, support = cands[key][int(rng.integers(len(cands[key])))]
            out.append(ToySample(first_id + q, grid, list(facts), question, answer, question_type(question), support))
        return out


def _neighbours(cell, H, W):
    r, c = divmod(cell, W)
    out = []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        rr, cc = r + dr, c + dc
        if 0 <= rr < H and 0 <= cc < W:
            out.append(rr * W + cc)
    return out


@dataclass
class Dataset:
    world: World
    train: List[ToySample] = field(default_factory=list)
    val: List[ToySample] = field(default_factory=list)
    test: List[ToySample] = field(default_factory=list)

    def splits(self):
        return {"train": self.train, "val": self.val, "test": self.test}

    def replace(self, **splits) -> "Dataset":
        merged = self.splits()
        merged.update(splits)
        return Dataset(self.world, merged["train"], merged["val"], merged["test"])


def default_split_sizes(n: int) -> Tuple[int, int, int]:
    if n < 3:
        raise InfeasibleSpecError("need >=3 samples for splits")
    n_val = max(1, round(0.15 * n))
    n_test = max(1, round(0.15 * n))
    return n - n_val - n_test, n_val, n_test


def generate_samples(world: World, n: int) -> List[ToySample]:
    out: List[ToySample] = []
    image = 0
    while len(out) < n:
        out += world.image_samples(image, len(out))
        image += 1
    return out[:n]


def generate(spec: WorldSpec, n: int, sizes: Optional[Tuple[int, int, int]] = None) -> Dataset:
    """Generate ``n`` samples split into train/val/test (default 70/15/15)."""
    if sizes is None:
        sizes = default_split_sizes(n)
    if sum(sizes) != n or min(sizes) < 1:
        raise InfeasibleSpecError(f"split sizes {sizes} do not partition {n} samples")
    world = World(spec)
    samples = generate_samples(world, n)
    a, b, _ = sizes
    return Dataset(world, samples[:a], samples[a : a + b], samples[a + b :])


def self_check(world: World, samples: Sequence[ToySample]) -> List[str]:
    """Problems found by re-deriving every gold answer from its support fact."""
    problems = []
    vocabs = world.fact_vocabs()
    for s in samples:
        for f in s.facts:
            v = validate_triplet(f, vocabs)
            if v is not None:
                problems.append(f"sample {s.id}: {v}")
        if s.support is None:
            continue
        if not 0 <= s.support < len(s.facts):
            problems.append(f"sample {s.id}: support {s.support} out of range")
            continue
        got = world.answer_rule(s.question, s.facts[s.support])
        if got != s.answer:
            problems.append(f"sample {s.id}: rule gives {got!r}, gold is {s.answer!r}")
    return problems


# ---------------------------------------------------------------------------
# corruption


def _noise_fact(world: World, facts: Sequence[FactTriplet], present: List[str], rng) -> Optional[FactTriplet]:
    existing = {f.as_tuple() for f in facts}
    conf = float(rng.uniform(0.3, 0.9))
    for _ in range(20):
        kind = int(rng.integers(4))
        if kind == 0 and present:
            s = present[int(rng.integers(len(present)))]
            t = (s, ATT, world.colors[int(rng.integers(len(world.colors)))])
            k = "obj_att"
        elif kind == 1:
            t = (IMG, CONTAIN, world.objects[int(rng.integers(len(world.objects)))])
            k = "contain"
        elif kind == 2 and len(present) >= 2:
            i, j = (int(x) for x in rng.choice(len(present), size=2, replace=False))
            t = (present[i], world.relations[int(rng.integers(len(world.relations)))], present[j])
            k = "relation"
        elif kind == 3:
            t = (IMG, SCENE, world.scenes[int(rng.integers(len(world.scenes)))])
            k = "scene"
        else:
            continue
        # each object has one colour and each image one scene, so any triple
        # not already present carries wrong content
        if t in existing:
            continue
        return FactTriplet(k, t[0], t[1], t[2], conf)
    return None


def corrupt_sample(world: World, sample: ToySample, drop_rate: float, noise_rate: float, seed: int) -> ToySample:
    rng = np.random.default_rng([seed, 3, sample.id])
    gold = sample.facts
    keep = rng.random(len(gold)) >= drop_rate
    n_noise = int((rng.random(len(gold)) < noise_rate).sum())
    present = [f.object for f in gold if f.kind == "contain"]
    kept = [i for i in range(len(gold)) if keep[i]]
    facts = [gold[i] for i in kept]
    tags: List[Optional[int]] = list(kept)
    for _ in range(n_noise):
        nf = _noise_fact(world, gold + facts, present, rng)
        if nf is None:
            continue
        pos = int(rng.integers(len(facts) + 1))
        facts.insert(pos, nf)
        tags.insert(pos, None)
    support = None
    if sample.support is not None and sample.support in tags:
        support = tags.index(sample.support)
    excluded = sample.excluded or (len(gold) > 0 and not kept)
    return ToySample(sample.id, sample.regions, facts, sample.question, sample.answer, sample.qtype, support, excluded)


def corrupt_facts(data, drop_rate: float, noise_rate: float, seed: int, world: Optional[World] = None):
    """Simulate predicted facts: drop gold facts, inject confident-looking noise.

    ``data`` is a :class:`Dataset` (all splits are corrupted) or a list of
    samples together with ``world``.
    """
    if not (0.0 <= drop_rate <= 1.0 and 0.0 <= noise_rate <= 1.0):
        raise ConfigError("corruption rates must lie in [0, 1]")
    if isinstance(data, Dataset):
        return data.replace(**{k: corrupt_facts(v, drop_rate, noise_rate, seed, data.world) for k, v in data.splits().items()})
    if world is None:
        raise ConfigError("corrupting a sample list needs the world")
    return [corrupt_sample(world, s, drop_rate, noise_rate, seed) for s in data]


def strip_facts(data):
    """Remove every fact (question + image only)."""
    if isinstance(data, Dataset):
        return data.replace(**{k: strip_facts(v) for k, v in data.splits().items()})
    return [ToySample(s.id, s.regions, [], s.question, s.answer, s.qtype, None, False) for s in data]


# ---------------------------------------------------------------------------
# persistence


def save_samples(samples: Sequence[ToySample], path):
    Path(path).write_text("".join(s.to_json() + "\n" for s in samples), encoding="utf-8")


def load_samples(path) -> List[ToySample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(ToySample.from_json(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"bad sample record ({type(exc).__name__}: {exc})", lineno, path) from None
    return out


def save_dataset(ds: Dataset, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, samples in ds.splits().items():
        save_samples(samples, out / f"{name}.jsonl")
    ds.world.question_vocab().save(out / "vocab.txt")
    (out / "fact_vocab.json").write_text(json.dumps(ds.world.fact_vocabs().to_dict(), indent=2) + "\n", encoding="utf-8")
    ds.world.taxonomy().save(out / "taxonomy.txt")
    (out / "world.json").write_text(json.dumps(ds.world.spec.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_split(data_dir, name) -> List[ToySample]:
    return load_samples(Path(data_dir) / f"{name}.jsonl")
