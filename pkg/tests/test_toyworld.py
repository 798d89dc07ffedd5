import numpy as np
import pytest

from coattn_vqa.errors import ConfigError, InfeasibleSpecError, ParseError
from coattn_vqa.facts import validate_triplet
from coattn_vqa.toyworld import (
    World,
    WorldSpec,
    corrupt_facts,
    generate,
    load_samples,
    save_dataset,
    save_samples,
    self_check,
    strip_facts,
)


@pytest.fixture(scope="module")
def small():
    return generate(WorldSpec(), 60)


def serial(ds):
    return "".join(s.to_json() + "\n" for split in ds.splits().values() for s in split)


def test_regeneration_is_identical():
    assert serial(generate(WorldSpec(seed=42), 10)) == serial(generate(WorldSpec(seed=42), 10))
    assert serial(generate(WorldSpec(seed=42), 10)) != serial(generate(WorldSpec(seed=43), 10))


def test_default_spec():
    sp = WorldSpec()
    assert (sp.grid_h, sp.grid_w, sp.n_objects, sp.n_colors, sp.n_relations, sp.n_scenes) == (4, 4, 12, 6, 4, 5)
    assert (sp.min_objects, sp.max_objects, sp.noise_sigma, sp.d_in) == (2, 4, 0.1, 32)


def test_self_check_and_grammar(small):
    world = small.world
    samples = [s for split in small.splits().values() for s in split]
    assert self_check(world, samples) == []
    vocabs = world.fact_vocabs()
    for s in samples:
        assert all(validate_triplet(f, vocabs) is None for f in s.facts)
        assert all(f.confidence == 1.0 for f in s.facts)
        assert 0 <= s.support < len(s.facts)
        assert world.answer_rule(s.question, s.facts[s.support]) == s.answer


def test_self_check_catches_wrong_answer(small):
    s = small.train[0]
    bad = type(s)(s.id, s.regions, s.facts, s.question, "zzz", s.qtype, s.support)
    assert self_check(small.world, [bad])


def test_splits_and_infeasible():
    ds = generate(WorldSpec(), 20, (10, 5, 5))
    assert [len(x) for x in ds.splits().values()] == [10, 5, 5]
    with pytest.raises(InfeasibleSpecError):
        generate(WorldSpec(), 2)
    with pytest.raises(InfeasibleSpecError):
        WorldSpec(grid_h=1, grid_w=2, max_objects=3).validate()
    with pytest.raises(ConfigError):
        WorldSpec(n_colors=0).validate()


def test_counting_questions_behind_flag():
    plain = generate(WorldSpec(), 200)
    assert all(not s.question.startswith("how many") for split in plain.splits().values() for s in split)
    counting = generate(WorldSpec(counting=True, max_questions=3), 200)
    qs = [s for split in counting.splits().values() for s in split]
    assert any(s.question.startswith("how many") for s in qs)
    assert self_check(counting.world, qs) == []


def test_nearest_signature_recovers_objects_without_noise():
    ds = generate(WorldSpec(noise_sigma=0.0), 50)
    world = ds.world
    n_c = len(world.colors)
    for s in ds.train:
        objects = {f.object for f in s.facts if f.kind == "contain"}
        decoded = set()
        for row in s.regions.raw:
            dist = np.linalg.norm(world.signatures - row, axis=1)
            if dist.min() == 0.0:
                decoded.add(world.objects[int(np.argmin(dist)) // n_c])
        assert decoded == objects


def test_corrupt_zero_rates_is_identity(small):
    out = corrupt_facts(small, 0.0, 0.0, seed=1)
    assert serial(out) == serial(small)


def test_corrupt_drop_all_flags_samples(small):
    out = corrupt_facts(small, 1.0, 0.0, seed=1)
    for s in out.train:
        assert s.facts == [] and s.excluded and s.support is None


def test_corrupt_drop_rate_binomial():
    ds = generate(WorldSpec(), 1200)
    samples = [s for split in ds.splits().values() for s in split]
    n = sum(len(s.facts) for s in samples)
    assert n >= 10_000
    out = corrupt_facts(ds, 0.3, 0.0, seed=5)
    kept = sum(len(s.facts) for split in out.splits().values() for s in split)
    frac = (n - kept) / n
    sigma = np.sqrt(0.3 * 0.7 / n)
    assert abs(frac - 0.3) <= 3 * sigma


def test_corrupt_noise_and_support_remap(small):
    out = corrupt_facts(small, 0.3, 0.3, seed=2)
    vocabs = small.world.fact_vocabs()
    for before, after in zip(small.train, out.train):
        gold = {f.as_tuple() for f in before.facts}
        for f in after.facts:
            assert validate_triplet(f, vocabs) is None
            if f.as_tuple() not in gold:
                assert 0.3 <= f.confidence <= 0.9
        if after.support is not None:
            assert after.facts[after.support] == before.facts[before.support]
        else:
            assert before.facts[before.support] not in after.facts


def test_strip_facts(small):
    out = strip_facts(small)
    assert all(s.facts == [] and s.support is None for s in out.test)


def test_save_load_round_trip(tmp_path, small):
    save_samples(small.train, tmp_path / "a.jsonl")
    back = load_samples(tmp_path / "a.jsonl")
    save_samples(back, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    for s, t in zip(small.train, back):
        assert s.regions.raw.tobytes() == t.regions.raw.tobytes()


def test_floats_use_shortest_round_trip(tmp_path, small):
    line = small.train[0].to_json()
    x = small.train[0].regions.raw[0, 0]
    assert repr(float(x)) in line


def test_truncated_line_named(tmp_path, small):
    save_samples(small.train[:3], tmp_path / "a.jsonl")
    text = (tmp_path / "a.jsonl").read_text().splitlines()
    text[1] = text[1][: len(text[1]) // 2]
    (tmp_path / "b.jsonl").write_text("\n".join(text) + "\n")
    with pytest.raises(ParseError, match="line 2"):
        load_samples(tmp_path / "b.jsonl")


def test_dataset_directory(tmp_path, small):
    save_dataset(small, tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["fact_vocab.json", "taxonomy.txt", "test.jsonl", "train.jsonl", "val.jsonl", "vocab.txt", "world.json"]


def test_taxonomy_covers_answers(small):
    tax = small.world.taxonomy()
    for split in small.splits().values():
        assert all(s.answer in tax for s in split)


def test_world_vocab_contains_question_words(small):
    vocab = small.world.question_vocab()
    for s in small.train:
        assert all(w in vocab for w in s.question.split())


def test_world_validates_spec():
    with pytest.raises(ConfigError):
        World(WorldSpec(n_relations=99))
