import time

import numpy as np
import pytest

import oracles
from coattn_vqa import gradcheck
from coattn_vqa import tensor as T
from coattn_vqa.errors import ConfigError, DimensionError, VocabularyError
from coattn_vqa.model import AnswerVocabulary, MlpParams, ModelConfig, build_model, forward, fuse_predict, init_params, n_guides
from coattn_vqa.tensor import Tensor
from coattn_vqa.toyworld import WorldSpec, generate, strip_facts


@pytest.fixture(scope="module")
def world_data():
    return generate(WorldSpec(), 40)


def make_model(ds, seed=0, **dims):
    answers = AnswerVocabulary.from_answers([s.answer for s in ds.train])
    dims.setdefault("d", 8)
    return build_model(ds.world.question_vocab(), ds.world.fact_vocabs(), answers, ds.world.spec.d_in, np.random.default_rng(seed), **dims)


class Level:
    def __init__(self, q, v, f):
        self.q, self.v, self.f = Tensor(q), Tensor(v), Tensor(f)


def test_fuse_matches_hand_evaluation():
    for seed in range(5):
        assert oracles.fusion_error(seed) <= 1e-12


def test_fuse_zero_params_is_uniform():
    rng = np.random.default_rng(0)
    levels = [Level(*rng.normal(size=(3, 4))) for _ in range(3)]
    mlp = MlpParams(Tensor(np.zeros((4, 4))), Tensor(np.zeros((4, 8))), Tensor(np.zeros((5, 8))), Tensor(np.zeros((6, 5))))
    np.testing.assert_allclose(fuse_predict(levels, mlp).data, np.full(6, 1 / 6), rtol=1e-15)


def test_fuse_nests_lower_levels():
    rng = np.random.default_rng(1)
    d = 3
    mlp = MlpParams(*(Tensor(rng.normal(size=s)) for s in ((d, d), (d, 2 * d), (d, 2 * d), (4, d))))
    base = [Level(*rng.normal(size=(3, d))) for _ in range(3)]
    moved = [Level(base[0].q.data + 1.0, base[0].v.data, base[0].f.data)] + base[1:]
    assert not np.array_equal(fuse_predict(base, mlp).data, fuse_predict(moved, mlp).data)


def test_fuse_needs_three_levels():
    with pytest.raises(DimensionError):
        fuse_predict([Level(*np.ones((3, 2)))] * 2, None)


def test_n_guides():
    assert [n_guides(s) for s in ("q0", "f0", "v", "f", "q")] == [0, 1, 2, 2, 2]
    assert n_guides("f0", True) == 2


def test_init_drops_unused_guidance_weights():
    cfg = ModelConfig(10, 3, 4, 5, 6, 7, d=8)
    p = init_params(cfg, np.random.default_rng(0))
    assert "att.word.q0.w_g1" not in p and "att.word.q0.w_g2" not in p
    assert "att.word.f0.w_g1" in p and "att.word.f0.w_g2" not in p
    assert "att.word.v.w_g2" in p


def test_init_embedding_scale():
    cfg = ModelConfig(2000, 3, 4, 5, 6, 7, d=8, emb_std=0.5)
    assert np.std(init_params(cfg, np.random.default_rng(0))["word_emb"]) == pytest.approx(0.5, rel=0.05)
    with pytest.raises(ConfigError):
        ModelConfig(10, 3, 4, 5, 6, 7, d=8, emb_std=-1.0)


def test_forward_distribution_and_determinism(world_data):
    m1, m2 = make_model(world_data), make_model(world_data)
    batch = m1.collate(world_data.train[:5])
    p1, p2 = m1.forward_batch(batch).p.data, m2.forward_batch(batch).p.data
    np.testing.assert_allclose(p1.sum(axis=-1), 1.0, atol=1e-12)
    assert p1.tobytes() == p2.tobytes()
    T.get_tape().clear()


def test_forward_batch_matches_single(world_data):
    m = make_model(world_data)
    with T.no_grad():
        full = m.forward_batch(m.collate(world_data.train[:4])).p.data
        for i, s in enumerate(world_data.train[:4]):
            np.testing.assert_allclose(forward(s, m).p.data[0], full[i], atol=1e-12)


def test_single_fact_gets_all_attention(world_data):
    s = world_data.train[0]
    one = type(s)(s.id, s.regions, s.facts[:1], s.question, s.answer, s.qtype, 0)
    with T.no_grad():
        res = forward(one, make_model(world_data))
    for out in res.levels:
        np.testing.assert_array_equal(out.alpha_f.data[0, :1], [1.0])


def test_no_facts_uses_null_fact(world_data):
    m = make_model(world_data)
    with T.no_grad():
        p = m.forward_batch(m.collate(strip_facts(world_data).train[:3])).p.data
    assert np.isfinite(p).all()


def test_loss_rejects_unknown_answers(world_data):
    m = make_model(world_data)
    s = world_data.train[0]
    odd = type(s)(s.id, s.regions, s.facts, s.question, "never seen", s.qtype, s.support)
    with pytest.raises(VocabularyError):
        m.loss(m.collate([odd]))


def test_answer_vocabulary_order():
    av = AnswerVocabulary.from_answers(["red", "blue", "red", "cat", "blue", "red", "dog"], top=3)
    assert av.answers == ["red", "blue", "cat"]
    assert av.id("Red") == 0 and av.id("dog") is None


def test_full_model_gradient_check():
    t0 = time.perf_counter()
    rep = gradcheck.run("default")
    assert rep.ok, rep.summary()
    assert rep.worst[1] <= 1e-4 and not rep.broken_ops
    assert time.perf_counter() - t0 < 10.0
