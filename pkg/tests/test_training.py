import numpy as np
import pytest

from coattn_vqa.errors import ConfigError, ContractError, ParseError
from coattn_vqa.toyworld import WorldSpec, corrupt_facts, generate
from coattn_vqa.training import Checkpoint, TrainConfig, toy_train_config, train, write_history_csv


@pytest.fixture(scope="module")
def ds():
    return generate(WorldSpec(), 60)


def small_config(**kw):
    base = dict(d=8, max_epochs=3, batch_size=16, patience=3, lr=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def run(ds, config):
    return train(ds.train, ds.val, config, ds.world.question_vocab(), ds.world.fact_vocabs())


@pytest.fixture(scope="module")
def checkpoint(ds):
    return run(ds, small_config())


def test_zero_learning_rate_leaves_params(ds):
    from coattn_vqa.model import build_model

    ck = run(ds, small_config(lr=0.0, max_epochs=1))
    ref = build_model(ds.world.question_vocab(), ds.world.fact_vocabs(), ck.model().answers, ds.world.spec.d_in, np.random.default_rng(42), **small_config().dims())
    for k, v in ref.arrays().items():
        assert ck.params[k].tobytes() == v.tobytes()


def test_same_seed_same_history(ds, checkpoint):
    again = run(ds, small_config())
    assert again.history == checkpoint.history
    for k in checkpoint.params:
        assert again.params[k].tobytes() == checkpoint.params[k].tobytes()


def test_best_validation_epoch_is_kept(checkpoint):
    accs = [r.val_acc for r in checkpoint.history]
    assert checkpoint.best_epoch == 1 + int(np.argmax(accs))
    assert checkpoint.best_val_acc == max(accs)


def test_early_stopping(ds):
    ck = run(ds, small_config(lr=0.0, max_epochs=10, patience=2))
    assert len(ck.history) == 3  # epoch 1 sets the best, two stale epochs stop


def test_checkpoint_round_trip(tmp_path, ds, checkpoint):
    checkpoint.save(tmp_path / "m.bin")
    back = Checkpoint.load(tmp_path / "m.bin")
    assert back.history == checkpoint.history and back.best_epoch == checkpoint.best_epoch
    a = checkpoint.model().predict(ds.test)
    b = back.model().predict(ds.test)
    assert [x for x, _ in a] == [x for x, _ in b]
    assert np.array([p for _, p in a]).tobytes() == np.array([p for _, p in b]).tobytes()


def test_checkpoint_errors(tmp_path, checkpoint):
    (tmp_path / "junk.bin").write_bytes(b"hello\nworld")
    with pytest.raises(ParseError):
        Checkpoint.load(tmp_path / "junk.bin")
    checkpoint.save(tmp_path / "m.bin")
    raw = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[:-8])
    with pytest.raises(ParseError, match="truncated"):
        Checkpoint.load(tmp_path / "cut.bin")


def test_excluded_samples_are_dropped(ds):
    out = corrupt_facts(ds, 0.9, 0.0, seed=3)
    n_excluded = sum(s.excluded for s in out.train)
    assert n_excluded > 0
    ck = train(out.train, out.val, small_config(max_epochs=1), ds.world.question_vocab(), ds.world.fact_vocabs())
    assert ck.dropped == n_excluded


def test_rare_answers_are_dropped(ds):
    ck = run(ds, small_config(max_epochs=1, top_answers=2))
    assert len(ck.answers) == 2
    assert ck.dropped == sum(s.answer not in ck.answers for s in ds.train)


def test_config_validation(ds):
    with pytest.raises(ConfigError):
        TrainConfig(lr=-1.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 0.1})
    with pytest.raises(ContractError):
        train(ds.train, [], small_config(), ds.world.question_vocab(), ds.world.fact_vocabs())


def test_config_dict_round_trip():
    cfg = toy_train_config(d=16)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert (cfg.lr, cfg.max_epochs, cfg.emb_std) == (1e-3, 50, 1.0)
    assert TrainConfig().lr == 2e-4 and TrainConfig().emb_std == 0.01


def test_history_csv(tmp_path, checkpoint):
    write_history_csv(checkpoint.history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_acc"
    assert len(lines) == 1 + len(checkpoint.history)
