import json

import pytest

from coattn_vqa import cli


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = {"train": {"d": 8, "max_epochs": 2, "batch_size": 16}, "data": {"n": 40, "splits": [20, 10, 10]}}
    (root / "cfg.json").write_text(json.dumps(cfg))
    assert cli.main(["gen-data", "--config", str(root / "cfg.json"), "--out", str(root / "data")]) == 0
    assert cli.main(["train", "--config", str(root / "cfg.json"), "--data", str(root / "data"), "--out", str(root / "model")]) == 0
    return root


def test_gen_data_writes_dataset(trained):
    names = {p.name for p in (trained / "data").iterdir()}
    assert {"train.jsonl", "val.jsonl", "test.jsonl", "vocab.txt", "config.json"} <= names
    assert len((trained / "data" / "train.jsonl").read_text().splitlines()) == 20


def test_gen_data_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["gen-data", "--n", "12", "--seed", "3", "--out", str(tmp_path / name)]) == 0
    for split in ("train", "val", "test"):
        assert (tmp_path / "a" / f"{split}.jsonl").read_bytes() == (tmp_path / "b" / f"{split}.jsonl").read_bytes()


def test_train_outputs(trained):
    model = trained / "model"
    assert (model / "checkpoint.bin").exists()
    assert len((model / "history.csv").read_text().splitlines()) == 3


def test_eval_report(trained, capsys):
    prefix = trained / "rep" / "test"
    code = cli.main(["eval", "--ckpt", str(trained / "model" / "checkpoint.bin"), "--data", str(trained / "data"),
                     "--taxonomy", str(trained / "data" / "taxonomy.txt"), "--report", str(prefix)])
    assert code == 0
    rep = json.loads(prefix.with_suffix(".json").read_text())
    assert rep["wups@0.0"] >= rep["wups@0.9"] >= rep["accuracy"]
    assert "accuracy" in capsys.readouterr().out


def test_eval_min_accuracy_fails(trained):
    code = cli.main(["eval", "--ckpt", str(trained / "model" / "checkpoint.bin"), "--data", str(trained / "data"), "--min-accuracy", "1.01"])
    assert code == 1


def test_infer_and_explain(trained, tmp_path, capsys):
    ckpt = str(trained / "model" / "checkpoint.bin")
    assert cli.main(["infer", "--ckpt", ckpt, "--sample", str(trained / "data"), "--index", "0"]) == 0
    row = json.loads(capsys.readouterr().out.strip())
    assert set(row) == {"id", "question", "answer", "prob"}
    code = cli.main(["explain", "--ckpt", ckpt, "--sample", str(trained / "data"), "--index", "1",
                     "--emit-heatmaps", str(tmp_path / "maps"), "--json", str(tmp_path / "ex.json")])
    assert code == 0
    ex = json.loads((tmp_path / "ex.json").read_text())[0]
    assert 1 <= len(ex["reasons"]) <= 3
    assert any(p.suffix == ".pgm" for p in (tmp_path / "maps").iterdir())


def test_bad_index_is_usage_error(trained):
    assert cli.main(["infer", "--ckpt", str(trained / "model" / "checkpoint.bin"), "--sample", str(trained / "data"), "--index", "999"]) == 2


def test_grad_check_exit_codes(capsys):
    assert cli.main(["grad-check"]) == 0
    assert cli.main(["grad-check", "--fault-op", "tanh"]) == 1
    assert "tanh" in capsys.readouterr().out


def test_unknown_config_key(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"train": {"learning_rate": 0.1}}))
    assert cli.main(["train", "--config", str(tmp_path / "c.json"), "--print-config"]) == 2
    (tmp_path / "d.json").write_text(json.dumps({"model": {}}))
    assert cli.main(["gen-data", "--config", str(tmp_path / "d.json"), "--print-config"]) == 2


def test_print_config_shows_toy_defaults(capsys):
    assert cli.main(["train", "--lr", "0.01", "--print-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["train"]["lr"] == 0.01 and cfg["train"]["emb_std"] == 1.0
    assert cfg["data"]["splits"] == [1000, 200, 500]


def test_partial_train_section_keeps_toy_defaults(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"train": {"d": 16}}))
    assert cli.main(["train", "--config", str(tmp_path / "c.json"), "--print-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["train"]["d"] == 16 and cfg["train"]["lr"] == 1e-3


def test_missing_files(tmp_path):
    assert cli.main(["eval", "--ckpt", str(tmp_path / "nope.bin"), "--data", str(tmp_path)]) == 3
    (tmp_path / "bad.json").write_text("{oops")
    assert cli.main(["gen-data", "--config", str(tmp_path / "bad.json"), "--print-config"]) == 3


def test_infeasible_spec(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"grid_h": 1, "grid_w": 1, "max_objects": 3}))
    assert cli.main(["gen-data", "--spec", str(tmp_path / "s.json"), "--out", str(tmp_path / "o")]) == 2
