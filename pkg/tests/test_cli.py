import json
import shutil
from pathlib import Path

import pytest

from delibparse import cli
from delibparse.records import load_records


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """datagen -> build-vocab -> train once; several commands share it."""
    root = tmp_path_factory.mktemp("ws")
    data = root / "data"
    assert run_cli("datagen", "--out", data, "--seed", "5", "--n", "140",
                   "--wer", "0.25") == 0
    assert run_cli("build-vocab", "--dataset", data / "train.jsonl",
                   "--out", data, "--target-pieces", "120") == 0
    model_dir = root / "model"
    assert run_cli("train", "--data", data, "--out", model_dir,
                   "--modality", "text", "--strategy", "union",
                   "--epochs", "2", "--lr", "0.001", "--seed", "5") == 0
    return root


def test_datagen_outputs(workspace):
    data = workspace / "data"
    for name in ("train.jsonl", "valid.jsonl", "test.jsonl", "pools.tsv",
                 "config.ini", "vocab.txt"):
        assert (data / name).exists(), name
    records = load_records(data / "train.jsonl")
    assert len(records) == 100
    assert all(r.hyp_text is not None and r.audio is not None for r in records)


def test_datagen_byte_identical_reruns(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli("datagen", "--out", out, "--seed", "7", "--n", "30") == 0
    for name in ("train.jsonl", "valid.jsonl", "test.jsonl", "pools.tsv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_train_outputs_and_metrics(workspace):
    model_dir = workspace / "model"
    for name in ("model.ckpt", "vocab.txt", "meta.json", "metrics.log",
                 "config.ini"):
        assert (model_dir / name).exists(), name
    meta = json.loads((model_dir / "meta.json").read_text())
    assert meta["model"]["modality"] == "text"
    assert "vocab_digest" in meta
    lines = (model_dir / "metrics.log").read_text().strip().split("\n")
    assert len(lines) == 2 and "valid_em=" in lines[0]


def test_eval_command(workspace, capsys):
    data = workspace / "data"
    code = run_cli("eval", "--model", workspace / "model",
                   "--dataset", data / "test.jsonl",
                   "--out", workspace / "evalout")
    out = capsys.readouterr().out
    assert code == 0
    assert out.startswith("EM ")
    report = json.loads((workspace / "evalout" / "eval.json").read_text())
    assert 0.0 <= report["em_overall"] <= 1.0
    assert report["n_no_error"] + report["n_error"] == 20


def test_eval_vocab_mismatch_fails(workspace, tmp_path, capsys):
    data2 = tmp_path / "other"
    assert run_cli("datagen", "--out", data2, "--seed", "99", "--n", "30") == 0
    assert run_cli("build-vocab", "--dataset", data2 / "train.jsonl",
                   "--out", data2, "--target-pieces", "90") == 0
    code = run_cli("eval", "--model", workspace / "model",
                   "--dataset", data2 / "test.jsonl")
    capsys.readouterr()
    assert code == 2


def test_inspect_command(workspace, capsys):
    code = run_cli("inspect", "--model", workspace / "model",
                   "--dataset", workspace / "data" / "test.jsonl",
                   "--index", "1")
    out = capsys.readouterr().out
    assert code == 0
    assert "p_copy=" in out and "g:" in out and "c:" in out
    assert "exact match:" in out


def test_em_command_identical_files(tmp_path, capsys):
    f = tmp_path / "a.anno"
    f.write_text("[IN:X a ]\n[IN:Y b ]\n", encoding="utf-8")
    assert run_cli("em", "--hyp", f, "--ref", f) == 0
    assert capsys.readouterr().out == "EM 1.0000\n"


def test_em_command_partial(tmp_path, capsys):
    hyp = tmp_path / "h.anno"
    ref = tmp_path / "r.anno"
    hyp.write_text("[IN:X a ]\n[IN:Y wrong ]\n", encoding="utf-8")
    ref.write_text("[IN:X a ]\n[IN:Y b ]\n", encoding="utf-8")
    assert run_cli("em", "--hyp", hyp, "--ref", ref) == 0
    assert capsys.readouterr().out == "EM 0.5000\n"


def test_em_length_mismatch_is_runtime_error(tmp_path, capsys):
    hyp = tmp_path / "h.anno"
    ref = tmp_path / "r.anno"
    hyp.write_text("[IN:X a ]\n", encoding="utf-8")
    ref.write_text("[IN:X a ]\n[IN:Y b ]\n", encoding="utf-8")
    assert run_cli("em", "--hyp", hyp, "--ref", ref) == 2
    capsys.readouterr()


def test_usage_error_exit_code_1(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("em", "--hyp", "only.anno")
    assert exc.value.code == 1
    err = capsys.readouterr().err
    assert "--ref" in err or "required" in err


def test_unknown_command_exit_code_1(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("frobnicate")
    assert exc.value.code == 1
    capsys.readouterr()


def test_gradcheck_command(capsys):
    assert run_cli("gradcheck", "--preset", "toy", "--seed", "0") == 0
    out = capsys.readouterr().out
    assert "max rel error" in out and "PASS" in out


def test_train_byte_identical_reruns(workspace, tmp_path):
    data = workspace / "data"
    outs = [tmp_path / "m1", tmp_path / "m2"]
    for out in outs:
        assert run_cli("train", "--data", data, "--out", out,
                       "--modality", "text", "--strategy", "ref",
                       "--epochs", "1", "--seed", "3") == 0
    assert (outs[0] / "model.ckpt").read_bytes() == (outs[1] / "model.ckpt").read_bytes()
    assert (outs[0] / "meta.json").read_bytes() == (outs[1] / "meta.json").read_bytes()

    def strip_wall(p):
        lines = (p / "metrics.log").read_text().strip().split("\n")
        return ["\t".join(kv for kv in line.split() if not kv.startswith("wall_s="))
                for line in lines]

    assert strip_wall(outs[0]) == strip_wall(outs[1])


def test_config_round_trip_reproduces_datagen(tmp_path):
    a = tmp_path / "a"
    assert run_cli("datagen", "--out", a, "--seed", "21", "--n", "30") == 0
    b = tmp_path / "b"
    assert run_cli("datagen", "--config", a / "config.ini", "--out", b) == 0
    for name in ("train.jsonl", "valid.jsonl", "test.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
