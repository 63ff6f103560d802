import csv

import numpy as np
import pytest

from delibparse import evaluate as E, training as T, vocab as V
from delibparse.harness import build_demo_system
from delibparse.model import ModelConfig


@pytest.fixture(scope="module")
def tiny_system():
    return build_demo_system("text", n_records=16, seed=0)


class _EchoModel:
    """Pretend model that decodes every record to its own target."""

    def __init__(self, real_model):
        self.vocab = real_model.vocab
        self._records = {}

    def greedy_decode_batch(self, records, use_hyp=True):
        out = []
        for rec in records:
            ids = V.encode_annotation(rec.annotation, self.vocab)
            out.append(ids[1:-1])
        return out


class _SilentModel:
    def __init__(self, real_model):
        self.vocab = real_model.vocab

    def greedy_decode_batch(self, records, use_hyp=True):
        return [[] for _ in records]


def test_evaluate_echo_model_scores_one(tiny_system):
    model, records = tiny_system
    report = E.evaluate(_EchoModel(model), records)
    assert report.em_overall == 1.0
    assert report.em_no_error in (None, 1.0)
    assert report.em_error in (None, 1.0)


def test_evaluate_silent_model_scores_zero(tiny_system):
    model, records = tiny_system
    report = E.evaluate(_SilentModel(model), records)
    assert report.em_overall == 0.0


def test_evaluate_bucket_counts_match_flags(tiny_system):
    model, records = tiny_system
    report = E.evaluate(_EchoModel(model), records)
    n_err = sum(1 for r in records if r.has_asr_error)
    assert report.n_error == n_err
    assert report.n_no_error == len(records) - n_err
    assert report.n_total == len(records)


def test_overall_is_count_weighted_bucket_mean(tiny_system):
    model, records = tiny_system
    report = E.evaluate(model, records)
    total = 0.0
    if report.n_no_error:
        total += report.em_no_error * report.n_no_error
    if report.n_error:
        total += report.em_error * report.n_error
    assert report.em_overall == pytest.approx(total / report.n_total, abs=1e-12)


def test_evaluate_is_pure(tiny_system):
    model, records = tiny_system
    a = E.evaluate(model, records)
    b = E.evaluate(model, records)
    assert a.em_overall == b.em_overall
    assert a.em_error == b.em_error


def test_vocab_digest_mismatch_raises(tiny_system):
    model, records = tiny_system
    with pytest.raises(E.VocabMismatch):
        E.evaluate(model, records, expected_vocab_digest="0" * 64)
    E.evaluate(model, records[:2],
               expected_vocab_digest=model.vocab.digest())


def _tiny_spec(tmp_path, seeds=(0,), epochs=1):
    return E.MatrixSpec(
        n_train=40, n_valid=8, n_test=8,
        compositional_fraction=0.3, feat_dim=8, target_pieces=64,
        tier_wer={1: 0.25, 2: 0.35}, tiers=(1, 2),
        modalities=("text", "fusion", "audio"),
        strategies=("hyp", "ref", "union"),
        channels=("natural",), seeds=seeds, root_seed=1,
        model=ModelConfig(dim=16, fusion_heads=2, pooling_layers=1,
                          pooling_heads=2, decoder_layers=1, decoder_heads=2,
                          ffn_dim=24, text_source_dim=16, audio_source_dim=16,
                          max_decode_len=40),
        train=T.TrainConfig(epochs=epochs, batch_size=16, lr=1e-3, seed=0,
                            augment=T.SpecAugmentPolicy(1, 2, 1, 2)),
    )


def test_run_matrix_cardinality_and_reports(tmp_path):
    spec = _tiny_spec(tmp_path)
    rows = E.run_matrix(spec, tmp_path / "out")
    # 2 tiers x 3 modalities x 3 strategies x 1 seed
    assert len(rows) == 18
    assert all("error" not in r for r in rows)
    audio_rows = [r for r in rows if r["modality"] == "audio"]
    assert all(r["strategy"] == "-" for r in audio_rows)

    with open(tmp_path / "out" / "report.csv", encoding="utf-8") as f:
        got = list(csv.reader(f))
    assert got[0] == E.CSV_COLUMNS
    assert len(got) == 19
    text = (tmp_path / "out" / "report.txt").read_text()
    assert "directional anchors" in text


def test_run_matrix_cache_reproduces_tables(tmp_path):
    spec = _tiny_spec(tmp_path)
    out = tmp_path / "out"
    E.run_matrix(spec, out)
    first = (out / "report.csv").read_bytes()
    cache_files = sorted((out / "cache").glob("*.json"))
    mtimes = [p.stat().st_mtime_ns for p in cache_files]
    E.run_matrix(spec, out)
    assert (out / "report.csv").read_bytes() == first
    assert [p.stat().st_mtime_ns for p in sorted((out / "cache").glob("*.json"))] == mtimes


def test_run_matrix_audio_cells_share_training(tmp_path):
    spec = _tiny_spec(tmp_path)
    rows = E.run_matrix(spec, tmp_path / "out")
    for tier in (1, 2):
        audio = [r for r in rows if r["modality"] == "audio" and r["tier"] == tier]
        assert len(audio) == 3
        assert len({r["em_overall"] for r in audio}) == 1


def test_seed_mean_helper():
    rows = [
        {"modality": "text", "em_error": 0.2, "seed": 0},
        {"modality": "text", "em_error": 0.4, "seed": 1},
        {"modality": "audio", "em_error": 0.9, "seed": 0},
        {"modality": "text", "em_error": None, "seed": 2},
        {"modality": "text", "em_error": 1.0, "seed": 3, "error": "boom"},
    ]
    assert E.seed_mean(rows, "em_error", modality="text") == pytest.approx(0.3)
    assert E.seed_mean(rows, "em_error", modality="fusion") is None
