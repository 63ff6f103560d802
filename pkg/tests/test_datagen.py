import numpy as np
import pytest

from delibparse import annotations as anno
from delibparse import asr_stub, datagen
from delibparse.records import load_records, save_records


GRAMMAR = datagen.default_grammar()


def test_grammar_meets_size_floor():
    assert len(GRAMMAR.domains) >= 4
    assert len(GRAMMAR.intent_labels()) >= 12
    assert len(GRAMMAR.slot_labels()) >= 25
    assert len(GRAMMAR.templates(compositional=True)) >= 2


def test_generated_annotations_parse_and_round_trip():
    recs = datagen.generate_corpus(GRAMMAR, 300, 0.3, seed=1)
    assert len(recs) == 300
    for rec in recs:
        tree = anno.parse_annotation(rec.annotation)
        assert anno.serialize(tree) == rec.annotation


def test_fraction_zero_gives_flat_parses():
    recs = datagen.generate_corpus(GRAMMAR, 100, 0.0, seed=2)
    for rec in recs:
        assert anno.parse_annotation(rec.annotation).depth() <= 2


def test_compositional_fraction_tracks_request():
    recs = datagen.generate_corpus(GRAMMAR, 600, 0.4, seed=3)
    frac = np.mean([anno.parse_annotation(r.annotation).depth() > 2 for r in recs])
    assert abs(frac - 0.4) < 0.07


def test_generation_deterministic():
    a = datagen.generate_corpus(GRAMMAR, 50, 0.3, seed=4)
    b = datagen.generate_corpus(GRAMMAR, 50, 0.3, seed=4)
    assert [(r.id, r.ref_text, r.annotation) for r in a] == \
        [(r.id, r.ref_text, r.annotation) for r in b]


def test_fraction_out_of_range():
    with pytest.raises(datagen.FractionOutOfRange):
        datagen.generate_corpus(GRAMMAR, 5, 1.5, seed=0)


def test_annotation_words_match_utterance():
    for rec in datagen.generate_corpus(GRAMMAR, 60, 0.5, seed=5):
        words = [t for t in anno.lex(rec.annotation)
                 if t != anno.CLOSE_TOKEN and not t.startswith("[")]
        assert words == rec.ref_words


def test_features_zero_jitter_frame_count():
    chan = datagen.FeatureChannel(jitter=0)
    out = datagen.synth_audio_features("one two three", chan, seed=0)
    assert out.shape == (18, chan.feat_dim)


def test_features_deterministic():
    chan = datagen.natural_channel()
    a = datagen.synth_audio_features("play jazz", chan, seed=3)
    b = datagen.synth_audio_features("play jazz", chan, seed=3)
    assert (a == b).all()


def test_channels_systematically_differ():
    nat = datagen.natural_channel()
    mis = datagen.mismatched_channel()
    a = datagen.synth_audio_features("play jazz vibes", nat, seed=3)
    b = datagen.synth_audio_features("play jazz vibes", mis, seed=3)
    diff = np.linalg.norm(nat.word_vector("jazz") - mis.word_vector("jazz"))
    assert diff > 0.1
    assert a.shape != b.shape or not np.allclose(a, b)


def test_attach_hypotheses_zero_rate_flags_false():
    recs = datagen.generate_corpus(GRAMMAR, 20, 0.3, seed=6)
    out = datagen.attach_hypotheses(recs, asr_stub.AsrErrorModel(), seed=1)
    assert all(r.has_asr_error is False for r in out)
    assert all(r.hyp_text == r.ref_text for r in out)


def test_attach_hypotheses_error_population_near_target():
    recs = datagen.generate_corpus(GRAMMAR, 400, 0.3, seed=7)
    pools = datagen.build_confusion_pools(GRAMMAR, 7)
    err = asr_stub.AsrErrorModel.for_target_wer(0.20, pools)
    out = datagen.attach_hypotheses(recs, err, seed=2)
    wer = asr_stub.corpus_wer([(r.hyp_words, r.ref_words) for r in out])
    assert abs(wer - 0.20) < 0.05
    frac = np.mean([r.has_asr_error for r in out])
    expected = np.mean([1 - 0.8 ** len(r.ref_words) for r in out])
    assert abs(frac - expected) < 0.1


def test_attach_hypotheses_deterministic():
    recs = datagen.generate_corpus(GRAMMAR, 30, 0.3, seed=8)
    pools = datagen.build_confusion_pools(GRAMMAR, 8)
    err = asr_stub.AsrErrorModel.for_target_wer(0.3, pools)
    a = datagen.attach_hypotheses(recs, err, seed=3)
    b = datagen.attach_hypotheses(recs, err, seed=3)
    assert [r.hyp_text for r in a] == [r.hyp_text for r in b]


def test_split_exact_counts_disjoint_exhaustive():
    recs = datagen.generate_corpus(GRAMMAR, 100, 0.3, seed=9)
    tr, va, te = datagen.split(recs, (0.7, 0.15, 0.15), seed=0)
    assert (len(tr), len(va), len(te)) == (70, 15, 15)
    ids = [r.id for part in (tr, va, te) for r in part]
    assert sorted(ids) == sorted(r.id for r in recs)
    assert len(set(ids)) == len(ids)


def test_split_same_seed_same_split():
    recs = datagen.generate_corpus(GRAMMAR, 40, 0.3, seed=10)
    a = datagen.split(recs, (0.5, 0.25, 0.25), seed=4)
    b = datagen.split(recs, (0.5, 0.25, 0.25), seed=4)
    assert [[r.id for r in part] for part in a] == [[r.id for r in part] for part in b]


def test_split_bad_ratios():
    recs = datagen.generate_corpus(GRAMMAR, 10, 0.3, seed=11)
    with pytest.raises(datagen.BadRatios):
        datagen.split(recs, (0.5, 0.2), seed=0)


def test_confusion_pools_cover_lexicon_and_are_deterministic():
    pools = datagen.build_confusion_pools(GRAMMAR, 12)
    again = datagen.build_confusion_pools(GRAMMAR, 12)
    assert pools == again
    words = set(GRAMMAR.lexicon_words())
    assert set(pools) == words
    real_word_alts = sum(
        any(a in words for a in alts) for alts in pools.values()
    )
    assert real_word_alts > len(words) * 0.8


def test_records_jsonl_round_trip(tmp_path):
    recs = datagen.generate_corpus(GRAMMAR, 12, 0.3, seed=13)
    pools = datagen.build_confusion_pools(GRAMMAR, 13)
    err = asr_stub.AsrErrorModel.for_target_wer(0.25, pools)
    recs = datagen.attach_hypotheses(recs, err, seed=5)
    recs = datagen.attach_features(recs, datagen.natural_channel(), seed=6)
    path = tmp_path / "data.jsonl"
    save_records(path, recs)
    loaded = load_records(path)
    assert len(loaded) == len(recs)
    for a, b in zip(recs, loaded):
        assert (a.id, a.ref_text, a.hyp_text, a.annotation, a.has_asr_error) == \
            (b.id, b.ref_text, b.hyp_text, b.annotation, b.has_asr_error)
        assert (a.audio == b.audio).all()


def test_records_jsonl_bytes_deterministic(tmp_path):
    recs = datagen.generate_corpus(GRAMMAR, 8, 0.3, seed=14)
    recs = datagen.attach_features(recs, datagen.natural_channel(), seed=7)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_records(p1, recs)
    save_records(p2, recs)
    assert p1.read_bytes() == p2.read_bytes()
