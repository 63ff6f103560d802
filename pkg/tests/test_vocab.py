import pytest
from hypothesis import given, settings, strategies as st

from delibparse import vocab as V


CORPUS = [
    "play jazz vibes station",
    "play some jazz on the kitchen speaker",
    "driving directions to the stadium",
    "set an alarm for eight pm",
]
ONTOLOGY = ["[IN:PLAY_MUSIC", "[SL:PLAYLIST", "]"]


@pytest.fixture(scope="module")
def vocab():
    return V.build_vocab(CORPUS, 60, ONTOLOGY)


def test_single_merge_corpus():
    v = V.build_vocab(["aa"], 2, [])
    assert v.pieces == ("a", "aa")


def test_target_too_small():
    with pytest.raises(V.TargetTooSmall):
        V.build_vocab(["abc def"], 3, [])


def test_build_is_deterministic(vocab, tmp_path):
    again = V.build_vocab(list(CORPUS), 60, ONTOLOGY)
    assert again == vocab
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    vocab.save(p1)
    again.save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_id_layout_disjoint_contiguous(vocab):
    n_piece = len(vocab.pieces)
    piece_ids = {vocab.piece_id(p) for p in vocab.pieces}
    ont_ids = {vocab.ontology_id(t) for t in vocab.ontology}
    assert piece_ids == set(range(V.NUM_SPECIALS, V.NUM_SPECIALS + n_piece))
    assert ont_ids == set(range(V.NUM_SPECIALS + n_piece, vocab.size))
    assert not piece_ids & ont_ids


def test_output_unit_arithmetic():
    pieces = tuple(f"p{i}" for i in range(4095))
    ontology = tuple(f"[IN:T{i}" for i in range(585)) + ("]",)
    v = V.Vocabulary(pieces, ontology)
    assert v.size == 4685
    assert v.output_units == 4681


def test_every_seen_character_is_a_piece(vocab):
    chars = {c for line in CORPUS for c in line}
    assert all(vocab.piece_id(c) is not None for c in chars)


def test_encode_empty(vocab):
    assert V.encode("", vocab) == []


def test_encode_decode_round_trip_on_corpus(vocab):
    for line in CORPUS:
        assert V.decode(V.encode(line, vocab), vocab) == line


def test_unknown_character_maps_to_unk(vocab):
    ids = V.encode("zebra~", vocab)
    assert V.UNK in ids


def test_encode_annotation_minimal(vocab):
    ids = V.encode_annotation("[IN:PLAY_MUSIC ]", vocab)
    assert ids == [V.BOS, vocab.ontology_id("[IN:PLAY_MUSIC"),
                   vocab.ontology_id("]"), V.EOS]


def test_encode_annotation_round_trip(vocab):
    a = "[IN:PLAY_MUSIC play [SL:PLAYLIST jazz vibes ] ]"
    ids = V.encode_annotation(a, vocab)
    assert ids[0] == V.BOS and ids[-1] == V.EOS
    assert V.decode(ids, vocab) == a


def test_encode_annotation_unknown_ontology(vocab):
    with pytest.raises(V.UnknownOntologyToken):
        V.encode_annotation("[IN:NOPE ]", vocab)


def test_save_load_round_trip(vocab, tmp_path):
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    loaded = V.Vocabulary.load(path)
    assert loaded == vocab
    assert loaded.digest() == vocab.digest()


def test_ontology_tokens_from_annotations():
    toks = V.ontology_tokens_from_annotations(
        ["[IN:B [SL:A x ] ]", "[IN:A ]"]
    )
    assert toks == ["[IN:A", "[IN:B", "[SL:A", "]"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.text(alphabet="abcd e", min_size=1, max_size=12),
                min_size=1, max_size=8))
def test_round_trip_property(lines):
    lines = [" ".join(line.split()) for line in lines]
    lines = [line for line in lines if line]
    if not lines:
        return
    chars = {c for line in lines for c in line}
    v = V.build_vocab(lines, len(chars) + 6, [])
    for line in lines:
        assert V.decode(V.encode(line, v), v) == line
