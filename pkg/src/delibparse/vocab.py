"""Deterministic subword vocabulary joined with ontology tokens.

The id space is laid out contiguously: the four specials (PAD=0, BOS=1,
EOS=2, UNK=3), then text pieces, then ontology tokens. Text pieces are built
by byte-pair merges over whitespace-delimited words with lexicographic
tie-breaking, so the same corpus always yields the same vocabulary. The
single space character is an ordinary text piece (merges never cross it),
which is what lets ``decode(encode(x)) == x`` hold without extra markers.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field

from . import annotations


class VocabError(ValueError):
    pass


class TargetTooSmall(VocabError):
    pass


class UnknownOntologyToken(VocabError):
    pass


PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
NUM_SPECIALS = len(SPECIALS)


@dataclass(frozen=True)
class Vocabulary:
    """Immutable joint inventory of text pieces and ontology tokens."""

    pieces: tuple[str, ...]
    ontology: tuple[str, ...]
    _piece_ids: dict = field(default_factory=dict, repr=False, compare=False)
    _ontology_ids: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.pieces)) != len(self.pieces):
            raise VocabError("duplicate text pieces")
        if len(set(self.ontology)) != len(self.ontology):
            raise VocabError("duplicate ontology tokens")
        for i, p in enumerate(self.pieces):
            self._piece_ids[p] = NUM_SPECIALS + i
        off = NUM_SPECIALS + len(self.pieces)
        for i, t in enumerate(self.ontology):
            self._ontology_ids[t] = off + i

    @property
    def size(self) -> int:
        return NUM_SPECIALS + len(self.pieces) + len(self.ontology)

    @property
    def output_units(self) -> int:
        """Decoder output inventory excluding the specials."""
        return len(self.pieces) + len(self.ontology)

    def piece_id(self, piece: str) -> int | None:
        return self._piece_ids.get(piece)

    def ontology_id(self, token: str) -> int:
        try:
            return self._ontology_ids[token]
        except KeyError:
            raise UnknownOntologyToken(token) from None

    def is_ontology_id(self, idx: int) -> bool:
        return idx >= NUM_SPECIALS + len(self.pieces)

    def surface(self, idx: int) -> str:
        if idx < NUM_SPECIALS:
            return SPECIALS[idx]
        idx -= NUM_SPECIALS
        if idx < len(self.pieces):
            return self.pieces[idx]
        return self.ontology[idx - len(self.pieces)]

    def save(self, path) -> None:
        """One token per line; the line number is the id."""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for s in SPECIALS:
                f.write(s + "\n")
            for p in self.pieces:
                f.write(p + "\n")
            for t in self.ontology:
                f.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8", newline="") as f:
            lines = [line.rstrip("\r\n") for line in f]
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:NUM_SPECIALS]) != SPECIALS:
            raise VocabError(f"{path}: missing special tokens header")
        rest = lines[NUM_SPECIALS:]
        split = len(rest)
        for i, tok in enumerate(rest):
            if tok == annotations.CLOSE_TOKEN or tok.startswith("["):
                split = i
                break
        return cls(tuple(rest[:split]), tuple(rest[split:]))

    def digest(self) -> str:
        h = hashlib.sha256()
        for tok in SPECIALS + self.pieces + self.ontology:
            h.update(tok.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


def build_vocab(
    corpus: list[str], target_text_pieces: int, ontology_tokens: list[str]
) -> Vocabulary:
    """Build the text-piece inventory and append ontology tokens verbatim.

    Pieces start as every character seen in the corpus (including the space
    character when any sentence has one), then grow by the most frequent
    word-internal pair merge, ties broken by lexicographically smallest
    (left, right) pair, until ``target_text_pieces`` is reached or no merge
    is left.
    """
    if not corpus:
        raise VocabError("empty corpus")
    chars = sorted({c for line in corpus for c in line})
    if target_text_pieces < len(chars):
        raise TargetTooSmall(
            f"target {target_text_pieces} < {len(chars)} distinct characters"
        )
    word_freq = Counter()
    for line in corpus:
        word_freq.update(line.split())

    pieces: list[str] = list(chars)
    piece_set = set(pieces)
    segs = {w: list(w) for w in word_freq}

    while len(pieces) < target_text_pieces:
        pair_counts: Counter = Counter()
        for w, seg in segs.items():
            f = word_freq[w]
            for a, b in zip(seg, seg[1:]):
                pair_counts[(a, b)] += f
        candidates = [p for p in pair_counts if p[0] + p[1] not in piece_set]
        if not candidates:
            break
        best = min(candidates, key=lambda p: (-pair_counts[p], p))
        merged = best[0] + best[1]
        for w, seg in segs.items():
            i = 0
            while i < len(seg) - 1:
                if seg[i] == best[0] and seg[i + 1] == best[1]:
                    seg[i : i + 2] = [merged]
                else:
                    i += 1
        pieces.append(merged)
        piece_set.add(merged)

    return Vocabulary(tuple(pieces), tuple(ontology_tokens))


def _encode_word(word: str, v: Vocabulary) -> list[int]:
    ids = []
    i = 0
    while i < len(word):
        match = None
        # greedy longest match against the piece inventory
        for j in range(len(word), i, -1):
            pid = v.piece_id(word[i:j])
            if pid is not None:
                match = (pid, j)
                break
        if match is None:
            ids.append(UNK)
            i += 1
        else:
            ids.append(match[0])
            i = match[1]
    return ids


def encode(text: str, v: Vocabulary) -> list[int]:
    """Greedy longest-match encoding; unknown characters map to UNK.

    Input is treated as single-space-separated words; adjacent words are
    joined by the space piece (UNK if the corpus never contained a space).
    """
    words = text.split()
    if not words:
        return []
    space = v.piece_id(" ")
    sep = [space] if space is not None else [UNK]
    ids: list[int] = []
    for k, w in enumerate(words):
        if k:
            ids.extend(sep)
        ids.extend(_encode_word(w, v))
    return ids


def decode(ids, v: Vocabulary) -> str:
    """Inverse of encode/encode_annotation up to whitespace collapsing."""
    out = []
    for idx in ids:
        idx = int(idx)
        if idx in (PAD, BOS, EOS):
            continue
        s = v.surface(idx)
        if v.is_ontology_id(idx):
            out.append(" " + s + " ")
        else:
            out.append(s)
    return " ".join("".join(out).split())


def encode_annotation(a: str, v: Vocabulary) -> list[int]:
    """Encode an annotation as decoder target ids, BOS/EOS included.

    Ontology tokens map to their dedicated ids; runs of adjacent text words
    are encoded like plain text (space pieces between words).
    """
    tokens = annotations.lex(a)
    ids = [BOS]
    prev_was_word = False
    space = v.piece_id(" ")
    for tok in tokens:
        if tok == annotations.CLOSE_TOKEN or tok.startswith("["):
            ids.append(v.ontology_id(tok))
            prev_was_word = False
        else:
            if prev_was_word:
                ids.append(space if space is not None else UNK)
            ids.extend(_encode_word(tok, v))
            prev_was_word = True
    ids.append(EOS)
    return ids


def ontology_tokens_from_annotations(annos) -> list[str]:
    """Collect the ontology token inventory used by a corpus, sorted."""
    opens = set()
    for a in annos:
        for tok in annotations.lex(a):
            if tok != annotations.CLOSE_TOKEN and tok.startswith("["):
                opens.add(tok)
    return sorted(opens) + [annotations.CLOSE_TOKEN]
