"""Frozen first-pass recognizer stand-in.

Provides the two embedding streams the second pass consumes (token-level
text embeddings from a recurrent mixer, strided convolutional audio
embeddings), a seeded word-level error channel for manufacturing
hypotheses at a target error rate, and word error rate itself. Encoder
parameters are fixed at seeded initialization and never see an optimizer;
their outputs enter the trainable model as constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .seeding import rng_for


class IdOutOfRange(IndexError):
    pass


class EmptyAudio(ValueError):
    pass


class EmptyReference(ValueError):
    pass


class FrozenTextEncoder:
    """Token embedding table plus one unidirectional recurrent mixing layer.

    The returned sequence is the recurrent layer's hidden states (one per
    token), i.e. a pre-projection representation, so downstream layers see
    order-sensitive features.
    """

    def __init__(self, vocab_size: int, dim: int, seed: int):
        self.vocab_size = vocab_size
        self.dim = dim
        self.seed = seed
        rng = rng_for(seed, "text-stub")
        s = 1.0 / math.sqrt(dim)
        self.emb = rng.normal(0.0, 1.0, size=(vocab_size, dim))
        self.w_in = rng.normal(0.0, s, size=(dim, dim))
        self.w_rec = rng.normal(0.0, s, size=(dim, dim))
        self.bias = np.zeros(dim)

    def embed(self, token_ids) -> np.ndarray:
        """(T,) int ids -> (T, dim) embeddings."""
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise IdOutOfRange(f"token id outside [0, {self.vocab_size})")
        return self.embed_batch(ids[None])[0]

    def embed_batch(self, token_ids) -> np.ndarray:
        """(B, T) padded ids -> (B, T, dim). Trailing pads are harmless
        because the recurrence only looks left; mask them downstream."""
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise IdOutOfRange(f"token id outside [0, {self.vocab_size})")
        b, t = ids.shape
        x = self.emb[ids]
        out = np.empty((b, t, self.dim))
        h = np.zeros((b, self.dim))
        for step in range(t):
            h = np.tanh(x[:, step] @ self.w_in + h @ self.w_rec + self.bias)
            out[:, step] = h
        return out

    def param_arrays(self) -> dict:
        return {"emb": self.emb, "w_in": self.w_in, "w_rec": self.w_rec,
                "bias": self.bias}

    def param_bytes(self) -> bytes:
        return b"".join(a.tobytes() for a in self.param_arrays().values())


class FrozenAudioEncoder:
    """Two stride-2 width-3 convolutions: (frames, F) -> (ceil(frames/4), dim).

    Positions past each sample's valid length are zeroed after every layer
    so batched and per-sample evaluation agree exactly.
    """

    def __init__(self, feat_dim: int, dim: int, hidden: int, seed: int):
        self.feat_dim = feat_dim
        self.dim = dim
        self.hidden = hidden
        self.seed = seed
        rng = rng_for(seed, "audio-stub")
        self.w1 = rng.normal(0.0, 1.0 / math.sqrt(3 * feat_dim), size=(3, feat_dim, hidden))
        self.b1 = np.zeros(hidden)
        self.w2 = rng.normal(0.0, 1.0 / math.sqrt(3 * hidden), size=(3, hidden, dim))
        self.b2 = np.zeros(dim)

    @staticmethod
    def out_len(frames: int) -> int:
        return math.ceil(frames / 4)

    def _conv(self, x, lengths, w, b):
        # x: (B, L, C_in); stride-2 same conv -> (B, ceil(L/2), C_out)
        bsz, l, _ = x.shape
        out_l = math.ceil(l / 2)
        pad = np.pad(x, ((0, 0), (1, 2), (0, 0)))
        idx = np.arange(out_l)[:, None] * 2 + np.arange(3)[None, :]
        windows = pad[:, idx]  # (B, out_l, 3, C_in)
        out = np.tanh(np.einsum("blkc,kcd->bld", windows, w) + b)
        new_lengths = np.ceil(np.asarray(lengths) / 2).astype(np.int64)
        cols = np.arange(out_l)
        out *= (cols[None, :] < new_lengths[:, None])[:, :, None]
        return out, new_lengths

    def embed(self, frames) -> np.ndarray:
        """(frames, F) -> (ceil(frames/4), dim)."""
        arr = np.asarray(frames, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise EmptyAudio(f"need (frames, {self.feat_dim}), got {arr.shape}")
        out, lengths = self.embed_batch(arr[None], [arr.shape[0]])
        return out[0, : lengths[0]]

    def embed_batch(self, frames, lengths):
        """(B, L, F) zero-padded -> ((B, ceil(L/4), dim), out_lengths)."""
        x = np.asarray(frames, dtype=np.float64)
        if np.min(lengths) < 1:
            raise EmptyAudio("every sample needs at least one frame")
        h, lengths = self._conv(x, lengths, self.w1, self.b1)
        out, lengths = self._conv(h, lengths, self.w2, self.b2)
        return out, lengths

    def param_arrays(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def param_bytes(self) -> bytes:
        return b"".join(a.tobytes() for a in self.param_arrays().values())


#: hidden conv widths for the two stub quality tiers
TIER_HIDDEN = {1: 32, 2: 8}


def make_audio_encoder(tier: int, feat_dim: int, dim: int, seed: int) -> FrozenAudioEncoder:
    return FrozenAudioEncoder(feat_dim, dim, TIER_HIDDEN[tier], seed)


@dataclass
class AsrErrorModel:
    """Word-level noise channel: substitutions, deletions, insertions."""

    sub_rate: float = 0.0
    del_rate: float = 0.0
    ins_rate: float = 0.0
    pools: dict = field(default_factory=dict)
    fillers: tuple = ("uh", "um", "the", "a", "to")

    def __post_init__(self):
        rates = (self.sub_rate, self.del_rate, self.ins_rate)
        if any(r < 0 or r > 1 for r in rates) or self.sub_rate + self.del_rate > 1:
            raise ValueError(f"bad rates {rates}")

    @classmethod
    def for_target_wer(cls, wer: float, pools: dict | None = None) -> "AsrErrorModel":
        """Split a target corpus WER into substitution-heavy rates.

        Substitutions dominate so hypothesis/audio alignment mostly
        survives, as with a real recognizer's confusions.
        """
        return cls(
            sub_rate=0.75 * wer,
            del_rate=0.125 * wer,
            ins_rate=0.125 * wer,
            pools=pools or {},
        )


_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


def perturb_word(word: str, rng: np.random.Generator) -> str:
    """A plausible misrecognition by character-level editing."""
    for _ in range(8):
        op = rng.integers(0, 4)
        i = int(rng.integers(0, len(word)))
        if op == 0 and len(word) > 1:  # drop a character
            cand = word[:i] + word[i + 1 :]
        elif op == 1:  # double a character
            cand = word[:i] + word[i] + word[i:]
        elif op == 2 and len(word) > 1 and i < len(word) - 1:  # swap neighbors
            cand = word[:i] + word[i + 1] + word[i] + word[i + 2 :]
        else:  # replace a character
            cand = word[:i] + _ALPHABET[int(rng.integers(0, 26))] + word[i + 1 :]
        if cand != word:
            return cand
    return word + _ALPHABET[int(rng.integers(0, 26))]


def corrupt(ref_words: list[str], model: AsrErrorModel, seed: int) -> list[str]:
    """Apply the noise channel to a reference; deterministic per seed.

    Zero rates reproduce the reference exactly. The result is never empty
    (a filler word stands in if everything was deleted).
    """
    if not ref_words:
        raise EmptyReference("reference words must be nonempty")
    rng = rng_for(seed, "corrupt")
    out: list[str] = []
    for word in ref_words:
        if rng.random() < model.ins_rate:
            out.append(str(rng.choice(model.fillers)))
        u = rng.random()
        if u < model.sub_rate:
            pool = model.pools.get(word)
            if pool:
                out.extend(str(rng.choice(pool)).split())
            else:
                out.append(perturb_word(word, rng))
        elif u < model.sub_rate + model.del_rate:
            continue
        else:
            out.append(word)
    if rng.random() < model.ins_rate:
        out.append(str(rng.choice(model.fillers)))
    if not out:
        out.append(str(rng.choice(model.fillers)))
    return out


def wer(hyp: list[str], ref: list[str]) -> float:
    """Word-level Levenshtein distance divided by reference length."""
    if not ref:
        raise EmptyReference("reference must be nonempty")
    prev = np.arange(len(hyp) + 1)
    for i, r in enumerate(ref, start=1):
        cur = np.empty_like(prev)
        cur[0] = i
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (r != h),
            )
        prev = cur
    return float(prev[-1]) / len(ref)


def corpus_wer(pairs) -> float:
    """Total edit distance over total reference length, across utterances."""
    edits = 0
    total = 0
    for hyp, ref in pairs:
        if not ref:
            raise EmptyReference("reference must be nonempty")
        edits += wer(hyp, ref) * len(ref)
        total += len(ref)
    return edits / total


def save_pools(path, pools: dict) -> None:
    """``word<TAB>alt1,alt2,...`` per line, UTF-8."""
    with open(path, "w", encoding="utf-8") as f:
        for word in sorted(pools):
            f.write(f"{word}\t{','.join(pools[word])}\n")


def load_pools(path) -> dict:
    pools = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            word, _, alts = line.partition("\t")
            pools[word] = [a for a in alts.split(",") if a]
    return pools
