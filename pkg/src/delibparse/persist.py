"""Model directory layout: checkpoint + vocabulary + metadata.

A model directory holds ``model.ckpt`` (binary tensor container),
``vocab.txt`` (one token per line), and ``meta.json`` (model config, stub
seeds/tier, vocabulary digest), which is everything needed to rebuild the
model bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

from . import asr_stub, checkpoint
from .evaluate import VocabMismatch
from .model import DeliberationModel, ModelConfig
from .vocab import Vocabulary

META_FORMAT = 1


def save_model(out_dir, model: DeliberationModel, tier: int,
               feat_dim: int, stub_text_seed: int, stub_audio_seed: int,
               extra: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save_checkpoint(out / "model.ckpt", model.state_arrays())
    model.vocab.save(out / "vocab.txt")
    meta = {
        "format": META_FORMAT,
        "model": asdict(model.config),
        "tier": tier,
        "feat_dim": feat_dim,
        "stub_text_seed": stub_text_seed,
        "stub_audio_seed": stub_audio_seed,
        "vocab_digest": model.vocab.digest(),
    }
    meta.update(extra or {})
    with open(out / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(model_dir) -> tuple[DeliberationModel, dict]:
    d = Path(model_dir)
    with open(d / "meta.json", encoding="utf-8") as f:
        meta = json.load(f)
    vocab = Vocabulary.load(d / "vocab.txt")
    if vocab.digest() != meta["vocab_digest"]:
        raise VocabMismatch(
            f"{d}: vocab.txt digest does not match meta.json"
        )
    config = ModelConfig(**meta["model"])
    text_enc = None
    audio_enc = None
    if config.uses_text:
        text_enc = asr_stub.FrozenTextEncoder(
            vocab.size, config.text_source_dim, meta["stub_text_seed"]
        )
    if config.uses_audio:
        audio_enc = asr_stub.make_audio_encoder(
            meta["tier"], meta["feat_dim"], config.audio_source_dim,
            meta["stub_audio_seed"],
        )
    model = DeliberationModel(config, vocab, text_enc, audio_enc, seed=0)
    model.load_state(checkpoint.load_checkpoint(d / "model.ckpt"))
    return model, meta
