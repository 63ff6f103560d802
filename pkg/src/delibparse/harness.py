"""Small ready-made systems for gradient checks, demos, and tests."""

from __future__ import annotations

import numpy as np

from . import asr_stub, datagen, gradcheck as gc, vocab as vocab_mod
from .model import DeliberationModel, ModelConfig, toy_config
from .seeding import derive_seed


def make_demo_records(n: int = 24, seed: int = 0, wer: float = 0.25,
                      feat_dim: int = 16, channel: str = "natural"):
    """A tiny corpus with hypotheses and audio features attached."""
    grammar = datagen.default_grammar()
    records = datagen.generate_corpus(grammar, n, 0.3, seed)
    pools = datagen.build_confusion_pools(grammar, seed)
    err = asr_stub.AsrErrorModel.for_target_wer(wer, pools)
    records = datagen.attach_hypotheses(records, err, derive_seed(seed, "asr"))
    chan = datagen.CHANNELS[channel](feat_dim)
    records = datagen.attach_features(records, chan, derive_seed(seed, "feat"))
    return grammar, records


def build_demo_system(modality: str = "fusion", n_records: int = 24,
                      seed: int = 0, config: ModelConfig | None = None,
                      tier: int = 1, feat_dim: int = 16):
    """(model, records) over a toy-size config and demo corpus."""
    grammar, records = make_demo_records(n_records, seed, feat_dim=feat_dim)
    vocab = vocab_mod.build_vocab(
        sorted({r.ref_text for r in records}),
        max(64, len({c for r in records for c in r.ref_text}) + 16),
        grammar.ontology_tokens(),
    )
    cfg = config or toy_config(modality)
    cfg = cfg.with_vocab(vocab.size)
    text_enc = asr_stub.FrozenTextEncoder(
        vocab.size, cfg.text_source_dim, derive_seed(seed, "stub-text", tier)
    )
    audio_enc = asr_stub.make_audio_encoder(
        tier, feat_dim, cfg.audio_source_dim, derive_seed(seed, "stub-audio", tier)
    )
    model = DeliberationModel(cfg, vocab, text_enc, audio_enc,
                              seed=derive_seed(seed, "model"))
    return model, records


def full_loss_gradcheck(modality: str = "fusion", seed: int = 0,
                        batch: int = 4, h: float = 1e-5,
                        samples_per_tensor: int = 3) -> float:
    """Gradcheck the complete teacher-forced loss of a toy model.

    Returns the max relative error over sampled parameter coordinates;
    every trainable tensor is probed, frozen stub weights have none.
    """
    model, records = build_demo_system(modality, n_records=batch, seed=seed)
    recs = records[:batch]

    def loss():
        return model.forward_teacher_forced(recs, use_hyp=True,
                                            label_smoothing=0.1)

    rng = np.random.default_rng(derive_seed(seed, "gradcheck"))
    return gc.gradcheck(loss, model.trainable_params(), h=h,
                        samples_per_tensor=samples_per_tensor, rng=rng)
