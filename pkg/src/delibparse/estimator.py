"""Scikit-learn style estimator wrapping the full second-pass pipeline.

``DeliberationParser`` builds its vocabulary and frozen first-pass
encoders from the training records at ``fit`` time, trains the selected
modality variant, and ``predict``s annotation strings from hypothesis text
(and audio features, when the modality uses them). ``score`` is exact
match, so the estimator drops into sklearn model-selection tooling
unchanged.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import annotations as anno
from . import asr_stub, training, vocab as vocab_mod
from .model import DeliberationModel, ModelConfig
from .records import UtteranceRecord
from .seeding import derive_seed


def _validate_records(records, *, need_annotation: bool,
                      need_audio: bool, need_hyp: bool) -> list[UtteranceRecord]:
    records = list(records)
    if not records:
        raise ValueError("need at least one record")
    for rec in records:
        if not isinstance(rec, UtteranceRecord):
            raise TypeError(f"expected UtteranceRecord, got {type(rec).__name__}")
        if not rec.ref_text.strip():
            raise ValueError(f"record {rec.id}: empty reference text")
        if need_annotation:
            anno.parse_annotation(rec.annotation)
        if need_audio and rec.audio is None:
            raise ValueError(f"record {rec.id}: missing audio features")
        if need_hyp and rec.hyp_text is None:
            raise ValueError(f"record {rec.id}: missing hypothesis text")
    return records


class DeliberationParser(BaseEstimator):
    """Trainable speech-to-parse model with a fit/predict/score surface.

    Parameters mirror the model and training configuration; everything
    learned during ``fit`` lands in trailing-underscore attributes.
    """

    def __init__(self, modality="fusion", dim=32, fusion_heads=2,
                 pooling_layers=1, pooling_heads=2, decoder_layers=1,
                 decoder_heads=2, copy_heads=1, ffn_dim=64,
                 max_decode_len=64, target_pieces=160, tier=1,
                 strategy="union", epochs=30, batch_size=32, lr=2e-3,
                 label_smoothing=0.1, patience=5, stop_em=None,
                 time_mask_width=4, feature_mask_width=4,
                 validation_fraction=0.1, seed=0):
        self.modality = modality
        self.dim = dim
        self.fusion_heads = fusion_heads
        self.pooling_layers = pooling_layers
        self.pooling_heads = pooling_heads
        self.decoder_layers = decoder_layers
        self.decoder_heads = decoder_heads
        self.copy_heads = copy_heads
        self.ffn_dim = ffn_dim
        self.max_decode_len = max_decode_len
        self.target_pieces = target_pieces
        self.tier = tier
        self.strategy = strategy
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.label_smoothing = label_smoothing
        self.patience = patience
        self.stop_em = stop_em
        self.time_mask_width = time_mask_width
        self.feature_mask_width = feature_mask_width
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _needs_audio(self) -> bool:
        return self.modality in ("fusion", "audio")

    def fit(self, records, validation_records=None):
        records = _validate_records(
            records, need_annotation=True,
            need_audio=self._needs_audio(), need_hyp=True,
        )
        corpus = sorted({r.ref_text for r in records})
        ontology = vocab_mod.ontology_tokens_from_annotations(
            r.annotation for r in records
        )
        self.vocab_ = vocab_mod.build_vocab(corpus, self.target_pieces, ontology)

        text_enc = asr_stub.FrozenTextEncoder(
            self.vocab_.size, self.dim, derive_seed(self.seed, "stub-text")
        )
        audio_enc = None
        if self._needs_audio():
            feat_dim = records[0].audio.shape[1]
            audio_enc = asr_stub.make_audio_encoder(
                self.tier, feat_dim, self.dim, derive_seed(self.seed, "stub-audio")
            )
        self.config_ = ModelConfig(
            modality=self.modality, dim=self.dim,
            fusion_heads=self.fusion_heads, pooling_layers=self.pooling_layers,
            pooling_heads=self.pooling_heads, decoder_layers=self.decoder_layers,
            decoder_heads=self.decoder_heads, copy_heads=self.copy_heads,
            ffn_dim=self.ffn_dim, vocab_size=self.vocab_.size,
            text_source_dim=self.dim, audio_source_dim=self.dim,
            max_decode_len=self.max_decode_len,
        )
        self.model_ = DeliberationModel(
            self.config_, self.vocab_, text_enc, audio_enc,
            seed=derive_seed(self.seed, "model"),
        )

        if validation_records is not None:
            train_recs = records
            valid_recs = list(validation_records)
        else:
            n_valid = max(1, int(len(records) * self.validation_fraction))
            order = np.random.default_rng(derive_seed(self.seed, "valid-split"))
            idx = order.permutation(len(records))
            valid_recs = [records[i] for i in idx[:n_valid]]
            train_recs = [records[i] for i in idx[n_valid:]]

        cfg = training.TrainConfig(
            strategy=self.strategy, epochs=self.epochs,
            batch_size=self.batch_size, lr=self.lr,
            label_smoothing=self.label_smoothing,
            augment=training.SpecAugmentPolicy(
                time_mask_width=self.time_mask_width,
                feature_mask_width=self.feature_mask_width,
            ),
            seed=derive_seed(self.seed, "train"),
            patience=self.patience, stop_em=self.stop_em,
        )
        result = training.train(self.model_, train_recs, valid_recs, cfg)
        self.history_ = result.history
        self.best_valid_em_ = result.best_em
        self.n_iter_ = len(result.history)
        return self

    def predict(self, records) -> list[str]:
        """Annotation strings decoded from each record's hypothesis."""
        check_is_fitted(self, "model_")
        records = _validate_records(
            records, need_annotation=False,
            need_audio=self._needs_audio(), need_hyp=True,
        )
        out = []
        for at in range(0, len(records), 256):
            chunk = records[at : at + 256]
            for ids in self.model_.greedy_decode_batch(chunk, use_hyp=True):
                out.append(vocab_mod.decode(ids, self.vocab_))
        return out

    def score(self, records, y=None) -> float:
        """Exact match of predictions against each record's annotation."""
        check_is_fitted(self, "model_")
        records = list(records)
        preds = self.predict(records)
        return anno.em_score(
            [(p, r.annotation) for p, r in zip(preds, records)]
        )
