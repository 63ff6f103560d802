"""Training pairs, feature masking, and the optimization loop.

Text strategies: ``hyp`` trains on the first-pass hypothesis, ``ref`` on
the reference transcript, and ``union`` on one reference pair per record
plus an extra hypothesis pair for every record that actually carries an
error, so a dataset with E errorful records yields N + E pairs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import annotations as anno
from . import vocab as vocab_mod
from .autograd import Tensor
from .seeding import derive_seed, rng_for

STRATEGIES = ("hyp", "ref", "union")


class NonFiniteLoss(RuntimeError):
    pass


@dataclass(frozen=True)
class SpecAugmentPolicy:
    """Band-masking policy over raw (frames, channels) features."""

    time_masks: int = 1
    time_mask_width: int = 10
    feature_masks: int = 1
    feature_mask_width: int = 4

    @property
    def is_identity(self) -> bool:
        return (self.time_masks * self.time_mask_width == 0
                and self.feature_masks * self.feature_mask_width == 0)


@dataclass
class TrainConfig:
    strategy: str = "union"
    epochs: int = 30
    batch_size: int = 32
    lr: float = 3e-4
    label_smoothing: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: SpecAugmentPolicy = field(default_factory=SpecAugmentPolicy)
    seed: int = 0
    patience: int = 5
    stop_em: float | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")


def build_pairs(records, strategy: str) -> list[tuple]:
    """(record, use_hypothesis_text) pairs for a strategy."""
    if strategy == "hyp":
        return [(r, True) for r in records]
    if strategy == "ref":
        return [(r, False) for r in records]
    if strategy == "union":
        pairs = [(r, False) for r in records]
        pairs.extend((r, True) for r in records if r.has_asr_error)
        return pairs
    raise ValueError(f"unknown strategy {strategy!r}")


def spec_augment(features: np.ndarray, policy: SpecAugmentPolicy, seed: int) -> np.ndarray:
    """Zero out sampled time-frame bands and feature-channel bands.

    Band widths are drawn uniformly from [0, max_width] and clipped to the
    actual dimension; a zero-width policy returns the input unchanged.
    """
    if policy.is_identity:
        return features
    rng = rng_for(seed, "specaug")
    out = features.copy()
    frames, channels = out.shape
    for _ in range(policy.time_masks):
        w = int(rng.integers(0, policy.time_mask_width + 1))
        w = min(w, frames)
        start = int(rng.integers(0, frames - w + 1))
        out[start : start + w, :] = 0.0
    for _ in range(policy.feature_masks):
        w = int(rng.integers(0, policy.feature_mask_width + 1))
        w = min(w, channels)
        start = int(rng.integers(0, channels - w + 1))
        out[:, start : start + w] = 0.0
    return out


class Adam:
    """Per-parameter adaptive moments; state exists only for trainables."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = {k: p for k, p in params.items() if p.requires_grad}
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    valid_em: float
    wall_s: float


@dataclass
class TrainResult:
    history: list[EpochStats]
    best_em: float
    best_epoch: int
    final_loss: float


def validation_em(model, records) -> float:
    """Exact match of greedy decodes against targets, hypothesis input."""
    if not records:
        return 0.0
    hits = 0
    bs = 256
    for at in range(0, len(records), bs):
        chunk = records[at : at + bs]
        for rec, ids in zip(chunk, model.greedy_decode_batch(chunk, use_hyp=True)):
            hyp = vocab_mod.decode(ids, model.vocab)
            hits += anno.exact_match(hyp, rec.annotation)
    return hits / len(records)


def train(model, train_records, valid_records, cfg: TrainConfig,
          log_path=None) -> TrainResult:
    """Optimize the model; the frozen first-pass encoders never update.

    Keeps the parameters of the best-validation epoch; with identical
    seeds and inputs two runs produce identical parameter bytes.
    """
    if not train_records:
        raise ValueError("no training records")
    pairs = build_pairs(train_records, cfg.strategy)
    opt = Adam(model.trainable_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    best_em = -1.0
    best_epoch = -1
    best_state: dict[str, np.ndarray] = {}
    history: list[EpochStats] = []
    final_loss = float("nan")
    log_f = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            order = rng_for(cfg.seed, "shuffle", epoch).permutation(len(pairs))
            losses = []
            for bi, at in enumerate(range(0, len(order), cfg.batch_size)):
                chunk = [pairs[i] for i in order[at : at + cfg.batch_size]]
                recs = [c[0] for c in chunk]
                flags = [c[1] for c in chunk]
                if model.config.uses_audio and not cfg.augment.is_identity:
                    def augment(feats, k, _e=epoch, _b=bi):
                        return spec_augment(
                            feats, cfg.augment, derive_seed(cfg.seed, "aug", _e, _b, k)
                        )
                else:
                    augment = None
                loss = model.forward_teacher_forced(
                    recs, flags, cfg.label_smoothing, augment
                )
                val = float(loss.data)
                if not np.isfinite(val):
                    raise NonFiniteLoss(
                        f"non-finite loss at epoch {epoch} batch {bi} "
                        f"(lr={cfg.lr}, batch_size={cfg.batch_size})"
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(val)
            final_loss = float(np.mean(losses))
            em = validation_em(model, valid_records)
            stats = EpochStats(epoch, final_loss, em, time.perf_counter() - t0)
            history.append(stats)
            if log_f:
                log_f.write(
                    f"epoch={epoch} train_loss={final_loss:.6f} "
                    f"valid_em={em:.4f} wall_s={stats.wall_s:.2f}\n"
                )
                log_f.flush()
            if em > best_em:
                best_em = em
                best_epoch = epoch
                best_state = {k: p.data.copy() for k, p in model.params.items()}
            if cfg.stop_em is not None and em >= cfg.stop_em:
                break
            if epoch - best_epoch >= cfg.patience:
                break
    finally:
        if log_f:
            log_f.close()
    if best_state:
        model.load_state(best_state)
    return TrainResult(history, best_em, best_epoch, final_loss)
