"""Second-pass parser: fusion, pooling, decoder, pointer-generator head.

Three modality variants share one code path:

* ``fusion``   - text embeddings attend over audio embeddings, the stack is
  projected back down, pooled, and decoded with a copy head over the
  first-pass hypothesis tokens.
* ``text``     - the fused sequence is replaced by the text embeddings; no
  fusion module, copy head retained.
* ``audio``    - the fused sequence is replaced by the audio embeddings;
  neither the fusion module nor the copy head applies, the output is the
  generation distribution alone.

The frozen first-pass encoders are owned by the model but contribute no
trainable parameters; their outputs enter the graph as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from . import layers, vocab as vocab_mod
from .autograd import Tensor
from .seeding import rng_for
from .vocab import BOS, EOS, PAD, Vocabulary

MODALITIES = ("fusion", "text", "audio")

#: copy gate bias at init; keeps early output distributions near the
#: generation head so untrained models are close to uniform
GATE_BIAS_INIT = -2.0


class LengthMismatch(ValueError):
    pass


class EmptyBatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    modality: str = "fusion"
    dim: int = 32
    fusion_heads: int = 2
    pooling_layers: int = 1
    pooling_heads: int = 2
    decoder_layers: int = 1
    decoder_heads: int = 2
    copy_heads: int = 1
    ffn_dim: int = 64
    vocab_size: int = 0
    text_source_dim: int = 32
    audio_source_dim: int = 32
    max_decode_len: int = 64

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")

    @property
    def uses_text(self) -> bool:
        return self.modality in ("fusion", "text")

    @property
    def uses_audio(self) -> bool:
        return self.modality in ("fusion", "audio")

    @property
    def has_copy_head(self) -> bool:
        return self.modality in ("fusion", "text")

    def with_vocab(self, size: int) -> "ModelConfig":
        return replace(self, vocab_size=size)


def toy_config(modality: str = "fusion", vocab_size: int = 64) -> ModelConfig:
    """Small everything; source dims differ from the model dim so the
    input projections are exercised."""
    return ModelConfig(
        modality=modality,
        dim=16,
        fusion_heads=2,
        pooling_layers=1,
        pooling_heads=2,
        decoder_layers=1,
        decoder_heads=2,
        copy_heads=1,
        ffn_dim=32,
        vocab_size=vocab_size,
        text_source_dim=24,
        audio_source_dim=24,
        max_decode_len=32,
    )


def paper_scale_config(modality: str = "fusion") -> ModelConfig:
    """The published operating point: ~5M trainable parameters against a
    4095-piece + 586-ontology-token output inventory, with the pooling
    width raised for the single-modality variants."""
    dim = {"fusion": 224, "text": 240, "audio": 256}[modality]
    return ModelConfig(
        modality=modality,
        dim=dim,
        fusion_heads=8,
        pooling_layers=2,
        pooling_heads=8,
        decoder_layers=1,
        decoder_heads=2,
        copy_heads=1,
        ffn_dim=4 * dim,
        vocab_size=vocab_mod.NUM_SPECIALS + 4095 + 586,
        text_source_dim=256,
        audio_source_dim=256,
        max_decode_len=128,
    )


PRESETS = {"toy": toy_config, "paper-scale": paper_scale_config}


def build_params(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Trainable parameter dict; creation order is fixed for determinism."""
    if config.vocab_size <= 0:
        raise ValueError("config.vocab_size must be set before building")
    rng = rng_for(seed, "model-init")
    p: dict[str, Tensor] = {}
    d = config.dim
    if config.uses_text and config.text_source_dim != d:
        layers.init_linear(p, "proj_text", config.text_source_dim, d, rng)
    if config.uses_audio and config.audio_source_dim != d:
        layers.init_linear(p, "proj_audio", config.audio_source_dim, d, rng)
    if config.modality == "fusion":
        layers.init_mha(p, "fusion.attn", d, rng)
        layers.init_linear(p, "fusion.out", 2 * d, d, rng)
    for i in range(config.pooling_layers):
        layers.init_encoder_layer(p, f"pool.{i}", d, config.ffn_dim, rng)
    layers.init_embedding(p, "dec.emb", config.vocab_size, d, rng)
    for i in range(config.decoder_layers):
        layers.init_decoder_layer(p, f"dec.{i}", d, config.ffn_dim, rng)
    layers.init_layer_norm(p, "dec.ln", d)
    layers.init_linear(p, "gen", d, config.vocab_size, rng)
    if config.has_copy_head:
        layers.init_mha(p, "copy.attn", d, rng)
        layers.init_linear(p, "copy.gate", 2 * d, 1, rng)
        p["copy.gate.b"].data[:] = GATE_BIAS_INIT
    return p


def param_count(config: ModelConfig) -> int:
    """Exact count of trainable scalars for a configuration."""
    return sum(t.size for t in build_params(config, seed=0).values())


@dataclass
class DecoderStepOutput:
    """Eq.-level view of one decoding step (numpy, detached)."""

    g: np.ndarray
    c: np.ndarray | None
    omega: np.ndarray | None
    gamma: np.ndarray | None
    p_copy: float | None
    o: np.ndarray


@dataclass
class Batch:
    size: int
    text_ids: np.ndarray | None = None
    text_lengths: np.ndarray | None = None
    audio: np.ndarray | None = None
    audio_lengths: np.ndarray | None = None
    target_in: np.ndarray | None = None
    target_out: np.ndarray | None = None
    target_mask: np.ndarray | None = None


def _pad_ids(seqs: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), max(1, lengths.max(initial=0))), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


class DeliberationModel:
    """Trainable second pass over frozen first-pass embeddings."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary,
                 text_encoder=None, audio_encoder=None, seed: int = 0):
        if config.vocab_size == 0:
            config = config.with_vocab(vocab.size)
        if config.vocab_size != vocab.size:
            raise ValueError(
                f"config.vocab_size {config.vocab_size} != vocabulary size {vocab.size}"
            )
        if config.uses_text:
            if text_encoder is None:
                raise ValueError(f"{config.modality} modality needs a text encoder")
            if text_encoder.dim != config.text_source_dim:
                raise ValueError("text encoder dim != config.text_source_dim")
        if config.uses_audio:
            if audio_encoder is None:
                raise ValueError(f"{config.modality} modality needs an audio encoder")
            if audio_encoder.dim != config.audio_source_dim:
                raise ValueError("audio encoder dim != config.audio_source_dim")
        self.config = config
        self.vocab = vocab
        self.text_encoder = text_encoder
        self.audio_encoder = audio_encoder
        self.params = build_params(config, seed)

    # -- bookkeeping ----------------------------------------------------

    def trainable_params(self) -> dict[str, Tensor]:
        return self.params

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def load_state(self, arrays: dict) -> None:
        missing = set(self.params) ^ set(arrays)
        if missing:
            raise KeyError(f"checkpoint/param name mismatch: {sorted(missing)}")
        for name, t in self.params.items():
            if t.data.shape != arrays[name].shape:
                raise ag.ShapeMismatch(
                    f"{name}: checkpoint {arrays[name].shape} vs model {t.data.shape}"
                )
            t.data = np.asarray(arrays[name], dtype=np.float64).copy()

    # -- batching -------------------------------------------------------

    def collate(self, records, use_hyp=True, augment=None,
                with_targets: bool = True) -> Batch:
        if not records:
            raise EmptyBatch("no records")
        n = len(records)
        flags = [use_hyp] * n if isinstance(use_hyp, bool) else list(use_hyp)
        batch = Batch(size=n)
        if self.config.uses_text:
            seqs = []
            for rec, f in zip(records, flags):
                text = rec.hyp_text if f else rec.ref_text
                if text is None:
                    raise ValueError(f"record {rec.id} lacks hypothesis text")
                seqs.append(vocab_mod.encode(text, self.vocab))
            batch.text_ids, batch.text_lengths = _pad_ids(seqs)
        if self.config.uses_audio:
            feats = []
            for i, rec in enumerate(records):
                if rec.audio is None:
                    raise ValueError(f"record {rec.id} lacks audio features")
                f = rec.audio
                feats.append(augment(f, i) if augment is not None else f)
            lengths = np.array([f.shape[0] for f in feats], dtype=np.int64)
            arr = np.zeros((n, int(lengths.max()), feats[0].shape[1]))
            for i, f in enumerate(feats):
                arr[i, : f.shape[0]] = f
            batch.audio, batch.audio_lengths = arr, lengths
        if with_targets:
            tgt = [vocab_mod.encode_annotation(r.annotation, self.vocab) for r in records]
            full, _ = _pad_ids(tgt)
            batch.target_in = full[:, :-1]
            batch.target_out = full[:, 1:]
            batch.target_mask = (batch.target_out != PAD).astype(np.float64)
        return batch

    # -- forward pieces ---------------------------------------------------

    def fuse(self, emb_text: Tensor, emb_aud: Tensor,
             audio_mask: np.ndarray | None = None) -> Tensor:
        """Attend text over audio, stack in the feature dim, project back.

        Position encodings are added to both attention inputs first; the
        frozen audio features carry no positional structure of their own,
        and alignment needs the cue.
        """
        q = layers.add_positions(emb_text)
        kv = layers.add_positions(emb_aud)
        attn, _ = layers.mha(self.params, "fusion.attn", q, kv, kv,
                             self.config.fusion_heads, audio_mask)
        stack = ag.concat_feature([emb_text, attn])
        return layers.linear(self.params, "fusion.out", stack)

    def pool(self, emb: Tensor, mask: np.ndarray | None = None) -> Tensor:
        x = layers.add_positions(emb)
        for i in range(self.config.pooling_layers):
            x = layers.encoder_layer(self.params, f"pool.{i}", x,
                                     self.config.pooling_heads, mask)
        return x

    def _project(self, name: str, x: Tensor) -> Tensor:
        if f"{name}.w" in self.params:
            return layers.linear(self.params, name, x)
        return x

    def encode_batch(self, batch: Batch):
        """Returns (encoder outputs, additive key mask, copy ids or None)."""
        cfg = self.config
        emb_text = None
        if cfg.uses_text:
            raw = self.text_encoder.embed_batch(batch.text_ids)
            emb_text = self._project("proj_text", Tensor(raw))
        emb_aud = None
        audio_mask = None
        if cfg.uses_audio:
            raw, a_lengths = self.audio_encoder.embed_batch(batch.audio, batch.audio_lengths)
            emb_aud = self._project("proj_audio", Tensor(raw))
            audio_mask = layers.key_padding_mask(a_lengths, raw.shape[1])
        if cfg.modality == "fusion":
            fused = self.fuse(emb_text, emb_aud, audio_mask)
            mask = layers.key_padding_mask(batch.text_lengths, fused.shape[1])
            return self.pool(fused, mask), mask, batch.text_ids
        if cfg.modality == "text":
            mask = layers.key_padding_mask(batch.text_lengths, emb_text.shape[1])
            return self.pool(emb_text, mask), mask, batch.text_ids
        return self.pool(emb_aud, audio_mask), audio_mask, None

    def decoder_states(self, target_in: np.ndarray, enc: Tensor,
                       enc_mask: np.ndarray | None) -> Tensor:
        x = ag.embedding_lookup(self.params["dec.emb"], target_in)
        x = layers.add_positions(x)
        self_mask = layers.causal_mask(target_in.shape[1])
        for i in range(self.config.decoder_layers):
            x = layers.decoder_layer(self.params, f"dec.{i}", x, enc,
                                     self.config.decoder_heads, self_mask, enc_mask)
        return layers.layer_norm(self.params, "dec.ln", x)

    def output_distributions(self, d: Tensor, enc: Tensor,
                             copy_ids: np.ndarray | None,
                             enc_mask: np.ndarray | None,
                             force_copy_prob: float | None = None):
        """Mix generation and copy distributions for every step in ``d``.

        Returns ``(o, g, c, omega, gamma, p)``; the copy-side values are
        None for the audio-only variant.
        """
        g = ag.softmax(layers.linear(self.params, "gen", d))
        if not self.config.has_copy_head:
            return g, g, None, None, None, None
        gamma, w = layers.mha(self.params, "copy.attn", d, enc, enc,
                              self.config.copy_heads, enc_mask)
        omega = ag.mean_(w, axis=1)  # (B, S, T), rows sum to 1
        b, s, t = omega.shape
        if copy_ids.shape[-1] != t:
            raise LengthMismatch(
                f"hypothesis ids length {copy_ids.shape[-1]} != encoder length {t}"
            )
        ids = np.broadcast_to(copy_ids[:, None, :], (b, s, t))
        c = ag.scatter_sum(omega, ids, self.config.vocab_size)
        if force_copy_prob is None:
            p = ag.sigmoid(layers.linear(self.params, "copy.gate",
                                         ag.concat_feature([d, gamma])))
        else:
            p = Tensor(np.full((b, s, 1), float(force_copy_prob)))
        o = ag.add(ag.mul(g, ag.sub(1.0, p)), ag.mul(c, p))
        return o, g, c, omega, gamma, p

    # -- training objective ----------------------------------------------

    def forward_teacher_forced(self, records, use_hyp=True,
                               label_smoothing: float = 0.1,
                               augment=None) -> Tensor:
        """Mean label-smoothed cross entropy over non-PAD target steps."""
        batch = self.collate(records, use_hyp, augment, with_targets=True)
        enc, enc_mask, copy_ids = self.encode_batch(batch)
        d = self.decoder_states(batch.target_in, enc, enc_mask)
        o, *_ = self.output_distributions(d, enc, copy_ids, enc_mask)
        return self._smoothed_nll(o, batch.target_out, batch.target_mask,
                                  label_smoothing)

    def _smoothed_nll(self, o: Tensor, target_out: np.ndarray,
                      target_mask: np.ndarray, eps: float) -> Tensor:
        v = self.config.vocab_size
        logp = ag.log_clamped(o, 1e-12)
        onehot = np.zeros(o.shape)
        b_idx, s_idx = np.meshgrid(
            np.arange(o.shape[0]), np.arange(o.shape[1]), indexing="ij"
        )
        onehot[b_idx, s_idx, target_out] = 1.0
        off = eps / (v - 1)
        lp_target = ag.sum_(ag.mul(logp, onehot), axis=-1)
        lp_total = ag.sum_(logp, axis=-1)
        step_loss = ag.mul(
            ag.add(ag.mul(lp_target, 1.0 - eps - off), ag.mul(lp_total, off)), -1.0
        )
        masked = ag.mul(step_loss, target_mask)
        return ag.mul(ag.sum_(masked), 1.0 / target_mask.sum())

    # -- decoding ----------------------------------------------------------

    def greedy_decode_batch(self, records, use_hyp=True,
                            incremental: bool = True) -> list[list[int]]:
        """Argmax decoding from BOS until EOS or the length cap; returns
        output ids without BOS/EOS.

        The incremental path caches decoder self/cross attention keys and
        values per step; ``incremental=False`` recomputes the whole prefix
        each step (same results, used as the oracle in tests).
        """
        with ag.no_grad():
            batch = self.collate(records, use_hyp, with_targets=False)
            enc, enc_mask, copy_ids = self.encode_batch(batch)
            n = batch.size
            state = _DecodeCache(self, enc.data, enc_mask) if incremental else None
            prefix = np.full((n, 1), BOS, dtype=np.int64)
            done = np.zeros(n, dtype=bool)
            for step in range(self.config.max_decode_len):
                if incremental:
                    d_last = Tensor(state.step(prefix[:, -1], step)[:, None, :])
                else:
                    d = self.decoder_states(prefix, enc, enc_mask)
                    d_last = Tensor(d.data[:, -1:, :])
                o, *_ = self.output_distributions(d_last, enc, copy_ids, enc_mask)
                nxt = o.data[:, 0, :].argmax(axis=-1).astype(np.int64)
                nxt[done] = PAD
                done |= nxt == EOS
                prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
                if done.all():
                    break
        outs = []
        for row in prefix[:, 1:]:
            ids = []
            for idx in row:
                if idx in (EOS, PAD):
                    break
                ids.append(int(idx))
            outs.append(ids)
        return outs

    def greedy_decode(self, record, use_hyp: bool = True) -> list[int]:
        return self.greedy_decode_batch([record], use_hyp)[0]

    def predict_annotation(self, record, use_hyp: bool = True) -> str:
        return vocab_mod.decode(self.greedy_decode(record, use_hyp), self.vocab)

    def decode_step(self, d_t, enc, copy_ids,
                    force_copy_prob: float | None = None) -> DecoderStepOutput:
        """Apply the output head to one decoder state (unbatched view)."""
        d = d_t if isinstance(d_t, Tensor) else Tensor(d_t)
        e = enc if isinstance(enc, Tensor) else Tensor(enc)
        d3 = ag.reshape(d, (1, 1, d.shape[-1]))
        e3 = ag.reshape(e, (1,) + e.shape)
        if self.config.has_copy_head:
            ids = np.asarray(copy_ids, dtype=np.int64)[None, :]
            if ids.shape[1] != e.shape[0]:
                raise LengthMismatch(
                    f"hypothesis ids length {ids.shape[1]} != encoder length {e.shape[0]}"
                )
        else:
            ids = None
        o, g, c, omega, gamma, p = self.output_distributions(
            d3, e3, ids, None, force_copy_prob
        )
        return DecoderStepOutput(
            g=g.data[0, 0].copy(),
            c=None if c is None else c.data[0, 0].copy(),
            omega=None if omega is None else omega.data[0, 0].copy(),
            gamma=None if gamma is None else gamma.data[0, 0].copy(),
            p_copy=None if p is None else float(p.data[0, 0, 0]),
            o=o.data[0, 0].copy(),
        )

    def _layer_weights(self, name: str):
        p = self.params
        return (p[f"{name}.w"].data, p[f"{name}.b"].data)

    def _ln_weights(self, name: str):
        p = self.params
        return (p[f"{name}.g"].data, p[f"{name}.b"].data)

    def trace_decode(self, record, use_hyp: bool = True):
        """Greedy decode one record, keeping each step's head outputs."""
        with ag.no_grad():
            batch = self.collate([record], use_hyp, with_targets=False)
            enc, enc_mask, copy_ids = self.encode_batch(batch)
            prefix = np.full((1, 1), BOS, dtype=np.int64)
            steps: list[tuple[int, DecoderStepOutput]] = []
            for _ in range(self.config.max_decode_len):
                d = self.decoder_states(prefix, enc, enc_mask)
                d_last = Tensor(d.data[:, -1:, :])
                o, g, c, omega, gamma, p = self.output_distributions(
                    d_last, enc, copy_ids, enc_mask
                )
                step = DecoderStepOutput(
                    g=g.data[0, 0].copy(),
                    c=None if c is None else c.data[0, 0].copy(),
                    omega=None if omega is None else omega.data[0, 0].copy(),
                    gamma=None if gamma is None else gamma.data[0, 0].copy(),
                    p_copy=None if p is None else float(p.data[0, 0, 0]),
                    o=o.data[0, 0].copy(),
                )
                nxt = int(step.o.argmax())
                steps.append((nxt, step))
                if nxt == EOS:
                    break
                prefix = np.concatenate([prefix, [[nxt]]], axis=1)
        return steps


class _DecodeCache:
    """Incremental decoder evaluation in plain numpy (inference only).

    Caches self-attention keys/values as they grow and cross-attention
    keys/values once; each step touches only the newest position, so
    decoding is linear in output length instead of quadratic.
    """

    def __init__(self, model: DeliberationModel, enc: np.ndarray,
                 enc_mask: np.ndarray | None):
        self.model = model
        cfg = model.config
        self.heads = cfg.decoder_heads
        self.dh = cfg.dim // self.heads
        b = enc.shape[0]
        self.cross_mask = None if enc_mask is None else enc_mask[:, :, 0, :]
        self.layers = []
        for i in range(cfg.decoder_layers):
            name = f"dec.{i}"
            kw, kb = model._layer_weights(f"{name}.cross.k")
            vw, vb = model._layer_weights(f"{name}.cross.v")
            ck = self._heads(enc @ kw + kb, b)
            cv = self._heads(enc @ vw + vb, b)
            self.layers.append({
                "name": name,
                "cross_k": ck, "cross_v": cv,
                "self_k": np.zeros((b, self.heads, 0, self.dh)),
                "self_v": np.zeros((b, self.heads, 0, self.dh)),
            })
        self.pos = layers.sinusoidal_positions(cfg.max_decode_len, cfg.dim)

    def _heads(self, x: np.ndarray, b: int) -> np.ndarray:
        return x.reshape(b, -1, self.heads, self.dh).transpose(0, 2, 1, 3)

    @staticmethod
    def _ln(x, g, b, eps=1e-5):
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        return g * (x - mean) / np.sqrt(var + eps) + b

    def _attend(self, q, k, v, mask=None):
        # q: (B,H,1,dh); k,v: (B,H,L,dh); mask: (B,1,L) additive
        scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(self.dh)
        if mask is not None:
            scores = scores + mask[:, :, None, :]
        shifted = scores - scores.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        w = e / e.sum(axis=-1, keepdims=True)
        return w @ v

    def step(self, token_ids: np.ndarray, pos: int) -> np.ndarray:
        m = self.model
        p = m.params
        b = token_ids.shape[0]
        x = p["dec.emb"].data[token_ids] + self.pos[pos]
        for layer in self.layers:
            name = layer["name"]
            h = self._ln(x, *m._ln_weights(f"{name}.ln1"))
            qw, qb = m._layer_weights(f"{name}.self.q")
            kw, kb = m._layer_weights(f"{name}.self.k")
            vw, vb = m._layer_weights(f"{name}.self.v")
            q = self._heads(h @ qw + qb, b)
            layer["self_k"] = np.concatenate(
                [layer["self_k"], self._heads(h @ kw + kb, b)], axis=2)
            layer["self_v"] = np.concatenate(
                [layer["self_v"], self._heads(h @ vw + vb, b)], axis=2)
            ctx = self._attend(q, layer["self_k"], layer["self_v"])
            ow, ob = m._layer_weights(f"{name}.self.o")
            x = x + (ctx.transpose(0, 2, 1, 3).reshape(b, -1) @ ow + ob)
            h = self._ln(x, *m._ln_weights(f"{name}.ln2"))
            qw, qb = m._layer_weights(f"{name}.cross.q")
            q = self._heads(h @ qw + qb, b)
            ctx = self._attend(q, layer["cross_k"], layer["cross_v"],
                               self.cross_mask)
            ow, ob = m._layer_weights(f"{name}.cross.o")
            x = x + (ctx.transpose(0, 2, 1, 3).reshape(b, -1) @ ow + ob)
            h = self._ln(x, *m._ln_weights(f"{name}.ln3"))
            f1w, f1b = m._layer_weights(f"{name}.ff1")
            f2w, f2b = m._layer_weights(f"{name}.ff2")
            x = x + (np.maximum(h @ f1w + f1b, 0.0) @ f2w + f2b)
        return self._ln(x, *m._ln_weights("dec.ln"))
