import numpy as np
import pytest

from delibparse import autograd as ag, layers, model as M, vocab as V
from delibparse.autograd import Tensor
from delibparse.harness import build_demo_system, make_demo_records
from delibparse.records import UtteranceRecord


@pytest.fixture(scope="module")
def fusion_system():
    return build_demo_system("fusion", n_records=12, seed=0)


@pytest.fixture(scope="module")
def text_system():
    return build_demo_system("text", n_records=12, seed=1)


@pytest.fixture(scope="module")
def audio_system():
    return build_demo_system("audio", n_records=12, seed=2)


def rng():
    return np.random.default_rng(0)


# -- oracle compositions live in _oracles; imported so both the unit and
# acceptance suites check against the same independent compositions
from _oracles import decode_step_oracle, np_layer_norm, numpy_attention


def test_fuse_matches_primitive_composition(fusion_system):
    model, _ = fusion_system
    d = model.config.dim
    g = rng()
    t, a = 5, 8
    emb_text = g.normal(size=(t, d))
    emb_aud = g.normal(size=(a, d))
    out = model.fuse(Tensor(emb_text[None]), Tensor(emb_aud[None]))
    attn, _ = numpy_attention(model.params, "fusion.attn", emb_text, emb_aud,
                              emb_aud, model.config.fusion_heads, positions=True)
    stack = np.concatenate([emb_text, attn], axis=-1)
    expected = stack @ model.params["fusion.out.w"].data + model.params["fusion.out.b"].data
    np.testing.assert_allclose(out.data[0], expected, atol=1e-10)


def test_fuse_output_shape_contract(fusion_system):
    model, _ = fusion_system
    d = model.config.dim
    out = model.fuse(Tensor(rng().normal(size=(1, 3, d))),
                     Tensor(rng().normal(size=(1, 10, d))))
    assert out.shape == (1, 3, d)


def test_fuse_single_audio_row_attends_fully(fusion_system):
    model, _ = fusion_system
    d = model.config.dim
    g = rng()
    emb_text = g.normal(size=(1, 4, d))
    emb_aud = g.normal(size=(1, 1, d))
    q = emb_text[0] + layers.sinusoidal_positions(4, d)
    kv = emb_aud[0] + layers.sinusoidal_positions(1, d)
    _, w = layers.mha(model.params, "fusion.attn", Tensor(q[None]),
                      Tensor(kv[None]), Tensor(kv[None]),
                      model.config.fusion_heads)
    np.testing.assert_allclose(w.data, np.ones_like(w.data))


def test_pool_zero_layers_is_positions_only():
    cfg = M.toy_config("text", vocab_size=32)
    cfg = M.ModelConfig(**{**cfg.__dict__, "pooling_layers": 0})
    from delibparse import asr_stub
    voc = V.Vocabulary(tuple("ab"), ("[IN:X", "]"))
    enc = asr_stub.FrozenTextEncoder(voc.size, cfg.text_source_dim, 0)
    model = M.DeliberationModel(cfg.with_vocab(voc.size), voc, enc, None, seed=0)
    x = rng().normal(size=(1, 5, cfg.dim))
    out = model.pool(Tensor(x))
    np.testing.assert_allclose(
        out.data, x + layers.sinusoidal_positions(5, cfg.dim)[None], atol=1e-12
    )


def test_pool_matches_primitive_composition(fusion_system):
    model, _ = fusion_system
    d = model.config.dim
    x = rng().normal(size=(4, d))
    out = model.pool(Tensor(x[None]))
    h = x + layers.sinusoidal_positions(4, d)
    p = model.params
    for i in range(model.config.pooling_layers):
        name = f"pool.{i}"
        ln1 = np_layer_norm(h, p[f"{name}.ln1.g"].data, p[f"{name}.ln1.b"].data)
        attn, _ = numpy_attention(p, f"{name}.attn", ln1, ln1, ln1,
                                  model.config.pooling_heads)
        h = h + attn
        ln2 = np_layer_norm(h, p[f"{name}.ln2.g"].data, p[f"{name}.ln2.b"].data)
        ff = np.maximum(ln2 @ p[f"{name}.ff1.w"].data + p[f"{name}.ff1.b"].data, 0)
        h = h + ff @ p[f"{name}.ff2.w"].data + p[f"{name}.ff2.b"].data
    np.testing.assert_allclose(out.data[0], h, atol=1e-10)




def test_decode_step_matches_oracle(fusion_system):
    model, _ = fusion_system
    d = model.config.dim
    g = rng()
    for _ in range(10):
        t = int(g.integers(2, 7))
        d_t = g.normal(size=d)
        e = g.normal(size=(t, d))
        h_ids = g.integers(4, model.config.vocab_size, size=t)
        step = model.decode_step(d_t, e, h_ids)
        og, oc, oom, oga, opc, oo = decode_step_oracle(model, d_t, e, h_ids)
        np.testing.assert_allclose(step.g, og, atol=1e-10)
        np.testing.assert_allclose(step.c, oc, atol=1e-10)
        np.testing.assert_allclose(step.omega, oom, atol=1e-10)
        np.testing.assert_allclose(step.gamma, oga, atol=1e-10)
        assert step.p_copy == pytest.approx(opc, abs=1e-10)
        np.testing.assert_allclose(step.o, oo, atol=1e-10)


def test_decode_step_duplicate_ids_accumulate(fusion_system):
    model, _ = fusion_system
    d = model.config.dim
    g = rng()
    d_t = g.normal(size=d)
    e = g.normal(size=(2, d))
    step = model.decode_step(d_t, e, np.array([7, 7]))
    assert step.c[7] == pytest.approx(1.0, abs=1e-12)
    assert step.c.sum() == pytest.approx(1.0, abs=1e-12)
    assert (np.delete(step.c, 7) == 0).all()


def test_decode_step_distributions_are_valid(fusion_system):
    model, _ = fusion_system
    d = model.config.dim
    g = rng()
    for _ in range(25):
        t = int(g.integers(1, 9))
        step = model.decode_step(
            g.normal(size=d), g.normal(size=(t, d)),
            g.integers(0, model.config.vocab_size, size=t),
        )
        for dist in (step.g, step.c, step.o):
            assert (dist >= 0).all()
            assert abs(dist.sum() - 1.0) < 1e-6


def test_decode_step_copy_support(fusion_system):
    model, _ = fusion_system
    d = model.config.dim
    g = rng()
    for _ in range(20):
        t = int(g.integers(1, 9))
        h_ids = g.integers(4, model.config.vocab_size, size=t)
        step = model.decode_step(g.normal(size=d), g.normal(size=(t, d)), h_ids)
        support = set(np.nonzero(step.c)[0].tolist())
        assert support <= set(int(i) for i in h_ids)


def test_decode_step_force_endpoints_bitwise(fusion_system):
    model, _ = fusion_system
    d = model.config.dim
    g = rng()
    d_t, e = g.normal(size=d), g.normal(size=(5, d))
    h_ids = g.integers(4, model.config.vocab_size, size=5)
    s0 = model.decode_step(d_t, e, h_ids, force_copy_prob=0.0)
    s1 = model.decode_step(d_t, e, h_ids, force_copy_prob=1.0)
    assert (s0.o == s0.g).all()
    assert (s1.o == s1.c).all()


def test_decode_step_length_mismatch(fusion_system):
    model, _ = fusion_system
    d = model.config.dim
    g = rng()
    with pytest.raises(M.LengthMismatch):
        model.decode_step(g.normal(size=d), g.normal(size=(4, d)),
                          np.array([5, 6, 7]))


def test_forced_copy_decode_stays_in_hypothesis(fusion_system):
    model, _ = fusion_system
    d = model.config.dim
    g = rng()
    for _ in range(20):
        t = int(g.integers(2, 8))
        h_ids = g.integers(4, model.config.vocab_size, size=t)
        step = model.decode_step(g.normal(size=d), g.normal(size=(t, d)),
                                 h_ids, force_copy_prob=1.0)
        assert int(step.o.argmax()) in set(int(i) for i in h_ids)


def test_audio_variant_output_is_generation_only(audio_system):
    model, _ = audio_system
    d = model.config.dim
    g = rng()
    step = model.decode_step(g.normal(size=d), g.normal(size=(6, d)), None)
    assert step.c is None and step.p_copy is None
    assert (step.o == step.g).all()


# -- losses and decoding -----------------------------------------------------


def test_untrained_loss_near_log_vocab(fusion_system):
    model, records = fusion_system
    loss = float(model.forward_teacher_forced(records[:8]).data)
    target = np.log(model.config.vocab_size)
    assert abs(loss - target) / target < 0.20


def test_loss_deterministic(fusion_system):
    model, records = fusion_system
    a = float(model.forward_teacher_forced(records[:6]).data)
    b = float(model.forward_teacher_forced(records[:6]).data)
    assert a == b


def test_loss_empty_batch(fusion_system):
    model, _ = fusion_system
    with pytest.raises(M.EmptyBatch):
        model.forward_teacher_forced([])


def test_batched_decode_matches_solo(fusion_system):
    model, records = fusion_system
    solo = [model.greedy_decode(r) for r in records[:6]]
    batched = model.greedy_decode_batch(records[:6])
    assert solo == batched


def test_greedy_decode_respects_length_cap(fusion_system):
    model, records = fusion_system
    ids = model.greedy_decode(records[0])
    assert len(ids) <= model.config.max_decode_len


def test_greedy_decode_eos_model_emits_empty(fusion_system):
    model, records = fusion_system
    gen_b = model.params["gen.b"].data.copy()
    gate_b = model.params["copy.gate.b"].data.copy()
    try:
        model.params["gen.b"].data[:] = -50.0
        model.params["gen.b"].data[V.EOS] = 50.0
        model.params["copy.gate.b"].data[:] = -50.0  # p_copy ~ 0
        assert model.greedy_decode(records[0]) == []
    finally:
        model.params["gen.b"].data = gen_b
        model.params["copy.gate.b"].data = gate_b


def test_frozen_stub_untouched_by_backward(fusion_system):
    model, records = fusion_system
    before = model.text_encoder.param_bytes() + model.audio_encoder.param_bytes()
    loss = model.forward_teacher_forced(records[:4])
    loss.backward()
    assert model.text_encoder.param_bytes() + model.audio_encoder.param_bytes() == before
    stub_arrays = list(model.text_encoder.param_arrays().values())
    param_arrays = {id(t.data) for t in model.params.values()}
    assert all(id(a) not in param_arrays for a in stub_arrays)


# -- parameter counting -------------------------------------------------------


def _expected_toy_text_count(vocab_size):
    d, ffn, src = 16, 32, 24
    def lin(i, o):
        return i * o + o
    def mha():
        return 4 * lin(d, d)
    def ln():
        return 2 * d
    total = lin(src, d)                      # text projection
    total += ln() + mha() + ln() + lin(d, ffn) + lin(ffn, d)   # pool layer
    total += vocab_size * d                  # decoder embedding
    total += ln() + mha() + ln() + mha() + ln() + lin(d, ffn) + lin(ffn, d)
    total += ln()                            # final decoder norm
    total += lin(d, vocab_size)              # generation head
    total += mha() + lin(2 * d, 1)           # copy head + gate
    return total


def test_param_count_toy_closed_form():
    cfg = M.toy_config("text", vocab_size=50)
    assert M.param_count(cfg) == _expected_toy_text_count(50)


def test_param_count_audio_smaller_by_copy_and_fusion():
    fusion_cfg = M.toy_config("fusion", vocab_size=50)
    audio_cfg = M.toy_config("audio", vocab_size=50)
    d, src = fusion_cfg.dim, fusion_cfg.text_source_dim
    fusion_extra = (
        (src * d + d)                      # text projection
        + 4 * (d * d + d) + (2 * d * d + d)  # fusion mha + stack projection
        + 4 * (d * d + d) + (2 * d + 1)      # copy mha + gate
    )
    assert M.param_count(audio_cfg) == M.param_count(fusion_cfg) - fusion_extra


def test_param_count_frozen_stubs_excluded(fusion_system):
    model, _ = fusion_system
    assert model.param_count() == M.param_count(model.config)


def test_paper_scale_counts_near_budget():
    # ~5M trainable parameters at the published operating point
    for modality, budget in (("fusion", 4.7e6), ("text", 4.9e6), ("audio", 5.0e6)):
        count = M.param_count(M.paper_scale_config(modality))
        assert abs(count - budget) / budget < 0.10, (modality, count)


def test_model_rejects_vocab_size_mismatch():
    from delibparse import asr_stub
    voc = V.Vocabulary(tuple("ab"), ("[IN:X", "]"))
    cfg = M.toy_config("text", vocab_size=999)
    enc = asr_stub.FrozenTextEncoder(voc.size, cfg.text_source_dim, 0)
    with pytest.raises(ValueError):
        M.DeliberationModel(cfg, voc, enc, None, seed=0)


def test_state_round_trip(fusion_system, tmp_path):
    from delibparse import checkpoint as C
    model, records = fusion_system
    path = tmp_path / "m.ckpt"
    C.save_checkpoint(path, model.state_arrays())
    loaded = C.load_checkpoint(path)
    assert set(loaded) == set(model.params)
    for name, arr in loaded.items():
        np.testing.assert_allclose(
            arr, model.params[name].data.astype(np.float32), atol=0
        )
