import itertools

import numpy as np
import pytest

from hierptr import autodiff as ad
from hierptr.model import (
    FUSION_SLOTS, FUSION_SYSTEM, PAD, UNK, CheckpointError, ConfigError, HierPtrNet, ModelConfig, Vocab,
    fuse, label_scores, load_checkpoint, point_scores, save_checkpoint,
)
from hierptr.toy import toy_corpus
from hierptr.transition import ParserState, advance, dependent_snapshot, legal_parents

from conftest import FIG1_HEADS, make_sentence

HIER_VARIANTS = [(s.value, f) for f, s in FUSION_SYSTEM.items() if s is not None]


def tiny(system="l2r", fusion="l-simple", gate="gate1", **kw):
    base = dict(system=system, fusion=fusion, gate=gate, lstm_dropout=0.0, emb_dropout=0.0,
                unk_replace=0.0, dtype="float64")
    base.update(kw)
    return ModelConfig(**base).tiny(8)


@pytest.fixture(scope="module")
def corpus():
    return toy_corpus(8, 6, 20, seed=4)


def build(corpus, **kw):
    return HierPtrNet(tiny(**kw), Vocab.build(corpus), seed=1)


def test_vocab_reserved_ids(corpus):
    v = Vocab.build(corpus)
    for table in (v.words, v.chars, v.pos, v.labels):
        assert table[0] == PAD and table[1] == UNK
    assert v.word_id("never-seen") == 1
    assert v.label_id("never-seen") == 1
    assert Vocab.from_dict(v.to_dict()) == v


@pytest.mark.parametrize("system,fusion", [("l2r", "r-simple"), ("r2l", "l-adapted"), ("oi", "l-simple"),
                                           ("l2r", "full"), ("r2l", "simple")])
def test_incompatible_fusion(system, fusion):
    with pytest.raises(ConfigError):
        ModelConfig(system=system, fusion=fusion)


def test_config_defaults_and_tiny():
    c = ModelConfig()
    assert (c.enc_layers, c.enc_size, c.dec_size, c.arc_mlp, c.label_mlp) == (3, 512, 512, 512, 128)
    assert (c.char_window, c.char_filters, c.word_dim) == (3, 50, 100)
    t = c.tiny()
    assert (t.enc_size, t.dec_size, t.arc_mlp, t.label_mlp, t.char_filters, t.word_dim) == (64, 64, 64, 64, 50, 64)
    assert t.enc_layers == 3
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"bogus": 1})
    assert ModelConfig.from_dict(c.to_dict()) == c


def test_encode_shapes_and_determinism(corpus):
    m = build(corpus)
    es = m.encode_sentence(corpus[0])
    h = m.encode(es)
    assert h.shape == (es.n + 1, 2 * m.config.enc_size)
    np.testing.assert_array_equal(h.data, m.encode(es).data)


def test_encode_context_sensitivity(corpus):
    m = build(corpus)
    s = corpus[0]
    assert len(s) >= 3
    toks = list(s.tokens)
    swapped = make_sentence(s.heads, forms=[toks[1].form, toks[0].form] + [t.form for t in toks[2:]],
                            upos=[toks[1].upos, toks[0].upos] + [t.upos for t in toks[2:]])
    if toks[0].form == toks[1].form:
        pytest.skip("first two words identical")
    a = m.encode(m.encode_sentence(s)).data
    b = m.encode(m.encode_sentence(swapped)).data
    assert not np.allclose(a[1], b[1]) and not np.allclose(a[2], b[2])
    assert not np.allclose(a[3:], b[3:])


def test_external_embedding_checks(corpus):
    m = HierPtrNet(tiny(ext_dim=5), Vocab.build(corpus))
    es = m.encode_sentence(corpus[0])
    assert m.encode(es, np.ones((es.n, 5))).shape[0] == es.n + 1
    with pytest.raises(ValueError):
        m.encode(es, np.ones((es.n + 1, 5)))
    with pytest.raises(ValueError):
        m.encode(es)


def _params(fusion, gate, H=4, seed=0, zero_bias=True):
    rng = np.random.default_rng(seed)
    p = {"dec.W_p": ad.parameter(rng.normal(size=(H, H))), "dec.b_g": ad.parameter(np.zeros(H))}
    if gate == "gate1":
        p["dec.W_gp"] = ad.parameter(rng.normal(size=(H, H)))
    for k in FUSION_SLOTS[fusion]:
        p[f"dec.W_g{k}"] = ad.parameter(rng.normal(size=(H, H)))
        p[f"dec.W_{k}"] = ad.parameter(rng.normal(size=(H, H)))
    return p


def _sig(x):
    return 1 / (1 + np.exp(-x))


@pytest.mark.parametrize("fusion", ["full", "simple", "l-adapted", "l-simple", "r-adapted", "r-simple"])
def test_fuse_zero_dependents(fusion):
    p = _params(fusion, "gate1")
    s = ad.constant(np.random.default_rng(5).normal(size=4))
    deps = {k: ad.constant(np.zeros(4)) for k in FUSION_SLOTS[fusion]}
    out = fuse(s, deps, "gate1", fusion, p).data
    want = _sig(s.data @ p["dec.W_gp"].data) * np.tanh(s.data @ p["dec.W_p"].data)
    np.testing.assert_allclose(out, want, rtol=1e-12)


def test_fuse_gate2_half():
    p = _params("full", "gate2")
    s = ad.constant(np.zeros(4))
    deps = {k: ad.constant(np.random.default_rng(2).normal(size=4)) for k in FUSION_SLOTS["full"]}
    # g = 0.5 and h' = tanh(sum W_d s_d) since s_prev = 0
    want = 0.5 * np.tanh(sum(deps[k].data @ p[f"dec.W_{k}"].data for k in deps))
    np.testing.assert_allclose(fuse(s, deps, "gate2", "full", p).data, want, rtol=1e-12)


def test_fuse_full_formula():
    """Independent numpy evaluation of both gates on random inputs."""
    rng = np.random.default_rng(8)
    for gate in ("gate1", "gate2"):
        p = _params("full", gate, seed=3)
        p["dec.b_g"].data[:] = rng.normal(size=4)
        s = rng.normal(size=4)
        d = {k: rng.normal(size=4) for k in FUSION_SLOTS["full"]}
        W = {k: v.data for k, v in p.items()}
        if gate == "gate1":
            g = _sig(s @ W["dec.W_gp"] + sum(d[k] @ W[f"dec.W_g{k}"] for k in d) + W["dec.b_g"])
        else:
            g = _sig(sum((s * d[k]) @ W[f"dec.W_g{k}"] for k in d) + W["dec.b_g"])
        h1 = np.tanh(s @ W["dec.W_p"] + sum(d[k] @ W[f"dec.W_{k}"] for k in d))
        got = fuse(ad.constant(s), {k: ad.constant(v) for k, v in d.items()}, gate, "full", p).data
        np.testing.assert_allclose(got, g * h1, rtol=1e-12)


def test_fuse_rejects_wrong_slots():
    p = _params("l-simple", "gate1")
    with pytest.raises(ConfigError):
        fuse(ad.constant(np.zeros(4)), {"rm": ad.constant(np.zeros(4))}, "gate1", "l-simple", p)


@pytest.mark.parametrize("gate", ["gate1", "gate2"])
@pytest.mark.parametrize("fusion", ["full", "l-adapted", "r-simple"])
def test_fuse_grad_check(fusion, gate):
    rng = np.random.default_rng(11)
    p = _params(fusion, gate, seed=4)
    p["dec.b_g"].data[:] = rng.normal(size=4)
    s = ad.parameter(rng.normal(size=4))
    deps = {k: ad.parameter(rng.normal(size=4)) for k in FUSION_SLOTS[fusion]}
    w = rng.normal(size=4)
    f = lambda: ad.sum(ad.mul(fuse(s, deps, gate, fusion, p), ad.constant(w)))
    assert ad.grad_check(f, list(p.values()) + [s] + list(deps.values()), max_coords=None) < 1e-6


def test_decoder_step_shape_and_purity(corpus):
    m = build(corpus, system="oi", fusion="full")
    es = m.encode_sentence(corpus[0])
    ctx = m.context(m.encode(es))
    state = ParserState.initial("oi", es.n)
    s1, c1 = m.step(ctx, state.focus, dependent_snapshot(state), [], ctx.s0, ctx.c0)
    s2, _ = m.step(ctx, state.focus, dependent_snapshot(state), [], ctx.s0, ctx.c0)
    assert s1.shape == (m.config.dec_size,)
    np.testing.assert_array_equal(s1.data, s2.data)
    s3, _ = m.step(ctx, 2, dependent_snapshot(state), [], ctx.s0, ctx.c0)
    assert not np.allclose(s1.data, s3.data)


def test_point_scores_single_legal_and_reduction():
    rng = np.random.default_rng(0)
    A, n = 3, 4
    f2 = rng.normal(size=(n + 1, A))
    V = rng.normal(size=A)
    pm = ad.constant(np.zeros((A, n + 1)))  # W = 0 and U = 0
    pb = ad.constant(f2 @ V)  # b = 0
    mask = np.ones(n + 1, dtype=bool)
    mask[2] = False
    _, logp = point_scores(ad.constant(rng.normal(size=A)), pm, pb, mask)
    assert logp.data[2] == 0.0 and np.all(np.isneginf(logp.data[mask]))
    order = [np.argsort(point_scores(ad.constant(rng.normal(size=A)), pm, pb, None)[0].data) for _ in range(3)]
    assert all((o == order[0]).all() for o in order)


def test_point_scores_biaffine_formula():
    rng = np.random.default_rng(1)
    A, n = 3, 4
    f1, f2 = rng.normal(size=A), rng.normal(size=(n + 1, A))
    W, U, V, b = rng.normal(size=(A, A)), rng.normal(size=A), rng.normal(size=A), 0.7
    pm = ad.constant(W @ f2.T + U[:, None])
    pb = ad.constant(f2 @ V + b)
    v, _ = point_scores(ad.constant(f1), pm, pb, None)
    want = [f1 @ W @ f2[j] + U @ f1 + V @ f2[j] + b for j in range(n + 1)]
    np.testing.assert_allclose(v.data, want, rtol=1e-12)


def test_label_scores(corpus):
    m = build(corpus)
    rng = np.random.default_rng(2)
    for k in ("lab.U", "lab.W", "lab.b"):
        m.params[k].data[...] = rng.normal(size=m.params[k].shape)
    hd = ad.constant(rng.normal(size=m.config.label_mlp))
    dp = ad.constant(rng.normal(size=m.config.label_mlp))
    lp = label_scores(hd, dp, m.params).data
    assert abs(np.exp(lp).sum() - 1) < 1e-6
    assert not np.allclose(lp, label_scores(dp, hd, m.params).data)


def test_attention_masks_illegal(corpus):
    """Every step of a teacher-forced rollout gives exactly zero mass to illegal parents."""
    for system, fusion in [("l2r", "l-adapted"), ("r2l", "r-adapted"), ("oi", "full")]:
        m = build(corpus, system=system, fusion=fusion)
        for sent in corpus[:4]:
            es = m.encode_sentence(sent)
            ctx = m.context(m.encode(es))
            state = ParserState.initial(system, es.n)
            hist, s, c = [], ctx.s0, ctx.c0
            while not state.done:
                legal = legal_parents(state)
                mask = np.ones(es.n + 1, dtype=bool)
                mask[legal] = False
                s, c = m.step(ctx, state.focus, dependent_snapshot(state), hist, s, c)
                hist.append(s)
                p = np.exp(m.step_log_probs(ctx, s, mask).data)
                assert np.all(p[mask] == 0.0)
                assert p[state.focus] == 0.0
                assert abs(p.sum() - 1) < 1e-6
                advance(state, sent.heads[state.focus - 1])


def test_uniform_loss(corpus):
    """Zero pointer and label scores give sum(log k_t) + n log L."""
    m = build(corpus, system="oi", fusion="simple")
    for k in ("ptr.W", "ptr.U", "ptr.V", "ptr.b", "lab.U", "lab.W", "lab.b"):
        m.params[k].data[...] = 0.0
    sent = corpus[1]
    es = m.encode_sentence(sent)
    state = ParserState.initial("oi", es.n)
    want = 0.0
    while not state.done:
        want += np.log(len(legal_parents(state)))
        advance(state, sent.heads[state.focus - 1])
    want += es.n * np.log(len(m.vocab.labels))
    assert float(m.sentence_loss(es).data) == pytest.approx(want, rel=1e-10)


def test_wrong_slot_asserts(corpus):
    m = build(corpus, system="oi", fusion="full")
    m.system = m.system.__class__("l2r")
    state = ParserState.initial("l2r", 3)
    with pytest.raises(AssertionError):
        m.dependent_states(dependent_snapshot(state), [])


@pytest.mark.parametrize("gate", ["gate1", "gate2"])
@pytest.mark.parametrize("system,fusion", HIER_VARIANTS)
def test_baseline_reduction(corpus, system, fusion, gate):
    hier = build(corpus, system=system, fusion=fusion, gate=gate)
    base = HierPtrNet(tiny(system=system, fusion="none", gate=gate), hier.vocab,
                      params={k: ad.parameter(v.data.copy()) for k, v in hier.params.items()
                              if not k.startswith(("dec.W_l", "dec.W_r", "dec.W_gl", "dec.W_gr", "dec.null"))})
    for k, v in hier.params.items():
        if k.startswith(("dec.W_l", "dec.W_r", "dec.W_gl", "dec.W_gr", "dec.null")):
            v.data[...] = 0.0
    for sent in corpus[:4]:
        a = float(hier.sentence_loss(hier.encode_sentence(sent)).data)
        b = float(base.sentence_loss(base.encode_sentence(sent)).data)
        assert abs(a - b) < 1e-6


def test_checkpoint_round_trip(tmp_path, corpus):
    m = HierPtrNet(ModelConfig(system="oi", fusion="full", gate="gate2").tiny(8), Vocab.build(corpus), seed=3)
    path = tmp_path / "m.hptr"
    save_checkpoint(path, m)
    back = load_checkpoint(path)
    assert back.config == m.config and back.vocab == m.vocab
    for k, v in m.params.items():
        assert back.params[k].data.tobytes() == v.data.tobytes()
    save_checkpoint(tmp_path / "again.hptr", back)
    assert (tmp_path / "again.hptr").read_bytes() == path.read_bytes()
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad")


def test_unk_replacement(corpus):
    m = HierPtrNet(ModelConfig(unk_replace=0.5).tiny(8), Vocab.build(corpus))
    es = m.encode_sentence(corpus[0])
    rng = np.random.default_rng(0)
    counts = np.zeros(es.n)
    for _ in range(2000):
        counts += m._word_ids(es, True, rng) == 1
    freq = np.array([m.vocab.word_freq[m.vocab.words[i]] for i in es.words])
    np.testing.assert_allclose(counts / 2000, 0.5 / (0.5 + freq), atol=0.04)
    np.testing.assert_array_equal(m._word_ids(es, False, rng), es.words)
