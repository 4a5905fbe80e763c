"""Hierarchical Pointer Network: encoder, gated dependent fusion, pointer decoder, labeler."""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .transition import (
    ParserState,
    Snapshot,
    System,
    advance,
    dependent_snapshot,
    legal_parents,
)
from .treebank import Sentence

PAD = "<pad>"
UNK = "<unk>"

SLOTS = ("lm", "rm", "la", "ra")

# dependent slots each fusion variant reads; "none" is the plain sequential decoder
FUSION_SLOTS: dict[str, tuple[str, ...]] = {
    "none": (),
    "full": ("lm", "rm", "la", "ra"),
    "simple": ("lm", "rm"),
    "l-adapted": ("lm", "la"),
    "l-simple": ("lm",),
    "r-adapted": ("rm", "ra"),
    "r-simple": ("rm",),
}

FUSION_SYSTEM: dict[str, Optional[System]] = {
    "none": None,
    "full": System.OI,
    "simple": System.OI,
    "l-adapted": System.L2R,
    "l-simple": System.L2R,
    "r-adapted": System.R2L,
    "r-simple": System.R2L,
}

# slots each transition system can ever fill for the focus word
SYSTEM_SLOTS: dict[System, tuple[str, ...]] = {
    System.L2R: ("lm", "la"),
    System.R2L: ("rm", "ra"),
    System.OI: SLOTS,
}

GATES = ("gate1", "gate2")


class ConfigError(ValueError):
    pass


def check_compatible(system: System | str, fusion: str) -> None:
    system = System.parse(system)
    if fusion not in FUSION_SLOTS:
        raise ConfigError(f"unknown fusion {fusion!r}; expected one of {sorted(FUSION_SLOTS)}")
    expected = FUSION_SYSTEM[fusion]
    if expected is not None and expected is not system:
        raise ConfigError(f"fusion {fusion!r} requires the {expected.value} system, not {system.value}")


def default_fusion(system: System | str) -> str:
    return {System.L2R: "l-simple", System.R2L: "r-simple", System.OI: "simple"}[System.parse(system)]


# ---------------------------------------------------------------- vocabulary


class Vocab:
    """String <-> id maps for words, characters, POS tags and labels.

    Every map reserves id 0 for PAD and id 1 for UNK.
    """

    def __init__(self, words: Sequence[str], chars: Sequence[str], pos: Sequence[str],
                 labels: Sequence[str], word_freq: Optional[Mapping[str, int]] = None):
        self.words = [PAD, UNK] + [w for w in words if w not in (PAD, UNK)]
        self.chars = [PAD, UNK] + [c for c in chars if c not in (PAD, UNK)]
        self.pos = [PAD, UNK] + [p for p in pos if p not in (PAD, UNK)]
        self.labels = [PAD, UNK] + [lab for lab in labels if lab not in (PAD, UNK)]
        self.word_freq = dict(word_freq or {})
        self._w = {w: i for i, w in enumerate(self.words)}
        self._c = {c: i for i, c in enumerate(self.chars)}
        self._p = {p: i for i, p in enumerate(self.pos)}
        self._l = {lab: i for i, lab in enumerate(self.labels)}

    @classmethod
    def build(cls, sentences: Iterable[Sentence], min_freq: int = 1) -> "Vocab":
        wc: Counter = Counter()
        cc: Counter = Counter()
        pc: Counter = Counter()
        lc: Counter = Counter()
        for s in sentences:
            for t in s.tokens:
                wc[t.form] += 1
                cc.update(t.form)
                pc[t.upos] += 1
                lc[t.deprel] += 1
        words = sorted(w for w, c in wc.items() if c >= min_freq)
        return cls(words, sorted(cc), sorted(pc), sorted(lc), {w: wc[w] for w in words})

    def word_id(self, w: str) -> int:
        return self._w.get(w, 1)

    def char_id(self, c: str) -> int:
        return self._c.get(c, 1)

    def pos_id(self, p: str) -> int:
        return self._p.get(p, 1)

    def label_id(self, lab: str) -> int:
        return self._l.get(lab, 1)

    def to_dict(self) -> dict:
        return {"words": self.words, "chars": self.chars, "pos": self.pos,
                "labels": self.labels, "word_freq": self.word_freq}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Vocab":
        return cls(d["words"], d["chars"], d["pos"], d["labels"], d.get("word_freq"))

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.to_dict() == other.to_dict()


# ---------------------------------------------------------------- configuration


@dataclass
class ModelConfig:
    system: str = "l2r"
    fusion: str = "l-simple"
    gate: str = "gate1"
    char_window: int = 3
    char_filters: int = 50
    char_dim: int = 100
    word_dim: int = 100
    pos_dim: int = 100
    ext_dim: int = 0
    enc_layers: int = 3
    enc_size: int = 512
    dec_layers: int = 1
    dec_size: int = 512
    arc_mlp: int = 512
    label_mlp: int = 128
    lstm_dropout: float = 0.33
    emb_dropout: float = 0.33
    unk_replace: float = 0.5
    unk_smoothed: bool = True
    max_word_len: int = 64
    decoder_init: str = "zeros"
    dtype: str = "float32"

    def __post_init__(self):
        self.system = System.parse(self.system).value
        self.gate = self.gate.lower().replace("-", "")
        if self.gate not in GATES:
            raise ConfigError(f"unknown gate {self.gate!r}; expected gate1 or gate2")
        check_compatible(self.system, self.fusion)
        if self.dec_layers != 1:
            raise ConfigError("only a single-layer decoder is supported")
        if self.decoder_init not in ("zeros", "encoder"):
            raise ConfigError("decoder_init must be 'zeros' or 'encoder'")
        if self.char_window < 1 or self.char_window % 2 == 0:
            raise ConfigError("char_window must be a positive odd number")

    @property
    def slots(self) -> tuple[str, ...]:
        return FUSION_SLOTS[self.fusion]

    @property
    def input_dim(self) -> int:
        return self.char_filters + self.word_dim + self.pos_dim + self.ext_dim

    def tiny(self, cap: int = 64) -> "ModelConfig":
        """Same model with every width capped at ``cap``."""
        return replace(
            self,
            char_filters=min(self.char_filters, cap), char_dim=min(self.char_dim, cap),
            word_dim=min(self.word_dim, cap), pos_dim=min(self.pos_dim, cap),
            enc_size=min(self.enc_size, cap), dec_size=min(self.dec_size, cap),
            arc_mlp=min(self.arc_mlp, cap), label_mlp=min(self.label_mlp, cap),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- sentence encoding


@dataclass
class EncodedSentence:
    words: np.ndarray
    pos: np.ndarray
    chars: np.ndarray  # n x L, PAD-filled
    char_lens: np.ndarray
    heads: np.ndarray
    labels: np.ndarray

    @property
    def n(self) -> int:
        return len(self.words)


def encode_sentence(vocab: Vocab, sent: Sentence, max_word_len: int = 64) -> EncodedSentence:
    forms = [t.form[:max_word_len] or "_" for t in sent.tokens]
    width = max(len(f) for f in forms)
    chars = np.zeros((len(forms), width), dtype=np.int64)
    for i, f in enumerate(forms):
        chars[i, :len(f)] = [vocab.char_id(c) for c in f]
    return EncodedSentence(
        words=np.array([vocab.word_id(t.form) for t in sent.tokens], dtype=np.int64),
        pos=np.array([vocab.pos_id(t.upos) for t in sent.tokens], dtype=np.int64),
        chars=chars,
        char_lens=np.array([len(f) for f in forms], dtype=np.int64),
        heads=np.array(sent.heads, dtype=np.int64),
        labels=np.array([vocab.label_id(t.deprel) for t in sent.tokens], dtype=np.int64),
    )


# ---------------------------------------------------------------- functional pieces


def fuse(s_prev: Tensor, deps: Mapping[str, Tensor], gate: str, fusion: str,
         params: Mapping[str, Tensor]) -> Tensor:
    """Gated combination of the previous decoder state and dependent states.

    ``deps`` must hold exactly the slots the fusion variant reads (absent
    dependents already replaced by the null vector). Returns g * h'.
    """
    slots = FUSION_SLOTS[fusion]
    if set(deps) != set(slots):
        raise ConfigError(f"fusion {fusion!r} reads {slots}, got {tuple(deps)}")
    states = [deps[k] for k in slots]
    if gate == "gate1":
        w_g = [params["dec.W_gp"]] + [params[f"dec.W_g{k}"] for k in slots]
        g_pre = ad.concat([s_prev] + states) @ ad.concat(w_g) if states else s_prev @ w_g[0]
        g = ad.sigmoid(g_pre + params["dec.b_g"])
    elif gate == "gate2":
        if states:
            sims = ad.concat([s_prev * s for s in states])
            w_g = ad.concat([params[f"dec.W_g{k}"] for k in slots])
            g = ad.sigmoid(sims @ w_g + params["dec.b_g"])
        else:
            g = ad.sigmoid(params["dec.b_g"])
    else:
        raise ConfigError(f"unknown gate {gate!r}")
    if states:
        w_f = ad.concat([params["dec.W_p"]] + [params[f"dec.W_{k}"] for k in slots])
        h1 = ad.tanh(ad.concat([s_prev] + states) @ w_f)
    else:
        h1 = ad.tanh(s_prev @ params["dec.W_p"])
    return g * h1


def decoder_step(h2: Tensor, enc_proj_i: Tensor, s_prev: Tensor, c_prev: Tensor,
                 params: Mapping[str, Tensor]) -> tuple[Tensor, Tensor]:
    """s_t = LSTM([h''_t ; h_i]) with the h_i half of the input projection precomputed."""
    zx = h2 @ params["dec.Wx_fuse"] + enc_proj_i
    hc = ad.lstm_cell(zx, s_prev, c_prev, params["dec.Wh"])
    H = s_prev.shape[0]
    return hc[:H], hc[H:]


def point_scores(f1_s: Tensor, pointer_matrix: Tensor, pointer_bias: Tensor,
                 mask: Optional[np.ndarray]) -> tuple[Tensor, Tensor]:
    """Biaffine pointer scores v and masked log-attention log(a).

    ``pointer_matrix`` = W f2(H)^T + U 1^T and ``pointer_bias`` = f2(H) V + b,
    so ``f1_s @ pointer_matrix + pointer_bias`` equals
    f1(s)^T W f2(h_j) + U^T f1(s) + V^T f2(h_j) + b for every position j.
    Works for one step (vector) or a stack of steps (matrix).
    """
    v = f1_s @ pointer_matrix + pointer_bias
    return v, ad.log_softmax(v, axis=-1, mask=mask)


def label_scores(head_proj: Tensor, dep_proj: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Log-distribution over labels for arcs given label-MLP projections.

    Accepts single vectors or aligned n x d matrices.
    """
    single = head_proj.ndim == 1
    if single:
        head_proj = ad.reshape(head_proj, (1, -1))
        dep_proj = ad.reshape(dep_proj, (1, -1))
    bil = ad.einsum("nd,ldk,nk->nl", dep_proj, params["lab.U"], head_proj)
    lin = ad.concat([dep_proj, head_proj], axis=1) @ params["lab.W"]
    logp = ad.log_softmax(bil + lin + params["lab.b"], axis=-1)
    return logp[0] if single else logp


# ---------------------------------------------------------------- the network


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], shape[0])
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class DecodeContext:
    """Per-sentence quantities shared by every decoding step."""

    def __init__(self, model: "HierPtrNet", enc: Tensor):
        p = model.params
        E2 = enc.shape[1]
        self.enc = enc
        self.n = enc.shape[0] - 1
        self.enc_proj = enc @ p["dec.Wx_enc"] + p["dec.b"]
        f2 = ad.elu(enc @ p["ptr.f2.W"] + p["ptr.f2.b"])
        self.pointer_matrix = p["ptr.W"] @ ad.transpose(f2) + ad.reshape(p["ptr.U"], (-1, 1))
        self.pointer_bias = f2 @ p["ptr.V"] + p["ptr.b"]
        self.label_head = ad.elu(enc @ p["lab.head.W"] + p["lab.head.b"])
        self.label_dep = ad.elu(enc @ p["lab.dep.W"] + p["lab.dep.b"])
        H = model.config.dec_size
        dt = enc.dtype
        if model.config.decoder_init == "encoder":
            half = E2 // 2
            final = ad.concat([enc[self.n, :half], enc[0, half:]])
            self.s0 = ad.tanh(final @ p["dec.W_init"] + p["dec.b_init"])
        else:
            self.s0 = Tensor(np.zeros(H, dtype=dt))
        self.c0 = Tensor(np.zeros(H, dtype=dt))


class HierPtrNet:
    def __init__(self, config: ModelConfig, vocab: Vocab, seed: int = 0,
                 params: Optional[dict[str, Tensor]] = None):
        self.config = config
        self.vocab = vocab
        self.system = System.parse(config.system)
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params: dict[str, Tensor] = params

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def _shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.config
        v = self.vocab
        E, H, A, Lm = c.enc_size, c.dec_size, c.arc_mlp, c.label_mlp
        shapes: dict[str, tuple[int, ...]] = {
            "emb.word": (len(v.words), c.word_dim),
            "emb.char": (len(v.chars), c.char_dim),
            "char.W": (c.char_window * c.char_dim, c.char_filters),
            "char.b": (c.char_filters,),
            "enc.root": (c.input_dim,),
        }
        if c.pos_dim:
            shapes["emb.pos"] = (len(v.pos), c.pos_dim)
        d_in = c.input_dim
        for layer in range(c.enc_layers):
            for direction in ("fw", "bw"):
                shapes[f"enc.l{layer}.{direction}.Wx"] = (d_in, 4 * E)
                shapes[f"enc.l{layer}.{direction}.Wh"] = (E, 4 * E)
                shapes[f"enc.l{layer}.{direction}.b"] = (4 * E,)
            d_in = 2 * E
        shapes.update({
            "dec.Wx_fuse": (H, 4 * H),
            "dec.Wx_enc": (2 * E, 4 * H),
            "dec.Wh": (H, 4 * H),
            "dec.b": (4 * H,),
            "dec.W_p": (H, H),
            "dec.b_g": (H,),
        })
        if c.gate == "gate1":
            shapes["dec.W_gp"] = (H, H)
        for k in c.slots:
            shapes[f"dec.W_g{k}"] = (H, H)
            shapes[f"dec.W_{k}"] = (H, H)
        if c.slots:
            shapes["dec.null"] = (H,)
        if c.decoder_init == "encoder":
            shapes["dec.W_init"] = (2 * E, H)
            shapes["dec.b_init"] = (H,)
        nl = len(v.labels)
        shapes.update({
            "ptr.f1.W": (H, A), "ptr.f1.b": (A,),
            "ptr.f2.W": (2 * E, A), "ptr.f2.b": (A,),
            "ptr.W": (A, A), "ptr.U": (A,), "ptr.V": (A,), "ptr.b": (1,),
            "lab.head.W": (2 * E, Lm), "lab.head.b": (Lm,),
            "lab.dep.W": (2 * E, Lm), "lab.dep.b": (Lm,),
            "lab.U": (nl, Lm, Lm), "lab.W": (2 * Lm, nl), "lab.b": (nl,),
        })
        return shapes

    def _init_params(self, rng: np.random.Generator) -> dict[str, Tensor]:
        dt = self.dtype
        out: dict[str, Tensor] = {}
        for name, shape in self._shapes().items():
            if name.startswith("emb."):
                data = rng.normal(0.0, 1.0 / np.sqrt(shape[1]), size=shape).astype(dt)
                data[0] = 0.0
            elif name == "enc.root":
                data = rng.normal(0.0, 0.1, size=shape).astype(dt)
            elif name == "dec.null" or len(shape) == 1:
                data = np.zeros(shape, dtype=dt)
                if name.startswith("enc.") or name == "dec.b":
                    data[shape[0] // 4: shape[0] // 2] = 1.0  # forget-gate bias
            elif name == "lab.U":
                data = rng.normal(0.0, 1.0 / shape[1], size=shape).astype(dt)
            else:
                data = _glorot(rng, shape, dt)
            out[name] = ad.parameter(data, name=name)
        return out

    # ------------------------------------------------------------ helpers

    def astype(self, dtype) -> "HierPtrNet":
        dtype = np.dtype(dtype)
        cfg = replace(self.config, dtype=dtype.name)
        params = {k: ad.parameter(v.data.astype(dtype), name=k) for k, v in self.params.items()}
        return HierPtrNet(cfg, self.vocab, params=params)

    def copy(self) -> "HierPtrNet":
        return self.astype(self.dtype)

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def encode_sentence(self, sent: Sentence) -> EncodedSentence:
        return encode_sentence(self.vocab, sent, self.config.max_word_len)

    # ------------------------------------------------------------ encoder

    def _char_features(self, es: EncodedSentence) -> Tensor:
        c = self.config
        half = c.char_window // 2
        n, width = es.chars.shape
        padded = np.pad(es.chars, ((0, 0), (half, half)))
        windows = np.stack([padded[:, k:k + width] for k in range(c.char_window)], axis=-1)
        emb = ad.embedding_gather(self.params["emb.char"], windows)  # n, L, w, dc
        flat = ad.reshape(emb, (n * width, c.char_window * c.char_dim))
        conv = ad.reshape(flat @ self.params["char.W"] + self.params["char.b"], (n, width, c.char_filters))
        beyond = np.arange(width)[None, :] >= es.char_lens[:, None]
        if beyond.any():
            conv = conv + (beyond[:, :, None] * -1e9).astype(self.dtype)
        return ad.max_over_axis(conv, axis=1)

    def _word_ids(self, es: EncodedSentence, training: bool, rng: Optional[np.random.Generator]) -> np.ndarray:
        ids = es.words
        c = self.config
        if not training or rng is None or c.unk_replace <= 0:
            return ids
        if c.unk_smoothed:
            freq = np.array([self.vocab.word_freq.get(self.vocab.words[i], 0) for i in ids], dtype=float)
            prob = c.unk_replace / (c.unk_replace + freq)
        else:
            prob = np.full(len(ids), c.unk_replace)
        drop = rng.random(len(ids)) < prob
        return np.where(drop & (ids > 1), 1, ids)

    def encode(self, es: EncodedSentence, ext: Optional[np.ndarray] = None, training: bool = False,
               rng: Optional[np.random.Generator] = None) -> Tensor:
        """Encoder states h_0..h_n, shape (n+1, 2*enc_size); row 0 is ROOT."""
        c = self.config
        p = self.params
        n = es.n
        parts = [self._char_features(es), ad.embedding_gather(p["emb.word"], self._word_ids(es, training, rng))]
        if c.pos_dim:
            parts.append(ad.embedding_gather(p["emb.pos"], es.pos))
        if c.ext_dim:
            if ext is None:
                raise ValueError("model expects external embeddings but none were given")
            ext = np.asarray(ext, dtype=self.dtype)
            if ext.shape != (n, c.ext_dim):
                raise ValueError(f"external embeddings shape {ext.shape} != ({n}, {c.ext_dim})")
            parts.append(Tensor(ext))
        elif ext is not None:
            raise ValueError("model has no external-embedding input (ext_dim = 0)")
        x = ad.concat(parts, axis=1)
        x = ad.concat([ad.reshape(p["enc.root"], (1, -1)), x], axis=0)
        x = ad.dropout(x, c.emb_dropout, rng, training)
        for layer in range(c.enc_layers):
            if layer > 0:
                x = ad.dropout(x, c.lstm_dropout, rng, training)
            pre = f"enc.l{layer}"
            fw = ad.lstm_layer(x, p[f"{pre}.fw.Wx"], p[f"{pre}.fw.Wh"], p[f"{pre}.fw.b"])
            bw = ad.lstm_layer(x, p[f"{pre}.bw.Wx"], p[f"{pre}.bw.Wh"], p[f"{pre}.bw.b"], reverse=True)
            x = ad.concat([fw, bw], axis=1)
        return ad.dropout(x, c.lstm_dropout, rng, training)

    # ------------------------------------------------------------ decoder

    def context(self, enc: Tensor) -> DecodeContext:
        return DecodeContext(self, enc)

    def dependent_states(self, snap: Snapshot, history: Sequence[Tensor]) -> dict[str, Tensor]:
        allowed = SYSTEM_SLOTS[self.system]
        out = {}
        for k in self.config.slots:
            if k not in allowed:
                raise AssertionError(f"{self.system.value} never provides slot {k}")
            step = snap.step_of(k)
            out[k] = self.params["dec.null"] if step is None else history[step]
        return out

    def step(self, ctx: DecodeContext, focus: int, snap: Snapshot, history: Sequence[Tensor],
             s_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
        """One hierarchical decoder step: fuse dependents, then run the LSTM cell."""
        deps = self.dependent_states(snap, history)
        h2 = fuse(s_prev, deps, self.config.gate, self.config.fusion, self.params)
        return decoder_step(h2, ctx.enc_proj[focus], s_prev, c_prev, self.params)

    def f1(self, s: Tensor) -> Tensor:
        return ad.elu(s @ self.params["ptr.f1.W"] + self.params["ptr.f1.b"])

    def step_log_probs(self, ctx: DecodeContext, s: Tensor, mask: np.ndarray) -> Tensor:
        return point_scores(self.f1(s), ctx.pointer_matrix, ctx.pointer_bias, mask)[1]

    def arc_label_log_probs(self, ctx: DecodeContext, heads: Sequence[int]) -> Tensor:
        """n x L label log-probabilities for arcs heads[i] -> i+1."""
        heads = np.asarray(heads, dtype=np.int64)
        dep = ctx.label_dep[1:]
        head = ad.embedding_gather(ctx.label_head, heads)
        return label_scores(head, dep, self.params)

    # ------------------------------------------------------------ loss

    def sentence_loss(self, es: EncodedSentence, ext: Optional[np.ndarray] = None, training: bool = False,
                      rng: Optional[np.random.Generator] = None, label_weight: float = 1.0) -> Tensor:
        """Teacher-forced pointer cross-entropy plus arc-label cross-entropy (summed over words)."""
        n = es.n
        ctx = self.context(self.encode(es, ext, training, rng))
        state = ParserState.initial(self.system, n)
        mask = np.ones((n, n + 1), dtype=bool)
        gold = np.empty(n, dtype=np.int64)
        history: list[Tensor] = []
        s_prev, c_prev = ctx.s0, ctx.c0
        for t in range(n):
            focus = state.focus
            p = int(es.heads[focus - 1])
            legal = legal_parents(state)
            if p not in legal:
                raise ValueError(f"gold parent {p} of word {focus} is not a legal action")
            mask[t, legal] = False
            gold[t] = p
            s_prev, c_prev = self.step(ctx, focus, dependent_snapshot(state), history, s_prev, c_prev)
            history.append(s_prev)
            advance(state, p)
        f1 = self.f1(ad.stack(history))
        _, logp = point_scores(f1, ctx.pointer_matrix, ctx.pointer_bias, mask)
        ptr_nll = -ad.sum(logp[np.arange(n), gold])
        label_logp = self.arc_label_log_probs(ctx, es.heads)
        lab_nll = -ad.sum(label_logp[np.arange(n), es.labels])
        if label_weight == 1.0:
            return ptr_nll + lab_nll
        return ptr_nll + ad.scale(lab_nll, label_weight)

    # ------------------------------------------------------------ checkpoints

    def save(self, path) -> None:
        save_checkpoint(path, self)

    @classmethod
    def load(cls, path) -> "HierPtrNet":
        return load_checkpoint(path)


# ---------------------------------------------------------------- checkpoint file

class CheckpointError(ValueError):
    pass


MAGIC = b"HPTRNET\0"
FORMAT_VERSION = 1


def save_checkpoint(path, model: HierPtrNet, extra: Optional[dict] = None) -> None:
    """Write MAGIC, u64 header length, JSON header, then little-endian float32 tensors."""
    index = []
    blobs = []
    offset = 0
    for name, t in model.params.items():
        raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    cfg = model.config.to_dict()
    cfg["dtype"] = "float32"
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "config": cfg,
        "vocab": model.vocab.to_dict(),
        "tensors": index,
        "extra": extra or {},
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (size,) = struct.unpack("<Q", f.read(8))
        return json.loads(f.read(size).decode("utf-8"))


def load_checkpoint(path) -> HierPtrNet:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (size,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(size).decode("utf-8"))
        body = f.read()
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    config = ModelConfig.from_dict(header["config"])
    vocab = Vocab.from_dict(header["vocab"])
    params = {}
    for entry in header["tensors"]:
        raw = body[entry["offset"]: entry["offset"] + entry["nbytes"]]
        data = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).astype(np.float32)
        params[entry["name"]] = ad.parameter(data, name=entry["name"])
    model = HierPtrNet(config, vocab, params=params)
    expected = model._shapes()
    if {k: tuple(v.shape) for k, v in params.items()} != expected:
        raise CheckpointError(f"{path}: tensor set does not match the stored configuration")
    return model
