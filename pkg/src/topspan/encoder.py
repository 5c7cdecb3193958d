"""Token embeddings, a small pre-norm self-attention encoder, and fence vectors.

Every utterance is wrapped in START/END sentinels, so an n-token input has
n + 2 encoder rows ``h_0 .. h_{n+1}`` and n + 1 fence vectors
``b_k = [second half of h_k ; first half of h_{k+1}]``.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from . import numcore as nc
from .numcore import Tensor

UNK, START, END = 0, 1, 2
RESERVED = ("<unk>", "<s>", "</s>")


class Mode(str, enum.Enum):
    BASE = "base"
    LEX = "lex"
    GR = "lex-gr"


@dataclass
class EncoderConfig:
    d_word: int = 64
    d_pos: int = 64
    d_slot: int = 64
    d_model: int = 128
    d_ff: int = 256
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 64
    mode: Mode = Mode.BASE
    swap_halves: bool = False

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.d_model % 2:
            raise ValueError("d_model must be even (fence vectors take half of each side)")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.mode is Mode.GR and self.d_slot != self.d_word:
            raise ValueError("generalized mode needs d_slot == d_word")

    @property
    def d_in(self):
        d = self.d_word + self.d_pos
        return d + self.d_slot if self.mode is not Mode.BASE else d

    def to_dict(self):
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


class Vocab:
    """Lower-cased word vocabulary; the first ids are reserved."""

    def __init__(self, tokens=RESERVED):
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def add(self, tok):
        tok = tok.lower()
        if tok not in self.index:
            self.index[tok] = len(self.tokens)
            self.tokens.append(tok)
        return self.index[tok]

    def lookup(self, tok):
        return self.index.get(tok.lower(), UNK)

    @classmethod
    def build(cls, sentences, reserved=RESERVED):
        v = cls(reserved)
        for toks in sentences:
            for t in toks:
                v.add(t)
        return v

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def init_encoder(params, cfg, vocab_size, n_categories=0, prefix="enc."):
    p = prefix
    params.add(p + "word", (vocab_size, cfg.d_word), "unit")
    params.add(p + "pos", (cfg.max_len, cfg.d_pos), "unit")
    if cfg.mode is not Mode.BASE:
        params.add(p + "slot", (n_categories + 1, cfg.d_slot), "unit")
    params.add(p + "in.W", (cfg.d_in, cfg.d_model))
    params.add(p + "in.b", (cfg.d_model,), "zeros")
    for layer in range(cfg.n_layers):
        q = f"{p}l{layer}."
        params.add(q + "ln1.g", (cfg.d_model,), "ones")
        params.add(q + "ln1.b", (cfg.d_model,), "zeros")
        for m in "qkvo":
            params.add(q + f"W{m}", (cfg.d_model, cfg.d_model))
        params.add(q + "bo", (cfg.d_model,), "zeros")
        params.add(q + "ln2.g", (cfg.d_model,), "ones")
        params.add(q + "ln2.b", (cfg.d_model,), "zeros")
        params.add(q + "ff1.W", (cfg.d_model, cfg.d_ff))
        params.add(q + "ff1.b", (cfg.d_ff,), "zeros")
        params.add(q + "ff2.W", (cfg.d_ff, cfg.d_model))
        params.add(q + "ff2.b", (cfg.d_model,), "zeros")
    params.add(p + "lnf.g", (cfg.d_model,), "ones")
    params.add(p + "lnf.b", (cfg.d_model,), "zeros")


def token_ids(tokens, vocab, sentinels=True):
    ids = [vocab.lookup(t) for t in tokens]
    return [START] + ids + [END] if sentinels else ids


def embed_batch(ids, cfg, params, tags=None, flags=None, prefix="enc."):
    """Input rows for a padded batch.

    ``ids`` is ``(B, T)``; ``tags`` is the ``(B, T, 1 + C)`` 0/1 category
    matrix (sentinel and pad rows point at the out-of-category column) and
    ``flags`` marks rows covered by at least one kept lexicon match.
    """
    ids = np.asarray(ids)
    B, T = ids.shape
    if T > cfg.max_len:
        raise ValueError(f"sequence of {T} rows exceeds max_len={cfg.max_len}")
    w = nc.gather(params[prefix + "word"], ids)
    pos = nc.gather(params[prefix + "pos"], np.broadcast_to(np.arange(T), (B, T)))
    if cfg.mode is Mode.BASE:
        return nc.concat([w, pos], axis=-1)
    q = nc.matmul(Tensor(tags), params[prefix + "slot"])
    if cfg.mode is Mode.GR:
        f = np.asarray(flags, dtype=np.float64)[..., None]
        w = w * Tensor(1.0 - f) + q * Tensor(f)
    return nc.concat([w, pos, q], axis=-1)


def encode(X, cfg, params, valid=None, prefix="enc.", dropout=0.0, rng=None):
    """Pre-norm transformer over ``X`` of shape ``(B, T, d_in)``.

    ``valid`` is a ``(B, T)`` boolean mask; padded keys are ignored.
    Dropout (input and both residual branches) is active only with ``rng``.
    """
    B, T, _ = X.shape
    d, nh = cfg.d_model, cfg.n_heads
    dh = d // nh
    if T > cfg.max_len:
        raise ValueError(f"sequence of {T} rows exceeds max_len={cfg.max_len}")
    h = nc.matmul(nc.dropout(X, dropout, rng), params[prefix + "in.W"]) + params[prefix + "in.b"]
    if valid is None:
        key_bias = np.zeros((B, 1, 1, T))
    else:
        key_bias = np.where(np.asarray(valid), 0.0, -1e9)[:, None, None, :]
    scale = 1.0 / np.sqrt(dh)
    for layer in range(cfg.n_layers):
        q = f"{prefix}l{layer}."
        x = nc.layer_norm(h, params[q + "ln1.g"], params[q + "ln1.b"])

        def heads(t):
            return t.reshape(B, T, nh, dh).transpose(0, 2, 1, 3)

        Q = heads(nc.matmul(x, params[q + "Wq"]))
        K = heads(nc.matmul(x, params[q + "Wk"]))
        V = heads(nc.matmul(x, params[q + "Wv"]))
        att = nc.softmax(nc.matmul(Q, K.transpose(0, 1, 3, 2)) * scale + key_bias)
        ctx = nc.matmul(att, V).transpose(0, 2, 1, 3).reshape(B, T, d)
        h = h + nc.dropout(nc.matmul(ctx, params[q + "Wo"]) + params[q + "bo"], dropout, rng)
        x = nc.layer_norm(h, params[q + "ln2.g"], params[q + "ln2.b"])
        ff = nc.relu(nc.matmul(x, params[q + "ff1.W"]) + params[q + "ff1.b"])
        h = h + nc.dropout(nc.matmul(ff, params[q + "ff2.W"]) + params[q + "ff2.b"], dropout, rng)
    return nc.layer_norm(h, params[prefix + "lnf.g"], params[prefix + "lnf.b"])


def boundaries(H, cfg):
    """Fence vectors from sentinel-padded encoder rows.

    Works on ``(T, d)`` or ``(B, T, d)``; returns ``T - 1`` fences per row.
    """
    d = H.shape[-1]
    if d % 2:
        raise ValueError("odd hidden size cannot be halved")
    half = d // 2
    left = H[..., :-1, :half] if cfg.swap_halves else H[..., :-1, half:]
    right = H[..., 1:, half:] if cfg.swap_halves else H[..., 1:, :half]
    return nc.concat([left, right], axis=-1)


def span_rep(B, i, j):
    if not i < j:
        raise ValueError(f"empty span ({i}, {j})")
    return B[j] - B[i]


def span_split_rep(r, B, i, j, k):
    if not i < k < j:
        raise ValueError(f"split fence {k} is not interior to ({i}, {j})")
    return r + B[k]


def embed_tokens(utt, cfg, params, vocab, tags=None, flags=None, prefix="enc."):
    """Single-utterance input matrix of shape ``(n + 2, d_in)``."""
    ids = np.array([token_ids(utt.tokens, vocab)])
    if cfg.mode is not Mode.BASE:
        tags, flags = pad_tags(tags, flags)
        tags, flags = tags[None], flags[None]
    X = embed_batch(ids, cfg, params, tags, flags, prefix=prefix)
    return X[0]


def pad_tags(tags, flags):
    """Add out-of-category sentinel rows around a ``(n, 1 + C)`` tag matrix."""
    c = tags.shape[1]
    edge = np.zeros((1, c))
    edge[0, 0] = 1.0
    return (np.concatenate([edge, tags, edge]),
            np.concatenate([[False], np.asarray(flags, dtype=bool), [False]]))
