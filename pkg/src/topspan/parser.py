"""Span label scoring, CKY decoding, margin training.

The chart works on collapsed, binarized trees (see :mod:`topspan.treebank`).
Label id 0 is always Dummy, whose score is fixed at 0.

Decoding runs on plain numpy values through :mod:`topspan.chart`; only the
nodes of the gold tree and of the loss-augmented prediction are re-scored on
the autodiff tape, which is all the hinge loss needs.
"""
from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import chart
from . import numcore as nc
from .encoder import (
    UNK, EncoderConfig, Mode, Vocab, boundaries, embed_batch, encode, init_encoder, pad_tags, token_ids,
)
from .numcore import OptimState, ParamStore, Tensor, adam_step, backward
from .lexicon import tag_matrix
from .treebank import DUMMY, Label, ParseTree, TreeError, from_chart_tree, to_chart_tree

log = logging.getLogger(__name__)

DUMMY_ID = 0


class LabelVocab:
    def __init__(self, labels=()):
        self.labels = [DUMMY] + [l for l in labels if not l.is_dummy]
        self.index = {l: i for i, l in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return self.labels[i]

    def get(self, label):
        return self.index.get(label)

    @classmethod
    def from_trees(cls, chart_trees):
        seen = set()
        for t in chart_trees:
            for node in t.nodes():
                if node.label is not None and not node.label.is_dummy:
                    seen.add(node.label)
        return cls(sorted(seen, key=str))

    def to_list(self):
        return [str(l) for l in self.labels[1:]]

    @classmethod
    def from_list(cls, names):
        return cls([Label.from_string(s) for s in names])


# ------------------------------------------------------------ table-level core

def backtrace(label, split, labels, i, j):
    lab = labels[int(label[i, j])]
    if j - i == 1:
        return ParseTree(lab, (i, j))
    k = int(split[i, j])
    return ParseTree(lab, (i, j), (backtrace(label, split, labels, i, k),
                                   backtrace(label, split, labels, k, j)))


def cky_decode_table(scores, labels, cost=None):
    """Best binarized tree under a ``(n+1, n+1, L)`` score table.

    Returns ``(tree, score)``. The Dummy column must already be zero.
    """
    n = scores.shape[0] - 1
    best, lab, split = chart.decode_table(np.ascontiguousarray(scores, dtype=np.float64), cost)
    return backtrace(lab, split, labels, 0, n), best[0, n]


def chart_nodes(tree, labels):
    """``(i, j, k, label_id)`` for every non-Dummy node; ``k`` is -1 on leaves."""
    out = []
    for node in tree.nodes():
        if node.label is None or node.label.is_dummy:
            continue
        lid = labels.get(node.label)
        if lid is None:
            raise KeyError(f"label {node.label} not in the label vocabulary")
        k = node.children[0].span[1] if node.children else -1
        out.append((node.span[0], node.span[1], k, lid))
    return out


def tree_score_table(tree, scores, labels):
    """Sum of label scores over the tree's non-Dummy nodes, in pre-order."""
    total = 0.0
    for i, j, _, lid in chart_nodes(tree, labels):
        total += scores[i, j, lid]
    return total


def hamming_cost(gold, n, labels):
    """Cost table: 1 for a non-Dummy label not on that span in ``gold``."""
    cost = np.ones((n + 1, n + 1, len(labels)))
    cost[:, :, DUMMY_ID] = 0.0
    for i, j, _, lid in chart_nodes(gold, labels):
        cost[i, j, lid] = 0.0
    return cost


def theta(pred, gold, labels):
    """Number of the prediction's labeled spans absent from the gold tree."""
    gold_set = {(i, j, lid) for i, j, _, lid in chart_nodes(gold, labels)}
    return sum(1 for i, j, _, lid in chart_nodes(pred, labels) if (i, j, lid) not in gold_set)


def margin_loss_table(scores, gold, labels):
    """Hinge loss with a loss-augmented decode over an injected score table."""
    n = scores.shape[0] - 1
    cost = hamming_cost(gold, n, labels)
    pred, _ = cky_decode_table(scores, labels, cost)
    aug = tree_score_table(pred, scores, labels) + theta(pred, gold, labels)
    return max(0.0, aug - tree_score_table(gold, scores, labels)), pred


# -------------------------------------------------------------------- config

@dataclass
class TrainConfig:
    epochs: int = 60
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    eval_every: int = 1
    stop_at_perfect: bool = False
    patience: int = 0
    dropout: float = 0.0
    word_dropout: float = 0.0
    lr_decay: bool = False      # linear decay to 0 over the epochs
    occ_dropout: float = 0.3    # drop kept lexicon matches while training

    def __post_init__(self):
        if self.epochs < 1 or self.lr <= 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("training hyperparameters must be positive")
        if not all(0.0 <= r < 1.0 for r in (self.dropout, self.word_dropout, self.occ_dropout)):
            raise ValueError("dropout rates must lie in [0, 1)")


@dataclass
class Example:
    """A tokenized utterance with optional lexicon tags and gold tree."""
    tokens: tuple
    tags: np.ndarray | None = None
    flags: np.ndarray | None = None
    gold: ParseTree | None = None
    chart_gold: ParseTree | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.tokens)


# -------------------------------------------------------------------- parser

class SpanParser:
    def __init__(self, cfg: EncoderConfig, vocab: Vocab, labels: LabelVocab, categories=(),
                 use_split=False, d_hidden=128, seed=0, params=None):
        self.cfg = cfg
        self.vocab = vocab
        self.labels = labels
        self.categories = list(categories)
        self.category_ids = {c: i + 1 for i, c in enumerate(self.categories)}
        self.use_split = use_split
        self.d_hidden = d_hidden
        if params is None:
            params = ParamStore(seed)
            init_encoder(params, cfg, len(vocab), len(self.categories))
            params.add("score.W", (cfg.d_model, d_hidden))
            params.add("score.b", (d_hidden,), "zeros")
            params.add("score.V", (d_hidden, len(labels)))
        self.params = params
        self.stats = Counter()

    @property
    def lexical(self):
        return self.cfg.mode is not Mode.BASE

    # ---------------------------------------------------------------- encoder

    def fences(self, examples, rng=None, dropout=0.0, word_dropout=0.0, occ_dropout=0.0):
        """Fence vectors for a batch as a ``(B, T - 1, d_model)`` Tensor.

        With ``rng`` given, tokens are swapped for UNK at ``word_dropout``,
        kept lexicon matches (``meta['occs']``) are ignored at ``occ_dropout``
        and the encoder applies ``dropout``; without it the pass is
        deterministic.
        """
        T = max(len(e) for e in examples) + 2
        B = len(examples)
        ids = np.zeros((B, T), dtype=np.int64)
        valid = np.zeros((B, T), dtype=bool)
        tags = flags = None
        if self.lexical:
            tags = np.zeros((B, T, len(self.categories) + 1))
            tags[:, :, 0] = 1.0
            flags = np.zeros((B, T), dtype=bool)
        for b, e in enumerate(examples):
            n = len(e)
            ids[b, :n + 2] = token_ids(e.tokens, self.vocab)
            if rng is not None and word_dropout > 0:
                drop = rng.random(n) < word_dropout
                ids[b, 1:n + 1][drop] = UNK
            valid[b, :n + 2] = True
            if self.lexical:
                if e.tags is None:
                    raise ValueError("lexicon-injected parser needs tagged examples")
                t, f = e.tags, e.flags
                if rng is not None and occ_dropout > 0 and "occs" in e.meta:
                    keep = [o for o in e.meta["occs"] if rng.random() >= occ_dropout]
                    t, f = tag_matrix(n, keep, self.category_ids)
                t, f = pad_tags(t, f)
                tags[b, :n + 2] = t
                flags[b, :n + 2] = f
        X = embed_batch(ids, self.cfg, self.params, tags, flags)
        H = encode(X, self.cfg, self.params, valid, dropout=dropout, rng=rng)
        return boundaries(H, self.cfg)

    # ----------------------------------------------------------------- scorer

    def score_labels(self, rep):
        """``V relu(W rep + b)`` with the Dummy column forced to 0."""
        p = self.params
        h = nc.relu(nc.matmul(rep, p["score.W"]) + p["score.b"])
        s = nc.matmul(h, p["score.V"])
        mask = np.ones(len(self.labels))
        mask[DUMMY_ID] = 0.0
        return s * Tensor(mask)

    def _tables(self, fence_np):
        p = self.params
        P = fence_np @ p["score.W"].data
        pre = P[None, :, :] - P[:, None, :] + p["score.b"].data
        return P, pre

    def label_table(self, fence_np):
        """Plain-span score table ``(n+1, n+1, L)``, Dummy column zero."""
        _, pre = self._tables(fence_np)
        s = np.maximum(pre, 0.0) @ self.params["score.V"].data
        s[..., DUMMY_ID] = 0.0
        return s

    def decode(self, fence_np, cost=None):
        """CKY over one utterance's fence vectors ``(n + 1, d_model)``."""
        n = fence_np.shape[0] - 1
        if self.use_split:
            P, pre = self._tables(fence_np)
            best, lab, split = chart.decode_split(
                np.ascontiguousarray(pre), np.ascontiguousarray(P),
                np.ascontiguousarray(self.params["score.V"].data), cost, DUMMY_ID)
        else:
            best, lab, split = chart.decode_table(self.label_table(fence_np), cost)
        return backtrace(lab, split, self.labels, 0, n), best[0, n]

    def tree_score_np(self, tree, fence_np):
        nodes = chart_nodes(tree, self.labels)
        if not nodes:
            return 0.0
        i, j, k, lid = (np.array(x) for x in zip(*nodes))
        rep = fence_np[j] - fence_np[i]
        if self.use_split:
            rep = rep + np.where((k >= 0)[:, None], fence_np[np.maximum(k, 0)], 0.0)
        p = self.params
        h = np.maximum(rep @ p["score.W"].data + p["score.b"].data, 0.0)
        return float((h @ p["score.V"].data)[np.arange(len(lid)), lid].sum())

    def tree_score(self, fences, nodes_signs, offsets):
        """Signed sum of node scores on the tape.

        ``fences`` is the flattened ``(B * (T - 1), d)`` Tensor; ``nodes_signs``
        lists ``(example_index, i, j, k, label_id, sign)``.
        """
        b, i, j, k, lid, sign = (np.array(x) for x in zip(*nodes_signs))
        off = offsets[b]
        rep = nc.gather(fences, off + j) - nc.gather(fences, off + i)
        if self.use_split:
            has = (k >= 0).astype(np.float64)[:, None]
            rep = rep + nc.gather(fences, off + np.maximum(k, 0)) * Tensor(has)
            self.stats["split_reps_multi"] += int(((j - i) >= 3).sum())
        s = self.score_labels(rep)
        picked = s[np.arange(len(lid)), lid]
        return (picked * Tensor(sign.astype(np.float64))).sum()

    # ------------------------------------------------------------------- loss

    def batch_loss(self, examples, rng=None, dropout=0.0, word_dropout=0.0, occ_dropout=0.0):
        """Mean hinge loss over a batch; returns ``(loss Tensor, info)``."""
        F = self.fences(examples, rng, dropout, word_dropout, occ_dropout)
        Bsz, T1, d = F.shape
        flat = F.reshape(Bsz * T1, d)
        offsets = np.arange(Bsz) * T1
        terms = []
        const = 0.0
        total = 0.0
        for b, e in enumerate(examples):
            n = len(e)
            fnp = F.data[b, :n + 1]
            gold = e.chart_gold
            cost = hamming_cost(gold, n, self.labels)
            gold_score = self.tree_score_np(gold, fnp)
            pred, _ = self.decode(fnp, cost)
            th = theta(pred, gold, self.labels)
            margin = self.tree_score_np(pred, fnp) + th - gold_score
            if self.use_split:
                # k* is picked greedily, so the augmented decode is not an exact
                # argmax here; the plain decode is a second rival.
                alt, _ = self.decode(fnp)
                alt_th = theta(alt, gold, self.labels)
                alt_margin = self.tree_score_np(alt, fnp) + alt_th - gold_score
                if alt_margin > margin:
                    pred, th, margin = alt, alt_th, alt_margin
            if pred == gold or margin <= 0:
                continue
            total += margin
            const += th
            terms += [(b, i, j, k, l, 1) for i, j, k, l in chart_nodes(pred, self.labels)]
            terms += [(b, i, j, k, l, -1) for i, j, k, l in chart_nodes(gold, self.labels)]
        if not terms:
            return None, {"loss": 0.0}
        loss = (self.tree_score(flat, terms, offsets) + const) * (1.0 / Bsz)
        return loss, {"loss": total / Bsz}

    def margin_loss(self, example):
        """Hinge loss for one example as a scalar Tensor (0 when satisfied)."""
        loss, _ = self.batch_loss([example])
        return Tensor(0.0) if loss is None else loss

    # -------------------------------------------------------------- inference

    def parse_chart(self, examples, batch_size=64):
        out = []
        for s in range(0, len(examples), batch_size):
            batch = examples[s:s + batch_size]
            F = self.fences(batch).data
            for b, e in enumerate(batch):
                n = len(e)
                fnp = F[b, :n + 1]
                tree, _ = self.decode(fnp)
                if tree.label.is_dummy:
                    tree = self._relabel_root(tree, fnp)
                out.append(tree)
        return out

    def _relabel_root(self, tree, fnp):
        n = fnp.shape[0] - 1
        rep = fnp[n] - fnp[0]
        if self.use_split and tree.children:
            rep = rep + fnp[tree.children[0].span[1]]
        p = self.params
        row = np.maximum(rep @ p["score.W"].data + p["score.b"].data, 0.0) @ p["score.V"].data
        row[DUMMY_ID] = -np.inf
        return ParseTree(self.labels[int(np.argmax(row))], tree.span, tree.children)

    def parse(self, examples, batch_size=64):
        """Original-form trees (unary chains expanded, no Dummy nodes)."""
        return [from_chart_tree(t) for t in self.parse_chart(examples, batch_size)]

    # -------------------------------------------------------------- metadata

    def meta(self):
        return {
            "kind": "parser",
            "encoder": self.cfg.to_dict(),
            "vocab": self.vocab.tokens,
            "labels": self.labels.to_list(),
            "categories": self.categories,
            "use_split": self.use_split,
            "d_hidden": self.d_hidden,
        }

    def save(self, path, extra=None):
        meta = self.meta()
        if extra:
            meta.update(extra)
        nc.save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path):
        params, meta = nc.load_checkpoint(path)
        if meta.get("kind") != "parser":
            raise ValueError(f"{path} is not a parser checkpoint")
        return cls(EncoderConfig(**meta["encoder"]), Vocab(meta["vocab"]),
                   LabelVocab.from_list(meta["labels"]), meta["categories"],
                   meta["use_split"], meta["d_hidden"], params=params), meta


# -------------------------------------------------------------------- training

def make_example(tree, utt, tags=None, flags=None, labels=None):
    chart_gold = to_chart_tree(tree) if tree is not None else None
    meta = {}
    if chart_gold is not None and labels is not None:
        meta["scorable"] = all(n.label is None or n.label.is_dummy or labels.get(n.label) is not None
                               for n in chart_gold.nodes())
    return Example(tuple(utt.tokens), tags, flags, tree, chart_gold, meta)


def exact_match_rate(parser, examples):
    if not examples:
        return 0.0
    preds = parser.parse(examples)
    return sum(p == e.gold for p, e in zip(preds, examples)) / len(examples)


def train(train_examples, dev_examples, parser: SpanParser, cfg: TrainConfig, log_fn=None):
    """Minibatch hinge-loss training with best-dev selection.

    ``train_examples`` must carry ``chart_gold`` trees whose labels are all in
    ``parser.labels``. Returns the training log (one dict per epoch); the
    parser's parameters are left at the best dev epoch.
    """
    if not train_examples:
        raise ValueError("empty training corpus")
    rng = np.random.default_rng(cfg.seed)
    state = OptimState(lr=cfg.lr)
    names = parser.params.names()
    history = []
    best_em, best_snap, stale = -1.0, None, 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        if cfg.lr_decay:
            state.lr = cfg.lr * (1.0 - (epoch - 1) / cfg.epochs)
        order = rng.permutation(len(train_examples))
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            batch = [train_examples[i] for i in order[s:s + cfg.batch_size]]
            loss, info = parser.batch_loss(batch, rng, cfg.dropout, cfg.word_dropout,
                                            cfg.occ_dropout)
            total += info["loss"] * len(batch)
            if loss is None:
                continue
            parser.params.zero_grad()
            backward(loss)
            adam_step(parser.params, state, names)
        entry = {"epoch": epoch, "loss": total / len(train_examples),
                 "seconds": round(time.perf_counter() - t0, 3)}
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            em = exact_match_rate(parser, dev_examples)
            entry["dev_em"] = em
            if em > best_em:
                best_em, best_snap, stale = em, parser.params.snapshot(), 0
            else:
                stale += 1
        history.append(entry)
        if log_fn:
            log_fn(entry)
        log.info("epoch %d loss %.4f dev_em %s", epoch, entry["loss"], entry.get("dev_em"))
        if cfg.stop_at_perfect and entry.get("dev_em") == 1.0:
            break
        if cfg.patience and stale >= cfg.patience:
            break
    if best_snap is not None:
        parser.params.restore(best_snap)
    parser.params.clear_grad()
    return history


def build_parser(train_corpus, cfg: EncoderConfig, use_split=False, categories=(), d_hidden=128, seed=0):
    """Vocabularies from the training corpus plus freshly initialized weights."""
    vocab = Vocab.build(utt.tokens for _, utt in train_corpus)
    labels = LabelVocab.from_trees(to_chart_tree(t) for t, _ in train_corpus)
    return SpanParser(cfg, vocab, labels, categories, use_split, d_hidden, seed)


__all__ = [
    "LabelVocab", "SpanParser", "TrainConfig", "Example", "train", "build_parser", "make_example",
    "cky_decode_table", "tree_score_table", "hamming_cost", "theta", "margin_loss_table",
    "chart_nodes", "backtrace", "exact_match_rate", "TreeError",
]
