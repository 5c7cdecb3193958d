"""Slot disambiguation: is a lexicon match right in this context?

Each match occurrence becomes one classifier input: the utterance with the
category's left/right marker tokens wrapped around the matched span and a
``[CLS]`` token in front. A small self-attention encoder reads the sequence
and a two-way softmax over the ``[CLS]`` row gives P(correct).
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import numcore as nc
from .encoder import RESERVED, UNK, EncoderConfig, Mode, Vocab, embed_batch, encode, init_encoder
from .lexicon import MatchOccurrence, Verdict, match_spans
from .numcore import OptimState, ParamStore, adam_step, backward
from .treebank import slot_spans

log = logging.getLogger(__name__)

CLS = "[cls]"


@dataclass(frozen=True)
class DisambExample:
    tokens: tuple
    occurrence: MatchOccurrence
    label: bool


def left_marker(category):
    return f"[{category}.left]"


def right_marker(category):
    return f"[{category}.right]"


def gen_examples(tree, utt, lex):
    """One example per lexicon match; positive iff it is a gold slot span."""
    gold = slot_spans(tree)
    out = []
    for occ in match_spans(utt, lex):
        label = (occ.span[0], occ.span[1], occ.category) in gold
        out.append(DisambExample(tuple(utt.tokens), occ, label))
    return out


def insert_markers(tokens, occ):
    i, j = occ.span
    tokens = list(tokens)
    return ([CLS] + tokens[:i] + [left_marker(occ.category)] + tokens[i:j]
            + [right_marker(occ.category)] + tokens[j:])


def oracle_filter(occs, gold_tree):
    gold = slot_spans(gold_tree)
    return [o.with_verdict(Verdict.KEPT if (o.span[0], o.span[1], o.category) in gold
                           else Verdict.REMOVED) for o in occs]


@dataclass
class DisambConfig:
    d_word: int = 32
    d_pos: int = 32
    d_model: int = 64
    d_ff: int = 128
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 64
    epochs: int = 12
    lr: float = 2e-3
    batch_size: int = 32
    seed: int = 0
    word_dropout: float = 0.1
    threshold: float = 0.5

    def encoder_config(self):
        return EncoderConfig(d_word=self.d_word, d_pos=self.d_pos, d_slot=self.d_word,
                             d_model=self.d_model, d_ff=self.d_ff, n_layers=self.n_layers,
                             n_heads=self.n_heads, max_len=self.max_len, mode=Mode.BASE)


class SlotClassifier:
    def __init__(self, cfg: DisambConfig, vocab: Vocab, categories, params=None):
        self.cfg = cfg
        self.enc_cfg = cfg.encoder_config()
        self.vocab = vocab
        self.categories = list(categories)
        self.special = {vocab.lookup(CLS)}
        for c in self.categories:
            self.special.add(vocab.lookup(left_marker(c)))
            self.special.add(vocab.lookup(right_marker(c)))
        if params is None:
            params = ParamStore(cfg.seed)
            init_encoder(params, self.enc_cfg, len(vocab))
            params.add("cls.W", (cfg.d_model, 2))
            params.add("cls.b", (2,), "zeros")
        self.params = params

    @classmethod
    def build(cls, cfg, sentences, categories):
        vocab = Vocab(RESERVED)
        vocab.add(CLS)
        for c in sorted(categories):
            vocab.add(left_marker(c))
            vocab.add(right_marker(c))
        for toks in sentences:
            for t in toks:
                vocab.add(t)
        return cls(cfg, vocab, sorted(categories))

    def _ids(self, seqs, rng=None):
        T = max(len(s) for s in seqs)
        ids = np.zeros((len(seqs), T), dtype=np.int64)
        valid = np.zeros((len(seqs), T), dtype=bool)
        for b, s in enumerate(seqs):
            row = [self.vocab.lookup(t) for t in s]
            if rng is not None and self.cfg.word_dropout > 0:
                drop = rng.random(len(row)) < self.cfg.word_dropout
                row = [UNK if d and r not in self.special else r for r, d in zip(row, drop)]
            ids[b, :len(row)] = row
            valid[b, :len(row)] = True
        return ids, valid

    def logits(self, seqs, rng=None):
        ids, valid = self._ids(seqs, rng)
        X = embed_batch(ids, self.enc_cfg, self.params)
        H = encode(X, self.enc_cfg, self.params, valid)
        h_cls = H[:, 0, :]
        return nc.matmul(h_cls, self.params["cls.W"]) + self.params["cls.b"]

    def classify(self, seqs, batch_size=128):
        """P(true) for each marker-inserted token sequence."""
        out = []
        for s in range(0, len(seqs), batch_size):
            z = self.logits(seqs[s:s + batch_size]).data
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            out.append(e[:, 1] / e.sum(axis=1))
        return np.concatenate(out) if out else np.zeros(0)

    def predict(self, examples):
        return self.classify([insert_markers(e.tokens, e.occurrence) for e in examples])

    def loss(self, examples, rng):
        seqs = [insert_markers(e.tokens, e.occurrence) for e in examples]
        y = np.array([int(e.label) for e in examples])
        logp = nc.log_softmax(self.logits(seqs, rng))
        picked = logp[np.arange(len(y)), y]
        return picked.sum() * (-1.0 / len(y))

    def meta(self):
        return {"kind": "disambiguator", "config": asdict(self.cfg),
                "vocab": self.vocab.tokens, "categories": self.categories}

    def save(self, path):
        nc.save_checkpoint(path, self.params, self.meta())

    @classmethod
    def load(cls, path):
        params, meta = nc.load_checkpoint(path)
        if meta.get("kind") != "disambiguator":
            raise ValueError(f"{path} is not a disambiguator checkpoint")
        return cls(DisambConfig(**meta["config"]), Vocab(meta["vocab"]), meta["categories"], params)


def filter_occurrences(utt, occs, clf, threshold=0.5):
    """Mark each occurrence Kept iff P(true) >= threshold; order preserved."""
    if not occs:
        return []
    probs = clf.classify([insert_markers(utt.tokens, o) for o in occs])
    return [o.with_verdict(Verdict.KEPT if p >= threshold else Verdict.REMOVED)
            for o, p in zip(occs, probs)]


def accuracy(clf, examples, threshold=0.5):
    if not examples:
        return 0.0
    probs = clf.predict(examples)
    return float(np.mean([(p >= threshold) == e.label for p, e in zip(probs, examples)]))


def train_disamb(examples, cfg: DisambConfig, dev=None, clf=None, log_fn=None):
    """Cross-entropy training; returns ``(classifier, history)``.

    The classifier with the best held-out accuracy is kept.
    """
    labels = {e.label for e in examples}
    if len(labels) < 2:
        raise ValueError("disambiguation training needs both positive and negative examples")
    if clf is None:
        cats = sorted({e.occurrence.category for e in examples}
                      | {e.occurrence.category for e in dev or []})
        clf = SlotClassifier.build(cfg, [e.tokens for e in examples], cats)
    rng = np.random.default_rng(cfg.seed)
    state = OptimState(lr=cfg.lr)
    history = []
    best, snap = -1.0, None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(examples))
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            batch = [examples[i] for i in order[s:s + cfg.batch_size]]
            loss = clf.loss(batch, rng)
            total += loss.item() * len(batch)
            clf.params.zero_grad()
            backward(loss)
            adam_step(clf.params, state)
        entry = {"epoch": epoch, "loss": total / len(examples)}
        if dev:
            entry["dev_acc"] = accuracy(clf, dev, cfg.threshold)
            if entry["dev_acc"] > best:
                best, snap = entry["dev_acc"], clf.params.snapshot()
        history.append(entry)
        if log_fn:
            log_fn(entry)
        log.info("disamb epoch %d loss %.4f dev_acc %s", epoch, entry["loss"], entry.get("dev_acc"))
    if snap is not None:
        clf.params.restore(snap)
    clf.params.clear_grad()
    return clf, history


# --------------------------------------------------------------------- files

def write_examples(path, examples):
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            i, j = e.occurrence.span
            fh.write(f"{e.occurrence.category}\t{i + 1}:{j}\t{e.label}\t{' '.join(e.tokens)}\n")


def read_examples(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                cat, span, label, toks = line.split("\t")
                a, b = span.split(":")
                occ = MatchOccurrence(cat, (int(a) - 1, int(b)))
                out.append(DisambExample(tuple(toks.split()), occ, label == "True"))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed example line") from None
    return out
