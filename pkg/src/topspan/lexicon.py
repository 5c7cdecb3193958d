"""Slot lexicon: built from training trees, matched against utterances.

Category ids are ``1..C`` in sorted order; id 0 is the out-of-category tag.
A lexicon is never mutated in place: :func:`add_entries` returns a copy, so
a snapshot handed to a parser stays valid.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .numcore import matmul, Tensor
from .treebank import Kind

OUT_OF_CATEGORY = 0


class Verdict(enum.Enum):
    PENDING = "pending"
    KEPT = "kept"
    REMOVED = "removed"


@dataclass(frozen=True)
class MatchOccurrence:
    category: str
    span: tuple
    kept: Verdict = Verdict.PENDING

    def with_verdict(self, verdict):
        return MatchOccurrence(self.category, self.span, verdict)


@dataclass
class Lexicon:
    entries: dict = field(default_factory=dict)

    @property
    def categories(self):
        return sorted(self.entries)

    @property
    def category_ids(self):
        return {c: i + 1 for i, c in enumerate(self.categories)}

    @property
    def max_len(self):
        return max((len(v) for vals in self.entries.values() for v in vals), default=0)

    def __contains__(self, category):
        return category in self.entries

    def stats(self):
        return {
            "categories": len(self.entries),
            "unique_values": sum(len(v) for v in self.entries.values()),
        }

    def copy(self):
        return Lexicon({c: set(v) for c, v in self.entries.items()})


def _norm(tokens):
    return tuple(t.lower() for t in tokens)


def build_lexicon(corpus):
    """Collect every slot node's covered tokens under its category.

    Returns ``(lexicon, stats)``; ``stats['values']`` counts slot
    occurrences, ``stats['unique_values']`` distinct (category, value) pairs.
    """
    entries = {}
    total = 0
    for tree, utt in corpus:
        for node in tree.nodes():
            if node.label is None or node.label.kind is not Kind.SLOT:
                continue
            i, j = node.span
            entries.setdefault(node.label.parts[0], set()).add(_norm(utt.tokens[i:j]))
            total += 1
    lex = Lexicon(entries)
    stats = {"categories": len(entries), "values": total,
             "unique_values": sum(len(v) for v in entries.values())}
    return lex, stats


def match_spans(utt, lex, max_len=None):
    """All lexicon matches, ordered by start, end, then category id."""
    tokens = _norm(utt.tokens)
    max_len = lex.max_len if max_len is None else max_len
    if max_len < 1:
        return []
    cats = lex.categories
    n = len(tokens)
    out = []
    for i in range(n):
        for j in range(i + 1, min(n, i + max_len) + 1):
            key = tokens[i:j]
            for c in cats:
                if key in lex.entries[c]:
                    out.append(MatchOccurrence(c, (i, j)))
    return out


def add_entries(lex, category, values):
    if category not in lex.entries:
        raise KeyError(
            f"unknown slot category {category!r}: new categories need retraining "
            "(the tag embedding table is fixed at training time)")
    new = lex.copy()
    for v in values:
        toks = tuple(v.split()) if isinstance(v, str) else tuple(v)
        if toks:
            new.entries[category].add(_norm(toks))
    return new


def tag_matrix(n, occs, category_ids):
    """0/1 matrix of shape ``(n, 1 + C)``: token x matched category.

    Rows with no kept match get a 1 in the out-of-category column.
    """
    m = np.zeros((n, len(category_ids) + 1))
    for occ in occs:
        if occ.kept is Verdict.REMOVED:
            continue
        cid = category_ids.get(occ.category)
        if cid is None:
            continue
        i, j = occ.span
        m[i:j, cid] = 1.0
    flags = m.any(axis=1)
    m[~flags, OUT_OF_CATEGORY] = 1.0
    return m, flags


def tag_vectors(utt, occs, table: Tensor, category_ids):
    """Per-token slot vector ``q_i`` (sum of matched category embeddings)."""
    m, flags = tag_matrix(len(utt), occs, category_ids)
    return matmul(Tensor(m), table), flags


# --------------------------------------------------------------------- files

def save_lexicon(path, lex):
    with open(path, "w", encoding="utf-8") as fh:
        for c in lex.categories:
            for v in sorted(lex.entries[c]):
                fh.write(f"{c}\t{' '.join(v)}\n")


def load_lexicon(path):
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].split():
                raise ValueError(f"{path}:{lineno}: expected 'category<TAB>value'")
            entries.setdefault(parts[0], set()).add(_norm(parts[1].split()))
    return Lexicon(entries)
