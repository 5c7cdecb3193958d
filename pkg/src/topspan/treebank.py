"""TOP trees: bracket I/O, unary-chain collapsing, binarization, labeled spans.

Spans use fence coordinates: ``(i, j)`` covers tokens ``i+1 .. j`` (1-indexed),
with ``0 <= i < j <= n``. A binary split at fence ``k`` yields children
``(i, k)`` and ``(k, j)``.

Nodes whose ``label`` is ``None`` are bare tokens: words inside a constituent
that carry no label of their own. After :func:`binarize` they become
width-one ``Dummy`` leaves, which is how the chart parser sees them.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass


class TreeError(ValueError):
    pass


class Kind(enum.Enum):
    INTENT = "intent"
    SLOT = "slot"
    CHAIN = "chain"
    DUMMY = "dummy"


DUMMY_NAME = "<dummy>"


@dataclass(frozen=True)
class Label:
    kind: Kind
    parts: tuple = ()

    def __post_init__(self):
        if self.kind is Kind.DUMMY:
            if self.parts:
                raise TreeError("dummy label has no parts")
            return
        if not self.parts or any(not p for p in self.parts):
            raise TreeError(f"empty label parts: {self.parts!r}")
        if self.kind is not Kind.CHAIN and len(self.parts) != 1:
            raise TreeError("only collapsed chains have several parts")
        for p in self.parts:
            if not (p.startswith("IN:") or p.startswith("SL:")) or "+" in p:
                raise TreeError(f"bad label {p!r}: expected IN:/SL: prefix")

    @classmethod
    def atomic(cls, raw):
        if raw.startswith("IN:"):
            return cls(Kind.INTENT, (raw,))
        if raw.startswith("SL:"):
            return cls(Kind.SLOT, (raw,))
        raise TreeError(f"label {raw!r} lacks an IN: or SL: prefix")

    @classmethod
    def from_string(cls, s):
        if s == DUMMY_NAME:
            return DUMMY
        parts = s.split("+")
        if len(parts) == 1:
            return cls.atomic(s)
        return cls(Kind.CHAIN, tuple(parts))

    @property
    def is_dummy(self):
        return self.kind is Kind.DUMMY

    def __str__(self):
        return DUMMY_NAME if self.kind is Kind.DUMMY else "+".join(self.parts)


DUMMY = Label(Kind.DUMMY)


@dataclass(frozen=True)
class Utterance:
    tokens: tuple
    raw: str | None = None

    def __post_init__(self):
        if not self.tokens:
            raise TreeError("utterance has no tokens")
        for t in self.tokens:
            if not t or any(c.isspace() for c in t) or "[" in t or "]" in t:
                raise TreeError(f"invalid token {t!r}")

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def from_text(cls, text):
        return cls(tuple(text.split()), raw=text)


@dataclass(frozen=True)
class ParseTree:
    label: Label | None
    span: tuple
    children: tuple = ()

    @property
    def is_token(self):
        return self.label is None

    @property
    def width(self):
        return self.span[1] - self.span[0]

    def nodes(self):
        """Pre-order traversal."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


def token_leaf(i):
    return ParseTree(None, (i, i + 1))


# ----------------------------------------------------------------- bracket I/O

def parse_top(text):
    """Read one bracketed TOP annotation. Returns ``(tree, utterance)``."""
    items = text.split()
    if not items:
        raise TreeError("empty annotation")
    tokens = []
    # stack entries: [label, start, children]
    stack = []
    root = None
    for item in items:
        if item.startswith("["):
            if root is not None:
                raise TreeError("material after the root constituent")
            stack.append([Label.atomic(item[1:]), len(tokens), []])
        elif item == "]":
            if not stack:
                raise TreeError("unbalanced brackets: unexpected ']'")
            label, start, children = stack.pop()
            end = len(tokens)
            if end == start:
                raise TreeError(f"empty constituent {label}")
            if len(children) == 1 and children[0].is_token:
                children = []
            node = ParseTree(label, (start, end), tuple(children))
            if stack:
                stack[-1][2].append(node)
            else:
                root = node
        else:
            if "]" in item:
                raise TreeError(f"stray bracket in token {item!r}")
            if not stack:
                raise TreeError(f"token {item!r} outside any constituent")
            stack[-1][2].append(token_leaf(len(tokens)))
            tokens.append(item)
    if stack:
        raise TreeError("unbalanced brackets: missing ']'")
    return root, Utterance(tuple(tokens), raw=" ".join(tokens))


def serialize_top(tree, utt):
    tokens = utt.tokens if isinstance(utt, Utterance) else tuple(utt)
    out = []

    def walk(node):
        if node.label is None:
            out.append(tokens[node.span[0]])
            return
        if node.label.kind in (Kind.DUMMY, Kind.CHAIN):
            raise TreeError("serialize_top needs an expanded, debinarized tree")
        out.append("[" + node.label.parts[0])
        if node.children:
            for c in node.children:
                walk(c)
        else:
            out.extend(tokens[node.span[0]:node.span[1]])
        out.append("]")

    walk(tree)
    return " ".join(out)


def to_nested(tree, tokens):
    """Convert to ``(label_str, [items])`` where items are tokens or nested nodes."""
    if tree.label is None:
        return tokens[tree.span[0]]
    if tree.children:
        items = [to_nested(c, tokens) for c in tree.children]
    else:
        items = list(tokens[tree.span[0]:tree.span[1]])
    return (str(tree.label), items)


def from_nested(nested):
    """Inverse of :func:`to_nested`; empty constituents are dropped."""
    tokens = []

    def build(item):
        if isinstance(item, str):
            tokens.append(item)
            return token_leaf(len(tokens) - 1)
        label, items = item
        start = len(tokens)
        children = [c for c in (build(x) for x in items) if c is not None]
        if len(tokens) == start:
            return None
        if len(children) == 1 and children[0].is_token:
            children = []
        return ParseTree(Label.from_string(label), (start, len(tokens)), tuple(children))

    root = build(nested)
    if root is None:
        raise TreeError("tree has no tokens")
    return root, Utterance(tuple(tokens), raw=" ".join(tokens))


# ------------------------------------------------------------- unary chains

def collapse_unary(tree):
    if tree.label is None:
        return tree
    children = tuple(collapse_unary(c) for c in tree.children)
    if len(children) == 1 and children[0].label is not None:
        child = children[0]
        return ParseTree(Label(Kind.CHAIN, tree.label.parts + child.label.parts),
                         tree.span, child.children)
    return ParseTree(tree.label, tree.span, children)


def expand_unary(tree):
    if tree.label is None:
        return tree
    children = tuple(expand_unary(c) for c in tree.children)
    if tree.label.kind is not Kind.CHAIN:
        return ParseTree(tree.label, tree.span, children)
    node = ParseTree(Label.atomic(tree.label.parts[-1]), tree.span, children)
    for raw in reversed(tree.label.parts[:-1]):
        node = ParseTree(Label.atomic(raw), tree.span, (node,))
    return node


# --------------------------------------------------------------- binarization

def binarize(tree):
    """Right-branching binarization; bare tokens become Dummy leaves."""
    if tree.label is None:
        return ParseTree(DUMMY, tree.span)
    kids = [binarize(c) for c in tree.children]
    if not kids:
        return tree
    if len(kids) == 1:
        raise TreeError("binarize expects a collapsed tree (found a unary node)")
    while len(kids) > 2:
        right = ParseTree(DUMMY, (kids[-2].span[0], kids[-1].span[1]), (kids[-2], kids[-1]))
        kids = kids[:-2] + [right]
    return ParseTree(tree.label, tree.span, tuple(kids))


def debinarize(tree):
    """Splice Dummy nodes into their parents; Dummy leaves become bare tokens."""
    if tree.label is not None and tree.label.is_dummy:
        raise TreeError("root is a Dummy node and cannot be removed")
    return _debin(tree)


def _debin(node):
    if node.label is None:
        return node
    if not node.children:
        if node.label.is_dummy:
            if node.width != 1:
                raise TreeError("wide Dummy leaf")
            return token_leaf(node.span[0])
        return node
    kids = []
    for c in node.children:
        d = _debin(c)
        if c.label is not None and c.label.is_dummy and c.children:
            kids.extend(d.children)
        else:
            kids.append(d)
    if len(kids) == 1 and kids[0].is_token:
        kids = []
    return ParseTree(node.label, node.span, tuple(kids))


def to_chart_tree(tree):
    return binarize(collapse_unary(tree))


def from_chart_tree(tree):
    return expand_unary(debinarize(tree))


# ------------------------------------------------------------- labeled spans

def labeled_spans(tree):
    """Multiset of ``(i, j, raw_label)``; chains contribute each part."""
    out = Counter()
    for node in tree.nodes():
        if node.label is None or node.label.is_dummy:
            continue
        for part in node.label.parts:
            out[(node.span[0], node.span[1], part)] += 1
    return out


def slot_spans(tree):
    """Set of ``(i, j, category)`` for slot-labeled nodes."""
    return {(i, j, lab) for (i, j, lab) in labeled_spans(tree) if lab.startswith("SL:")}


def check_partition(tree):
    for node in tree.nodes():
        if not node.children:
            continue
        pos = node.span[0]
        for c in node.children:
            if c.span[0] != pos:
                return False
            pos = c.span[1]
        if pos != node.span[1]:
            return False
    return True


# ---------------------------------------------------------------- corpus I/O

class CorpusError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def read_corpus(path):
    """One annotation per line, or 3-column TSV with the annotation last."""
    corpus = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            text = line.split("\t")[-1]
            try:
                corpus.append(parse_top(text))
            except TreeError as e:
                raise CorpusError(path, lineno, str(e)) from None
    return corpus


def write_corpus(path, corpus):
    with open(path, "w", encoding="utf-8") as fh:
        for tree, utt in corpus:
            fh.write(serialize_top(tree, utt) + "\n")
