"""Unseen-slot-value experiments: modified test sets, lexicon scenarios, sweeps.

Replacement is decided per eligible slot node. An eligible node is a slot
whose category is in the catalog and whose content is plain tokens. The
random stream draws the same two numbers for every eligible node whatever
the rate, so a higher rate modifies a superset of the nodes a lower rate
modifies, with the same new values.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .lexicon import Lexicon, add_entries
from .treebank import Kind, Utterance, from_nested

log = logging.getLogger(__name__)


@dataclass
class NewValueCatalog:
    values: dict
    seed: int = 0

    @property
    def categories(self):
        return list(self.values)

    def validate(self, lexicon: Lexicon):
        for cat, vals in self.values.items():
            if cat not in lexicon:
                raise ValueError(f"catalog category {cat!r} is not in the lexicon")
            for v in vals:
                if tuple(t.lower() for t in v) in lexicon.entries[cat]:
                    raise ValueError(f"catalog value {' '.join(v)!r} already in {cat}")
        return self

    def apply_to(self, lexicon):
        for cat, vals in self.values.items():
            lexicon = add_entries(lexicon, cat, vals)
        return lexicon


def load_catalog(path, seed=0):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].split():
                raise ValueError(f"{path}:{lineno}: expected 'category<TAB>value'")
            values.setdefault(parts[0], []).append(tuple(parts[1].split()))
    return NewValueCatalog(values, seed)


@dataclass(frozen=True)
class Modification:
    line: int
    category: str
    span: tuple
    old: tuple
    new: tuple


def _eligible(node, catalog):
    return (node.label is not None and node.label.kind is Kind.SLOT
            and node.label.parts[0] in catalog.values
            and all(c.is_token for c in node.children))


def count_eligible(tree, catalog):
    return sum(1 for n in tree.nodes() if _eligible(n, catalog))


def generate_modified_test(corpus, catalog, p_replace, seed=0):
    """Replace eligible slot values with catalog values at rate ``p_replace``.

    Returns ``(modified_corpus, modifications)``.
    """
    if not 0.0 <= p_replace <= 1.0:
        raise ValueError("p_replace must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    out, mods = [], []
    for line, (tree, utt) in enumerate(corpus):
        changes = {}
        for node in tree.nodes():
            if not _eligible(node, catalog):
                continue
            cat = node.label.parts[0]
            u = rng.random()
            pick = int(rng.integers(len(catalog.values[cat])))
            if u < p_replace:
                changes[node.span] = catalog.values[cat][pick]
        if not changes:
            out.append((tree, utt))
            continue
        new_tree, new_utt = _rewrite(tree, utt, changes)
        for span, new in changes.items():
            node_cat = next(n.label.parts[0] for n in tree.nodes()
                            if n.span == span and _eligible(n, catalog))
            mods.append(Modification(line, node_cat, span,
                                     tuple(utt.tokens[span[0]:span[1]]), tuple(new)))
        out.append((new_tree, new_utt))
    return out, mods


def _rewrite(tree, utt, changes):
    """Rebuild ``tree`` with the token content of some slot spans replaced."""
    def walk(node):
        if node.label is None:
            return utt.tokens[node.span[0]]
        if node.span in changes and node.label.kind is Kind.SLOT and all(c.is_token for c in node.children):
            return (str(node.label), list(changes[node.span]))
        if node.children:
            return (str(node.label), [walk(c) for c in node.children])
        return (str(node.label), list(utt.tokens[node.span[0]:node.span[1]]))
    return from_nested(walk(tree))


def modified_fraction(corpus, mods):
    return len({m.line for m in mods}) / len(corpus) if corpus else 0.0


def calibrate_p_replace(corpus, catalog, target, tol=1e-6):
    """Per-node probability giving an expected ``target`` fraction of modified utterances."""
    counts = np.array([count_eligible(t, catalog) for t, _ in corpus])
    ceiling = float(np.mean(counts > 0))
    if target >= ceiling:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = (lo + hi) / 2
        frac = float(np.mean(1.0 - (1.0 - mid) ** counts))
        lo, hi = (mid, hi) if frac < target else (lo, mid)
    return (lo + hi) / 2


def write_modifications(path, mods):
    with open(path, "w", encoding="utf-8") as fh:
        for m in mods:
            fh.write(f"{m.line + 1}\t{m.category}\t{' '.join(m.old)}\t{' '.join(m.new)}\n")


# --------------------------------------------------------- regex substitution

@dataclass(frozen=True)
class Substitution:
    span: tuple        # fences in the substituted utterance
    original: tuple    # tokens that were there before
    category: str


def regex_substitute(utt, catalog, lexicon, rng):
    """Swap catalog values for random known values of the same category.

    Overlaps resolve longest match first, then leftmost; a value listed under
    several catalog categories goes to the first one in catalog order.
    Returns ``(new_utterance, substitutions)``.
    """
    low = [t.lower() for t in utt.tokens]
    n = len(low)
    owner = {}
    for cat, vals in catalog.values.items():
        for v in vals:
            owner.setdefault(tuple(t.lower() for t in v), cat)
    cands = []
    for i in range(n):
        for j in range(i + 1, n + 1):
            cat = owner.get(tuple(low[i:j]))
            if cat is not None:
                cands.append((-(j - i), i, j, cat))
    cands.sort()
    taken = np.zeros(n, dtype=bool)
    chosen = []
    for _, i, j, cat in cands:
        if taken[i:j].any():
            continue
        taken[i:j] = True
        chosen.append((i, j, cat))
    chosen.sort()
    tokens, subs = [], []
    pos = 0
    for i, j, cat in chosen:
        tokens.extend(utt.tokens[pos:i])
        old = sorted(lexicon.entries[cat])
        repl = old[int(rng.integers(len(old)))]
        subs.append(Substitution((len(tokens), len(tokens) + len(repl)), tuple(utt.tokens[i:j]), cat))
        tokens.extend(repl)
        pos = j
    tokens.extend(utt.tokens[pos:])
    return Utterance(tuple(tokens)), subs


def undo_substitution(tree, tokens, subs):
    """Put the original tokens back into a tree parsed over substituted tokens.

    The first token of each substituted region receives the original tokens;
    the rest of the region is dropped (constituents emptied by that vanish).
    """
    starts = {s.span[0]: s for s in subs}
    inside = set()
    for s in subs:
        inside.update(range(s.span[0] + 1, s.span[1]))

    def walk(node):
        if node.label is None:
            return expand_token(node.span[0])
        items = []
        if node.children:
            for c in node.children:
                r = walk(c)
                items.extend(r if isinstance(r, list) else [r])
        else:
            for p in range(*node.span):
                items.extend(expand_token(p))
        return (str(node.label), items)

    def expand_token(p):
        if p in starts:
            return list(starts[p].original)
        if p in inside:
            return []
        return [tokens[p]]

    return from_nested(walk(tree))


# ------------------------------------------------------------------ scenarios

SCENARIOS = ("updated-lexicon", "stale-lexicon", "regex-baseline")


def scenario_run(scenario, corpus, catalog, *, lex_runner=None, plain_runner=None,
                 lexicon=None, seed=0):
    """Evaluate one adaptation scenario on a (modified) corpus.

    ``lex_runner(corpus, lexicon)`` and ``plain_runner(corpus)`` return
    predicted trees; they wrap already-trained models and must not update
    any weights.
    """
    from .metrics import evaluate

    golds = [t for t, _ in corpus]
    if scenario == "updated-lexicon":
        if lex_runner is None:
            raise ValueError("updated-lexicon scenario needs a lexicon-injected model")
        preds = lex_runner(corpus, catalog.apply_to(lexicon))
    elif scenario == "stale-lexicon":
        if lex_runner is None:
            raise ValueError("stale-lexicon scenario needs a lexicon-injected model")
        preds = lex_runner(corpus, lexicon)
    elif scenario == "regex-baseline":
        if plain_runner is None:
            raise ValueError("regex-baseline scenario needs a non-lexicon model")
        rng = np.random.default_rng(seed)
        subbed, maps = [], []
        for tree, utt in corpus:
            new_utt, subs = regex_substitute(utt, catalog, lexicon, rng)
            subbed.append((tree, new_utt))
            maps.append((new_utt, subs))
        raw = plain_runner(subbed)
        preds = [undo_substitution(p, u.tokens, s)[0] for p, (u, s) in zip(raw, maps)]
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    return evaluate(preds, golds)


def sweep_modification_rate(corpus, catalog, rates, models, seed=0):
    """Exact match per model across target modification rates.

    ``models`` maps a name to ``fn(corpus) -> predicted trees``. Each row is
    ``{"target", "p_replace", "modified", name: exact_match, ...}``.
    """
    from .metrics import exact_match

    if list(rates) != sorted(rates):
        raise ValueError("rates must be sorted ascending")
    rows = []
    for rate in rates:
        p = calibrate_p_replace(corpus, catalog, rate) if rate > 0 else 0.0
        mod, mods = generate_modified_test(corpus, catalog, p, seed)
        row = {"target": rate, "p_replace": p, "modified": modified_fraction(corpus, mods)}
        golds = [t for t, _ in mod]
        for name, fn in models.items():
            row[name] = exact_match(fn(mod), golds)
        rows.append(row)
        log.info("sweep %s", row)
    return rows


def write_sweep(path, rows):
    keys = list(rows[0]) if rows else []
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(keys) + "\n")
        for r in rows:
            fh.write("\t".join(f"{r[k]:.6f}" if isinstance(r[k], float) else str(r[k]) for k in keys) + "\n")
