"""Exact match, labeled-bracket F1 and disambiguation accuracy.

Trees are normalized (Dummy nodes spliced out, unary chains expanded) before
comparison, so chart-form and original-form inputs score the same. F1 is
micro-averaged over the corpus and includes the root span.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .treebank import Kind, debinarize, expand_unary, labeled_spans


@dataclass
class EvalReport:
    exact_match: float
    precision: float
    recall: float
    f1: float
    utterances: int
    gold_spans: int
    predicted_spans: int
    matched_spans: int
    failures: list = field(default_factory=list)

    def as_text(self):
        rows = [
            ("utterances", self.utterances),
            ("exact_match", f"{self.exact_match:.4f}"),
            ("precision", f"{self.precision:.4f}"),
            ("recall", f"{self.recall:.4f}"),
            ("f1", f"{self.f1:.4f}"),
            ("gold_spans", self.gold_spans),
            ("predicted_spans", self.predicted_spans),
            ("matched_spans", self.matched_spans),
            ("failures", len(self.failures)),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)

    def as_kv(self):
        return "\n".join([
            f"exact_match={self.exact_match!r}",
            f"precision={self.precision!r}",
            f"recall={self.recall!r}",
            f"f1={self.f1!r}",
            f"utterances={self.utterances}",
            f"gold_spans={self.gold_spans}",
            f"predicted_spans={self.predicted_spans}",
            f"matched_spans={self.matched_spans}",
            f"failures={','.join(map(str, self.failures))}",
        ])


def normalize(tree):
    if tree is None:
        return None
    if any(n.label is not None and n.label.is_dummy for n in tree.nodes()):
        tree = debinarize(tree)
    if any(n.label is not None and n.label.kind is Kind.CHAIN for n in tree.nodes()):
        tree = expand_unary(tree)
    return tree


def _check(preds, golds):
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold trees")


def exact_match(preds, golds):
    _check(preds, golds)
    if not golds:
        return 0.0
    hits = sum(normalize(p) == normalize(g) for p, g in zip(preds, golds))
    return hits / len(golds)


def _prf(matched, n_pred, n_gold):
    p = matched / n_pred if n_pred else 0.0
    r = matched / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def _counts(preds, golds):
    matched = n_pred = n_gold = 0
    for p, g in zip(preds, golds):
        gs = labeled_spans(normalize(g))
        ps = labeled_spans(normalize(p)) if p is not None else {}
        n_gold += sum(gs.values())
        n_pred += sum(ps.values())
        matched += sum(min(c, gs[k]) for k, c in ps.items() if k in gs)
    return matched, n_pred, n_gold


def labeled_f1(preds, golds):
    _check(preds, golds)
    return _prf(*_counts(preds, golds))


def disamb_accuracy(predictions, labels):
    _check(predictions, labels)
    if not labels:
        return 0.0
    return sum(bool(p) == bool(l) for p, l in zip(predictions, labels)) / len(labels)


def evaluate(preds, golds):
    """Full report; ``None`` predictions count as failures with no spans."""
    _check(preds, golds)
    matched, n_pred, n_gold = _counts(preds, golds)
    p, r, f = _prf(matched, n_pred, n_gold)
    failures = [i for i, (pt, gt) in enumerate(zip(preds, golds))
                if pt is None or normalize(pt) != normalize(gt)]
    em = (len(golds) - len(failures)) / len(golds) if golds else 0.0
    return EvalReport(em, p, r, f, len(golds), n_gold, n_pred, matched, failures)
