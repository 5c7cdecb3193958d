"""Glue between lexicon matching, occurrence filtering and the parser."""
from __future__ import annotations

from dataclasses import dataclass

from .disambiguator import filter_occurrences, oracle_filter
from .encoder import EncoderConfig, Mode
from .lexicon import Verdict, match_spans, tag_matrix
from .parser import SpanParser, TrainConfig, build_parser, make_example, train

FILTERS = ("none", "model", "oracle")

MODE_FLAGS = {
    "base": (Mode.BASE, False),
    "split": (Mode.BASE, True),
    "lex": (Mode.LEX, True),
    "lex-gr": (Mode.GR, True),
}


def filtered_occurrences(tree, utt, lexicon, filter_mode="none", clf=None, threshold=0.5):
    occs = match_spans(utt, lexicon)
    if filter_mode == "none":
        return [o.with_verdict(Verdict.KEPT) for o in occs]
    if filter_mode == "oracle":
        if tree is None:
            raise ValueError("the oracle filter needs gold trees")
        return oracle_filter(occs, tree)
    if filter_mode == "model":
        if clf is None:
            raise ValueError("the model filter needs a trained disambiguator")
        return filter_occurrences(utt, occs, clf, threshold)
    raise ValueError(f"unknown filter {filter_mode!r}")


def make_examples(corpus, parser: SpanParser, lexicon=None, filter_mode="none", clf=None,
                  threshold=0.5):
    """Parser examples; ``corpus`` items are ``(tree_or_None, utterance)``."""
    out = []
    for tree, utt in corpus:
        tags = flags = None
        if parser.lexical:
            if lexicon is None:
                raise ValueError("lexicon-injected parser needs a lexicon")
            occs = filtered_occurrences(tree, utt, lexicon, filter_mode, clf, threshold)
            tags, flags = tag_matrix(len(utt), occs, parser.category_ids)
        ex = make_example(tree, utt, tags, flags, parser.labels)
        if parser.lexical:
            ex.meta["occs"] = [o for o in occs if o.kept is not Verdict.REMOVED]
        out.append(ex)
    return out


@dataclass
class ModelSpec:
    mode: str = "split"
    filter: str = "none"
    d_word: int = 64
    d_pos: int = 64
    d_slot: int = 64
    d_model: int = 128
    d_ff: int = 256
    n_layers: int = 2
    n_heads: int = 4
    d_hidden: int = 128
    max_len: int = 64
    use_split: bool | None = None

    def encoder_config(self):
        mode, _ = MODE_FLAGS[self.mode]
        return EncoderConfig(d_word=self.d_word, d_pos=self.d_pos, d_slot=self.d_slot,
                             d_model=self.d_model, d_ff=self.d_ff, n_layers=self.n_layers,
                             n_heads=self.n_heads, max_len=self.max_len, mode=mode)

    @property
    def split(self):
        return MODE_FLAGS[self.mode][1] if self.use_split is None else self.use_split


def train_parser(train_corpus, dev_corpus, spec: ModelSpec, tcfg: TrainConfig, lexicon=None,
                 clf=None, log_fn=None):
    """Build, train and return ``(parser, history)`` for one model variant."""
    cfg = spec.encoder_config()
    cats = lexicon.categories if cfg.mode is not Mode.BASE else ()
    parser = build_parser(train_corpus, cfg, spec.split, cats, spec.d_hidden, tcfg.seed)
    tr = make_examples(train_corpus, parser, lexicon, spec.filter, clf)
    dv = make_examples(dev_corpus, parser, lexicon, spec.filter, clf)
    history = train(tr, dv, parser, tcfg, log_fn)
    return parser, history


def runner(parser, filter_mode="none", clf=None, threshold=0.5):
    """``fn(corpus, lexicon=None) -> trees`` for evaluation harnesses."""
    def run(corpus, lexicon=None):
        return parser.parse(make_examples(corpus, parser, lexicon, filter_mode, clf, threshold))
    return run
