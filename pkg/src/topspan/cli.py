"""Command-line entry point: ``topspan <command> [<action>] [options]``.

Every command accepts ``--config FILE`` (flat ``key=value`` lines named after
the long flags, dashes or underscores both fine); flags given on the command
line win over the file. The resolved configuration is echoed as ``# key=value``
lines before any report, so runs can be reproduced from their own output.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import toydata
from .datasim import (
    SCENARIOS, calibrate_p_replace, generate_modified_test, load_catalog, modified_fraction,
    scenario_run, sweep_modification_rate, write_modifications, write_sweep,
)
from .disambiguator import (
    DisambConfig, SlotClassifier, accuracy, filter_occurrences, gen_examples, read_examples,
    train_disamb, write_examples,
)
from .lexicon import Lexicon, add_entries, build_lexicon, load_lexicon, match_spans, save_lexicon
from .metrics import evaluate
from .parser import SpanParser, TrainConfig
from .pipeline import FILTERS, MODE_FLAGS, ModelSpec, runner, train_parser
from .treebank import CorpusError, TreeError, Utterance, parse_top, read_corpus, write_corpus

log = logging.getLogger("topspan")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so every failure maps to exit 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers

def read_inputs(path):
    """Annotated TOP lines or raw utterances, one per line.

    Returns ``(tree_or_None, utterance)`` pairs; bad lines are reported with
    their line number.
    """
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            text = line.split("\t")[-1]
            try:
                if text.lstrip().startswith("["):
                    out.append(parse_top(text))
                else:
                    out.append((None, Utterance.from_text(text)))
            except TreeError as e:
                raise CorpusError(path, lineno, str(e)) from None
    return out


def read_config(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, val = line.split("=", 1)
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def apply_config(parser, argv, values):
    """Reparse ``argv`` with config values installed as defaults."""
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.nargs in ("+", "*"):
            defaults[key] = [action.type(v) if action.type else v for v in raw.replace(",", " ").split()]
        else:
            defaults[key] = action.type(raw) if action.type else raw
        if action.choices is not None:
            vals = defaults[key] if isinstance(defaults[key], list) else [defaults[key]]
            for v in vals:
                if v not in action.choices:
                    raise UsageError(f"config key {key!r}: invalid choice {v!r}")
    parser.set_defaults(**defaults)
    return parser.parse_args(argv)


def echo_config(args):
    for key in sorted(vars(args)):
        if key in ("func", "_parser"):
            continue
        val = getattr(args, key)
        if isinstance(val, list):
            val = ",".join(map(str, val))
        print(f"# {key}={val}")


def floats(text):
    return [float(x) for x in text.replace(",", " ").split()]


def load_parser(path):
    return SpanParser.load(path)


def parser_lexicon(meta, override=None):
    if override:
        return load_lexicon(override)
    entries = meta.get("lexicon")
    if entries is None:
        return None
    lex = Lexicon({c: set() for c in entries})
    for c, vals in entries.items():
        lex.entries[c] = {tuple(v.split()) for v in vals}
    return lex


def lexicon_meta(lex):
    return {c: sorted(" ".join(v) for v in lex.entries[c]) for c in lex.categories}


def resolve_runner(args, parser, meta):
    filt = args.filter or meta.get("filter", "none")
    clf = None
    if parser.lexical and filt == "model":
        path = args.disamb or meta.get("disamb")
        if not path:
            raise UsageError("the model filter needs --disamb")
        clf = SlotClassifier.load(path)
    return runner(parser, filt, clf, args.threshold), filt


# ----------------------------------------------------------------- commands

def cmd_prep(args):
    if args.action == "toy":
        paths = toydata.write_toy_corpus(args.out, args.n_train, args.n_dev, args.n_test, args.seed)
        for name, path in paths.items():
            print(f"{name}\t{path}")
    else:
        if not args.input or not args.output:
            raise UsageError("prep convert needs --input and --output")
        corpus = read_corpus(args.input)
        write_corpus(args.output, corpus)
        print(f"utterances={len(corpus)}")
    return 0


def model_spec(args):
    return ModelSpec(mode=args.mode, filter=args.filter, d_word=args.d_word, d_pos=args.d_pos,
                     d_slot=args.d_slot, d_model=args.d_model, d_ff=args.d_ff,
                     n_layers=args.n_layers, n_heads=args.n_heads, d_hidden=args.d_hidden,
                     max_len=args.max_len, use_split=False if args.no_split else None)


def cmd_train(args):
    train = read_corpus(args.train)
    dev = read_corpus(args.dev) if args.dev else train
    spec = model_spec(args)
    tcfg = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                       patience=args.patience, stop_at_perfect=args.stop_at_perfect,
                       dropout=args.dropout, word_dropout=args.word_dropout,
                       lr_decay=args.lr_decay, occ_dropout=args.occ_dropout)
    lex = clf = None
    lexical = MODE_FLAGS[spec.mode][0].value != "base"
    if lexical:
        lex = load_lexicon(args.lexicon) if args.lexicon else build_lexicon(train)[0]
        if spec.filter == "model":
            if not args.disamb:
                raise UsageError("--filter model needs --disamb")
            clf = SlotClassifier.load(args.disamb)
    elif spec.filter != "none":
        raise UsageError("filters apply to lexicon modes only")
    logfh = open(args.log, "w", encoding="utf-8") if args.log else None

    def log_fn(entry):
        line = "\t".join(f"{k}={v}" for k, v in entry.items() if k != "seconds")
        print(line, flush=True)
        if logfh:
            logfh.write(line + "\n")

    try:
        parser, history = train_parser(train, dev, spec, tcfg, lex, clf, log_fn)
    finally:
        if logfh:
            logfh.close()
    extra = {"filter": spec.filter, "mode": spec.mode, "seed": args.seed}
    if lex is not None:
        extra["lexicon"] = lexicon_meta(lex)
    if clf is not None:
        extra["disamb"] = os.path.abspath(args.disamb)
    parser.save(args.out, extra)
    if args.save_vocab:
        parser.vocab.save(args.save_vocab)
    print(f"saved {args.out} digest={parser.params.digest()}")
    return 0


def cmd_parse(args):
    parser, meta = load_parser(args.model)
    corpus = read_inputs(args.input)
    lex = parser_lexicon(meta, args.lexicon)
    run, _ = resolve_runner(args, parser, meta)
    preds = run(corpus, lex)
    with open(args.output, "w", encoding="utf-8") as fh:
        from .treebank import serialize_top
        for tree, (_, utt) in zip(preds, corpus):
            fh.write(serialize_top(tree, utt) + "\n")
    print(f"parsed={len(preds)}")
    return 0


def cmd_eval(args):
    preds = read_corpus(args.pred)
    golds = read_corpus(args.gold)
    if len(preds) != len(golds):
        raise UsageError(f"{len(preds)} predictions for {len(golds)} gold trees")
    for k, ((_, pu), (_, gu)) in enumerate(zip(preds, golds), 1):
        if tuple(t.lower() for t in pu.tokens) != tuple(t.lower() for t in gu.tokens):
            raise UsageError(f"utterance {k}: prediction tokens differ from gold")
    report = evaluate([t for t, _ in preds], [t for t, _ in golds])
    print(report.as_kv() if args.kv else report.as_text())
    return 0


def cmd_lexicon(args):
    if args.action == "build":
        lex, stats = build_lexicon(read_corpus(args.train))
        save_lexicon(args.out, lex)
        for k, v in stats.items():
            print(f"{k}={v}")
    elif args.action == "add":
        lex = load_lexicon(args.lexicon)
        if args.catalog:
            lex = load_catalog(args.catalog).validate(lex).apply_to(lex)
        if args.category:
            if not args.value:
                raise UsageError("--category needs at least one --value")
            lex = add_entries(lex, args.category, args.value)
        save_lexicon(args.out or args.lexicon, lex)
        print(f"unique_values={lex.stats()['unique_values']}")
    else:
        lex = load_lexicon(args.lexicon)
        print(f"categories={len(lex.categories)}")
        print(f"unique_values={lex.stats()['unique_values']}")
        for c in lex.categories:
            print(f"{c}\t{len(lex.entries[c])}")
    return 0


def disamb_config(args):
    return DisambConfig(d_word=args.d_word, d_pos=args.d_pos, d_model=args.d_model,
                        d_ff=args.d_ff, n_layers=args.n_layers, n_heads=args.n_heads,
                        epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
                        seed=args.seed, word_dropout=args.word_dropout,
                        threshold=args.threshold)


def corpus_examples(path, lex):
    return [e for t, u in read_corpus(path) for e in gen_examples(t, u, lex)]


def load_examples(args, lex, corpus_attr, examples_attr):
    if getattr(args, examples_attr):
        return read_examples(getattr(args, examples_attr))
    if getattr(args, corpus_attr):
        if lex is None:
            raise UsageError("generating examples from a corpus needs --lexicon")
        return corpus_examples(getattr(args, corpus_attr), lex)
    return None


def cmd_disamb(args):
    lex = load_lexicon(args.lexicon) if args.lexicon else None
    if args.action == "examples":
        if lex is None or not args.corpus:
            raise UsageError("disamb examples needs --corpus and --lexicon")
        ex = corpus_examples(args.corpus, lex)
        write_examples(args.out, ex)
        print(f"examples={len(ex)}")
        print(f"positive={sum(e.label for e in ex)}")
    elif args.action == "train":
        train = load_examples(args, lex, "train", "examples")
        if not train:
            raise UsageError("disamb train needs --examples or --train with --lexicon")
        dev = load_examples(args, lex, "dev", "dev_examples")

        def log_fn(entry):
            print("\t".join(f"{k}={v}" for k, v in entry.items()), flush=True)

        clf, _ = train_disamb(train, disamb_config(args), dev=dev, log_fn=log_fn)
        clf.save(args.out)
        print(f"saved {args.out} digest={clf.params.digest()}")
    elif args.action == "eval":
        clf = SlotClassifier.load(args.model)
        ex = load_examples(args, lex, "corpus", "examples")
        if not ex:
            raise UsageError("disamb eval needs --examples or --corpus with --lexicon")
        print(f"examples={len(ex)}")
        print(f"accuracy={accuracy(clf, ex, args.threshold)!r}")
    else:
        clf = SlotClassifier.load(args.model)
        if lex is None or not args.corpus:
            raise UsageError("disamb filter needs --corpus and --lexicon")
        corpus = read_inputs(args.corpus)
        kept = total = 0
        with open(args.out, "w", encoding="utf-8") as fh:
            for line, (_, utt) in enumerate(corpus, 1):
                occs = filter_occurrences(utt, match_spans(utt, lex), clf, args.threshold)
                for o in occs:
                    i, j = o.span
                    fh.write(f"{line}\t{o.category}\t{i + 1}:{j}\t{o.kept.value}\t"
                             f"{' '.join(utt.tokens[i:j])}\n")
                    kept += o.kept.value == "kept"
                    total += 1
        print(f"occurrences={total}")
        print(f"kept={kept}")
    return 0


def cmd_simulate(args):
    catalog = load_catalog(args.catalog, args.seed)
    corpus = read_corpus(args.test)
    if args.action == "generate":
        if args.p_replace is not None:
            p = args.p_replace
        else:
            p = calibrate_p_replace(corpus, catalog, args.rate)
        mod, mods = generate_modified_test(corpus, catalog, p, args.seed)
        write_corpus(args.out, mod)
        if args.mod_log:
            write_modifications(args.mod_log, mods)
        print(f"p_replace={p!r}")
        print(f"modifications={len(mods)}")
        print(f"modified_fraction={modified_fraction(corpus, mods)!r}")
        return 0
    if args.action == "run":
        lex_runner = plain_runner = lex = None
        if args.model:
            parser, meta = load_parser(args.model)
            if not parser.lexical:
                raise UsageError(f"{args.model} is not a lexicon-injected parser")
            lex = parser_lexicon(meta, args.lexicon)
            run, _ = resolve_runner(args, parser, meta)
            before = parser.params.digest()
            lex_runner = run
        if args.plain_model:
            plain, pmeta = load_parser(args.plain_model)
            prun = runner(plain)
            plain_runner = lambda c: prun(c)  # noqa: E731
            if lex is None:
                if not args.lexicon:
                    raise UsageError("regex-baseline needs --lexicon (the training lexicon)")
                lex = load_lexicon(args.lexicon)
        if lex is not None:
            catalog.validate(lex)
        report = scenario_run(args.scenario, corpus, catalog, lex_runner=lex_runner,
                              plain_runner=plain_runner, lexicon=lex, seed=args.seed)
        if args.model and parser.params.digest() != before:
            raise RuntimeError("parser weights changed during evaluation")
        print(f"scenario={args.scenario}")
        print(report.as_kv())
        return 0
    # sweep
    models = {}
    base_lex = None
    for item in args.models:
        name, _, path = item.partition("=")
        if not path:
            raise UsageError(f"--models entries look like name=checkpoint, got {item!r}")
        parser, meta = load_parser(path)
        run, _ = resolve_runner(args, parser, meta)
        if parser.lexical:
            lex = parser_lexicon(meta, args.lexicon)
            base_lex = base_lex or lex
            updated = catalog.validate(lex).apply_to(lex)
            models[name] = (lambda r, lx: (lambda c: r(c, lx)))(run, updated)
        else:
            models[name] = (lambda r: (lambda c: r(c)))(run)
    rows = sweep_modification_rate(corpus, catalog, args.rates, models, args.seed)
    write_sweep(args.out, rows)
    for r in rows:
        print("\t".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))
    return 0


# ------------------------------------------------------------------- parser

def add_model_dims(p, d_word, d_model, d_ff):
    p.add_argument("--d-word", type=int, default=d_word)
    p.add_argument("--d-pos", type=int, default=d_word)
    p.add_argument("--d-model", type=int, default=d_model)
    p.add_argument("--d-ff", type=int, default=d_ff)
    p.add_argument("--n-layers", type=int, default=2)
    p.add_argument("--n-heads", type=int, default=4)


def build_argparser():
    root = Parser(prog="topspan", description=__doc__.split("\n")[0])
    root.add_argument("-v", "--verbose", action="store_true")
    sub = root.add_subparsers(dest="command", parser_class=Parser)
    subs = {}

    def command(name, func, help, action=None):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="key=value file; flags override it")
        p.add_argument("--seed", type=int, default=0)
        if action:
            p.add_argument("action", choices=action)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = command("prep", cmd_prep, "generate the toy corpus or normalize a corpus file",
                ("toy", "convert"))
    p.add_argument("--out", default="data")
    p.add_argument("--n-train", type=int, default=1200)
    p.add_argument("--n-dev", type=int, default=100)
    p.add_argument("--n-test", type=int, default=300)
    p.add_argument("--input")
    p.add_argument("--output")

    p = command("train", cmd_train, "train a span parser")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=list(MODE_FLAGS), default="split")
    p.add_argument("--no-split", action="store_true", help="plain span reps in lexicon modes")
    p.add_argument("--filter", choices=FILTERS, default="none")
    p.add_argument("--lexicon")
    p.add_argument("--disamb")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-decay", action="store_true", help="linear decay to 0 over the epochs")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--patience", type=int, default=0)
    p.add_argument("--stop-at-perfect", action="store_true")
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--word-dropout", type=float, default=0.0)
    p.add_argument("--occ-dropout", type=float, default=0.3,
                   help="rate at which kept lexicon matches are ignored during training")
    add_model_dims(p, 64, 128, 256)
    p.add_argument("--d-slot", type=int, default=64)
    p.add_argument("--d-hidden", type=int, default=128)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--log", help="per-epoch training log")
    p.add_argument("--save-vocab", help="also write the word vocabulary here")

    p = command("parse", cmd_parse, "parse utterances with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--lexicon", help="lexicon TSV replacing the one stored in the checkpoint")
    p.add_argument("--filter", choices=FILTERS)
    p.add_argument("--disamb")
    p.add_argument("--threshold", type=float, default=0.5)

    p = command("eval", cmd_eval, "exact match and labeled F1")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--kv", action="store_true", help="key=value output")

    p = command("lexicon", cmd_lexicon, "build, extend or inspect a slot lexicon",
                ("build", "add", "stats"))
    p.add_argument("--train")
    p.add_argument("--lexicon")
    p.add_argument("--out")
    p.add_argument("--catalog")
    p.add_argument("--category")
    p.add_argument("--value", action="append")

    p = command("disamb", cmd_disamb, "slot disambiguation classifier",
                ("examples", "train", "eval", "filter"))
    p.add_argument("--lexicon")
    p.add_argument("--corpus")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--examples")
    p.add_argument("--dev-examples")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--word-dropout", type=float, default=0.1)
    p.add_argument("--threshold", type=float, default=0.5)
    add_model_dims(p, 32, 64, 128)

    p = command("simulate", cmd_simulate, "unseen-slot-value experiments",
                ("generate", "run", "sweep"))
    p.add_argument("--test", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--out")
    p.add_argument("--mod-log")
    p.add_argument("--rate", type=float, default=0.2, help="target fraction of modified utterances")
    p.add_argument("--p-replace", type=float, help="per-slot replacement probability")
    p.add_argument("--scenario", choices=SCENARIOS, default="updated-lexicon")
    p.add_argument("--model", help="lexicon-injected parser checkpoint")
    p.add_argument("--plain-model", help="non-lexicon parser checkpoint")
    p.add_argument("--models", nargs="+", default=[], help="name=checkpoint pairs")
    p.add_argument("--rates", type=floats, default=[0.0, 0.1, 0.2, 0.3, 0.4])
    p.add_argument("--lexicon")
    p.add_argument("--filter", choices=FILTERS)
    p.add_argument("--disamb")
    p.add_argument("--threshold", type=float, default=0.5)
    return root, subs


REQUIRED_OUT = {("lexicon", "build"), ("disamb", "examples"), ("disamb", "train"),
                ("disamb", "filter"), ("simulate", "generate"), ("simulate", "sweep")}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    root, subs = build_argparser()
    try:
        args = root.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command; see topspan --help")
        if args.config:
            command, verbose = args.command, args.verbose
            sub_argv = argv[argv.index(command) + 1:]
            args = apply_config(subs[command], sub_argv, read_config(args.config))
            args.command, args.verbose = command, verbose
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        action = getattr(args, "action", None)
        if (args.command, action) in REQUIRED_OUT and not args.out:
            raise UsageError(f"{args.command} {action} needs --out")
        if args.command == "lexicon" and action in ("add", "stats") and not args.lexicon:
            raise UsageError(f"lexicon {action} needs --lexicon")
        if args.command == "lexicon" and action == "build" and not args.train:
            raise UsageError("lexicon build needs --train")
        if args.command == "disamb" and action in ("eval", "filter") and not args.model:
            raise UsageError(f"disamb {action} needs --model")
        if args.command == "simulate" and action == "sweep" and not args.models:
            raise UsageError("simulate sweep needs --models")
        echo_config(args)
        return args.func(args)
    except SystemExit as e:  # --help
        return 0 if not e.code else 1
    except (UsageError, CorpusError, TreeError, ValueError, KeyError, OSError, RuntimeError,
            FloatingPointError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
