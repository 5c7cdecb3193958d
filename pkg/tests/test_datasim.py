import numpy as np
import pytest

from topspan import toydata
from topspan.datasim import (
    NewValueCatalog, Substitution, calibrate_p_replace, count_eligible, generate_modified_test,
    load_catalog, modified_fraction, regex_substitute, scenario_run, sweep_modification_rate,
    undo_substitution, write_modifications, write_sweep,
)
from topspan.lexicon import Lexicon, build_lexicon
from topspan.treebank import Utterance, parse_top, serialize_top


def toy_catalog():
    return NewValueCatalog({c: [tuple(v.split()) for v in vs] for c, vs in toydata.CATALOG.items()})


@pytest.fixture(scope="module")
def corpus():
    return toydata.generate(300, 2)


def test_generation_is_reproducible(corpus):
    cat = toy_catalog()
    a = generate_modified_test(corpus, cat, 0.3, seed=4)
    b = generate_modified_test(corpus, cat, 0.3, seed=4)
    assert a == b
    c = generate_modified_test(corpus, cat, 0.3, seed=5)
    assert c[1] != a[1]


def test_modifications_are_logged_and_applied(corpus):
    cat = toy_catalog()
    mod, mods = generate_modified_test(corpus, cat, 0.5, seed=0)
    changed = [i for i, ((_, u0), (_, u1)) in enumerate(zip(corpus, mod)) if u0.tokens != u1.tokens]
    assert sorted({m.line for m in mods}) == changed
    for m in mods:
        assert m.new in cat.values[m.category]
        assert tuple(corpus[m.line][1].tokens[m.span[0]:m.span[1]]) == m.old
        assert " ".join(m.new) in " ".join(mod[m.line][1].tokens)
    # untouched utterances pass through unchanged
    assert all(mod[i] == corpus[i] for i in range(len(corpus)) if i not in changed)


def test_higher_rate_modifies_a_superset(corpus):
    cat = toy_catalog()
    prev = set()
    for p in (0.0, 0.1, 0.3, 0.6, 1.0):
        _, mods = generate_modified_test(corpus, cat, p, seed=1)
        now = {(m.line, m.span, m.new) for m in mods}
        assert prev <= now
        prev = now
    eligible = sum(count_eligible(t, cat) for t, _ in corpus)
    assert len(prev) == eligible


def test_rate_zero_changes_nothing(corpus):
    mod, mods = generate_modified_test(corpus, toy_catalog(), 0.0)
    assert mods == [] and mod == corpus


def test_calibration_targets_expected_fraction(corpus):
    cat = toy_catalog()
    p = calibrate_p_replace(corpus, cat, 0.2)
    counts = np.array([count_eligible(t, cat) for t, _ in corpus])
    assert abs(np.mean(1 - (1 - p) ** counts) - 0.2) < 1e-5
    frac = np.mean([modified_fraction(corpus, generate_modified_test(corpus, cat, p, s)[1])
                    for s in range(20)])
    assert abs(frac - 0.2) < 0.03
    assert calibrate_p_replace(corpus, cat, 0.99) == 1.0


def test_bad_rate():
    with pytest.raises(ValueError):
        generate_modified_test([], toy_catalog(), 1.5)


def test_catalog_validation(tmp_path, corpus):
    lex = build_lexicon(corpus)[0]
    assert toy_catalog().validate(lex)
    with pytest.raises(ValueError, match="already"):
        NewValueCatalog({"SL:LOCATION": [("downtown",)]}).validate(lex)
    with pytest.raises(ValueError, match="not in the lexicon"):
        NewValueCatalog({"SL:NOPE": [("x",)]}).validate(lex)
    path = tmp_path / "cat.tsv"
    path.write_text("SL:LOCATION\tbeach park\nSL:LOCATION\tsingapore\n")
    assert load_catalog(path).values == {"SL:LOCATION": [("beach", "park"), ("singapore",)]}
    path.write_text("SL:LOCATION beach\n")
    with pytest.raises(ValueError, match=":1:"):
        load_catalog(path)


def test_apply_to_leaves_original_lexicon(corpus):
    lex = build_lexicon(corpus)[0]
    new = toy_catalog().apply_to(lex)
    assert ("roommate",) in new.entries["SL:TYPE_RELATION"]
    assert ("roommate",) not in lex.entries["SL:TYPE_RELATION"]


def test_modification_log_format(tmp_path, corpus):
    _, mods = generate_modified_test(corpus, toy_catalog(), 0.3)
    path = tmp_path / "mods.tsv"
    write_modifications(path, mods)
    lines = path.read_text().splitlines()
    assert len(lines) == len(mods)
    first = lines[0].split("\t")
    assert first == [str(mods[0].line + 1), mods[0].category, " ".join(mods[0].old),
                     " ".join(mods[0].new)]


# ------------------------------------------------------------ regex baseline

def test_regex_longest_then_leftmost_then_catalog_order():
    cat = NewValueCatalog({"SL:A": [("b", "c"), ("x",)], "SL:B": [("a", "b", "c"), ("x",)]})
    lex = Lexicon({"SL:A": {("known",)}, "SL:B": {("old",)}})
    utt = Utterance(("a", "b", "c", "x", "b", "c"))
    new, subs = regex_substitute(utt, cat, lex, np.random.default_rng(0))
    assert new.tokens == ("old", "known", "known")
    assert [(s.original, s.category) for s in subs] == [
        (("a", "b", "c"), "SL:B"), (("x",), "SL:A"), (("b", "c"), "SL:A")]
    assert [s.span for s in subs] == [(0, 1), (1, 2), (2, 3)]


def test_undo_restores_tokens():
    tree, utt = parse_top("[IN:GET_LOCATION where is [SL:LOCATION the old pier ] ]")
    subs = [Substitution((2, 3), ("the", "old", "pier"), "SL:LOCATION")]
    parsed, _ = parse_top("[IN:GET_LOCATION where is [SL:LOCATION downtown ] ]")
    back, u = undo_substitution(parsed, ("where", "is", "downtown"), subs)
    assert (back, u.tokens) == (tree, utt.tokens)


def test_undo_drops_tail_of_multi_token_replacement():
    parsed, _ = parse_top("[IN:GET_LOCATION where is [SL:LOCATION the city ] ]")
    subs = [Substitution((2, 4), ("zorb",), "SL:LOCATION")]
    back, u = undo_substitution(parsed, ("where", "is", "the", "city"), subs)
    assert serialize_top(back, u) == "[IN:GET_LOCATION where is [SL:LOCATION zorb ] ]"


def test_regex_round_trip_on_modified_corpus(corpus):
    cat = toy_catalog()
    lex = build_lexicon(corpus)[0]
    mod, _ = generate_modified_test(corpus, cat, 0.5, seed=3)
    rng = np.random.default_rng(0)
    for _, utt in mod:
        new, subs = regex_substitute(utt, cat, lex, rng)
        for s in subs:
            assert tuple(new.tokens[s.span[0]:s.span[1]]) in lex.entries[s.category]
        assert all(tuple(t.lower() for t in v) not in
                   {tuple(new.tokens[i:j]) for i in range(len(new)) for j in range(i + 1, len(new) + 1)}
                   for vals in cat.values.values() for v in vals if len(v) > 1)


# -------------------------------------------------------------- harnesses

def test_scenarios_with_oracle_runner(corpus):
    cat = toy_catalog()
    lex = build_lexicon(corpus)[0]
    mod, _ = generate_modified_test(corpus, cat, 0.3)
    gold = {u.tokens: t for t, u in mod}
    perfect = lambda c, lexicon=None: [gold[u.tokens] for _, u in c]  # noqa: E731
    for sc in ("updated-lexicon", "stale-lexicon"):
        assert scenario_run(sc, mod, cat, lex_runner=perfect, lexicon=lex).exact_match == 1.0
    with pytest.raises(ValueError):
        scenario_run("updated-lexicon", mod, cat, plain_runner=perfect, lexicon=lex)
    with pytest.raises(ValueError):
        scenario_run("nope", mod, cat, lexicon=lex)


def test_sweep_rows(tmp_path, corpus):
    cat = toy_catalog()
    rows = sweep_modification_rate(corpus[:100], cat, [0.0, 0.2, 0.4],
                                   {"echo": lambda c: [t for t, _ in c]})
    assert [r["target"] for r in rows] == [0.0, 0.2, 0.4]
    assert rows[0]["modified"] == 0.0 and rows[0]["p_replace"] == 0.0
    assert rows[0]["modified"] <= rows[1]["modified"] <= rows[2]["modified"]
    assert all(r["echo"] == 1.0 for r in rows)
    path = tmp_path / "sweep.tsv"
    write_sweep(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0].split("\t") == ["target", "p_replace", "modified", "echo"]
    assert len(lines) == 4
    with pytest.raises(ValueError):
        sweep_modification_rate(corpus, cat, [0.4, 0.2], {})
