import numpy as np
import pytest

from topspan import chart, chart_py
from topspan.parser import cky_decode_table, hamming_cost, margin_loss_table, theta, tree_score_table

from oracles import (
    brute_decode, brute_decode_full, brute_margin, dyadic_table, labeled_set, random_chart_tree,
    toy_labels,
)

try:
    from topspan import _chart
except ImportError:  # extension not built
    _chart = None

needs_ext = pytest.mark.skipif(_chart is None, reason="compiled chart extension not built")


def test_backend_is_reported():
    assert chart.BACKEND in ("cython", "python")


@pytest.mark.parametrize("seed", range(40))
def test_decode_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n, L = int(rng.integers(1, 7)), int(rng.integers(2, 6))
    labels = toy_labels(L)
    # a narrow value range forces many exact ties
    table = dyadic_table(rng, n, L, spread=2 if seed % 2 else 512, denom=4.0 if seed % 2 else 1024.0)
    tree, score = cky_decode_table(table, labels)
    ref, ref_score = brute_decode(table, labels)
    assert score == ref_score
    assert tree == ref


@pytest.mark.parametrize("seed", range(15))
def test_decode_matches_full_label_enumeration(seed):
    rng = np.random.default_rng(1000 + seed)
    n, L = int(rng.integers(1, 5)), int(rng.integers(2, 4))
    labels = toy_labels(L)
    table = dyadic_table(rng, n, L, spread=3, denom=2.0)
    tree, score = cky_decode_table(table, labels)
    ref, ref_score = brute_decode_full(table, labels)
    assert (tree, score) == (ref, ref_score)


def test_single_token_takes_argmax_label():
    labels = toy_labels(4)
    table = np.zeros((2, 2, 4))
    table[0, 1] = [0.0, -1.0, 3.0, 3.0]
    tree, score = cky_decode_table(table, labels)
    assert score == 3.0 and tree.label == labels[2] and tree.children == ()


def test_zero_scores_tie_to_dummy_and_leftmost_split():
    labels = toy_labels(3)
    tree, score = cky_decode_table(np.zeros((4, 4, 3)), labels)
    assert score == 0.0
    assert all(n.label.is_dummy for n in tree.nodes())
    assert tree.children[0].span == (0, 1)


def test_decoded_tree_rescores_to_chart_score():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n, L = int(rng.integers(1, 9)), int(rng.integers(2, 7))
        labels = toy_labels(L)
        table = dyadic_table(rng, n, L)
        tree, score = cky_decode_table(table, labels)
        assert tree_score_table(tree, table, labels) == score


def test_cost_never_lowers_the_optimum():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n, L = int(rng.integers(1, 7)), int(rng.integers(2, 6))
        labels = toy_labels(L)
        table = dyadic_table(rng, n, L)
        gold = random_chart_tree(rng, n, labels)
        _, plain = cky_decode_table(table, labels)
        _, aug = cky_decode_table(table, labels, hamming_cost(gold, n, labels))
        assert aug >= plain


@pytest.mark.parametrize("seed", range(20))
def test_margin_loss_matches_enumeration(seed):
    rng = np.random.default_rng(500 + seed)
    n, L = int(rng.integers(1, 6)), int(rng.integers(2, 6))
    labels = toy_labels(L)
    table = dyadic_table(rng, n, L)
    gold = random_chart_tree(rng, n, labels)
    loss, _ = margin_loss_table(table, gold, labels)
    assert loss == brute_margin(table, gold, labels)


def test_theta_is_set_difference():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n, L = int(rng.integers(1, 7)), int(rng.integers(2, 6))
        labels = toy_labels(L)
        a, b = random_chart_tree(rng, n, labels), random_chart_tree(rng, n, labels)
        assert theta(a, b, labels) == len(labeled_set(a, labels) - labeled_set(b, labels))
        assert theta(a, a, labels) == 0


def test_gold_with_large_margin_has_zero_loss():
    rng = np.random.default_rng(3)
    labels = toy_labels(4)
    gold = random_chart_tree(rng, 5, labels)
    table = np.full((6, 6, 4), -5.0)
    table[..., 0] = 0.0
    for node in gold.nodes():
        lid = labels.get(node.label)
        if lid:
            table[node.span[0], node.span[1], lid] = 5.0
    loss, pred = margin_loss_table(table, gold, labels)
    assert loss == 0.0


# ------------------------------------------------------------ split kernel

def split_inputs(rng, n, L, d=5):
    fence = rng.normal(size=(n + 1, d))
    W = rng.normal(size=(d, 7))
    b = rng.normal(size=7)
    V = rng.normal(size=(7, L))
    P = fence @ W
    pre = P[None, :, :] - P[:, None, :] + b
    return pre, P, V


def split_reference(pre, P, V, cost=None):
    """Direct transcription of the greedy split rule, spans visited recursively."""
    n = pre.shape[0] - 1
    memo = {}

    def best(i, j):
        if (i, j) in memo:
            return memo[(i, j)]
        if j - i == 1:
            h, kb, cb = pre[i, j], -1, 0.0
        else:
            scores = [best(i, k)[0] + best(k, j)[0] for k in range(i + 1, j)]
            kb = i + 1 + int(np.argmax(scores))
            cb = scores[kb - i - 1]
            h = pre[i, j] + P[kb]
        row = np.maximum(h, 0) @ V
        row[0] = 0.0
        if cost is not None:
            row = row + cost[i, j]
        lab = int(np.argmax(row))
        memo[(i, j)] = (row[lab] + cb, lab, kb)
        return memo[(i, j)]

    best(0, n)
    return memo


def test_split_kernel_matches_recursive_reference():
    rng = np.random.default_rng(4)
    for _ in range(30):
        n, L = int(rng.integers(1, 8)), int(rng.integers(2, 6))
        pre, P, V = split_inputs(rng, n, L)
        cost = rng.integers(0, 2, size=(n + 1, n + 1, L)).astype(float)
        cost[..., 0] = 0
        for c in (None, cost):
            best, lab, split = chart_py.decode_split(pre, P, V, c, 0)
            for (i, j), (s, l, k) in split_reference(pre, P, V, c).items():
                assert np.isclose(best[i, j], s, rtol=0, atol=1e-12)
                assert lab[i, j] == l and split[i, j] == k


def test_split_with_zero_fences_equals_plain():
    rng = np.random.default_rng(5)
    n, L = 5, 4
    pre, _, V = split_inputs(rng, n, L)
    zero = np.zeros((n + 1, pre.shape[-1]))
    best_s, lab_s, split_s = chart_py.decode_split(pre, zero, V, None, 0)
    table = np.maximum(pre, 0) @ V
    table[..., 0] = 0.0
    best_p, lab_p, split_p = chart_py.decode_table(table)
    assert np.array_equal(lab_s, lab_p) and np.array_equal(split_s, split_p)
    assert np.allclose(best_s, best_p, rtol=0, atol=1e-12)


# ------------------------------------------------------- backend agreement

@needs_ext
def test_compiled_table_kernel_matches_python():
    rng = np.random.default_rng(6)
    for _ in range(100):
        n, L = int(rng.integers(1, 12)), int(rng.integers(2, 9))
        table = rng.normal(size=(n + 1, n + 1, L))
        table[..., 0] = 0
        cost = rng.integers(0, 2, size=table.shape).astype(float)
        for c in (None, cost):
            a = chart_py.decode_table(table, c)
            b = _chart.decode_table(table, c)
            for x, y in zip(a, b):
                assert np.array_equal(x, y)


@needs_ext
def test_compiled_split_kernel_matches_python():
    rng = np.random.default_rng(7)
    for _ in range(60):
        n, L = int(rng.integers(1, 12)), int(rng.integers(2, 9))
        pre, P, V = split_inputs(rng, n, L)
        cost = rng.integers(0, 2, size=(n + 1, n + 1, L)).astype(float)
        for c in (None, cost):
            a = chart_py.decode_split(pre, P, V, c, 0)
            b = _chart.decode_split(pre, P, V, c, 0)
            assert np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])
            assert np.allclose(a[0], b[0], rtol=0, atol=1e-12)


def test_pure_python_switch(monkeypatch):
    import importlib
    monkeypatch.setenv("TOPSPAN_PURE_PYTHON", "1")
    mod = importlib.reload(chart)
    try:
        assert mod.BACKEND == "python"
        assert mod.decode_table is chart_py.decode_table
    finally:
        monkeypatch.delenv("TOPSPAN_PURE_PYTHON")
        importlib.reload(chart)
