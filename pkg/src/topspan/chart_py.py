"""Pure-Python CKY kernels (fallback for the compiled ``_chart`` module).

Both kernels fill a chart over fence spans ``(i, j)`` bottom-up by width and
return ``(best, label, split)`` arrays of shape ``(n+1, n+1)``; ``split`` is
-1 on width-one spans. Ties go to the lowest label id, then the lowest fence.
"""
import numpy as np


def decode_table(scores, cost=None):
    """CKY over a precomputed ``(n+1, n+1, L)`` label-score table.

    ``cost`` (same shape) is added to the label scores before maximizing;
    the caller is responsible for zeroing the Dummy column of both.
    """
    n = scores.shape[0] - 1
    aug = scores if cost is None else scores + cost
    best = np.zeros((n + 1, n + 1))
    label = np.zeros((n + 1, n + 1), dtype=np.int64)
    split = np.full((n + 1, n + 1), -1, dtype=np.int64)
    for width in range(1, n + 1):
        for i in range(n - width + 1):
            j = i + width
            row = aug[i, j]
            lab = int(np.argmax(row))
            s = row[lab]
            if width > 1:
                k_best, c_best = -1, -np.inf
                for k in range(i + 1, j):
                    c = best[i, k] + best[k, j]
                    if c > c_best:
                        k_best, c_best = k, c
                split[i, j] = k_best
                s = s + c_best
            best[i, j] = s
            label[i, j] = lab
    return best, label, split


def decode_split(pre, fence, V, cost, dummy):
    """CKY where a wide span's label scores use the span-splitting input.

    ``pre[i, j]`` holds the scorer's pre-activation for the plain span vector
    (``W r + b``) and ``fence[k]`` the projection ``W b_k``. Width-one spans
    are scored from ``pre`` alone; wider spans first fix the best split k*
    from the children's chart scores, then score labels from
    ``relu(pre[i, j] + fence[k*]) @ V``.
    """
    n = pre.shape[0] - 1
    best = np.zeros((n + 1, n + 1))
    label = np.zeros((n + 1, n + 1), dtype=np.int64)
    split = np.full((n + 1, n + 1), -1, dtype=np.int64)
    for width in range(1, n + 1):
        for i in range(n - width + 1):
            j = i + width
            h = pre[i, j]
            c_best = 0.0
            if width > 1:
                k_best, c_best = -1, -np.inf
                for k in range(i + 1, j):
                    c = best[i, k] + best[k, j]
                    if c > c_best:
                        k_best, c_best = k, c
                split[i, j] = k_best
                h = h + fence[k_best]
            row = np.maximum(h, 0.0) @ V
            row[dummy] = 0.0
            if cost is not None:
                row = row + cost[i, j]
            lab = int(np.argmax(row))
            best[i, j] = row[lab] + c_best if width > 1 else row[lab]
            label[i, j] = lab
    return best, label, split
