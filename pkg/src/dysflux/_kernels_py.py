"""Pure-numpy decode kernels; fallback when the compiled extension is absent.

Both backends must produce bitwise-identical outputs: identical operand
pairings (so IEEE rounding agrees) and identical tie rules.
"""
from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def viterbi_path(log_post, w, sb, ss, beam_width):
    """Best frame labeling under emission + weighted transition scores.

    Scores: frame 0 contributes its emission only.  A switch into frame t
    pays ``w[prev, cur] + sb[t]``; a stay pays ``ss[t]``.  Ties at the
    final frame go to the lower phoneme index; ties at each backpointer
    prefer staying on the current phoneme, then the lower index.

    Returns ``(labels int64 (t,), score, transitions_evaluated)``.
    ``beam_width <= 0`` or ``>= N`` means unlimited.
    """
    log_post = np.asarray(log_post, dtype=np.float64)
    t, n = log_post.shape
    full = beam_width <= 0 or beam_width >= n
    delta = log_post[0].copy()
    backptr = np.empty((t, n), dtype=np.int64)
    transitions = 0

    for step in range(1, t):
        if full:
            beam = np.arange(n)
        else:
            order = np.argsort(-delta, kind="stable")[:beam_width]
            beam = np.sort(order)
        k = len(beam)
        m = delta[beam, None] + (w[beam, :] + sb[step])
        stay_vals = delta[beam] + ss[step]
        m[np.arange(k), beam] = stay_vals
        pos = m.argmax(axis=0)
        colmax = m[pos, np.arange(n)]
        bp = beam[pos]
        # prefer staying on the current phoneme when tied with the best
        in_beam = np.full(n, -1, dtype=np.int64)
        in_beam[beam] = np.arange(k)
        cols = np.flatnonzero(in_beam >= 0)
        sv = stay_vals[in_beam[cols]]
        tied = (sv == colmax[cols]) & np.isfinite(sv)
        bp[cols[tied]] = cols[tied]
        backptr[step] = bp
        delta = colmax + log_post[step]
        transitions += k * n

    last = int(np.argmax(delta))  # lowest index on ties
    score = float(delta[last])
    labels = np.empty(t, dtype=np.int64)
    labels[t - 1] = last
    for step in range(t - 1, 0, -1):
        labels[step - 1] = backptr[step, labels[step]]
    return labels, score, transitions


def dtw_grid(cost):
    """Classical DTW over a cost grid with steps {down, right, diagonal}.

    Returns ``(path int64 (L, 2), total_cost)`` where the path runs from
    (0, 0) to (R-1, C-1).  Backtrace ties prefer diagonal, then right
    (predecessor (i, j-1)), then down (predecessor (i-1, j)).
    """
    cost = np.asarray(cost, dtype=np.float64)
    r, c = cost.shape
    acc = np.empty((r, c), dtype=np.float64)
    acc[0, 0] = cost[0, 0]
    for j in range(1, c):
        acc[0, j] = cost[0, j] + acc[0, j - 1]
    for i in range(1, r):
        acc[i, 0] = cost[i, 0] + acc[i - 1, 0]
        row = acc[i]
        up = acc[i - 1]
        ci = cost[i]
        for j in range(1, c):
            best = up[j - 1]
            if up[j] < best:
                best = up[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = ci[j] + best

    steps = [(r - 1, c - 1)]
    i, j = r - 1, c - 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, right, down = acc[i - 1, j - 1], acc[i, j - 1], acc[i - 1, j]
            if diag <= right and diag <= down:
                i -= 1
                j -= 1
            elif right <= down:
                j -= 1
            else:
                i -= 1
        steps.append((i, j))
    steps.reverse()
    return np.array(steps, dtype=np.int64), float(acc[r - 1, c - 1])
