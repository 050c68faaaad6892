# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled decode kernels. Mirrors _kernels_py bit for bit: same operand
pairings, same tie rules (final frame -> lower index; backpointers ->
stay, then lower index; DTW -> diagonal, right, down)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"


def viterbi_path(object log_post_o, object w_o, object sb_o, object ss_o, long beam_width):
    cdef const double[:, ::1] log_post = np.ascontiguousarray(log_post_o, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(w_o, dtype=np.float64)
    cdef const double[::1] sb = np.ascontiguousarray(sb_o, dtype=np.float64)
    cdef const double[::1] ss = np.ascontiguousarray(ss_o, dtype=np.float64)
    cdef Py_ssize_t t = log_post.shape[0]
    cdef Py_ssize_t n = log_post.shape[1]
    cdef bint full = beam_width <= 0 or beam_width >= n

    cdef cnp.ndarray[cnp.float64_t, ndim=1] delta_arr = np.array(log_post_o[0], dtype=np.float64)
    cdef double[::1] delta = delta_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=1] next_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] nxt = next_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=2] backptr_arr = np.empty((t, n), dtype=np.int64)
    cdef long[:, ::1] backptr = backptr_arr
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] chosen_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] chosen = chosen_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] beam_arr = np.empty(n, dtype=np.int64)
    cdef long[::1] beam = beam_arr

    cdef long transitions = 0
    cdef Py_ssize_t step, i, j, b, k, best_arg, pick
    cdef double sbt, sst, best, cand, stay_val, best_val
    cdef double NEG_INF = -np.inf

    for step in range(1, t):
        if full:
            k = n
            for i in range(n):
                beam[i] = i
        else:
            k = beam_width
            for i in range(n):
                chosen[i] = 0
            for b in range(k):
                best_val = NEG_INF
                pick = -1
                for i in range(n):
                    if not chosen[i] and delta[i] > best_val:
                        best_val = delta[i]
                        pick = i
                if pick < 0:  # remaining entries all -inf; take lowest unchosen
                    for i in range(n):
                        if not chosen[i]:
                            pick = i
                            break
                chosen[pick] = 1
            b = 0
            for i in range(n):
                if chosen[i]:
                    beam[b] = i
                    b += 1
        sbt = sb[step]
        sst = ss[step]
        for j in range(n):
            best = NEG_INF
            best_arg = -1
            stay_val = NEG_INF
            for b in range(k):
                i = beam[b]
                if i == j:
                    cand = delta[j] + sst
                    stay_val = cand
                else:
                    cand = delta[i] + (w[i, j] + sbt)
                if cand > best or best_arg < 0:
                    best = cand
                    best_arg = i
            if stay_val == best and stay_val != NEG_INF:
                best_arg = j
            backptr[step, j] = best_arg
            nxt[j] = best + log_post[step, j]
        transitions += k * n
        for j in range(n):
            delta[j] = nxt[j]

    cdef Py_ssize_t last = 0
    best = delta[0]
    for j in range(1, n):
        if delta[j] > best:
            best = delta[j]
            last = j
    cdef cnp.ndarray[cnp.int64_t, ndim=1] labels_arr = np.empty(t, dtype=np.int64)
    cdef long[::1] labels = labels_arr
    labels[t - 1] = last
    for step in range(t - 1, 0, -1):
        labels[step - 1] = backptr[step, labels[step]]
    return labels_arr, float(best), transitions


def dtw_grid(object cost_o):
    cdef const double[:, ::1] cost = np.ascontiguousarray(cost_o, dtype=np.float64)
    cdef Py_ssize_t r = cost.shape[0]
    cdef Py_ssize_t c = cost.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] acc_arr = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr
    cdef Py_ssize_t i, j
    cdef double best, diag, right, down

    acc[0, 0] = cost[0, 0]
    for j in range(1, c):
        acc[0, j] = cost[0, j] + acc[0, j - 1]
    for i in range(1, r):
        acc[i, 0] = cost[i, 0] + acc[i - 1, 0]
        for j in range(1, c):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = cost[i, j] + best

    cdef list steps = [(r - 1, c - 1)]
    i = r - 1
    j = c - 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag = acc[i - 1, j - 1]
            right = acc[i, j - 1]
            down = acc[i - 1, j]
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
