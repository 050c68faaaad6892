"""Smoothed re-segmentation and the recursive per-word realignment loop.

Order 0 decodes the whole utterance, builds the 2D alignment, merges it
into the DTW reading, and reads word boundaries off the reference axis.
Order 1 re-decodes each zero-order word span and realigns every span
against that word's own phonemes; higher orders refine the per-word
alignments and realization windows on the fixed labels (re-decoding an
unchanged slice would only re-roll marginal frames).  Words that lost
their span are re-derived from the slack between their neighbors.  The
decoder itself never changes across orders.

The merged (monotonic) alignment is used for segmentation only; the
non-monotonic alignment is what detection consumes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dysflux.align2d import (
    Alignment2D,
    DtwPath,
    assign_columns,
    build_2d,
    dtw_on_grid,
    dtw_row_for_col,
    similarity_grid,
    subsequence_window,
)
from dysflux.core import (
    SIL,
    AlignmentSegments,
    BigramLM,
    EmissionInput,
    InvalidInputError,
    PhonemeInventory,
    ReferenceText,
)
from dysflux.search import SearchConfig, decode_segment, viterbi_decode

TAU_MERGE_DEFAULT = 0.6
MAX_ORDER_DEFAULT = 3
TAU_TRIM = 0.3  # weak-evidence floor for realization-window endpoints
TAU_EXTEND = 0.9  # near-identity bar for absorbing repeated edge phonemes


@dataclass(frozen=True)
class WordEntry:
    word_index: int
    word: str
    start: int  # frame
    end: int  # frame, exclusive

    def seconds(self, frame_duration: float) -> tuple[float, float]:
        return self.start * frame_duration, self.end * frame_duration


@dataclass(frozen=True)
class WordSegmentation:
    """Time-ordered, non-overlapping word spans; gaps between words allowed."""

    entries: tuple[WordEntry, ...]
    frame_duration: float
    missing: tuple[int, ...] = ()  # word indices with no assigned columns

    def __post_init__(self):
        prev_end = None
        seen = set()
        for e in self.entries:
            if e.word_index in seen:
                raise InvalidInputError(f"word index {e.word_index} appears twice")
            seen.add(e.word_index)
            if e.end <= e.start:
                raise InvalidInputError(f"empty span for word {e.word!r}")
            if prev_end is not None and e.start < prev_end:
                raise InvalidInputError("word spans must be time-ordered and disjoint")
            prev_end = e.end

    def to_dicts(self) -> list[dict]:
        fd = self.frame_duration
        return [
            {
                "word_index": e.word_index,
                "word": e.word,
                "start_s": round(e.start * fd, 4),
                "end_s": round(e.end * fd, 4),
            }
            for e in self.entries
        ]


def _merged_assignment(
    sims: np.ndarray,
    assignment: list[int | None],
    path: DtwPath,
    ref_labels: list[str],
    inv: PhonemeInventory,
    tau_merge: float,
) -> list[int]:
    dtw_row = dtw_row_for_col(sims, path)
    merged: list[int] = []
    for j, i_asn in enumerate(assignment):
        i_dtw = dtw_row[j]
        if i_asn is None or inv.similarity(ref_labels[i_asn], ref_labels[i_dtw]) >= tau_merge:
            merged.append(i_dtw)
        else:
            merged.append(i_asn)
    # final clamp pass: running max forces non-decreasing assignments
    for j in range(1, len(merged)):
        if merged[j] < merged[j - 1]:
            merged[j] = merged[j - 1]
    return merged


def smooth_merge(a: Alignment2D, path: DtwPath, tau_merge: float = TAU_MERGE_DEFAULT) -> Alignment2D:
    """Merge the non-monotonic alignment into its DTW reading.

    A column moves to its DTW row when it is unassigned or when its
    assigned reference phoneme is similar enough (>= tau_merge) to the
    DTW row's phoneme; otherwise it keeps its row and the final clamp
    pass enforces monotonicity.  The input alignment is not modified.
    """
    merged = _merged_assignment(
        a.similarity,
        list(a.assignment),
        path,
        list(a.ref.flat_phonemes),
        a.inv,
        tau_merge,
    )
    return a.with_assignment(merged)


def is_monotonic(a: Alignment2D) -> bool:
    prev = -1
    for v in a.assignment:
        if v is None:
            continue
        if v < prev:
            return False
        prev = v
    return True


def extract_word_boundaries(m: Alignment2D) -> WordSegmentation:
    """Word spans from a monotonic alignment.

    A word's span is the hull of its assigned non-SIL columns, so
    internal pauses are absorbed while leading/trailing silence never
    extends a word.  Words with no assigned columns are omitted and
    reported in ``missing``.
    """
    if not is_monotonic(m):
        raise InvalidInputError("word extraction requires a monotonic alignment")
    segs = m.segs.segments
    fd = m.segs.frame_duration
    entries: list[WordEntry] = []
    missing: list[int] = []
    for w, word in enumerate(m.ref.words):
        rows = m.ref.rows_of_word(w)
        cols = [
            j
            for j, i in enumerate(m.assignment)
            if i is not None and i in rows and segs[j].label != SIL
        ]
        if not cols:
            missing.append(w)
            continue
        entries.append(WordEntry(w, word.text, segs[cols[0]].start, segs[cols[-1]].end))
    return WordSegmentation(tuple(entries), fd, tuple(missing))


@dataclass(frozen=True)
class RecursionConfig:
    search: SearchConfig = SearchConfig()
    tau_assign: float = 0.6
    tau_merge: float = TAU_MERGE_DEFAULT
    max_order: int = MAX_ORDER_DEFAULT


@dataclass(frozen=True, eq=False)
class OrderState:
    order: int
    segments: AlignmentSegments
    align: Alignment2D  # non-monotonic; detection input
    path: DtwPath
    mono: Alignment2D  # merged; segmentation only
    words: WordSegmentation


@dataclass(frozen=True)
class RecursionState:
    orders: tuple[OrderState, ...]

    @property
    def final(self) -> OrderState:
        return self.orders[-1]


def _zero_order(
    e: EmissionInput,
    ref: ReferenceText,
    lm: BigramLM,
    inv: PhonemeInventory,
    cfg: RecursionConfig,
) -> OrderState:
    segs = viterbi_decode(e, lm, cfg.search)
    a = build_2d(ref, segs, inv, cfg.tau_assign)
    path = dtw_on_grid(a.similarity)
    mono = smooth_merge(a, path, cfg.tau_merge)
    words = extract_word_boundaries(mono)
    return OrderState(0, segs, a, path, mono, words)


def _column_word(segs: AlignmentSegments, entries) -> list[int | None]:
    """Majority-overlap word for each column; None outside all spans."""
    out: list[int | None] = []
    for s in segs.segments:
        best_w, best_ov = None, 0
        for en in entries:
            ov = min(s.end, en.end) - max(s.start, en.start)
            if ov > best_ov:
                best_w, best_ov = en.word_index, ov
        out.append(best_w)
    return out


def _locate_word(
    sims2: np.ndarray, seg_list, rows: range, cols: list[int]
) -> tuple[int, int] | None:
    """Best compact realization window of a word's rows over the columns.

    Free-endpoint DTW picks the cheapest single realization, which by
    construction skips stutter copies of the word's first/last phoneme;
    the window is then extended over adjacent columns that near-exactly
    match the corresponding edge row (silence in between is stepped
    over).  Endpoints finally trim columns with no usable evidence.
    Returns a (first col, last col) pair or None.
    """
    sub = sims2[rows.start : rows.stop, cols[0] : cols[-1] + 1]
    sil_mask = np.array([seg_list[j].label == SIL for j in cols])
    j0, j1 = subsequence_window(sub, sil_mask)
    g0, g1 = cols[0] + j0, cols[0] + j1
    j = g0 - 1
    while j >= cols[0]:
        if seg_list[j].label == SIL:
            j -= 1
        elif sims2[rows.start, j] >= TAU_EXTEND:
            g0 = j
            j -= 1
        else:
            break
    j = g1 + 1
    while j <= cols[-1]:
        if seg_list[j].label == SIL:
            j += 1
        elif sims2[rows.stop - 1, j] >= TAU_EXTEND:
            g1 = j
            j += 1
        else:
            break
    kept = [
        j
        for j in range(g0, g1 + 1)
        if seg_list[j].label != SIL
        and sims2[rows.start : rows.stop, j].max() >= TAU_TRIM
    ]
    if not kept:
        return None
    return kept[0], kept[-1]


def _local_alignment(
    sims2: np.ndarray,
    seg_list,
    rows: range,
    cols: list[int],
    ref: ReferenceText,
    inv: PhonemeInventory,
    cfg: RecursionConfig,
) -> tuple[list[int | None], list[int]]:
    """Restricted assignment and merged rows for one word's column block."""
    sub = sims2[rows.start : rows.stop, cols[0] : cols[-1] + 1]
    sub_labels = tuple(seg_list[j].label for j in cols)
    local_path = dtw_on_grid(sub)
    local_asn = assign_columns(
        sub, sub_labels, cfg.tau_assign, dtw_row_for_col(sub, local_path)
    )
    local_mono = _merged_assignment(
        sub,
        local_asn,
        local_path,
        [ref.flat_phonemes[i] for i in rows],
        inv,
        cfg.tau_merge,
    )
    return local_asn, local_mono


def _next_order(
    e: EmissionInput,
    ref: ReferenceText,
    lm: BigramLM,
    inv: PhonemeInventory,
    cfg: RecursionConfig,
    prev: OrderState,
) -> OrderState:
    fd = e.frame_duration
    labels = prev.segments.frame_labels()
    prev_by_word = {en.word_index: en for en in prev.words.entries}
    if prev.order == 0:
        # segment-wise decoding happens once, when moving from the global
        # pass to per-word passes; re-decoding unchanged slices at higher
        # orders only re-rolls marginal frames and jitters the windows
        for en in prev.words.entries:
            if en.end - en.start < 1:
                continue  # degenerate span: keep the order-k labels
            local = decode_segment(e, (en.start, en.end), lm, cfg.search)
            for seg in local.segments:
                labels[seg.start : seg.end] = [seg.label] * (seg.end - seg.start)
    segs2 = AlignmentSegments.from_frame_labels(labels, fd)
    sims2 = similarity_grid(ref, segs2, inv)
    col_word = _column_word(segs2, prev.words.entries)

    n_cols = len(segs2.segments)
    assignment: list[int | None] = [None] * n_cols
    mono_asn: list[int | None] = [None] * n_cols
    entries: list[WordEntry] = []
    seg_list = segs2.segments

    for w, word in enumerate(ref.words):
        if w not in prev_by_word:
            continue
        cols = [j for j, cw in enumerate(col_word) if cw == w]
        if not cols:
            entries.append(prev_by_word[w])
            continue
        cols = list(range(cols[0], cols[-1] + 1))  # majority blocks are contiguous
        rows = ref.rows_of_word(w)
        local_asn, local_mono = _local_alignment(sims2, seg_list, rows, cols, ref, inv, cfg)
        for k, j in enumerate(cols):
            assignment[j] = None if local_asn[k] is None else rows.start + local_asn[k]
            mono_asn[j] = rows.start + local_mono[k]
        # the span contracts to the word's own realization: junk the order-k
        # span swept in falls outside the window
        span = _locate_word(sims2, seg_list, rows, cols)
        if span is None:
            entries.append(prev_by_word[w])
            continue
        entries.append(WordEntry(w, word.text, seg_list[span[0]].start, seg_list[span[1]].end))

    # second pass: a word with no order-k span gets one chance to reappear in
    # the slack between its neighbors' spans (containment does not bind it)
    lost = [w for w in range(len(ref.words)) if w not in prev_by_word]
    recovered: dict[int, WordEntry] = {}
    for w in lost:
        left = max(
            [e.end for e in entries if e.word_index < w]
            + [e.end for e in recovered.values() if e.word_index < w]
            + [0]
        )
        rights = [e.start for e in entries if e.word_index > w] + [
            e.start for e in recovered.values() if e.word_index > w
        ]
        right = min(rights) if rights else segs2.n_frames
        if right - left < 1:
            continue
        cols = [j for j, s in enumerate(seg_list) if s.start >= left and s.end <= right]
        if not cols:
            continue
        rows = ref.rows_of_word(w)
        span = _locate_word(sims2, seg_list, rows, cols)
        if span is None:
            continue
        local_asn, _ = _local_alignment(sims2, seg_list, rows, cols, ref, inv, cfg)
        for k, j in enumerate(cols):
            if local_asn[k] is not None and assignment[j] is None:
                assignment[j] = rows.start + local_asn[k]
        recovered[w] = WordEntry(
            w, ref.words[w].text, seg_list[span[0]].start, seg_list[span[1]].end
        )
    entries.extend(recovered.values())
    entries.sort(key=lambda e: e.word_index)

    a2 = Alignment2D(sims2, tuple(assignment), ref, segs2, inv)
    mono2 = Alignment2D(sims2, tuple(mono_asn), ref, segs2, inv)
    path2 = dtw_on_grid(sims2)
    missing = tuple(w for w in range(len(ref.words)) if w not in {e.word_index for e in entries})
    words2 = WordSegmentation(tuple(entries), fd, missing)
    return OrderState(prev.order + 1, segs2, a2, path2, mono2, words2)


def recursive_align(
    e: EmissionInput,
    ref: ReferenceText,
    lm: BigramLM,
    inv: PhonemeInventory,
    cfg: RecursionConfig = RecursionConfig(),
    max_order: int | None = None,
) -> RecursionState:
    """Run orders 0..max_order and return every intermediate state."""
    if max_order is None:
        max_order = cfg.max_order
    if max_order < 0:
        raise InvalidInputError("max_order must be >= 0")
    states = [_zero_order(e, ref, lm, inv, cfg)]
    for _ in range(max_order):
        states.append(_next_order(e, ref, lm, inv, cfg, states[-1]))
    return RecursionState(tuple(states))
