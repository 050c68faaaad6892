"""Template matching over (2D alignment, DTW) pairs.

Phoneme-level templates, applied per reference row with precedence
Missing > Replacement > Repetition > Insertion (irregular pauses are
independent of rows):

* Missing     - the row matches nothing on the DTW path and no column is
                assigned to it, and the columns the path does cover there
                are explained by other rows.
* Replacement - same starting point, but the covered columns are
                explained by no row at all (one contiguous unmatched
                block sitting in the row's DTW span).
* Repetition  - two or more non-adjacent columns assign to the row with
                mutually similar labels.  Overlapping row candidates
                merge into a single event (a repeated phoneme group such
                as "K AE K AE" yields one event).
* Insertion   - an extra column next to the row's matched column also
                matches the row, beyond what the path needs, and is not
                already explained by its own row.

Word-level detection projects the same ideas onto the word axis and
takes Insertion/Missing from the text refresher, which compares an
external ASR hypothesis against the 2D alignment.
"""
from __future__ import annotations

import difflib
from dataclasses import dataclass

import numpy as np

from dysflux.align2d import Alignment2D, DtwPath, dtw_on_grid
from dysflux.core import SIL, InvalidInputError, ReferenceText

PHONEME_KINDS = ("Missing", "Repetition", "Insertion", "Replacement", "IrregularPause")
WORD_KINDS = ("Missing", "Insertion", "Replacement", "Repetition")

TAU_MATCH_DEFAULT = 0.6
PAUSE_MIN_S_DEFAULT = 0.25


@dataclass(frozen=True)
class DetectConfig:
    tau_match: float = TAU_MATCH_DEFAULT
    pause_min_s: float = PAUSE_MIN_S_DEFAULT


@dataclass(frozen=True)
class DisfluencyEvent:
    kind: str
    level: str  # "phoneme" | "word"
    target: str | None
    interval: tuple[float, float]  # seconds
    evidence: tuple[tuple[int | None, int], ...] = ()  # (row, col) grid coords

    def __post_init__(self):
        legal = PHONEME_KINDS if self.level == "phoneme" else WORD_KINDS
        if self.level not in ("phoneme", "word") or self.kind not in legal:
            raise InvalidInputError(f"illegal event {self.kind}/{self.level}")
        if not self.interval[0] < self.interval[1]:
            raise InvalidInputError("event interval must have start < end")

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "kind": self.kind,
            "target": self.target,
            "start_s": round(self.interval[0], 4),
            "end_s": round(self.interval[1], 4),
            "evidence": [[r, c] for r, c in self.evidence],
        }


def _sort_events(events: list[DisfluencyEvent]) -> list[DisfluencyEvent]:
    return sorted(events, key=lambda e: (e.interval, e.kind, e.target or ""))


def _contiguous(cols: list[int]) -> bool:
    return bool(cols) and cols[-1] - cols[0] == len(cols) - 1


def detect_phoneme(
    a: Alignment2D, path: DtwPath, cfg: DetectConfig = DetectConfig()
) -> list[DisfluencyEvent]:
    """Phoneme-level events from the non-monotonic alignment and its DTW reading."""
    sims = a.similarity
    segs = a.segs.segments
    fd = a.segs.frame_duration
    labels = a.segs.labels
    tau = cfg.tau_match
    n_rows, n_cols = a.n_rows, a.n_cols
    path_cells = path.cells()

    cover_rows: dict[int, list[int]] = {i: [] for i in range(n_rows)}
    cover_cols: dict[int, list[int]] = {j: [] for j in range(n_cols)}
    for i, j in path.steps:
        cover_rows[i].append(j)
        cover_cols[j].append(i)
    col_best = sims.max(axis=0) if n_rows else np.zeros(n_cols)
    assigned_to: dict[int, list[int]] = {i: [] for i in range(n_rows)}
    for j, i in enumerate(a.assignment):
        if i is not None:
            assigned_to[i].append(j)

    def hull(cols: list[int]) -> tuple[float, float]:
        return segs[min(cols)].start * fd, segs[max(cols)].end * fd

    events: list[DisfluencyEvent] = []

    # irregular pauses: long SIL strictly inside the sentence
    non_sil = [k for k, s in enumerate(segs) if s.label != SIL]
    if non_sil:
        first_ns, last_ns = non_sil[0], non_sil[-1]
        for k, s in enumerate(segs):
            if s.label == SIL and first_ns < k < last_ns:
                dur = (s.end - s.start) * fd
                if dur >= cfg.pause_min_s:
                    events.append(
                        DisfluencyEvent(
                            "IrregularPause",
                            "phoneme",
                            None,
                            (s.start * fd, s.end * fd),
                            ((None, k),),
                        )
                    )

    rep_candidates: list[tuple[list[int], list[int]]] = []  # (rows, cols)
    for i in range(n_rows):
        on_path = cover_rows[i]
        matched = [j for j in on_path if sims[i, j] >= tau]
        assigned = assigned_to[i]
        if not matched and not assigned:
            unexplained = [j for j in on_path if labels[j] != SIL and col_best[j] < tau]
            if unexplained and _contiguous(unexplained):
                events.append(
                    DisfluencyEvent(
                        "Replacement",
                        "phoneme",
                        a.ref.flat_phonemes[i],
                        hull(unexplained),
                        tuple((i, j) for j in unexplained),
                    )
                )
            else:
                events.append(
                    DisfluencyEvent(
                        "Missing",
                        "phoneme",
                        a.ref.flat_phonemes[i],
                        hull(on_path),
                        tuple((i, j) for j in on_path),
                    )
                )
            continue

        rep_cols = [j for j in assigned if sims[i, j] >= tau]
        if len(rep_cols) >= 2 and rep_cols[-1] - rep_cols[0] >= 2:
            pairwise = min(
                a.inv.similarity(labels[x], labels[y])
                for x in rep_cols
                for y in rep_cols
                if x < y
            )
            if pairwise >= tau:
                rep_candidates.append(([i], rep_cols))
                continue

        extras: set[int] = set()
        if len(matched) >= 2:
            extras.update(matched[1:])  # the row consumed several matching columns
        for j in matched:
            for jn in (j - 1, j + 1):
                if not (0 <= jn < n_cols) or jn in matched:
                    continue
                if sims[i, jn] < tau or labels[jn] == SIL:
                    continue
                if (i, jn) in path_cells:
                    extras.add(jn)
                    continue
                explained = any(
                    r != i and sims[r, jn] >= tau for r in cover_cols[jn]
                )
                if not explained:
                    extras.add(jn)
        if extras:
            run: list[int] = []
            for j in sorted(extras):
                if run and j != run[-1] + 1:
                    events.append(
                        DisfluencyEvent(
                            "Insertion",
                            "phoneme",
                            a.ref.flat_phonemes[i],
                            hull(run),
                            tuple((i, j2) for j2 in run),
                        )
                    )
                    run = []
                run.append(j)
            events.append(
                DisfluencyEvent(
                    "Insertion",
                    "phoneme",
                    a.ref.flat_phonemes[i],
                    hull(run),
                    tuple((i, j2) for j2 in run),
                )
            )

    events.extend(_merge_repetitions(a, rep_candidates))
    return _sort_events(_merge_same_target(events))


def _merge_repetitions(a: Alignment2D, candidates) -> list[DisfluencyEvent]:
    """Coalesce per-row repetition candidates whose column hulls overlap."""
    segs = a.segs.segments
    fd = a.segs.frame_duration
    items = sorted(
        ([list(rows), sorted(cols)] for rows, cols in candidates), key=lambda x: x[1][0]
    )
    merged: list[list] = []
    for rows, cols in items:
        if merged and cols[0] <= merged[-1][1][-1]:
            merged[-1][0].extend(rows)
            merged[-1][1] = sorted(set(merged[-1][1]) | set(cols))
        else:
            merged.append([rows, cols])
    out = []
    for rows, cols in merged:
        rows = sorted(set(rows))
        target = " ".join(a.ref.flat_phonemes[i] for i in rows)
        interval = (segs[cols[0]].start * fd, segs[cols[-1]].end * fd)
        evidence = tuple((i, j) for i in rows for j in cols if a.assignment[j] == i)
        out.append(DisfluencyEvent("Repetition", "phoneme", target, interval, evidence))
    return out


def _merge_same_target(events: list[DisfluencyEvent]) -> list[DisfluencyEvent]:
    """Events never overlap for the same (level, kind, target): merge any that do."""
    groups: dict[tuple, list[DisfluencyEvent]] = {}
    for e in events:
        groups.setdefault((e.level, e.kind, e.target), []).append(e)
    out: list[DisfluencyEvent] = []
    for key, group in groups.items():
        group.sort(key=lambda e: e.interval)
        cur = group[0]
        for e in group[1:]:
            if e.interval[0] < cur.interval[1]:  # overlap
                cur = DisfluencyEvent(
                    cur.kind,
                    cur.level,
                    cur.target,
                    (cur.interval[0], max(cur.interval[1], e.interval[1])),
                    cur.evidence + e.evidence,
                )
            else:
                out.append(cur)
                cur = e
        out.append(cur)
    return out


# ---------------------------------------------------------------------------
# Text refresher (word level, against an external ASR hypothesis)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HypWord:
    word: str
    start_s: float
    end_s: float


@dataclass(frozen=True)
class AsrHypothesis:
    words: tuple[HypWord, ...]

    def __post_init__(self):
        prev = None
        for w in self.words:
            if w.end_s <= w.start_s:
                raise InvalidInputError(f"empty hypothesis word {w.word!r}")
            if prev is not None and w.start_s < prev:
                raise InvalidInputError("hypothesis words must be time-ordered")
            prev = w.end_s


@dataclass(frozen=True)
class TextRefreshResult:
    events: tuple[DisfluencyEvent, ...]
    tokens: tuple[dict, ...]  # {word, start_s, end_s, op: keep|deleted|inserted}
    text: str
    empty_hypothesis: bool


def text_refresh(
    a: Alignment2D, hyp: AsrHypothesis, ref: ReferenceText
) -> TextRefreshResult:
    """Infer word insertions/deletions by comparing the hypothesis to the grid.

    A maximal run of non-SIL columns assigned to no reference word is an
    insertion.  A hypothesis word whose time span holds no column of its
    corresponding reference word is a deletion (reported as Missing).
    """
    segs = a.segs.segments
    fd = a.segs.frame_duration
    labels = a.segs.labels

    events: list[DisfluencyEvent] = []
    ins_tokens: list[dict] = []
    run: list[int] = []

    def flush_run():
        if not run:
            return
        interval = (segs[run[0]].start * fd, segs[run[-1]].end * fd)
        phones = " ".join(labels[j] for j in run)
        events.append(
            DisfluencyEvent(
                "Insertion", "word", None, interval, tuple((None, j) for j in run)
            )
        )
        ins_tokens.append(
            {
                "word": f"[+{phones}]",
                "start_s": round(interval[0], 4),
                "end_s": round(interval[1], 4),
                "op": "inserted",
            }
        )

    for j in range(a.n_cols):
        if a.assignment[j] is None and labels[j] != SIL:
            run.append(j)
        else:
            flush_run()
            run = []
    flush_run()

    deleted: set[int] = set()
    if hyp.words:
        ref_words = [w.text for w in ref.words]
        hyp_words = [h.word for h in hyp.words]
        matcher = difflib.SequenceMatcher(a=ref_words, b=hyp_words, autojunk=False)
        for block in matcher.get_matching_blocks():
            for k in range(block.size):
                w, h = block.a + k, block.b + k
                rows = ref.rows_of_word(w)
                hw = hyp.words[h]
                support = any(
                    a.assignment[j] is not None
                    and a.assignment[j] in rows
                    and segs[j].start * fd < hw.end_s
                    and segs[j].end * fd > hw.start_s
                    for j in range(a.n_cols)
                )
                if not support:
                    deleted.add(h)
                    events.append(
                        DisfluencyEvent(
                            "Missing", "word", hw.word, (hw.start_s, hw.end_s)
                        )
                    )

    tokens = [
        {
            "word": h.word,
            "start_s": round(h.start_s, 4),
            "end_s": round(h.end_s, 4),
            "op": "deleted" if k in deleted else "keep",
        }
        for k, h in enumerate(hyp.words)
    ]
    tokens.extend(ins_tokens)
    tokens.sort(key=lambda t: (t["start_s"], t["end_s"], t["word"]))
    parts = []
    for t in tokens:
        parts.append(f"[-{t['word']}]" if t["op"] == "deleted" else t["word"])
    return TextRefreshResult(
        events=tuple(_sort_events(events)),
        tokens=tuple(tokens),
        text=" ".join(parts),
        empty_hypothesis=not hyp.words,
    )


# ---------------------------------------------------------------------------
# Word-level detection
# ---------------------------------------------------------------------------


def _evidence_mass(e: DisfluencyEvent, a: Alignment2D) -> float:
    col_best = a.similarity.max(axis=0)
    if e.kind == "Repetition":
        return float(sum(a.similarity[r, c] for r, c in e.evidence if r is not None))
    if e.kind in ("Replacement", "Insertion"):
        return float(sum(1.0 - col_best[c] for _, c in e.evidence))
    return 1.0  # Missing: absence of support carries unit mass


def detect_word(
    m: Alignment2D,
    a: Alignment2D,
    hyp: AsrHypothesis,
    ref: ReferenceText,
    cfg: DetectConfig = DetectConfig(),
) -> list[DisfluencyEvent]:
    """Word-level events: Repetition/Replacement from the word-axis projection
    of the non-monotonic grid, Insertion/Missing from the text refresher.

    Conflicting events for the same word keep the source with the higher
    evidence similarity mass (ties follow kind precedence).
    """
    sims = a.similarity
    segs = a.segs.segments
    fd = a.segs.frame_duration
    labels = a.segs.labels
    tau = cfg.tau_match
    path = dtw_on_grid(sims)

    events: list[DisfluencyEvent] = []
    for w, word in enumerate(ref.words):
        rows = ref.rows_of_word(w)
        cols_w = [j for j, i in enumerate(a.assignment) if i is not None and i in rows]
        if cols_w:
            # realization runs: a restart is a column whose row does not advance
            runs: list[list[int]] = [[cols_w[0]]]
            for prev_j, j in zip(cols_w, cols_w[1:]):
                if a.assignment[j] <= a.assignment[prev_j]:
                    runs.append([j])
                else:
                    runs[-1].append(j)
            restart_at_word_start = any(
                a.assignment[r[0]] == rows.start for r in runs[1:]
            )
            if len(runs) >= 2 and restart_at_word_start:
                interval = (segs[cols_w[0]].start * fd, segs[cols_w[-1]].end * fd)
                events.append(
                    DisfluencyEvent(
                        "Repetition",
                        "word",
                        word.text,
                        interval,
                        tuple((a.assignment[j], j) for j in cols_w),
                    )
                )
        else:
            covered = sorted({j for i in rows for j in path.cols_for_row(i)})
            col_best = sims.max(axis=0)
            unexp = [j for j in covered if labels[j] != SIL and col_best[j] < tau]
            if unexp and _contiguous(unexp):
                interval = (segs[unexp[0]].start * fd, segs[unexp[-1]].end * fd)
                events.append(
                    DisfluencyEvent(
                        "Replacement",
                        "word",
                        word.text,
                        interval,
                        tuple((rows.start, j) for j in unexp),
                    )
                )

    refresher = text_refresh(a, hyp, ref)
    events.extend(refresher.events)
    return _sort_events(_resolve_word_conflicts(events, a))


_KIND_PRECEDENCE = {"Missing": 0, "Replacement": 1, "Repetition": 2, "Insertion": 3}


def _resolve_word_conflicts(
    events: list[DisfluencyEvent], a: Alignment2D
) -> list[DisfluencyEvent]:
    by_target: dict[str, list[DisfluencyEvent]] = {}
    out: list[DisfluencyEvent] = []
    for e in events:
        if e.level == "word" and e.target is not None:
            by_target.setdefault(e.target, []).append(e)
        else:
            out.append(e)
    for target, group in by_target.items():
        kinds = {e.kind for e in group}
        if len(kinds) <= 1:
            out.extend(group)
            continue
        best = max(
            group,
            key=lambda e: (_evidence_mass(e, a), -_KIND_PRECEDENCE[e.kind]),
        )
        out.append(best)
    return out
