"""Evaluation measures: PER, duration-aware dPER, frame F1, iWER, IoU,
and the IoU>0.5 event Matching Score."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from dysflux.core import AlignmentSegments, InvalidInputError


@dataclass(frozen=True)
class EditOps:
    substitutions: int
    deletions: int
    insertions: int
    matches: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def edit_ops(ref: Sequence, hyp: Sequence) -> EditOps:
    """Minimal edit script counts; backtrace prefers match > sub > del > ins."""
    r, h = len(ref), len(hyp)
    d = np.zeros((r + 1, h + 1), dtype=np.int64)
    d[:, 0] = np.arange(r + 1)
    d[0, :] = np.arange(h + 1)
    for i in range(1, r + 1):
        for j in range(1, h + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i - 1, j] + 1, d[i, j - 1] + 1)
    i, j = r, h
    s = dl = ins = m = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and d[i, j] == d[i - 1, j - 1]:
            m += 1
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + 1:
            s += 1
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dl += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditOps(s, dl, ins, m)


def per(ref: Sequence[str], hyp: Sequence[str]) -> float:
    """Phoneme error rate: (S + D + I) / |ref|."""
    if not ref:
        raise InvalidInputError("reference sequence is empty")
    return edit_ops(ref, hyp).errors / len(ref)


def iwer(target: Sequence[str], hyp: Sequence[str]) -> float:
    """Word error rate against the imperfect (human-labeled disfluent) target."""
    if not target:
        raise InvalidInputError("target word sequence is empty")
    return edit_ops(target, hyp).errors / len(target)


def dper(
    ref: AlignmentSegments, hyp: AlignmentSegments, sub_cost: str = "max"
) -> float:
    """Duration-aware PER over segment sequences.

    Costs: deletion = ref segment duration, insertion = hyp segment
    duration, substitution = max of the two (or their mean with
    ``sub_cost='mean'``), match = 0.  Result is minimal total cost over
    the total reference duration.
    """
    if sub_cost not in ("max", "mean"):
        raise InvalidInputError("sub_cost must be 'max' or 'mean'")
    rd = [(s.label, (s.end - s.start) * ref.frame_duration) for s in ref.segments]
    hd = [(s.label, (s.end - s.start) * hyp.frame_duration) for s in hyp.segments]
    total_ref = sum(d for _, d in rd)
    if total_ref <= 0:
        raise InvalidInputError("total reference duration is zero")
    r, h = len(rd), len(hd)
    d = np.zeros((r + 1, h + 1))
    for i in range(1, r + 1):
        d[i, 0] = d[i - 1, 0] + rd[i - 1][1]
    for j in range(1, h + 1):
        d[0, j] = d[0, j - 1] + hd[j - 1][1]
    for i in range(1, r + 1):
        lab_r, dur_r = rd[i - 1]
        for j in range(1, h + 1):
            lab_h, dur_h = hd[j - 1]
            if lab_r == lab_h:
                sub = d[i - 1, j - 1]
            elif sub_cost == "max":
                sub = d[i - 1, j - 1] + max(dur_r, dur_h)
            else:
                sub = d[i - 1, j - 1] + (dur_r + dur_h) / 2.0
            d[i, j] = min(sub, d[i - 1, j] + dur_r, d[i, j - 1] + dur_h)
    return float(d[r, h]) / total_ref


def frame_f1(
    ref_frames: Sequence[str], hyp_frames: Sequence[str]
) -> tuple[float, float]:
    """(micro F1, macro F1) over per-frame label decisions.

    Micro F1 pools every frame decision; with one label per frame it
    equals frame accuracy.  Macro F1 averages per-class F1 over the
    classes present in the reference.
    """
    if len(ref_frames) != len(hyp_frames):
        raise InvalidInputError("frame sequences must have equal length")
    if not ref_frames:
        raise InvalidInputError("frame sequences are empty")
    correct = sum(a == b for a, b in zip(ref_frames, hyp_frames))
    micro = correct / len(ref_frames)
    classes = sorted(set(ref_frames))
    scores = []
    for c in classes:
        tp = sum(1 for a, b in zip(ref_frames, hyp_frames) if a == c and b == c)
        fp = sum(1 for a, b in zip(ref_frames, hyp_frames) if a != c and b == c)
        fn = sum(1 for a, b in zip(ref_frames, hyp_frames) if a == c and b != c)
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return micro, float(np.mean(scores))


def iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Interval intersection over union; 0 when disjoint or both degenerate."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class MatchResult:
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    per_kind: dict[str, float]
    pairs: tuple[tuple[int, int], ...]  # (pred index, gt index)


def _as_event(x) -> tuple[str, float, float]:
    if hasattr(x, "kind") and hasattr(x, "interval"):
        return (x.kind, x.interval[0], x.interval[1])
    kind, start, end = x
    return (str(kind), float(start), float(end))


def matching_score(
    pred, gt, iou_threshold: float = 0.5, kinds: Sequence[str] | None = None
) -> MatchResult:
    """Greedy one-to-one matching by descending IoU among same-kind pairs.

    A pair counts as detected iff its IoU is strictly greater than the
    threshold.  ``kinds`` restricts both sides to the given event kinds.
    """
    p = [_as_event(x) for x in pred]
    g = [_as_event(x) for x in gt]
    if kinds is not None:
        keep = set(kinds)
        p = [x for x in p if x[0] in keep]
        g = [x for x in g if x[0] in keep]
    cand = []
    for pi, (pk, ps, pe) in enumerate(p):
        for gi, (gk, gs, ge) in enumerate(g):
            if pk != gk:
                continue
            v = iou((ps, pe), (gs, ge))
            if v > iou_threshold:
                cand.append((-v, pi, gi))
    cand.sort()
    used_p: set[int] = set()
    used_g: set[int] = set()
    pairs = []
    for _, pi, gi in cand:
        if pi in used_p or gi in used_g:
            continue
        used_p.add(pi)
        used_g.add(gi)
        pairs.append((pi, gi))
    tp = len(pairs)
    fp = len(p) - tp
    fn = len(g) - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    per_kind: dict[str, float] = {}
    all_kinds = sorted({k for k, _, _ in p} | {k for k, _, _ in g})
    matched_by_kind = Counter(p[pi][0] for pi, _ in pairs)
    for k in all_kinds:
        np_k = sum(1 for x in p if x[0] == k)
        ng_k = sum(1 for x in g if x[0] == k)
        tp_k = matched_by_kind.get(k, 0)
        denom = np_k + ng_k
        per_kind[k] = 2 * tp_k / denom if denom else 0.0
    return MatchResult(f1, precision, recall, tp, fp, fn, per_kind, tuple(pairs))
