"""Boundary-aware Viterbi decoding of non-monotonic phoneme alignments.

The decoder consumes an emission matrix and a bigram LM; no reference
text is consulted.  Path score:

    sum_t log P_emit(y_t | t)
    + sum over switches   lm_weight * log P_lm(y_t | y_{t-1}) + boundary_weight * log b_t
    + sum over stays      boundary_weight * log(1 - b_t)

Boundary probabilities are clamped to [eps, 1 - eps] before the log so a
hard 0/1 upstream prediction cannot produce -inf transitions.

Ties: the final frame resolves to the lower phoneme index; backpointer
ties prefer staying on the current phoneme, then the lower index.
Equivalently, among optimal paths the decoder returns the one whose
reversed label sequence sorts first under (stay-continuation, index).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dysflux import kernels
from dysflux.core import (
    AlignmentSegments,
    BigramLM,
    EmissionInput,
    InvalidInputError,
    Segment,
)

BOUNDARY_EPS = 1e-6


@dataclass(frozen=True)
class SearchConfig:
    lm_weight: float = 0.3
    boundary_weight: float = 1.0
    min_segment_frames: int = 1
    beam_width: int | None = None  # None = unlimited

    def __post_init__(self):
        if self.lm_weight < 0 or self.boundary_weight < 0:
            raise InvalidInputError("weights must be nonnegative")
        if self.min_segment_frames < 1:
            raise InvalidInputError("min_segment_frames must be >= 1")
        if self.beam_width is not None and self.beam_width < 1:
            raise InvalidInputError("beam_width must be >= 1 when finite")


@dataclass(frozen=True)
class DecodeStats:
    score: float
    transitions_evaluated: int


def _check_emission(e: EmissionInput, lm: BigramLM):
    if e.n_phonemes != lm.size:
        raise InvalidInputError(
            f"emission has {e.n_phonemes} phoneme columns but LM has {lm.size}"
        )
    lp = e.log_posteriors
    if np.isnan(lp).any():
        raise InvalidInputError("emission contains NaN")
    if np.any(np.max(lp, axis=1) == -np.inf):
        t = int(np.flatnonzero(np.max(lp, axis=1) == -np.inf)[0])
        raise InvalidInputError(f"frame {t} has all -inf log-posteriors")


def _boundary_terms(e: EmissionInput, cfg: SearchConfig) -> tuple[np.ndarray, np.ndarray]:
    b = np.clip(e.boundary_probs, BOUNDARY_EPS, 1.0 - BOUNDARY_EPS)
    sb = cfg.boundary_weight * np.log(b)
    ss = cfg.boundary_weight * np.log1p(-b)
    return sb, ss


def _decode_labels(
    e: EmissionInput, lm: BigramLM, cfg: SearchConfig
) -> tuple[np.ndarray, DecodeStats]:
    _check_emission(e, lm)
    w = cfg.lm_weight * lm.log_transition
    sb, ss = _boundary_terms(e, cfg)
    beam = 0 if cfg.beam_width is None else cfg.beam_width
    labels, score, transitions = kernels.viterbi_path(e.log_posteriors, w, sb, ss, beam)
    return labels, DecodeStats(score, transitions)


def viterbi_decode(
    e: EmissionInput, lm: BigramLM, cfg: SearchConfig = SearchConfig()
) -> AlignmentSegments:
    """Decode the maximum-score labeling, run-length encoded."""
    segs, _ = decode_with_stats(e, lm, cfg)
    return segs


def decode_with_stats(
    e: EmissionInput, lm: BigramLM, cfg: SearchConfig = SearchConfig()
) -> tuple[AlignmentSegments, DecodeStats]:
    labels, stats = _decode_labels(e, lm, cfg)
    segs = AlignmentSegments.from_frame_labels(
        [lm.symbols[int(x)] for x in labels], e.frame_duration
    )
    if cfg.min_segment_frames > 1:
        segs = _merge_short_segments(segs, e, cfg.min_segment_frames, lm)
    return segs, stats


def _merge_short_segments(
    segs: AlignmentSegments, e: EmissionInput, min_frames: int, lm: BigramLM
) -> AlignmentSegments:
    """Post-decode filter: fold sub-minimum runs into the higher-scoring neighbor.

    Neighbor score = summed emission log-posterior of the run's frames
    under the neighbor's label.  Leftmost shortest run goes first;
    repeats until every run is long enough or one run remains.
    """
    lp = e.log_posteriors
    col = {s: i for i, s in enumerate(lm.symbols)}
    labels = segs.frame_labels()
    while True:
        runs = AlignmentSegments.from_frame_labels(labels, segs.frame_duration).segments
        if len(runs) <= 1:
            break
        short = [
            (r.end - r.start, i) for i, r in enumerate(runs) if r.end - r.start < min_frames
        ]
        if not short:
            break
        _, idx = min(short)
        run = runs[idx]
        cands = []
        if idx > 0:
            cands.append(runs[idx - 1].label)
        if idx + 1 < len(runs):
            cands.append(runs[idx + 1].label)
        best = max(cands, key=lambda lab: lp[run.start : run.end, col[lab]].sum())
        for f in range(run.start, run.end):
            labels[f] = best
    return AlignmentSegments.from_frame_labels(labels, segs.frame_duration)


def decode_segment(
    e: EmissionInput,
    frame_range: tuple[int, int],
    lm: BigramLM,
    cfg: SearchConfig = SearchConfig(),
) -> AlignmentSegments:
    """viterbi_decode restricted to a frame slice; output offsets are absolute."""
    start, end = frame_range
    if not (0 <= start < end <= e.n_frames):
        raise InvalidInputError(f"bad frame range ({start}, {end}) for t={e.n_frames}")
    sliced = EmissionInput(
        e.log_posteriors[start:end], e.boundary_probs[start:end], e.frame_duration
    )
    local = viterbi_decode(sliced, lm, cfg)
    segs = tuple(Segment(s.label, s.start + start, s.end + start) for s in local.segments)
    return _OffsetSegments(segs, e.frame_duration)


class _OffsetSegments(AlignmentSegments):
    """AlignmentSegments whose first start may be nonzero (a decoded slice)."""

    def __post_init__(self):
        prev_end = self.segments[0].start if self.segments else 0
        prev_label = None
        for seg in self.segments:
            if seg.start != prev_end or seg.end <= seg.start or seg.label == prev_label:
                raise InvalidInputError("segments must tile the slice canonically")
            prev_end, prev_label = seg.end, seg.label


def score_labeling(
    e: EmissionInput, labels: np.ndarray, lm: BigramLM, cfg: SearchConfig = SearchConfig()
) -> float:
    """Score of an explicit frame labeling under the decoder's objective.

    Accumulates in the decoder's operand order so that the score of the
    decoded path reproduces the DP value bit for bit.
    """
    w = cfg.lm_weight * lm.log_transition
    sb, ss = _boundary_terms(e, cfg)
    lp = e.log_posteriors
    score = float(lp[0, labels[0]])
    for t in range(1, len(labels)):
        i, j = int(labels[t - 1]), int(labels[t])
        if i == j:
            score = score + float(ss[t])
        else:
            score = score + (float(w[i, j]) + float(sb[t]))
        score = score + float(lp[t, j])
    return score


@dataclass(frozen=True)
class ComplexityProbe:
    t: int
    n: int
    transitions_evaluated: int


def search_complexity_probe(t: int, n: int) -> ComplexityProbe:
    """Measure transition evaluations on a synthetic t x n instance.

    With an unlimited beam the count is exactly (t - 1) * n**2.
    """
    if t < 1 or n < 1:
        raise InvalidInputError("t and n must be >= 1")
    lp = np.full((t, n), -np.log(n))
    e = EmissionInput(lp, np.full(t, 0.5), frame_duration=0.02)
    symbols = tuple(f"P{i}" for i in range(n))
    lm = BigramLM(np.full((n, n), -np.log(n)), symbols)
    _, stats = decode_with_stats(e, lm, SearchConfig())
    return ComplexityProbe(t=t, n=n, transitions_evaluated=stats.transitions_evaluated)
