"""Disfluency injection into clean alignments and synthetic emission generation.

Injection operates at the alignment/emission level: repetitions duplicate
a phoneme's frames (with a short silence gap so the copy survives
run-length canonicalization), prolongations extend a segment, blocks
insert silence at a junction between two spoken segments, and deletions
drop a word-internal phoneme.  Every sample is drawn from one seeded
generator, so identical (inputs, seed) give byte-identical outputs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources

import numpy as np

from dysflux.core import (
    SIL,
    AlignmentSegments,
    EmissionInput,
    InvalidInputError,
    PhonemeInventory,
    ReferenceText,
)
from dysflux.recursion import WordEntry

BOUNDARY_HIGH = 0.9
BOUNDARY_LOW = 0.1
KAPPA_DEFAULT = 1.5
AR_RHO = 0.95  # temporal correlation of the colored noise component


@dataclass(frozen=True)
class InjectionSpec:
    repetition_rate: float = 0.1
    prolongation_rate: float = 0.1
    block_rate: float = 0.1
    deletion_rate: float = 0.0
    prolongation_s: tuple[float, float] = (0.1, 0.5)
    block_s: tuple[float, float] = (0.15, 0.6)
    repetition_gap_s: tuple[float, float] = (0.06, 0.12)
    deletion_max_neighbor_sim: float = 0.6
    seed: int = 0

    def __post_init__(self):
        rates = (
            self.repetition_rate,
            self.prolongation_rate,
            self.block_rate,
            self.deletion_rate,
        )
        if any(r < 0 or r > 1 for r in rates):
            raise InvalidInputError("rates must lie in [0, 1]")
        if sum(rates) > 1.0 + 1e-12:
            raise InvalidInputError("rates must sum to at most 1")
        for lo, hi in (self.prolongation_s, self.block_s, self.repetition_gap_s):
            if lo > hi or lo < 0:
                raise InvalidInputError("duration ranges need 0 <= min <= max")


@dataclass(frozen=True)
class InjectedEvent:
    kind: str  # Repetition | Prolongation | IrregularPause | Missing
    interval: tuple[float, float]  # seconds, disfluent timeline
    injected_span: tuple[int, int] | None  # frames added (disfluent coords)
    clean_anchor: int | None  # frame offset in clean coords (deletions)
    clean_length: int | None  # deleted frame count
    label: str
    word_index: int | None


@dataclass(frozen=True, eq=False)
class GroundTruth:
    clean: AlignmentSegments
    disfluent: AlignmentSegments
    events: tuple[InjectedEvent, ...]
    word_of_frame: tuple  # word index or None per disfluent frame


def _frames(rng: np.random.Generator, dur_range: tuple[float, float], fd: float) -> int:
    dur = rng.uniform(dur_range[0], dur_range[1])
    return max(1, int(round(dur / fd)))


def inject(
    clean: AlignmentSegments,
    spec: InjectionSpec,
    inv: PhonemeInventory,
    word_of_segment: list[int | None] | None = None,
) -> GroundTruth:
    """Inject disfluencies per eligible non-SIL segment at the given rates.

    At most one injection per segment.  Deletions require a word-internal
    position (spoken neighbors on both sides, previous one not deleted)
    whose neighbors are dissimilar enough that the dropped phoneme stays
    detectable; the recorded Missing interval is the realized span of the
    more similar neighbor, mirroring where the DTW reading lands.
    """
    if not clean.segments:
        raise InvalidInputError("clean alignment is empty")
    rng = np.random.default_rng(spec.seed)
    fd = clean.frame_duration
    segs = clean.segments
    words = word_of_segment or [None] * len(segs)

    cum = np.cumsum(
        [spec.repetition_rate, spec.prolongation_rate, spec.block_rate, spec.deletion_rate]
    )
    kinds = ("repetition", "prolongation", "block", "deletion")

    out_labels: list[str] = []
    out_words: list[int | None] = []
    events: list[InjectedEvent] = []
    deletions: list[dict] = []  # pending Missing events, intervals fixed later
    first_span: dict[int, tuple[int, int]] = {}  # clean idx -> first realized span
    last_span: dict[int, tuple[int, int]] = {}  # clean idx -> last realized span
    deleted: set[int] = set()

    def emit(label: str, n: int, w: int | None):
        start = len(out_labels)
        out_labels.extend([label] * n)
        out_words.extend([w] * n)
        return start, start + n

    for idx, seg in enumerate(segs):
        n_f = seg.end - seg.start
        w = words[idx]
        choice = None
        if seg.label != SIL:
            u = rng.random()
            for kind, edge in zip(kinds, cum):
                if u < edge:
                    choice = kind
                    break

        if choice == "deletion":
            prev_ok = (
                idx > 0
                and segs[idx - 1].label != SIL
                and idx - 1 not in deleted
                and words[idx - 1] == w
            )
            next_ok = idx + 1 < len(segs) and segs[idx + 1].label != SIL and words[idx + 1] == w
            # equal-label neighbors would merge after the deletion and hide
            # one realization; similar neighbors would mask the gap itself
            sims_ok = prev_ok and next_ok and (
                segs[idx - 1].label != segs[idx + 1].label
                and inv.similarity(seg.label, segs[idx - 1].label) < spec.deletion_max_neighbor_sim
                and inv.similarity(seg.label, segs[idx + 1].label) < spec.deletion_max_neighbor_sim
            )
            if sims_ok:
                deleted.add(idx)
                cover_left = inv.similarity(seg.label, segs[idx - 1].label) >= inv.similarity(
                    seg.label, segs[idx + 1].label
                )
                deletions.append(
                    {
                        "label": seg.label,
                        "word": w,
                        "anchor": seg.start,
                        "length": n_f,
                        "cover_left": cover_left,
                        "left_idx": idx - 1,
                        "right_idx": idx + 1,
                    }
                )
                continue
            choice = None  # ineligible draw: no injection

        if choice == "block":
            if out_labels and out_labels[-1] != SIL:
                blk = _frames(rng, spec.block_s, fd)
                b0, b1 = emit(SIL, blk, w)
                events.append(
                    InjectedEvent(
                        "IrregularPause", (b0 * fd, b1 * fd), (b0, b1), None, None, SIL, w
                    )
                )
            choice = None  # the segment itself is emitted unchanged below

        if choice == "prolongation":
            extra = _frames(rng, spec.prolongation_s, fd)
            s0, s1 = emit(seg.label, n_f + extra, w)
            first_span[idx] = last_span[idx] = (s0, s1)
            events.append(
                InjectedEvent(
                    "Prolongation", (s0 * fd, s1 * fd), (s1 - extra, s1), None, None, seg.label, w
                )
            )
        elif choice == "repetition":
            gap = _frames(rng, spec.repetition_gap_s, fd)
            s0, s1 = emit(seg.label, n_f, w)
            emit(SIL, gap, w)
            c0, c1 = emit(seg.label, n_f, w)
            first_span[idx] = (s0, s1)
            last_span[idx] = (c0, c1)
            events.append(
                InjectedEvent(
                    "Repetition", (s0 * fd, c1 * fd), (s1, c1), None, None, seg.label, w
                )
            )
        else:
            s0, s1 = emit(seg.label, n_f, w)
            first_span[idx] = last_span[idx] = (s0, s1)

    for d in deletions:
        span = last_span[d["left_idx"]] if d["cover_left"] else first_span[d["right_idx"]]
        events.append(
            InjectedEvent(
                "Missing",
                (span[0] * fd, span[1] * fd),
                None,
                d["anchor"],
                d["length"],
                d["label"],
                d["word"],
            )
        )

    disfluent = AlignmentSegments.from_frame_labels(out_labels, fd)
    events.sort(key=lambda e: (e.interval, e.kind))
    return GroundTruth(clean, disfluent, tuple(events), tuple(out_words))


def reconstruct_clean(gt: GroundTruth) -> AlignmentSegments:
    """Undo the injections: drop added spans, reinsert deleted phonemes."""
    labels = gt.disfluent.frame_labels()
    added = sorted(
        (e.injected_span for e in gt.events if e.injected_span is not None), reverse=True
    )
    for a, b in added:
        del labels[a:b]
    restored = sorted(
        (e for e in gt.events if e.kind == "Missing"), key=lambda e: e.clean_anchor
    )
    for e in restored:
        labels[e.clean_anchor : e.clean_anchor] = [e.label] * e.clean_length
    return AlignmentSegments.from_frame_labels(labels, gt.disfluent.frame_duration)


def refine_missing_intervals(
    gt: GroundTruth, ref: ReferenceText, inv: PhonemeInventory
) -> GroundTruth:
    """Pin each Missing event to the DTW-implied gap location of the TRUE
    disfluent alignment (decode-independent: uses ground truth only).

    A deleted phoneme leaves no physical span; the convention that makes
    IoU matching meaningful is the hull of the columns the monotonic
    reading covers at the deleted row.
    """
    from dysflux.align2d import dtw_on_grid, similarity_grid

    if not any(e.kind == "Missing" for e in gt.events):
        return gt
    sims = similarity_grid(ref, gt.disfluent, inv)
    path = dtw_on_grid(sims)
    segs = gt.disfluent.segments
    fd = gt.disfluent.frame_duration

    # deleted clean segments -> flat reference row indices
    deleted_anchors = sorted(
        (e.clean_anchor, e) for e in gt.events if e.kind == "Missing"
    )
    row_of_anchor: dict[int, int] = {}
    row = 0
    k = 0
    for seg in gt.clean.segments:
        if seg.label == SIL:
            continue
        while k < len(deleted_anchors) and deleted_anchors[k][0] == seg.start:
            row_of_anchor[seg.start] = row
            k += 1
        row += 1

    events = []
    for e in gt.events:
        if e.kind != "Missing":
            events.append(e)
            continue
        i = row_of_anchor[e.clean_anchor]
        cols = [j for r, j in path.steps if r == i]
        interval = (segs[min(cols)].start * fd, segs[max(cols)].end * fd)
        events.append(replace(e, interval=interval))
    events.sort(key=lambda ev: (ev.interval, ev.kind))
    return GroundTruth(gt.clean, gt.disfluent, tuple(events), gt.word_of_frame)


def gt_word_spans(gt: GroundTruth, ref: ReferenceText) -> list[WordEntry]:
    """Hull of each word's spoken frames in the disfluent timeline."""
    spans: dict[int, list[int]] = {}
    labels = gt.disfluent.frame_labels()
    for f, w in enumerate(gt.word_of_frame):
        if w is None or labels[f] == SIL:
            continue
        spans.setdefault(w, [f, f + 1])
        spans[w][0] = min(spans[w][0], f)
        spans[w][1] = max(spans[w][1], f + 1)
    return [
        WordEntry(w, ref.words[w].text, lo, hi) for w, (lo, hi) in sorted(spans.items())
    ]


def synthesize_emission(
    gt: GroundTruth,
    inv: PhonemeInventory,
    kappa: float = KAPPA_DEFAULT,
    sigma: float = 0.0,
    seed: int = 0,
) -> EmissionInput:
    """Peaked per-frame posteriors around the true labels, plus seeded noise.

    Noise mixes white and AR(1)-colored components so that corruption can
    persist across frames the way real acoustic ambiguity does.  Boundary
    probabilities spike at segment transitions.
    """
    if not kappa > 0:
        raise InvalidInputError("kappa must be > 0")
    if sigma < 0:
        raise InvalidInputError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    labels = gt.disfluent.frame_labels()
    t, n = len(labels), inv.size
    ids = np.array([inv.index(lab) for lab in labels])
    scores = np.zeros((t, n))
    scores[np.arange(t), ids] = kappa
    if sigma > 0:
        white = rng.standard_normal((t, n))
        colored = np.empty((t, n))
        colored[0] = rng.standard_normal(n)
        innov = rng.standard_normal((t, n)) * np.sqrt(1.0 - AR_RHO**2)
        for f in range(1, t):
            colored[f] = AR_RHO * colored[f - 1] + innov[f]
        scores += sigma * (white + colored) / np.sqrt(2.0)
    log_post = scores - _logsumexp_rows(scores)

    is_boundary = np.ones(t, dtype=bool)
    is_boundary[1:] = ids[1:] != ids[:-1]
    b = np.where(is_boundary, BOUNDARY_HIGH, BOUNDARY_LOW).astype(np.float64)
    if sigma > 0:
        b = b + 0.3 * sigma * rng.standard_normal(t)
    b = np.clip(b, 1e-3, 1.0 - 1e-3)
    return EmissionInput(log_post, b, gt.disfluent.frame_duration)


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    return m + np.log(np.exp(x - m).sum(axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1)
def default_lexicon() -> dict[str, tuple[str, ...]]:
    text = resources.files("dysflux.data").joinpath("lexicon.json").read_text()
    return {w: tuple(p) for w, p in json.loads(text).items()}


@dataclass(frozen=True)
class CorpusParams:
    count: int = 20
    seed: int = 0
    sigma: float = 0.0
    kappa: float = KAPPA_DEFAULT
    words_per_utt: tuple[int, int] = (3, 8)
    phoneme_frames: tuple[int, int] = (3, 9)
    edge_sil_frames: tuple[int, int] = (5, 15)
    gap_sil_frames: tuple[int, int] = (2, 8)
    frame_duration: float = 0.02
    injection: InjectionSpec = field(default_factory=InjectionSpec)


@dataclass(frozen=True, eq=False)
class Utterance:
    utt_id: str
    ref: ReferenceText
    gt: GroundTruth
    emission: EmissionInput


def make_clean_utterance(
    ref: ReferenceText, rng: np.random.Generator, params: CorpusParams
) -> tuple[AlignmentSegments, list[int | None]]:
    """Fluent alignment: edge silences, per-word phonemes, a short gap
    between every word pair (keeps cross-word label merges impossible)."""
    labels: list[str] = []
    words: list[int | None] = []

    def put(lab: str, n: int, w: int | None):
        labels.extend([lab] * n)
        words.extend([w] * n)

    lo, hi = params.edge_sil_frames
    put(SIL, int(rng.integers(lo, hi + 1)), None)
    for w, word in enumerate(ref.words):
        if w > 0:
            g0, g1 = params.gap_sil_frames
            put(SIL, int(rng.integers(g0, g1 + 1)), None)
        for p in word.phonemes:
            f0, f1 = params.phoneme_frames
            put(p, int(rng.integers(f0, f1 + 1)), w)
    put(SIL, int(rng.integers(lo, hi + 1)), None)

    segs = AlignmentSegments.from_frame_labels(labels, params.frame_duration)
    word_of_segment = [words[s.start] for s in segs.segments]
    return segs, word_of_segment


def sample_sentence(
    rng: np.random.Generator, lexicon: dict, k: int
) -> list[str]:
    """Distinct words, and no word starting with its predecessor's final
    phoneme: equal phonemes meeting across a word boundary are ambiguous
    with a repetition even in principle."""
    pool = sorted(lexicon)
    order = rng.permutation(len(pool))
    chosen: list[str] = []
    for i in order:
        w = pool[int(i)]
        if chosen and lexicon[chosen[-1]][-1] == lexicon[w][0]:
            continue
        chosen.append(w)
        if len(chosen) == k:
            break
    return chosen


def make_utterance(
    idx: int, params: CorpusParams, inv: PhonemeInventory, lexicon=None
) -> Utterance:
    """One seeded utterance; all randomness derives from (seed ^ index)."""
    lexicon = lexicon or default_lexicon()
    rng = np.random.default_rng(params.seed ^ idx)
    k = int(rng.integers(params.words_per_utt[0], params.words_per_utt[1] + 1))
    chosen = sample_sentence(rng, lexicon, k)
    ref = ReferenceText.from_pairs([(w, lexicon[w]) for w in chosen], inv)
    clean, word_of_segment = make_clean_utterance(ref, rng, params)
    spec = replace(
        params.injection, seed=(params.injection.seed ^ params.seed ^ (idx * 2 + 1)) & 0xFFFFFFFF
    )
    gt = inject(clean, spec, inv, word_of_segment)
    gt = refine_missing_intervals(gt, ref, inv)
    emission = synthesize_emission(
        gt, inv, kappa=params.kappa, sigma=params.sigma, seed=(params.seed ^ (idx * 2)) & 0xFFFFFFFF
    )
    return Utterance(f"utt{idx:04d}", ref, gt, emission)


def make_corpus(params: CorpusParams, inv: PhonemeInventory, lexicon=None) -> list[Utterance]:
    return [make_utterance(i, params, inv, lexicon) for i in range(params.count)]


def hypothesis_from_gt(utt: Utterance) -> "AsrHypothesis":
    """Perfect-surface ASR: every reference word, timed by its true span."""
    from dysflux.detect import AsrHypothesis, HypWord

    fd = utt.gt.disfluent.frame_duration
    return AsrHypothesis(
        tuple(
            HypWord(e.word, e.start * fd, e.end * fd)
            for e in gt_word_spans(utt.gt, utt.ref)
        )
    )
