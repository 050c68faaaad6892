"""Shared type layer: phoneme inventory, emissions, alignments, reference text.

All types are immutable after construction and safe to share across
concurrent workers. Timing is frame-based (integers) with one
``frame_duration`` in seconds per object; seconds are derived values.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

SIL = "SIL"

ROW_SUM_TOL_EXTERNAL = 1e-4  # tolerated on files from upstream exporters
ROW_SUM_TOL_INTERNAL = 1e-9  # enforced on data we generate ourselves


class DysfluxError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(DysfluxError):
    """An argument violates an operation's precondition."""


class DataFormatError(DysfluxError):
    """A file or serialized payload is malformed."""


# ---------------------------------------------------------------------------
# Inventory
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhonemeInventory:
    """Closed phoneme symbol set with articulatory feature embeddings.

    ``symbols`` is ordered and defines the emission-matrix column order.
    SIL is always present with the all-zeros feature vector.  Pairwise
    cosine similarities are precomputed, clamped to [0, 1], with the SIL
    row/column forced to 0 against every other label and sim(x, x) = 1.
    """

    symbols: tuple[str, ...]
    features: np.ndarray  # (N, D), rows follow ``symbols``
    _index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)
    _sim: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise InvalidInputError("inventory labels must be unique")
        if SIL not in self.symbols:
            raise InvalidInputError("inventory must contain SIL")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != len(self.symbols):
            raise InvalidInputError("feature table shape does not match symbols")
        if feats.shape[1] < 8:
            raise InvalidInputError("feature dimension must be >= 8")
        sil_row = feats[self.symbols.index(SIL)]
        if np.any(sil_row != 0.0):
            raise InvalidInputError("SIL must have the all-zeros feature vector")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})
        object.__setattr__(self, "_sim", _similarity_matrix(self.symbols, feats))

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise InvalidInputError(f"unknown phoneme label: {label!r}") from None

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def embedding(self, label: str) -> np.ndarray:
        return self.features[self.index(label)]

    def similarity(self, a: str, b: str) -> float:
        return float(self._sim[self.index(a), self.index(b)])

    def similarity_matrix(self) -> np.ndarray:
        return self._sim

    @property
    def content_hash(self) -> str:
        """Stable hash of the inventory, embedded in emission file headers."""
        doc = {
            "symbols": list(self.symbols),
            "features": [[float(x) for x in row] for row in self.features],
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "PhonemeInventory":
        try:
            symbols = tuple(doc["symbols"])
            feats = np.array([doc["features"][s] for s in symbols], dtype=np.float64)
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"bad inventory document: {exc}") from exc
        return cls(symbols, feats)

    def to_dict(self) -> dict:
        return {
            "symbols": list(self.symbols),
            "features": {s: [float(x) for x in self.features[i]] for i, s in enumerate(self.symbols)},
        }


def _similarity_matrix(symbols: Sequence[str], feats: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(feats, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = feats / safe[:, None]
    sim = np.clip(unit @ unit.T, 0.0, 1.0)
    sil = list(symbols).index(SIL)
    sim[sil, :] = 0.0
    sim[:, sil] = 0.0
    np.fill_diagonal(sim, 1.0)  # sim(x, x) = 1, including SIL with itself
    sim.setflags(write=False)
    return sim


@lru_cache(maxsize=1)
def default_inventory() -> PhonemeInventory:
    """The shipped ARPABET inventory (39 phonemes + SIL, D=21 features)."""
    text = resources.files("dysflux.data").joinpath("arpabet_features.json").read_text()
    return PhonemeInventory.from_dict(json.loads(text))


def phoneme_similarity(a: str, b: str, inv: PhonemeInventory) -> float:
    """Cosine similarity of feature vectors in [0, 1].

    sim(x, x) = 1; any pairing of SIL with a different label is 0.
    Unknown labels raise :class:`InvalidInputError` naming the label.
    """
    return inv.similarity(a, b)


# ---------------------------------------------------------------------------
# Emissions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EmissionInput:
    """Per-frame phoneme log-posteriors plus per-frame boundary probabilities."""

    log_posteriors: np.ndarray  # (t, N) natural logs
    boundary_probs: np.ndarray  # (t,) in [0, 1]
    frame_duration: float

    def __post_init__(self):
        lp = np.ascontiguousarray(self.log_posteriors, dtype=np.float64)
        bp = np.ascontiguousarray(self.boundary_probs, dtype=np.float64)
        if lp.ndim != 2:
            raise InvalidInputError("log_posteriors must be a 2-D matrix")
        if bp.shape != (lp.shape[0],):
            raise InvalidInputError("boundary_probs length must equal the frame count")
        if not self.frame_duration > 0:
            raise InvalidInputError("frame_duration must be > 0")
        lp.setflags(write=False)
        bp.setflags(write=False)
        object.__setattr__(self, "log_posteriors", lp)
        object.__setattr__(self, "boundary_probs", bp)

    @property
    def n_frames(self) -> int:
        return self.log_posteriors.shape[0]

    @property
    def n_phonemes(self) -> int:
        return self.log_posteriors.shape[1]


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...]

    def __bool__(self) -> bool:
        return self.ok


def validate_emission(
    e: EmissionInput,
    inv: PhonemeInventory,
    row_sum_tol: float = ROW_SUM_TOL_EXTERNAL,
) -> ValidationReport:
    """Report-style check of an emission matrix against an inventory."""
    violations: list[str] = []
    lp, bp = e.log_posteriors, e.boundary_probs
    if lp.shape[1] != inv.size:
        violations.append(
            f"shape mismatch: {lp.shape[1]} phoneme columns vs inventory size {inv.size}"
        )
    bad = np.argwhere(~np.isfinite(lp) & ~np.isneginf(lp))
    for t, p in bad[:10]:
        violations.append(f"non-finite value at (frame {t}, phoneme {p})")
    sums = np.exp(lp).sum(axis=1)
    off = np.abs(sums - 1.0) > row_sum_tol
    for t in np.flatnonzero(off)[:10]:
        violations.append(f"row {t} sum {sums[t]:.6g} exceeds tolerance {row_sum_tol:g}")
    if np.any(~np.isfinite(bp)) or np.any(bp < 0.0) or np.any(bp > 1.0):
        violations.append("boundary probabilities outside [0, 1]")
    return ValidationReport(ok=not violations, violations=tuple(violations))


# ---------------------------------------------------------------------------
# Alignments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    label: str
    start: int  # frame, inclusive
    end: int  # frame, exclusive


@dataclass(frozen=True)
class AlignmentSegments:
    """Run-length phoneme alignment: contiguous, non-overlapping, canonical.

    Adjacent segments always carry different labels, the first starts at
    frame 0, and each start equals the previous end.
    """

    segments: tuple[Segment, ...]
    frame_duration: float

    def __post_init__(self):
        if not self.frame_duration > 0:
            raise InvalidInputError("frame_duration must be > 0")
        prev_end = 0
        prev_label = None
        for seg in self.segments:
            if seg.start != prev_end:
                raise InvalidInputError(
                    f"segments must tile frames: got start {seg.start}, expected {prev_end}"
                )
            if seg.end <= seg.start:
                raise InvalidInputError(f"empty segment at frame {seg.start}")
            if seg.label == prev_label:
                raise InvalidInputError(
                    f"adjacent segments share label {seg.label!r} at frame {seg.start}"
                )
            prev_end, prev_label = seg.end, seg.label

    @classmethod
    def from_frame_labels(
        cls, labels: Sequence[str] | np.ndarray, frame_duration: float
    ) -> "AlignmentSegments":
        segs: list[Segment] = []
        for i, lab in enumerate(labels):
            if segs and segs[-1].label == lab:
                segs[-1] = Segment(lab, segs[-1].start, i + 1)
            else:
                segs.append(Segment(str(lab), i, i + 1))
        return cls(tuple(segs), frame_duration)

    @property
    def n_frames(self) -> int:
        return self.segments[-1].end if self.segments else 0

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.label for s in self.segments)

    def frame_labels(self) -> list[str]:
        out: list[str] = []
        for seg in self.segments:
            out.extend([seg.label] * (seg.end - seg.start))
        return out

    def span_seconds(self, idx: int) -> tuple[float, float]:
        seg = self.segments[idx]
        return seg.start * self.frame_duration, seg.end * self.frame_duration

    def to_dicts(self) -> list[dict]:
        # seconds rounded to 1e-4 on output only
        return [
            {
                "phoneme": s.label,
                "start_s": round(s.start * self.frame_duration, 4),
                "end_s": round(s.end * self.frame_duration, 4),
            }
            for s in self.segments
        ]


def canonicalize(segs: AlignmentSegments) -> AlignmentSegments:
    """Merge adjacent same-label runs. Idempotent."""
    return AlignmentSegments.from_frame_labels(segs.frame_labels(), segs.frame_duration)


# ---------------------------------------------------------------------------
# Reference text
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Word:
    text: str
    phonemes: tuple[str, ...]


@dataclass(frozen=True)
class ReferenceText:
    """Word sequence with its flat phoneme expansion and word back-references."""

    words: tuple[Word, ...]
    flat_phonemes: tuple[str, ...] = field(default=())
    word_index: tuple[int, ...] = field(default=())

    def __post_init__(self):
        flat: list[str] = []
        widx: list[int] = []
        for w, word in enumerate(self.words):
            if not word.phonemes:
                raise InvalidInputError(f"word {word.text!r} has an empty phoneme sequence")
            flat.extend(word.phonemes)
            widx.extend([w] * len(word.phonemes))
        object.__setattr__(self, "flat_phonemes", tuple(flat))
        object.__setattr__(self, "word_index", tuple(widx))

    @classmethod
    def from_pairs(
        cls, pairs: Iterable[tuple[str, Sequence[str]]], inv: PhonemeInventory | None = None
    ) -> "ReferenceText":
        words = tuple(Word(t, tuple(p)) for t, p in pairs)
        ref = cls(words)
        if inv is not None:
            for p in ref.flat_phonemes:
                inv.index(p)  # raises on unknown labels
        return ref

    @property
    def n_rows(self) -> int:
        return len(self.flat_phonemes)

    def rows_of_word(self, w: int) -> range:
        lo = self.word_index.index(w)
        hi = lo
        while hi < len(self.word_index) and self.word_index[hi] == w:
            hi += 1
        return range(lo, hi)


# ---------------------------------------------------------------------------
# Bigram language model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BigramLM:
    """Row-stochastic phoneme transition model in natural-log space.

    ``symbols`` is the inventory order backing the matrix; decoded frame
    labels are read from it.
    """

    log_transition: np.ndarray  # (N, N)
    symbols: tuple[str, ...]

    def __post_init__(self):
        m = np.ascontiguousarray(self.log_transition, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidInputError("log_transition must be square")
        if len(self.symbols) != m.shape[0]:
            raise InvalidInputError("symbols length must match log_transition size")
        sums = np.exp(m).sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL_EXTERNAL):
            raise InvalidInputError("log_transition rows must exponentiate-sum to 1")
        m.setflags(write=False)
        object.__setattr__(self, "log_transition", m)
        object.__setattr__(self, "symbols", tuple(self.symbols))

    @property
    def size(self) -> int:
        return self.log_transition.shape[0]


def estimate_bigram(
    corpus: Sequence[Sequence[str]], inv: PhonemeInventory, k: float = 1.0
) -> BigramLM:
    """Add-k smoothed bigram estimate over the inventory.

    ``corpus`` is a sequence of phoneme label sequences; every adjacent
    pair contributes one count.
    """
    if not corpus:
        raise InvalidInputError("bigram corpus must be non-empty")
    if not k > 0:
        raise InvalidInputError("smoothing constant k must be > 0")
    n = inv.size
    counts = np.zeros((n, n), dtype=np.float64)
    for seq in corpus:
        ids = [inv.index(p) for p in seq]
        for a, b in zip(ids, ids[1:]):
            counts[a, b] += 1.0
    probs = (counts + k) / (counts.sum(axis=1, keepdims=True) + k * n)
    return BigramLM(np.log(probs), inv.symbols)
