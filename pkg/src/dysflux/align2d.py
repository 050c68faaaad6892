"""Non-monotonic 2D alignment and its monotonic DTW counterpart.

Rows are reference phonemes, columns are decoded segments.  The grid
holds embedding similarities in [0, 1]; the per-column assignment is the
thresholded argmax (non-monotonic), while the DTW path over cost
``1 - similarity`` gives the monotonic reading used for templates and
segmentation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dysflux import kernels
from dysflux.core import (
    SIL,
    AlignmentSegments,
    InvalidInputError,
    PhonemeInventory,
    ReferenceText,
)

TAU_ASSIGN_DEFAULT = 0.6


@dataclass(frozen=True)
class DtwPath:
    """Monotonic path from (0, 0) to (R-1, C-1); steps move by unit row/col/both."""

    steps: tuple[tuple[int, int], ...]
    total_cost: float

    def rows_for_col(self, j: int) -> list[int]:
        return [i for i, jj in self.steps if jj == j]

    def cols_for_row(self, i: int) -> list[int]:
        return [j for ii, j in self.steps if ii == i]

    def cells(self) -> set[tuple[int, int]]:
        return set(self.steps)


@dataclass(frozen=True, eq=False)
class Alignment2D:
    similarity: np.ndarray  # (R, C) in [0, 1]
    assignment: tuple[int | None, ...]  # per column; non-monotonic
    ref: ReferenceText
    segs: AlignmentSegments
    inv: PhonemeInventory

    def __post_init__(self):
        sim = np.ascontiguousarray(self.similarity, dtype=np.float64)
        sim.setflags(write=False)
        object.__setattr__(self, "similarity", sim)
        object.__setattr__(self, "assignment", tuple(self.assignment))
        if sim.shape != (self.ref.n_rows, len(self.segs.segments)):
            raise InvalidInputError("similarity grid shape must be R x C")
        if len(self.assignment) != sim.shape[1]:
            raise InvalidInputError("assignment length must equal column count")

    @property
    def n_rows(self) -> int:
        return self.similarity.shape[0]

    @property
    def n_cols(self) -> int:
        return self.similarity.shape[1]

    def with_assignment(self, assignment) -> "Alignment2D":
        return Alignment2D(self.similarity, tuple(assignment), self.ref, self.segs, self.inv)

    def to_dict(self, path: DtwPath | None = None) -> dict:
        doc = {
            "ref_phonemes": list(self.ref.flat_phonemes),
            "segments": self.segs.to_dicts(),
            "similarity": [round(float(x), 6) for x in self.similarity.ravel()],
            "assignment": [a if a is None else int(a) for a in self.assignment],
        }
        doc["dtw_path"] = [[int(i), int(j)] for i, j in path.steps] if path else None
        return doc


def similarity_grid(
    ref: ReferenceText, segs: AlignmentSegments, inv: PhonemeInventory
) -> np.ndarray:
    """R x C grid of phoneme similarities between reference rows and segment columns."""
    ref_ids = np.array([inv.index(p) for p in ref.flat_phonemes])
    seg_ids = np.array([inv.index(s.label) for s in segs.segments])
    return inv.similarity_matrix()[np.ix_(ref_ids, seg_ids)]


def dtw_on_grid(similarity: np.ndarray) -> DtwPath:
    """DTW over a similarity grid with cell cost ``1 - similarity``."""
    cost = np.ascontiguousarray(1.0 - np.asarray(similarity, dtype=np.float64))
    if cost.ndim != 2 or cost.shape[0] < 1 or cost.shape[1] < 1:
        raise InvalidInputError("similarity grid must be non-empty and 2-D")
    steps, total = kernels.dtw_grid(cost)
    return DtwPath(tuple((int(i), int(j)) for i, j in steps), float(total))


def dtw_row_for_col(similarity: np.ndarray, path: DtwPath) -> list[int]:
    """One DTW row per column: among covering rows, the most similar; tie -> smaller."""
    cover: dict[int, list[int]] = {}
    for i, j in path.steps:
        cover.setdefault(j, []).append(i)
    out = []
    for j in range(similarity.shape[1]):
        rows = cover[j]
        out.append(max(rows, key=lambda i: (similarity[i, j], -i)))
    return out


def assign_columns(
    similarity: np.ndarray,
    seg_labels: tuple[str, ...],
    tau_assign: float,
    dtw_rows: list[int] | None = None,
    row_range: range | None = None,
) -> list[int | None]:
    """Thresholded per-column argmax assignment.

    SIL columns stay unassigned.  Argmax ties (a reference phoneme that
    occurs several times) resolve toward the row nearest the column's
    DTW row, then the lower row, so each realization lands near its own
    occurrence instead of funneling onto the first one.  ``row_range``
    restricts candidate rows (used by per-word realignment).
    """
    rows = row_range if row_range is not None else range(similarity.shape[0])
    lo, hi = rows.start, rows.stop
    out: list[int | None] = []
    for j, lab in enumerate(seg_labels):
        if lab == SIL or lo >= hi:
            out.append(None)
            continue
        col = similarity[lo:hi, j]
        best = float(col.max())
        if best < tau_assign:
            out.append(None)
            continue
        tied = [lo + int(i) for i in np.flatnonzero(col == best)]
        pick = tied[0]
        if dtw_rows is not None and len(tied) > 1:
            anchor = dtw_rows[j]
            pick = min(tied, key=lambda i: (abs(i - anchor), i))
        out.append(pick)
    return out


def build_2d(
    ref: ReferenceText,
    segs: AlignmentSegments,
    inv: PhonemeInventory,
    tau_assign: float = TAU_ASSIGN_DEFAULT,
) -> Alignment2D:
    """Similarity grid plus non-monotonic thresholded-argmax assignment."""
    if ref.n_rows == 0:
        raise InvalidInputError("reference text is empty")
    if not segs.segments:
        raise InvalidInputError("alignment has no segments")
    sims = similarity_grid(ref, segs, inv)
    path = dtw_on_grid(sims)
    assignment = assign_columns(sims, segs.labels, tau_assign, dtw_row_for_col(sims, path))
    return Alignment2D(sims, tuple(assignment), ref, segs, inv)


def dtw_align(
    ref: ReferenceText, segs: AlignmentSegments, inv: PhonemeInventory
) -> DtwPath:
    """Monotonic DTW alignment between reference phonemes and decoded segments."""
    if ref.n_rows == 0:
        raise InvalidInputError("reference text is empty")
    if not segs.segments:
        raise InvalidInputError("alignment has no segments")
    return dtw_on_grid(similarity_grid(ref, segs, inv))


def _endpoint_candidates(
    row_sims: np.ndarray, sil_mask: np.ndarray | None, anchor_tau: float
) -> np.ndarray:
    """Columns allowed to carry a window endpoint: anchored on a column
    matching the edge row, else any spoken column, else anything."""
    ok = row_sims >= anchor_tau
    if ok.any():
        return ok
    if sil_mask is not None and not sil_mask.all():
        return ~sil_mask
    return np.ones(len(row_sims), dtype=bool)


def subsequence_window(
    similarity: np.ndarray,
    sil_mask: np.ndarray | None = None,
    sil_cost: float = 0.5,
    vertical_penalty: float = 0.25,
    anchor_tau: float = 0.6,
) -> tuple[int, int]:
    """Best compact realization of the row sequence within the columns.

    Free-endpoint DTW: the path may start at (0, j0) and end at
    (R-1, j1), where endpoints are anchored to columns that actually
    match the edge rows (falling back to any spoken column).  Cell cost
    is ``1 - similarity`` except silence columns, which cost
    ``sil_cost``: a word absorbs its internal pauses, so silence must
    not repel the window.  Each vertical step (stacking another
    reference row on the same column) adds ``vertical_penalty``; without
    it a deletion plus nearby junk makes stopping early and stacking the
    remaining rows cheaper than walking to the true realization.
    End-column ties prefer the leftmost; step ties prefer diagonal,
    then right, then down.
    """
    sims = np.asarray(similarity, dtype=np.float64)
    r, c = sims.shape
    cost = 1.0 - sims
    if sil_mask is not None:
        sil_mask = np.asarray(sil_mask, dtype=bool)
        cost[:, sil_mask] = sil_cost
    acc = np.empty((r, c))
    acc[0] = cost[0]
    acc[0, ~_endpoint_candidates(sims[0], sil_mask, anchor_tau)] = np.inf
    for i in range(1, r):
        acc[i, 0] = cost[i, 0] + acc[i - 1, 0] + vertical_penalty
        for j in range(1, c):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] + vertical_penalty < best:
                best = acc[i - 1, j] + vertical_penalty
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = cost[i, j] + best
    last = acc[r - 1].copy()
    last[~_endpoint_candidates(sims[r - 1], sil_mask, anchor_tau)] = np.inf
    if not np.isfinite(last).any():  # start anchors unreachable from ends
        last = acc[r - 1]
    j1 = int(np.argmin(last))
    i, j = r - 1, j1
    while i > 0:
        if j == 0:
            i -= 1
        else:
            diag = acc[i - 1, j - 1]
            right = acc[i, j - 1]
            down = acc[i - 1, j] + vertical_penalty
            if diag <= right and diag <= down:
                i -= 1
                j -= 1
            elif right <= down:
                j -= 1
            else:
                i -= 1
    return j, j1


def segment_time_span(a: Alignment2D, col: int) -> tuple[float, float]:
    """(start_s, end_s) of decoded segment ``col``."""
    if not (0 <= col < a.n_cols):
        raise InvalidInputError(f"column {col} out of range for {a.n_cols} segments")
    return a.segs.span_seconds(col)
