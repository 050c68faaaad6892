import numpy as np
import pytest

from dysflux.core import BigramLM, EmissionInput, InvalidInputError
from dysflux.search import (
    BOUNDARY_EPS,
    SearchConfig,
    decode_segment,
    decode_with_stats,
    score_labeling,
    search_complexity_probe,
    viterbi_decode,
)

from oracles import brute_force_viterbi

FD = 0.02


def _instance(rng, t, n, boundary="random"):
    scores = rng.normal(size=(t, n))
    lp = scores - np.log(np.exp(scores).sum(axis=1, keepdims=True))
    if boundary == "neutral":
        b = np.full(t, 0.5)
    else:
        b = rng.uniform(0.05, 0.95, size=t)
    counts = rng.random((n, n)) + 0.1
    lm = BigramLM(np.log(counts / counts.sum(axis=1, keepdims=True)),
                  tuple(f"P{i}" for i in range(n)))
    return EmissionInput(lp, b, FD), lm


def _terms(e, lm, cfg):
    w = cfg.lm_weight * lm.log_transition
    b = np.clip(e.boundary_probs, BOUNDARY_EPS, 1 - BOUNDARY_EPS)
    return w, cfg.boundary_weight * np.log(b), cfg.boundary_weight * np.log1p(-b)


def _decoded_indices(segs, lm):
    col = {s: i for i, s in enumerate(lm.symbols)}
    return np.array([col[lab] for lab in segs.frame_labels()])


class TestViterbiAgainstBruteForce:
    def test_single_frame_is_argmax(self, inv):
        rng = np.random.default_rng(3)
        e, lm = _instance(rng, 1, 4)
        segs = viterbi_decode(e, lm)
        assert len(segs.segments) == 1
        assert segs.labels[0] == lm.symbols[int(np.argmax(e.log_posteriors[0]))]

    def test_three_frames_two_phonemes_neutral_boundaries(self):
        rng = np.random.default_rng(11)
        cfg = SearchConfig(lm_weight=1.0, boundary_weight=1.0)
        uniform = BigramLM(np.log(np.full((2, 2), 0.5)), ("P0", "P1"))
        e, _ = _instance(rng, 3, 2, boundary="neutral")
        w, sb, ss = _terms(e, uniform, cfg)
        want_path, want_score = brute_force_viterbi(e.log_posteriors, w, sb, ss)
        segs, stats = decode_with_stats(e, uniform, cfg)
        assert stats.score == want_score
        assert np.array_equal(_decoded_indices(segs, uniform), want_path)

    def test_six_frames_three_phonemes(self):
        rng = np.random.default_rng(12)
        cfg = SearchConfig()
        e, lm = _instance(rng, 6, 3, boundary="neutral")
        w, sb, ss = _terms(e, lm, cfg)
        want_path, want_score = brute_force_viterbi(e.log_posteriors, w, sb, ss)
        segs, stats = decode_with_stats(e, lm, cfg)
        assert stats.score == want_score
        assert np.array_equal(_decoded_indices(segs, lm), want_path)

    def test_many_seeded_instances_exact(self):
        rng = np.random.default_rng(99)
        cfg = SearchConfig(lm_weight=0.4, boundary_weight=0.8)
        for _ in range(80):
            t = int(rng.integers(1, 9))
            n = int(rng.integers(1, 4))
            e, lm = _instance(rng, t, n)
            w, sb, ss = _terms(e, lm, cfg)
            want_path, want_score = brute_force_viterbi(e.log_posteriors, w, sb, ss)
            segs, stats = decode_with_stats(e, lm, cfg)
            assert stats.score == want_score
            assert np.array_equal(_decoded_indices(segs, lm), want_path)

    def test_decoded_score_reproducible_from_labels(self):
        rng = np.random.default_rng(21)
        cfg = SearchConfig()
        e, lm = _instance(rng, 7, 3)
        segs, stats = decode_with_stats(e, lm, cfg)
        assert score_labeling(e, _decoded_indices(segs, lm), lm, cfg) == stats.score


class TestViterbiProperties:
    def test_row_shift_invariance(self):
        rng = np.random.default_rng(5)
        e, lm = _instance(rng, 8, 3)
        base = viterbi_decode(e, lm)
        lp = e.log_posteriors.copy()
        lp[3] += 7.5  # constant shift of one frame's row
        shifted = EmissionInput(lp, e.boundary_probs, FD)
        assert viterbi_decode(shifted, lm).labels == base.labels

    def test_zero_weights_degenerate_to_frame_argmax(self):
        rng = np.random.default_rng(6)
        e, lm = _instance(rng, 10, 4)
        cfg = SearchConfig(lm_weight=0.0, boundary_weight=0.0)
        segs = viterbi_decode(e, lm, cfg)
        want = [lm.symbols[int(i)] for i in e.log_posteriors.argmax(axis=1)]
        assert segs.frame_labels() == want

    def test_output_tiles_frames(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            e, lm = _instance(rng, int(rng.integers(1, 30)), int(rng.integers(1, 6)))
            segs = viterbi_decode(e, lm)
            assert segs.segments[0].start == 0
            assert segs.n_frames == e.n_frames

    def test_boundary_monotone_effect_on_switch_scores(self):
        # raising b_t improves any switching path relative to a staying
        # one by exactly the same margin at every other frame
        rng = np.random.default_rng(8)
        e, lm = _instance(rng, 5, 3)
        cfg = SearchConfig()
        switch = np.array([0, 0, 1, 1, 1])
        stay = np.array([0, 0, 0, 0, 0])
        margins = []
        for bt in (0.2, 0.5, 0.9):
            b = e.boundary_probs.copy()
            b[2] = bt
            e2 = EmissionInput(e.log_posteriors, b, FD)
            margins.append(
                score_labeling(e2, switch, lm, cfg) - score_labeling(e2, stay, lm, cfg)
            )
        assert margins[0] < margins[1] < margins[2]

    def test_hard_boundaries_do_not_produce_inf(self):
        rng = np.random.default_rng(9)
        e, lm = _instance(rng, 4, 2)
        e2 = EmissionInput(e.log_posteriors, np.array([0.0, 1.0, 0.0, 1.0]), FD)
        _, stats = decode_with_stats(e2, lm)
        assert np.isfinite(stats.score)


class TestErrors:
    def test_shape_mismatch(self):
        rng = np.random.default_rng(10)
        e, _ = _instance(rng, 3, 4)
        lm = BigramLM(np.log(np.full((3, 3), 1 / 3)), ("A", "B", "C"))
        with pytest.raises(InvalidInputError, match="columns"):
            viterbi_decode(e, lm)

    def test_all_neg_inf_frame(self):
        lp = np.log(np.full((3, 2), 0.5))
        lp[1, :] = -np.inf
        e = EmissionInput(lp, np.full(3, 0.5), FD)
        lm = BigramLM(np.log(np.full((2, 2), 0.5)), ("A", "B"))
        with pytest.raises(InvalidInputError, match="frame 1"):
            viterbi_decode(e, lm)


class TestDecodeSegment:
    def test_full_range_identical(self):
        rng = np.random.default_rng(13)
        e, lm = _instance(rng, 12, 3)
        assert decode_segment(e, (0, 12), lm).segments == viterbi_decode(e, lm).segments

    def test_slices_are_slice_optimal(self):
        rng = np.random.default_rng(14)
        cfg = SearchConfig()
        e, lm = _instance(rng, 8, 3)
        for lo, hi in ((0, 4), (4, 8)):
            segs = decode_segment(e, (lo, hi), lm, cfg)
            assert segs.segments[0].start == lo and segs.segments[-1].end == hi
            sliced = EmissionInput(e.log_posteriors[lo:hi], e.boundary_probs[lo:hi], FD)
            w, sb, ss = _terms(sliced, lm, cfg)
            _, want = brute_force_viterbi(sliced.log_posteriors, w, sb, ss)
            col = {s: i for i, s in enumerate(lm.symbols)}
            local = np.array([col[lab] for lab in segs.frame_labels()])
            from oracles import score_labeling as oracle_score

            assert oracle_score(local, sliced.log_posteriors, w, sb, ss) == want

    def test_one_frame_range(self):
        rng = np.random.default_rng(15)
        e, lm = _instance(rng, 5, 3)
        segs = decode_segment(e, (2, 3), lm)
        assert len(segs.segments) == 1
        assert segs.segments[0].start == 2 and segs.segments[0].end == 3

    def test_empty_range_rejected(self):
        rng = np.random.default_rng(16)
        e, lm = _instance(rng, 5, 3)
        with pytest.raises(InvalidInputError):
            decode_segment(e, (3, 3), lm)


class TestComplexityProbe:
    def test_single_frame_has_no_transitions(self):
        assert search_complexity_probe(1, 7).transitions_evaluated == 0

    def test_known_counts(self):
        assert search_complexity_probe(10, 4).transitions_evaluated == 144
        assert search_complexity_probe(100, 40).transitions_evaluated == 158400

    def test_formula_over_grid(self):
        for t in (1, 2, 5, 13):
            for n in (1, 3, 8):
                probe = search_complexity_probe(t, n)
                assert probe.transitions_evaluated == (t - 1) * n * n


class TestMinSegmentFilter:
    def test_short_runs_merge_into_better_neighbor(self):
        # frame argmax yields A A B A A; with min 2 frames the B debris
        # folds into the emission-preferred neighbor
        lp = np.log(
            np.array(
                [[0.8, 0.2], [0.8, 0.2], [0.2, 0.8], [0.8, 0.2], [0.8, 0.2]]
            )
        )
        e = EmissionInput(lp, np.full(5, 0.5), FD)
        lm = BigramLM(np.log(np.full((2, 2), 0.5)), ("A", "B"))
        cfg = SearchConfig(lm_weight=0.0, boundary_weight=0.0, min_segment_frames=2)
        segs = viterbi_decode(e, lm, cfg)
        assert segs.labels == ("A",)
        assert segs.n_frames == 5
