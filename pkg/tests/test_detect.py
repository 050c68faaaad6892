import json

import numpy as np
import pytest

from dysflux.align2d import build_2d, dtw_on_grid
from dysflux.core import estimate_bigram
from dysflux.detect import (
    AsrHypothesis,
    DetectConfig,
    DisfluencyEvent,
    HypWord,
    InvalidInputError,
    detect_phoneme,
    detect_word,
    text_refresh,
)
from dysflux.metrics import iou
from dysflux.search import viterbi_decode
from dysflux.simulate import CorpusParams, InjectionSpec, make_corpus

from conftest import make_ref, make_segs


def _detect(ref, segs, inv, cfg=DetectConfig()):
    a = build_2d(ref, segs, inv)
    path = dtw_on_grid(a.similarity)
    return detect_phoneme(a, path, cfg), a, path


class TestPhonemeTemplates:
    def test_stutter_yields_exactly_one_repetition_spanning_both_copies(self, inv):
        ref = make_ref(("cat", "K", "AE", "T"))
        segs = make_segs([("K", 4), ("AE", 4), ("K", 4), ("AE", 4), ("T", 4)])
        events, a, _ = _detect(ref, segs, inv)
        assert len(events) == 1
        ev = events[0]
        assert ev.kind == "Repetition" and ev.level == "phoneme"
        # the implicated columns are exactly 0..3
        assert ev.interval == (0.0, pytest.approx(0.32))
        cols = {c for _, c in ev.evidence}
        assert cols == {0, 1, 2, 3}

    def test_tail_missing(self, inv):
        ref = make_ref(("cat", "K", "AE", "T"))
        segs = make_segs([("K", 4), ("AE", 4)])
        events, _, _ = _detect(ref, segs, inv)
        assert [e.kind for e in events] == ["Missing"]
        assert events[0].target == "T"
        # located at the tail column the path covers
        assert events[0].interval == (pytest.approx(0.08), pytest.approx(0.16))

    def test_replacement_on_unmatched_middle_column(self, inv):
        # rule trace on the 3x3 grid: row AE matches nothing on the path,
        # nothing is assigned to it, and the covering column IH matches
        # no row at all -> one contiguous unexplained block -> Replacement
        ref = make_ref(("cat", "K", "AE", "T"))
        segs = make_segs([("K", 4), ("IH", 4), ("T", 4)])
        assert inv.similarity("AE", "IH") < 0.6
        events, a, _ = _detect(ref, segs, inv)
        assert [e.kind for e in events] == ["Replacement"]
        assert events[0].target == "AE"
        assert events[0].interval == (pytest.approx(0.08), pytest.approx(0.16))

    def test_irregular_pause_inside_sentence(self, inv):
        ref = make_ref(("cat", "K", "AE", "T"))
        segs = make_segs([("K", 4), ("AE", 4), ("SIL", 20), ("T", 4)])  # 0.4 s
        events, _, _ = _detect(ref, segs, inv, DetectConfig(pause_min_s=0.25))
        assert [e.kind for e in events] == ["IrregularPause"]
        assert events[0].interval == (pytest.approx(0.16), pytest.approx(0.56))

    def test_short_pause_not_flagged(self, inv):
        ref = make_ref(("cat", "K", "AE", "T"))
        segs = make_segs([("K", 4), ("AE", 4), ("SIL", 8), ("T", 4)])  # 0.16 s
        events, _, _ = _detect(ref, segs, inv)
        assert events == []

    def test_edge_silence_never_a_pause(self, inv):
        ref = make_ref(("cat", "K", "AE", "T"))
        segs = make_segs([("SIL", 30), ("K", 4), ("AE", 4), ("T", 4), ("SIL", 30)])
        events, _, _ = _detect(ref, segs, inv)
        assert events == []

    def test_insertion_of_near_copy_next_to_match(self, inv):
        # an extra near-identical vowel right after its row's match, not
        # explained by any other row
        ref = make_ref(("he", "HH", "IY"))
        segs = make_segs([("HH", 4), ("IY", 4), ("IH", 4)])
        assert inv.similarity("IY", "IH") >= 0.6
        events, _, _ = _detect(ref, segs, inv)
        assert [e.kind for e in events] == ["Insertion"]
        assert events[0].target == "IY"
        # the event marks the inserted material only
        assert events[0].interval == (pytest.approx(0.16), pytest.approx(0.24))

    def test_fluent_confusable_neighbors_do_not_fire_insertion(self, inv):
        # S and Z are similar, but each is explained by its own row
        ref = make_ref(("sz", "S", "Z"))
        segs = make_segs([("S", 4), ("Z", 4)])
        events, _, _ = _detect(ref, segs, inv)
        assert events == []

    def test_clean_diagonal_yields_empty(self, inv):
        ref = make_ref(("wish", "W", "IH", "SH"), ("you", "Y", "UW"))
        segs = make_segs(
            [("W", 3), ("IH", 3), ("SH", 3), ("SIL", 4), ("Y", 3), ("UW", 3)]
        )
        events, _, _ = _detect(ref, segs, inv)
        assert events == []

    def test_missing_and_replacement_exclusive_per_row(self, inv):
        rng = np.random.default_rng(0)
        labs = [s for s in inv.symbols if s != "SIL"]
        for _ in range(30):
            ref = make_ref(("w", *[labs[i] for i in rng.integers(0, len(labs), 4)]))
            runs, prev = [], None
            for i in rng.integers(0, len(labs), 5):
                if labs[i] != prev:
                    runs.append((labs[i], int(rng.integers(2, 5))))
                    prev = labs[i]
            events, _, _ = _detect(ref, make_segs(runs), inv)
            per_row = {}
            for e in events:
                if e.kind in ("Missing", "Replacement"):
                    rows = {r for r, _ in e.evidence}
                    for r in rows:
                        assert r not in per_row
                        per_row[r] = e.kind

    def test_determinism_byte_identical_json(self, inv):
        ref = make_ref(("cat", "K", "AE", "T"))
        segs = make_segs([("K", 4), ("AE", 4), ("K", 4), ("AE", 4), ("T", 4)])
        one, _, _ = _detect(ref, segs, inv)
        two, _, _ = _detect(ref, segs, inv)
        assert json.dumps([e.to_dict() for e in one]) == json.dumps(
            [e.to_dict() for e in two]
        )

    def test_illegal_kind_level_combo_rejected(self):
        with pytest.raises(InvalidInputError):
            DisfluencyEvent("IrregularPause", "word", None, (0.0, 1.0))


class TestTextRefresh:
    def _aligned(self, inv):
        ref = make_ref(("cat", "K", "AE", "T"), ("you", "Y", "UW"))
        segs = make_segs(
            [("K", 4), ("AE", 4), ("T", 4), ("SIL", 4), ("Y", 4), ("UW", 4)]
        )
        a = build_2d(ref, segs, inv)
        return ref, a

    def test_identity_hypothesis_zero_events(self, inv):
        ref, a = self._aligned(inv)
        hyp = AsrHypothesis((HypWord("cat", 0.0, 0.24), HypWord("you", 0.32, 0.48)))
        res = text_refresh(a, hyp, ref)
        assert res.events == ()
        assert res.text == "cat you"
        assert not res.empty_hypothesis

    def test_unassigned_run_becomes_insertion(self, inv):
        # two unmatched spoken columns between the matched words
        ref = make_ref(("cat", "K", "AE", "T"), ("you", "Y", "UW"))
        segs = make_segs(
            [("K", 4), ("AE", 4), ("T", 4), ("B", 4), ("AH", 4), ("Y", 4), ("UW", 4)]
        )
        a = build_2d(ref, segs, inv)
        hyp = AsrHypothesis((HypWord("cat", 0.0, 0.24), HypWord("you", 0.4, 0.56)))
        res = text_refresh(a, hyp, ref)
        ins = [e for e in res.events if e.kind == "Insertion"]
        assert len(ins) == 1
        assert ins[0].level == "word"
        assert ins[0].interval == (pytest.approx(0.24), pytest.approx(0.4))
        assert "[+B AH]" in res.text

    def test_unsupported_hypothesis_word_is_deletion(self, inv):
        # "about" appears in the reference and the hypothesis, but no
        # decoded column supports it
        ref = make_ref(("cat", "K", "AE", "T"), ("about", "AH", "B", "AW", "T"))
        segs = make_segs([("K", 4), ("AE", 4), ("T", 4)])
        a = build_2d(ref, segs, inv)
        hyp = AsrHypothesis((HypWord("cat", 0.0, 0.24), HypWord("about", 0.3, 0.6)))
        res = text_refresh(a, hyp, ref)
        missing = [e for e in res.events if e.kind == "Missing"]
        assert len(missing) == 1
        assert missing[0].target == "about"
        assert missing[0].interval == (0.3, 0.6)
        assert "[-about]" in res.text

    def test_empty_hypothesis_flagged(self, inv):
        ref, a = self._aligned(inv)
        res = text_refresh(a, AsrHypothesis(()), ref)
        assert res.empty_hypothesis
        assert res.text == ""


class TestDetectWord:
    def test_repeated_word_projection(self, inv):
        # decoded word projection [you, you, wish]
        ref = make_ref(("you", "Y", "UW"), ("wish", "W", "IH", "SH"))
        segs = make_segs(
            [
                ("Y", 4), ("UW", 4), ("SIL", 3), ("Y", 4), ("UW", 4),
                ("SIL", 3), ("W", 4), ("IH", 4), ("SH", 4),
            ]
        )
        a = build_2d(ref, segs, inv)
        from dysflux.recursion import smooth_merge

        mono = smooth_merge(a, dtw_on_grid(a.similarity))
        hyp = AsrHypothesis(
            (HypWord("you", 0.0, 0.38), HypWord("wish", 0.44, 0.68))
        )
        events = detect_word(mono, a, hyp, ref)
        reps = [e for e in events if e.kind == "Repetition"]
        assert len(reps) == 1
        assert reps[0].target == "you"
        assert reps[0].level == "word"
        assert iou(reps[0].interval, (0.0, 0.38)) > 0.5

    def test_fluent_no_events(self, inv):
        ref = make_ref(("you", "Y", "UW"), ("wish", "W", "IH", "SH"))
        segs = make_segs(
            [("Y", 4), ("UW", 4), ("SIL", 3), ("W", 4), ("IH", 4), ("SH", 4)]
        )
        a = build_2d(ref, segs, inv)
        from dysflux.recursion import smooth_merge

        mono = smooth_merge(a, dtw_on_grid(a.similarity))
        hyp = AsrHypothesis((HypWord("you", 0.0, 0.16), HypWord("wish", 0.22, 0.44)))
        assert detect_word(mono, a, hyp, ref) == []

    def test_insertion_delegated_from_refresher(self, inv):
        ref = make_ref(("cat", "K", "AE", "T"), ("you", "Y", "UW"))
        segs = make_segs(
            [("K", 4), ("AE", 4), ("T", 4), ("B", 4), ("AH", 4), ("Y", 4), ("UW", 4)]
        )
        a = build_2d(ref, segs, inv)
        from dysflux.recursion import smooth_merge

        mono = smooth_merge(a, dtw_on_grid(a.similarity))
        hyp = AsrHypothesis((HypWord("cat", 0.0, 0.24), HypWord("you", 0.4, 0.56)))
        events = detect_word(mono, a, hyp, ref)
        assert [e.kind for e in events] == ["Insertion"]


class TestRoundTrip:
    def test_same_target_events_never_overlap(self, inv):
        from dysflux.cli import lm_training_sequence
        from dysflux.core import estimate_bigram as eb

        params = CorpusParams(
            count=40, seed=1, sigma=0.4, kappa=1.0,
            injection=InjectionSpec(0.15, 0.1, 0.1, 0.08, block_s=(0.3, 0.6)),
        )
        corpus = make_corpus(params, inv)
        lm = eb([lm_training_sequence(u.ref) for u in corpus], inv, k=1.0)
        for u in corpus:
            segs = viterbi_decode(u.emission, lm)
            a = build_2d(u.ref, segs, inv)
            events = detect_phoneme(a, dtw_on_grid(a.similarity))
            by_target = {}
            for e in events:
                by_target.setdefault((e.level, e.target), []).append(e.interval)
            for ivs in by_target.values():
                ivs.sort()
                for x, y in zip(ivs, ivs[1:]):
                    assert y[0] >= x[1]

    def test_injected_events_recovered_with_half_iou(self, inv):
        params = CorpusParams(
            count=25, seed=77, sigma=0.0, kappa=1.0,
            injection=InjectionSpec(0.15, 0.1, 0.1, 0.08, block_s=(0.3, 0.6)),
        )
        corpus = make_corpus(params, inv)
        from dysflux.cli import lm_training_sequence

        lm = estimate_bigram([lm_training_sequence(u.ref) for u in corpus], inv, k=1.0)
        for u in corpus:
            segs = viterbi_decode(u.emission, lm)
            a = build_2d(u.ref, segs, inv)
            events = detect_phoneme(a, dtw_on_grid(a.similarity))
            pred = [(e.kind, *e.interval) for e in events]
            for ev in u.gt.events:
                if ev.kind == "Prolongation":
                    continue
                matched = any(
                    k == ev.kind and iou((s, t), ev.interval) > 0.5 for k, s, t in pred
                )
                assert matched, (u.utt_id, ev)
