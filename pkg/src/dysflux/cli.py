"""Command-line pipeline: align, detect, simulate, evaluate, run.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
``DYSFLUX_LOG`` sets the log level.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from dysflux.config import PipelineConfig, load_config, resolve_inventory, resolve_lexicon
from dysflux.core import (
    SIL,
    BigramLM,
    DysfluxError,
    InvalidInputError,
    PhonemeInventory,
    ReferenceText,
    estimate_bigram,
)
from dysflux.detect import detect_phoneme, detect_word, text_refresh
from dysflux.io import (
    dump_json,
    events_to_doc,
    load_json,
    read_emission,
    read_hypothesis,
    write_emission,
    write_hypothesis,
    write_lm,
)
from dysflux.metrics import dper, frame_f1, iwer, matching_score, per
from dysflux.recursion import recursive_align
from dysflux.simulate import (
    CorpusParams,
    Utterance,
    gt_word_spans,
    hypothesis_from_gt,
    make_corpus,
)

log = logging.getLogger("dysflux")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def reference_from_text(
    text: str, lexicon: dict[str, tuple[str, ...]], inv: PhonemeInventory
) -> ReferenceText:
    words = []
    for w in text.split():
        if w not in lexicon:
            raise InvalidInputError(f"word {w!r} is not in the lexicon")
        words.append((w, lexicon[w]))
    return ReferenceText.from_pairs(words, inv)


def lm_training_sequence(ref: ReferenceText) -> list[str]:
    """Silence-delimited phoneme sequence mirroring fluent production."""
    seq = [SIL]
    for word in ref.words:
        seq.extend(word.phonemes)
        seq.append(SIL)
    return seq


def resolve_lm(
    cfg: PipelineConfig, refs: list[ReferenceText], inv: PhonemeInventory
) -> BigramLM:
    if cfg.lm_path is not None:
        from dysflux.io import read_lm

        return read_lm(cfg.lm_path)
    return estimate_bigram([lm_training_sequence(r) for r in refs], inv, k=cfg.lm_add_k)


def _load_manifest(path: str) -> list[dict]:
    doc = load_json(path)
    if not isinstance(doc, list):
        raise InvalidInputError(f"{path}: manifest must be a JSON array")
    base = Path(path).parent
    for en in doc:
        for key, val in list(en.items()):
            if key.endswith("_path") and not os.path.isabs(val):
                en[key] = str(base / val)
    return doc


def _align_one(entry: dict, cfg: PipelineConfig, inv, lexicon, lm, out: Path) -> None:
    utt = entry["utterance_id"]
    e = read_emission(entry["emission_path"], inv)
    ref = reference_from_text(entry["reference_text"], lexicon, inv)
    state = recursive_align(e, ref, lm, inv, cfg.recursion(), max_order=cfg.max_order)
    base = out / utt
    base.mkdir(parents=True, exist_ok=True)
    dump_json(
        {
            "utterance_id": utt,
            "frame_duration": e.frame_duration,
            "n_frames": e.n_frames,
            "orders": cfg.max_order,
        },
        base / "meta.json",
    )
    for st in state.orders:
        d = base / f"order{st.order}"
        d.mkdir(exist_ok=True)
        dump_json(st.segments.to_dicts(), d / "segments.json")
        dump_json(st.words.to_dicts(), d / "words.json")
        dump_json(st.align.to_dict(st.path), d / "alignment2d.json")


def _align_worker(args):
    entry, cfg, inv, lexicon, lm, out = args
    try:
        _align_one(entry, cfg, inv, lexicon, lm, Path(out))
        return entry["utterance_id"], None
    except (DysfluxError, OSError) as exc:
        return entry["utterance_id"], f"{type(exc).__name__}: {exc}"


def _run_over_manifest(entries, cfg, inv, lexicon, lm, out: Path) -> dict:
    tasks = [(en, cfg, inv, lexicon, lm, str(out)) for en in entries]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_align_worker, tasks))
    else:
        results = [_align_worker(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    errors = {uid: err for uid, err in results if err is not None}
    return {"ok": [uid for uid, err in results if err is None], "errors": errors}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_align(args) -> int:
    cfg = _config(args)
    inv = resolve_inventory(cfg)
    lexicon = resolve_lexicon(cfg)
    entries = _load_manifest(args.manifest)
    out = Path(args.out) / "align"
    out.mkdir(parents=True, exist_ok=True)
    refs = []
    for en in entries:
        try:
            refs.append(reference_from_text(en["reference_text"], lexicon, inv))
        except DysfluxError:
            pass
    lm = resolve_lm(cfg, refs, inv) if refs or cfg.lm_path else None
    if lm is None and entries:
        raise InvalidInputError("no usable reference texts to estimate a bigram LM from")
    status = _run_over_manifest(entries, cfg, inv, lexicon, lm, out) if entries else {
        "ok": [],
        "errors": {},
    }
    dump_json(status, out / "status.json")
    for uid, err in status["errors"].items():
        log.error("align %s failed: %s", uid, err)
    return 2 if status["errors"] else 0


def cmd_detect(args) -> int:
    cfg = _config(args)
    inv = resolve_inventory(cfg)
    lexicon = resolve_lexicon(cfg)
    entries = _load_manifest(args.manifest)
    out = Path(args.out) / "detect"
    out.mkdir(parents=True, exist_ok=True)
    refs = [reference_from_text(en["reference_text"], lexicon, inv) for en in entries]
    lm = resolve_lm(cfg, refs, inv)
    errors = {}
    for en, ref in zip(entries, refs):
        uid = en["utterance_id"]
        try:
            e = read_emission(en["emission_path"], inv)
            state = recursive_align(e, ref, lm, inv, cfg.recursion(), max_order=cfg.max_order)
            final = state.final
            events = detect_phoneme(final.align, final.path, cfg.detect())
            doc = events_to_doc(uid, events)
            hyp_path = args.hyp or en.get("hypothesis_path")
            if hyp_path and Path(hyp_path).is_dir():
                hyp_path = str(Path(hyp_path) / f"{uid}.hyp.json")
            if hyp_path and Path(hyp_path).exists():
                hyp = read_hypothesis(hyp_path)
                word_events = detect_word(final.mono, final.align, hyp, ref, cfg.detect())
                refreshed = text_refresh(final.align, hyp, ref)
                doc["events"] += [ev.to_dict() for ev in word_events]
                doc["transcript"] = refreshed.text
                doc["transcript_tokens"] = list(refreshed.tokens)
            else:
                log.warning("%s: no hypothesis file; word-level detection skipped", uid)
            dump_json(doc, out / f"{uid}.events.json")
        except (DysfluxError, OSError) as exc:
            errors[uid] = f"{type(exc).__name__}: {exc}"
            log.error("detect %s failed: %s", uid, exc)
    dump_json({"errors": errors}, out / "status.json")
    return 2 if errors else 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    inv = resolve_inventory(cfg)
    lexicon = resolve_lexicon(cfg)
    params = cfg.sim
    if args.count is not None:
        params = CorpusParams(**{**params.__dict__, "count": args.count})
    if args.seed is not None:
        params = CorpusParams(**{**params.__dict__, "seed": args.seed})
    out = Path(args.out) / "dataset"
    out.mkdir(parents=True, exist_ok=True)
    corpus = make_corpus(params, inv, lexicon)
    entries = []
    for u in corpus:
        entries.append(_write_utterance(u, inv, out))
    lm = estimate_bigram([lm_training_sequence(u.ref) for u in corpus], inv, k=cfg.lm_add_k) if corpus else None
    if lm is not None:
        write_lm(out / "lm.json", lm)
    # manifest written last: its presence marks a complete dataset
    dump_json(entries, out / "manifest.json")
    print(str(out / "manifest.json"))
    return 0


def _write_utterance(u: Utterance, inv, out: Path) -> dict:
    uid = u.utt_id
    fd = u.gt.disfluent.frame_duration
    write_emission(out / f"{uid}.emit", u.emission, inv)
    dump_json(u.gt.clean.to_dicts(), out / f"{uid}.clean.json")
    dump_json(u.gt.disfluent.to_dicts(), out / f"{uid}.truth.json")
    dump_json(
        {
            "utterance_id": uid,
            "events": [
                {
                    "level": "phoneme",
                    "kind": ev.kind,
                    "target": None if ev.label == SIL else ev.label,
                    "start_s": round(ev.interval[0], 4),
                    "end_s": round(ev.interval[1], 4),
                    "evidence": [],
                }
                for ev in u.gt.events
            ],
        },
        out / f"{uid}.events.json",
    )
    dump_json(
        [
            {
                "word_index": w.word_index,
                "word": w.word,
                "start_s": round(w.start * fd, 4),
                "end_s": round(w.end * fd, 4),
            }
            for w in gt_word_spans(u.gt, u.ref)
        ],
        out / f"{uid}.words.json",
    )
    write_hypothesis(out / f"{uid}.hyp.json", hypothesis_from_gt(u))
    # paths are manifest-relative so reruns are byte-identical anywhere
    return {
        "utterance_id": uid,
        "emission_path": f"{uid}.emit",
        "clean_alignment_path": f"{uid}.clean.json",
        "truth_alignment_path": f"{uid}.truth.json",
        "events_path": f"{uid}.events.json",
        "words_path": f"{uid}.words.json",
        "hypothesis_path": f"{uid}.hyp.json",
        "reference_text": " ".join(w.text for w in u.ref.words),
    }


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    entries = _load_manifest(args.manifest)
    pred = Path(args.pred)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    utt_reports = {}
    skipped = []
    order_words = {}  # order -> [(key, start, end)]
    order_gt = []
    pooled = {"per": [], "dper": [], "micro_f1": [], "macro_f1": [], "iwer": []}
    all_pred_events, all_gt_events = [], []
    from dysflux.io import segments_from_doc

    for en in entries:
        uid = en["utterance_id"]
        meta_path = pred / "align" / uid / "meta.json"
        if not meta_path.exists():
            skipped.append(uid)
            continue
        meta = load_json(meta_path)
        fd = meta["frame_duration"]
        truth = segments_from_doc(load_json(en["truth_alignment_path"]), fd)
        decoded = segments_from_doc(
            load_json(pred / "align" / uid / "order0" / "segments.json"), fd
        )
        r = {}
        r["per"] = per(truth.labels, decoded.labels)
        r["dper"] = dper(truth, decoded, cfg.dper_sub_cost)
        micro, macro = frame_f1(truth.frame_labels(), decoded.frame_labels())
        r["micro_f1"], r["macro_f1"] = micro, macro
        target_words = en["reference_text"].split()
        gt_words = load_json(en["words_path"]) if en.get("words_path") else []
        for k in range(meta["orders"] + 1):
            wdoc = load_json(pred / "align" / uid / f"order{k}" / "words.json")
            order_words.setdefault(k, []).extend(
                (f"{uid}:{w['word_index']}", w["start_s"], w["end_s"]) for w in wdoc
            )
            if k == meta["orders"]:
                hyp_words = [w["word"] for w in sorted(wdoc, key=lambda x: x["start_s"])]
                r["iwer"] = iwer(target_words, hyp_words)
        order_gt.extend((f"{uid}:{w['word_index']}", w["start_s"], w["end_s"]) for w in gt_words)
        ev_path = pred / "detect" / f"{uid}.events.json"
        if ev_path.exists():
            pred_events = [
                (d["kind"], d["start_s"], d["end_s"])
                for d in load_json(ev_path)["events"]
                if d["level"] == "phoneme"
            ]
            gt_events = [
                (d["kind"], d["start_s"], d["end_s"])
                for d in load_json(en["events_path"])["events"]
                if d["kind"] != "Prolongation"
            ]
            r["ms_f1"] = matching_score(pred_events, gt_events).f1
            all_pred_events += pred_events
            all_gt_events += gt_events
        for key in pooled:
            if key in r:
                pooled[key].append(r[key])
        utt_reports[uid] = {k: round(v, 6) for k, v in r.items()}

    aggregate = {k: (sum(v) / len(v) if v else 0.0) for k, v in pooled.items()}
    aggregate["ms_f1"] = matching_score(all_pred_events, all_gt_events).f1 if all_gt_events else 0.0
    if not all_gt_events and not all_pred_events:
        aggregate["ms_f1"] = 0.0
    aggregate = {k: round(v, 6) for k, v in aggregate.items()}
    orders = []
    for k in sorted(order_words):
        ms = matching_score(order_words[k], order_gt).f1 if order_gt else 0.0
        orders.append({"order": k, "segmentation_ms": round(ms, 6)})
    dump_json(
        {
            "aggregate": aggregate,
            "utterances": utt_reports,
            "orders": orders,
            "skipped": sorted(skipped),
        },
        out / "report.json",
    )
    with open(out / "orders.csv", "w", newline="", encoding="utf-8") as f:
        wr = csv.writer(f)
        wr.writerow(["order", "segmentation_ms"])
        for row in orders:
            wr.writerow([row["order"], f"{row['segmentation_ms']:.6f}"])
    for uid in skipped:
        log.warning("evaluate: no predictions for %s; skipped", uid)
    return 0


def cmd_run(args) -> int:
    out = Path(args.out)
    if args.manifest is None:
        sim_args = argparse.Namespace(
            config=args.config, out=str(out), count=args.count, seed=args.seed
        )
        rc = cmd_simulate(sim_args)
        if rc != 0:
            return rc
        manifest = str(out / "dataset" / "manifest.json")
    else:
        manifest = args.manifest
    base = argparse.Namespace(
        config=args.config,
        manifest=manifest,
        out=str(out),
        order=args.order,
        workers=args.workers,
        seed=args.seed,
        hyp=args.hyp,
    )
    rc = cmd_align(base)
    if rc != 0:
        return rc
    rc = cmd_detect(base)
    if rc != 0:
        return rc
    eval_args = argparse.Namespace(
        config=args.config, manifest=manifest, pred=str(out), out=str(out / "eval")
    )
    return cmd_evaluate(eval_args)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    over = {}
    if getattr(args, "order", None) is not None:
        over["max_order"] = args.order
    if getattr(args, "workers", None) is not None:
        over["workers"] = args.workers
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    from dysflux.config import with_overrides

    return with_overrides(cfg, **over)


def _add_common(p, manifest=True):
    p.add_argument("--config", help="pipeline config JSON")
    if manifest:
        p.add_argument("--manifest", required=False, help="dataset manifest JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--order", type=int, help="override max recursion order")
    p.add_argument("--workers", type=int, help="utterance-level worker count")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--hyp", help="ASR hypothesis file or directory")


def build_parser() -> _Parser:
    p = _Parser(prog="dysflux", description="Disfluency alignment and detection pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("align", parents=[], help="decode + recursive 2D alignment")
    _add_common(pa)
    pa.set_defaults(func=cmd_align, needs_manifest=True)

    pd = sub.add_parser("detect", help="phoneme/word disfluency detection")
    _add_common(pd)
    pd.set_defaults(func=cmd_detect, needs_manifest=True)

    ps = sub.add_parser("simulate", help="generate a synthetic disfluent dataset")
    _add_common(ps, manifest=False)
    ps.add_argument("--count", type=int, help="number of utterances")
    ps.set_defaults(func=cmd_simulate, needs_manifest=False)

    pe = sub.add_parser("evaluate", help="score predictions against a dataset")
    pe.add_argument("pred", help="prediction directory (align/detect outputs)")
    pe.add_argument("--config", help="pipeline config JSON")
    pe.add_argument("--manifest", required=True, help="ground-truth manifest")
    pe.add_argument("--out", required=True, help="report directory")
    pe.set_defaults(func=cmd_evaluate, needs_manifest=True)

    pr = sub.add_parser("run", help="simulate (optional) + align + detect + evaluate")
    _add_common(pr)
    pr.add_argument("--count", type=int, help="utterances to simulate when no manifest")
    pr.set_defaults(func=cmd_run, needs_manifest=False)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("DYSFLUX_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "needs_manifest", False) and not getattr(args, "manifest", None):
            raise UsageError("--manifest is required for this command")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DysfluxError as exc:
        log.error("%s", exc)
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort guard for exit code 3
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
