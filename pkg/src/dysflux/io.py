"""File formats: emission containers, inventory/LM documents, JSON artifacts.

The emission container is binary: a 16-byte ASCII magic, a
length-prefixed JSON header, then float32 little-endian payloads.  A
plain-CSV alternative is accepted for small cases.  All JSON output
goes through one canonical dumper so byte-identical reruns hold.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from dysflux.core import (
    AlignmentSegments,
    BigramLM,
    DataFormatError,
    EmissionInput,
    PhonemeInventory,
    Segment,
)
from dysflux.detect import AsrHypothesis, HypWord

EMISSION_MAGIC = b"DYSFLUXEMIT\x00\x00\x00\x00\x00"
assert len(EMISSION_MAGIC) == 16


def dump_json(doc, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_json(path: str | Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# Emission container
# ---------------------------------------------------------------------------


def write_emission(path: str | Path, e: EmissionInput, inv: PhonemeInventory) -> None:
    header = json.dumps(
        {
            "t": e.n_frames,
            "n": e.n_phonemes,
            "frame_duration": e.frame_duration,
            "inventory_hash": inv.content_hash,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(EMISSION_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(e.log_posteriors.astype("<f4").tobytes(order="C"))
        f.write(e.boundary_probs.astype("<f4").tobytes(order="C"))


def read_emission(path: str | Path, inv: PhonemeInventory | None = None) -> EmissionInput:
    """Read either the binary container or the CSV alternative."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(16)
    if head == EMISSION_MAGIC:
        return _read_emission_binary(path, inv)
    return _read_emission_csv(path, inv)


def _read_emission_binary(path: Path, inv: PhonemeInventory | None) -> EmissionInput:
    blob = path.read_bytes()
    if blob[:16] != EMISSION_MAGIC:
        raise DataFormatError(f"{path}: bad emission magic")
    try:
        (hlen,) = struct.unpack_from("<I", blob, 16)
        header = json.loads(blob[20 : 20 + hlen].decode("utf-8"))
        t, n = int(header["t"]), int(header["n"])
        fd = float(header["frame_duration"])
        inv_hash = header["inventory_hash"]
    except (struct.error, json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"{path}: corrupt emission header ({exc})") from exc
    if inv is not None and inv_hash != inv.content_hash:
        raise DataFormatError(f"{path}: emission was written for a different inventory")
    body = blob[20 + hlen :]
    need = 4 * (t * n + t)
    if len(body) != need:
        raise DataFormatError(f"{path}: emission payload is {len(body)} bytes, expected {need}")
    lp = np.frombuffer(body[: 4 * t * n], dtype="<f4").astype(np.float64).reshape(t, n)
    bp = np.frombuffer(body[4 * t * n :], dtype="<f4").astype(np.float64)
    return EmissionInput(lp, np.clip(bp, 0.0, 1.0), fd)


def write_emission_csv(path: str | Path, e: EmissionInput, inv: PhonemeInventory) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("frame_duration,boundary," + ",".join(inv.symbols) + "\n")
        for t in range(e.n_frames):
            row = [repr(e.frame_duration), repr(float(e.boundary_probs[t]))]
            row += [repr(float(x)) for x in e.log_posteriors[t]]
            f.write(",".join(row) + "\n")


def _read_emission_csv(path: Path, inv: PhonemeInventory | None) -> EmissionInput:
    try:
        lines = path.read_text(encoding="utf-8").strip().splitlines()
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path}: neither an emission container nor CSV") from exc
    if not lines:
        raise DataFormatError(f"{path}: empty emission CSV")
    header = lines[0].split(",")
    if header[:2] != ["frame_duration", "boundary"]:
        raise DataFormatError(f"{path}: emission CSV must start with frame_duration,boundary")
    symbols = header[2:]
    if inv is not None and tuple(symbols) != inv.symbols:
        raise DataFormatError(f"{path}: CSV phoneme columns do not match the inventory")
    rows = []
    bps = []
    fd = None
    try:
        for k, line in enumerate(lines[1:], start=2):
            vals = line.split(",")
            if len(vals) != len(header):
                raise DataFormatError(f"{path}:{k}: wrong column count")
            if fd is None:
                fd = float(vals[0])
            elif float(vals[0]) != fd:
                raise DataFormatError(f"{path}:{k}: frame_duration is not constant")
            bps.append(float(vals[1]))
            rows.append([float(x) for x in vals[2:]])
    except ValueError as exc:
        raise DataFormatError(f"{path}: bad CSV value ({exc})") from exc
    return EmissionInput(np.array(rows), np.array(bps), fd)


# ---------------------------------------------------------------------------
# Inventory, lexicon, LM
# ---------------------------------------------------------------------------


def read_inventory(path: str | Path) -> PhonemeInventory:
    return PhonemeInventory.from_dict(load_json(path))


def write_inventory(path: str | Path, inv: PhonemeInventory) -> None:
    dump_json(inv.to_dict(), path)


def read_lexicon(path: str | Path) -> dict[str, tuple[str, ...]]:
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise DataFormatError(f"{path}: lexicon must be a word -> phonemes object")
    return {w: tuple(p) for w, p in doc.items()}


def write_lm(path: str | Path, lm: BigramLM) -> None:
    dump_json(
        {
            "symbols": list(lm.symbols),
            "log_transition": [float(x) for x in lm.log_transition.ravel()],
        },
        path,
    )


def read_lm(path: str | Path) -> BigramLM:
    doc = load_json(path)
    try:
        symbols = tuple(doc["symbols"])
        n = len(symbols)
        mat = np.array(doc["log_transition"], dtype=np.float64).reshape(n, n)
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}: bad LM document ({exc})") from exc
    return BigramLM(mat, symbols)


# ---------------------------------------------------------------------------
# Alignment / event artifacts
# ---------------------------------------------------------------------------


def segments_to_doc(segs: AlignmentSegments) -> list[dict]:
    return segs.to_dicts()


def segments_from_doc(doc: list[dict], frame_duration: float) -> AlignmentSegments:
    segs = []
    for d in doc:
        start = int(round(d["start_s"] / frame_duration))
        end = int(round(d["end_s"] / frame_duration))
        segs.append(Segment(d["phoneme"], start, end))
    return AlignmentSegments(tuple(segs), frame_duration)


def events_to_doc(utt_id: str, events) -> dict:
    return {
        "utterance_id": utt_id,
        "events": [e.to_dict() for e in events],
    }


def read_hypothesis(path: str | Path) -> AsrHypothesis:
    doc = load_json(path)
    try:
        words = tuple(HypWord(d["word"], float(d["start_s"]), float(d["end_s"])) for d in doc)
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"{path}: bad hypothesis document ({exc})") from exc
    return AsrHypothesis(words)


def write_hypothesis(path: str | Path, hyp: AsrHypothesis) -> None:
    dump_json(
        [
            {"word": w.word, "start_s": round(w.start_s, 4), "end_s": round(w.end_s, 4)}
            for w in hyp.words
        ],
        path,
    )


# ---------------------------------------------------------------------------
# Schemas
# ---------------------------------------------------------------------------


def load_schema(name: str) -> dict:
    from importlib import resources

    text = resources.files("dysflux.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)
