import json
import os
from pathlib import Path

import jsonschema
import pytest

from dysflux.cli import main
from dysflux.io import load_schema


def _tree(root: Path):
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    rc = main(["simulate", "--out", str(root), "--count", "5", "--seed", "11"])
    assert rc == 0
    return root / "dataset"


class TestSimulate:
    def test_zero_count_empty_manifest(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--count", "0", "--seed", "1"]) == 0
        manifest = json.loads((tmp_path / "dataset" / "manifest.json").read_text())
        assert manifest == []

    def test_manifest_schema_and_count(self, dataset):
        manifest = json.loads((dataset / "manifest.json").read_text())
        jsonschema.validate(manifest, load_schema("manifest"))
        assert len(manifest) == 5
        for en in manifest:
            assert (dataset / en["emission_path"]).exists()

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--out", str(a), "--count", "3", "--seed", "5"]) == 0
        assert main(["simulate", "--out", str(b), "--count", "3", "--seed", "5"]) == 0
        assert _tree(a) == _tree(b)


class TestAlign:
    def test_empty_manifest_succeeds_with_zero_outputs(self, tmp_path):
        m = tmp_path / "m.json"
        m.write_text("[]")
        out = tmp_path / "out"
        assert main(["align", "--manifest", str(m), "--out", str(out)]) == 0
        status = json.loads((out / "align" / "status.json").read_text())
        assert status == {"ok": [], "errors": {}}

    def test_align_outputs_validate(self, dataset, tmp_path):
        out = tmp_path / "pred"
        rc = main(
            ["align", "--manifest", str(dataset / "manifest.json"), "--out", str(out)]
        )
        assert rc == 0
        status = json.loads((out / "align" / "status.json").read_text())
        assert status["errors"] == {}
        seg_schema = load_schema("segments")
        word_schema = load_schema("words")
        for uid in status["ok"]:
            for k in range(4):
                base = out / "align" / uid / f"order{k}"
                jsonschema.validate(json.loads((base / "segments.json").read_text()), seg_schema)
                jsonschema.validate(json.loads((base / "words.json").read_text()), word_schema)

    def test_corrupt_emission_reported_but_others_proceed(self, dataset, tmp_path):
        manifest = json.loads((dataset / "manifest.json").read_text())
        bad = dataset / "broken.emit"
        bad.write_bytes(b"NOTAMAGICNUMBER!" + b"\x00" * 64)
        manifest[0] = dict(manifest[0], utterance_id="broken", emission_path="broken.emit")
        mpath = tmp_path / "manifest.json"
        mpath.write_text(json.dumps(manifest))
        # entry paths are relative to the manifest file
        for en in manifest:
            for key in list(en):
                if key.endswith("_path") and en[key].startswith(str(dataset)) is False:
                    en[key] = str(dataset / en[key]) if not os.path.isabs(en[key]) else en[key]
        mpath.write_text(json.dumps(manifest))
        out = tmp_path / "pred"
        rc = main(["align", "--manifest", str(mpath), "--out", str(out)])
        assert rc == 2
        status = json.loads((out / "align" / "status.json").read_text())
        assert "broken" in status["errors"]
        assert len(status["ok"]) == len(manifest) - 1

    def test_workers_give_same_artifacts(self, dataset, tmp_path):
        m = str(dataset / "manifest.json")
        a, b = tmp_path / "w1", tmp_path / "w2"
        assert main(["align", "--manifest", m, "--out", str(a), "--workers", "1"]) == 0
        assert main(["align", "--manifest", m, "--out", str(b), "--workers", "2"]) == 0
        assert _tree(a) == _tree(b)


class TestDetect:
    def test_detect_writes_events_and_transcripts(self, dataset, tmp_path):
        out = tmp_path / "pred"
        rc = main(
            ["detect", "--manifest", str(dataset / "manifest.json"), "--out", str(out)]
        )
        assert rc == 0
        schema = load_schema("events")
        docs = list((out / "detect").glob("*.events.json"))
        assert len(docs) == 5
        for p in docs:
            doc = json.loads(p.read_text())
            jsonschema.validate(doc, schema)
            assert "transcript" in doc  # hypothesis files ship with the dataset

    def test_missing_hypothesis_degrades_to_phoneme_only(self, dataset, tmp_path):
        manifest = json.loads((dataset / "manifest.json").read_text())
        for en in manifest:
            en.pop("hypothesis_path", None)
            for key in list(en):
                if key.endswith("_path"):
                    en[key] = str(dataset / en[key])
        mpath = tmp_path / "m.json"
        mpath.write_text(json.dumps(manifest))
        out = tmp_path / "pred"
        assert main(["detect", "--manifest", str(mpath), "--out", str(out)]) == 0
        doc = json.loads(next((out / "detect").glob("*.events.json")).read_text())
        assert "transcript" not in doc
        assert all(ev["level"] == "phoneme" for ev in doc["events"])


class TestEvaluateAndRun:
    def test_full_run_and_report(self, tmp_path):
        out = tmp_path / "run"
        rc = main(["run", "--out", str(out), "--count", "4", "--seed", "9"])
        assert rc == 0
        report = json.loads((out / "eval" / "report.json").read_text())
        jsonschema.validate(report, load_schema("report"))
        # noiseless defaults: transcription is perfect
        assert report["aggregate"]["per"] == 0.0
        assert report["aggregate"]["dper"] == 0.0
        assert report["aggregate"]["micro_f1"] == 1.0
        assert report["aggregate"]["iwer"] == 0.0
        assert (out / "eval" / "orders.csv").read_text().startswith("order,")

    def test_run_byte_identical_under_seed(self, tmp_path):
        a, b = tmp_path / "r1", tmp_path / "r2"
        for target in (a, b):
            rc = main(
                ["run", "--out", str(target), "--count", "3", "--seed", "4",
                 "--workers", "1"]
            )
            assert rc == 0
        assert _tree(a) == _tree(b)

    def test_empty_prediction_dir_lists_skipped(self, dataset, tmp_path):
        out = tmp_path / "eval"
        rc = main(
            ["evaluate", str(tmp_path / "nothing"), "--manifest",
             str(dataset / "manifest.json"), "--out", str(out)]
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert len(report["skipped"]) == 5
        assert report["aggregate"]["ms_f1"] == 0.0


class TestExitCodes:
    def test_usage_error(self, capsys):
        assert main(["align", "--out", "/tmp/x"]) == 1

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1

    def test_data_error(self, tmp_path):
        bad = tmp_path / "m.json"
        bad.write_text("{not json")
        assert main(["align", "--manifest", str(bad), "--out", str(tmp_path / "o")]) == 2
