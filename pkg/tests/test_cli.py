import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from jsonschema import Draft202012Validator

from ugcaudio import AudioClip, PROCESS_RATE, encode_wav, load_index, load_model
from ugcaudio.cli import main, matches_from_doc

SCHEMA_DIR = Path(__file__).resolve().parent.parent / "docs"


def load_schema(name: str) -> Draft202012Validator:
    schema = json.loads((SCHEMA_DIR / name).read_text(encoding="utf-8"))
    Draft202012Validator.check_schema(schema)
    return Draft202012Validator(schema)


@pytest.fixture(scope="module")
def train_corpus(tmp_path_factory):
    """Corpus with repetitions so autolabel yields both classes."""
    out = tmp_path_factory.mktemp("train_corpus")
    rc = main(
        [
            "synth",
            "--events", "5",
            "--clips", "5",
            "--event-duration", "60",
            "--clip-duration", "12", "20",
            "--min-overlap", "8",
            "--snr", "18", "28",
            "--seed", "3",
            "--repeat-fraction", "0.35",
            "--cross-snippet", "1.5",
            "--out", str(out),
        ]
    )
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("small_corpus")
    rc = main(
        [
            "synth",
            "--events", "2",
            "--clips", "3",
            "--event-duration", "30",
            "--clip-duration", "8", "12",
            "--min-overlap", "4",
            "--snr", "18", "25",
            "--seed", "5",
            "--out", str(out),
        ]
    )
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def indexed(train_corpus, tmp_path_factory):
    idx = tmp_path_factory.mktemp("idx") / "corpus.idx"
    wavs = sorted(str(p) for p in train_corpus.glob("*.wav"))
    assert main(["index", *wavs, "--out", str(idx)]) == 0
    return idx, wavs


@pytest.fixture(scope="module")
def matches_file(indexed, tmp_path_factory):
    idx, wavs = indexed
    out = tmp_path_factory.mktemp("matches") / "matches.json"
    assert main(["match", *wavs, "--index", str(idx), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained_model(train_corpus, matches_file, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("model")
    model = out_dir / "model.txt"
    report = out_dir / "cv.json"
    rc = main(
        [
            "train",
            "--matches", str(matches_file),
            "--manifest", str(train_corpus / "manifest.json"),
            "--family", "knn",
            "--subset", "S1",
            "--seed", "0",
            "--out", str(model),
            "--report", str(report),
        ]
    )
    assert rc == 0
    return model, report


class TestSynth:
    def test_writes_wavs_and_manifest(self, small_corpus):
        wavs = sorted(small_corpus.glob("*.wav"))
        assert len(wavs) == 6
        assert wavs[0].name == "event00_c00.wav"
        manifest = json.loads((small_corpus / "manifest.json").read_text())
        assert sorted(manifest["clips"]) == [p.stem for p in wavs]

    def test_rerun_is_byte_identical(self, small_corpus, tmp_path):
        again = tmp_path / "again"
        rc = main(
            [
                "synth",
                "--events", "2", "--clips", "3",
                "--event-duration", "30",
                "--clip-duration", "8", "12",
                "--min-overlap", "4",
                "--snr", "18", "25",
                "--seed", "5",
                "--out", str(again),
            ]
        )
        assert rc == 0
        for name in ("event00_c00.wav", "event01_c02.wav", "manifest.json"):
            assert (again / name).read_bytes() == (small_corpus / name).read_bytes()

    def test_infeasible_layout_exits_3(self, tmp_path, capsys):
        rc = main(
            [
                "synth",
                "--events", "1", "--clips", "2",
                "--event-duration", "5",
                "--clip-duration", "8", "12",
                "--min-overlap", "4",
                "--out", str(tmp_path / "x"),
            ]
        )
        assert rc == 3
        assert "error" in capsys.readouterr().err

    def test_env_seed_overrides_flag(self, tmp_path, monkeypatch):
        flags = [
            "synth", "--events", "1", "--clips", "2",
            "--event-duration", "20", "--clip-duration", "6", "8",
            "--min-overlap", "2",
        ]
        a = tmp_path / "a"
        monkeypatch.setenv("UGC_SEED", "999")
        assert main([*flags, "--seed", "0", "--out", str(a)]) == 0
        monkeypatch.delenv("UGC_SEED")
        b = tmp_path / "b"
        assert main([*flags, "--seed", "999", "--out", str(b)]) == 0
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
        assert (a / "event00_c00.wav").read_bytes() == (b / "event00_c00.wav").read_bytes()

    def test_bad_env_seed_exits_3(self, tmp_path, monkeypatch):
        monkeypatch.setenv("UGC_SEED", "not-a-number")
        rc = main(
            ["synth", "--events", "1", "--clips", "2", "--event-duration", "20",
             "--clip-duration", "6", "8", "--min-overlap", "2", "--out", str(tmp_path / "x")]
        )
        assert rc == 3


class TestIndex:
    def test_index_contains_all_clips(self, indexed):
        idx, wavs = indexed
        loaded = load_index(str(idx))
        assert loaded.clip_ids == [Path(w).stem for w in wavs]
        assert all(loaded.landmark_counts[c] > 0 for c in loaded.clip_ids)
        assert all(loaded.durations[c] > 0 for c in loaded.clip_ids)

    def test_silent_clip_skipped_with_warning(self, tmp_path, capsys):
        silent = AudioClip(
            id="quiet", samples=np.zeros(PROCESS_RATE, dtype=np.float64), rate=PROCESS_RATE
        )
        wav = tmp_path / "quiet.wav"
        wav.write_bytes(encode_wav(silent))
        out = tmp_path / "one.idx"
        assert main(["index", str(wav), "--out", str(out)]) == 0
        assert "no landmarks" in capsys.readouterr().err
        assert load_index(str(out)).clip_ids == []

    def test_missing_file_exits_2(self, tmp_path):
        assert main(["index", str(tmp_path / "ghost.wav"), "--out", str(tmp_path / "o.idx")]) == 2

    def test_unknown_config_key_exits_3(self, small_corpus, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus = 3\n")
        wav = str(next(iter(sorted(small_corpus.glob("*.wav")))))
        rc = main(["index", wav, "--config", str(cfg), "--out", str(tmp_path / "o.idx")])
        assert rc == 3
        assert "unknown key" in capsys.readouterr().err


class TestMatch:
    def test_matches_written(self, matches_file, indexed):
        _, wavs = indexed
        doc = json.loads(matches_file.read_text())
        assert [q["query"] for q in doc["queries"]] == [Path(w).stem for w in wavs]
        entries = [e for q in doc["queries"] for e in q["entries"]]
        assert entries, "overlapping corpus must produce matches"
        for q in doc["queries"]:
            for e in q["entries"]:
                assert e["clip"] != q["query"]
                assert e["ml"] >= 5  # default match threshold
                assert e["tml"] >= e["ml"]

    def test_round_trips_through_loader(self, matches_file):
        doc = json.loads(matches_file.read_text())
        lists = matches_from_doc(doc)
        assert len(lists) == len(doc["queries"])
        total = sum(len(ml.entries) for ml in lists)
        assert total == sum(len(q["entries"]) for q in doc["queries"])

    def test_stdout_mode(self, indexed, capsys):
        idx, wavs = indexed
        assert main(["match", wavs[0], "--index", str(idx)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["queries"][0]["query"] == Path(wavs[0]).stem

    def test_usage_error_exits_2(self):
        assert main(["match"]) == 2


class TestTrain:
    def test_model_and_report_written(self, trained_model):
        model_path, report_path = trained_model
        flt, meta = load_model(str(model_path))
        assert flt.family == "knn"
        assert flt.subset.name == "S1"
        assert set(meta) == {"accuracy", "val_error", "wrong_fps", "degraded"}
        assert 0.0 <= meta["accuracy"] <= 1.0
        report = json.loads(report_path.read_text())
        assert len(report["results"]) == 20  # odd k 1..39
        assert report["chosen"]["family"] == "knn"
        assert report["chosen"]["wrong_fps"] == meta["wrong_fps"]

    def test_missing_manifest_exits_2(self, matches_file, tmp_path):
        rc = main(
            [
                "train",
                "--matches", str(matches_file),
                "--manifest", str(tmp_path / "ghost.json"),
                "--out", str(tmp_path / "m.txt"),
            ]
        )
        assert rc == 2


class TestClassify:
    def test_predictions_cover_all_entries(self, trained_model, matches_file, tmp_path):
        model_path, _ = trained_model
        out = tmp_path / "preds.json"
        rc = main(
            ["classify", "--model", str(model_path), "--matches", str(matches_file),
             "--out", str(out)]
        )
        assert rc == 0
        doc = json.loads(out.read_text())
        matches = json.loads(matches_file.read_text())
        total = sum(len(q["entries"]) for q in matches["queries"])
        assert len(doc["predictions"]) == total
        assert all(p["predicted_class"] in (0, 1) for p in doc["predictions"])


class TestPipeline:
    def test_report_matches_schema_and_partitions_clips(self, small_corpus, tmp_path):
        out = tmp_path / "report.json"
        assert main(["pipeline", "--in", str(small_corpus), "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        load_schema("report.schema.json").validate(report)

        placed = [c["id"] for ev in report["events"] for c in ev["clips"]]
        all_ids = sorted(p.stem for p in small_corpus.glob("*.wav"))
        assert sorted(placed + report["unmatched"]) == all_ids
        assert report["classifier"] is None

        truth = json.loads((small_corpus / "manifest.json").read_text())["clips"]
        for ev in report["events"]:
            events_of = {truth[c["id"]]["event_id"] for c in ev["clips"]}
            assert len(events_of) == 1  # no cluster mixes true events
            for c in ev["clips"]:
                assert c["position"] >= 0.0

    def test_single_clip_corpus(self, small_corpus, tmp_path, capsys):
        solo_dir = tmp_path / "solo"
        solo_dir.mkdir()
        src = next(iter(sorted(small_corpus.glob("*.wav"))))
        (solo_dir / src.name).write_bytes(src.read_bytes())
        assert main(["pipeline", "--in", str(solo_dir)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert len(report["events"]) == 1
        (ev,) = report["events"]
        assert [c["id"] for c in ev["clips"]] == [src.stem]
        assert len(ev["segments"]) == 1
        assert ev["segments"][0]["quality"] == [{"clip": src.stem, "score": 0}]
        assert report["unmatched"] == []

    def test_model_meta_lands_in_report(self, small_corpus, trained_model, tmp_path):
        model_path, _ = trained_model
        out = tmp_path / "report.json"
        rc = main(
            ["pipeline", "--in", str(small_corpus), "--model", str(model_path),
             "--out", str(out)]
        )
        assert rc == 0
        report = json.loads(out.read_text())
        meta = report["classifier"]
        assert meta["family"] == "knn"
        assert meta["subset"] == "S1"
        assert "accuracy" in meta

    def test_emit_cuts_names_by_millisecond(self, small_corpus, tmp_path):
        cuts_dir = tmp_path / "cuts"
        out = tmp_path / "report.json"
        rc = main(
            ["pipeline", "--in", str(small_corpus), "--out", str(out),
             "--emit-cuts", str(cuts_dir)]
        )
        assert rc == 0
        report = json.loads(out.read_text())
        expected = set()
        for ev in report["events"]:
            for seg in ev["segments"]:
                for m in seg["members"]:
                    ms0 = round(m["local_start"] * 1000)
                    ms1 = round(m["local_end"] * 1000)
                    expected.add(f"{m['clip']}__{ms0}_{ms1}.wav")
        produced = {p.name for p in cuts_dir.glob("*.wav")}
        assert produced == expected
        assert produced, "expected at least one cut"

    def test_missing_corpus_dir_exits_2(self, tmp_path):
        assert main(["pipeline", "--in", str(tmp_path / "ghost")]) == 2

    def test_no_corpus_dir_exits_2(self, capsys):
        assert main(["pipeline"]) == 2
        assert "corpus" in capsys.readouterr().err


def test_console_script_help_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "ugcaudio.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "synth" in proc.stdout
