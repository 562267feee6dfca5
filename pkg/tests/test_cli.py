import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from edgecough import registry
from edgecough.cli import main
from edgecough.evaluation import match_events, metrics
from edgecough.ingest import AudioSignal, write_wav
from edgecough.scheduler import AUDIO, KINEMATIC, ExecutionTrace
from edgecough.simkit import SweepRow, pareto_front


def run_cli(*argv):
    return main([str(a) for a in argv])


def run_args(fx, out, *extra):
    return ["run", "--audio", fx["audio"], "--imu", fx["imu"], "--audio-model", fx["audio_model"],
            "--kin-model", fx["kin_model"], "--meta", fx["meta"], "--annotations", fx["annotations"],
            "--out", out, *extra]


class TestRun:
    def test_multimodal_fixture(self, fixture_dir, tmp_path):
        assert run_cli(*run_args(fixture_dir, tmp_path / "o")) == 0
        events = json.loads((tmp_path / "o" / "events.json").read_text())
        truth = json.loads(fixture_dir["annotations"].read_text())["events"]
        assert events["count"] == 3
        for ev, t in zip(events["events"], truth):
            assert abs(ev["start"] - t["start"]) <= 0.25
            assert abs(ev["end"] - t["end"]) <= 0.25
        report = json.loads((tmp_path / "o" / "report.json").read_text())
        assert report["metrics"]["se"] == report["metrics"]["pr"] == 1.0
        assert report["energy"]["counts"]["audio"] > 0

    def test_audio_only(self, fixture_dir, tmp_path):
        assert run_cli(*run_args(fixture_dir, tmp_path / "o"), "--mode", "audio-only") == 0
        trace = ExecutionTrace.read(tmp_path / "o" / "trace.jsonl")
        assert trace.count(AUDIO) == len(trace.entries) > 0

    def test_kinematic_only(self, fixture_dir, tmp_path):
        args = run_args(fixture_dir, tmp_path / "o", "--mode", "kinematic-only")
        i = args.index("--audio-model")
        del args[i:i + 2]
        assert run_cli(*args) == 0
        trace = ExecutionTrace.read(tmp_path / "o" / "trace.jsonl")
        assert trace.count(KINEMATIC) == len(trace.entries)
        assert json.loads((tmp_path / "o" / "events.json").read_text())["count"] == 3

    def test_missing_model_file(self, fixture_dir, tmp_path, capsys):
        args = run_args(fixture_dir, tmp_path / "o")
        args[args.index("--audio-model") + 1] = tmp_path / "nope.json"
        assert run_cli(*args) == 2
        assert "nope.json" in capsys.readouterr().err

    def test_missing_model_flag(self, fixture_dir, tmp_path, capsys):
        args = run_args(fixture_dir, tmp_path / "o")
        i = args.index("--kin-model")
        del args[i:i + 2]
        assert run_cli(*args) == 2
        assert "--kin-model" in capsys.readouterr().err

    def test_module_error_exit_one(self, fixture_dir, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"modality": "audio", "feature_names": ["audio/nope"], "trees": []}))
        args = run_args(fixture_dir, tmp_path / "o")
        args[args.index("--audio-model") + 1] = bad
        assert run_cli(*args) == 1
        err = capsys.readouterr().err
        assert err.startswith("edgecough: inference") and "audio/nope" in err

    def test_config_file_and_flag_precedence(self, fixture_dir, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text('n_windows_max = 2\nth_audio = 0.4\n[postproc]\ndecay = 0.6\n')
        assert run_cli(*run_args(fixture_dir, tmp_path / "o"), "--config", cfg, "--th-audio", "0.35") == 0
        conf = json.loads((tmp_path / "o" / "report.json").read_text())["config"]
        assert conf["scheduler"]["n_windows_max"] == 2
        assert conf["scheduler"]["th_audio"] == 0.35
        assert conf["postproc"]["decay"] == 0.6

    def test_unknown_config_key(self, fixture_dir, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("bogus = 1\n")
        assert run_cli(*run_args(fixture_dir, tmp_path / "o"), "--config", cfg) == 1

    def test_deterministic_apart_from_timestamp(self, fixture_dir, tmp_path):
        for name in ("a", "b"):
            assert run_cli(*run_args(fixture_dir, tmp_path / name)) == 0
        for f in ("events.json", "trace.jsonl"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        ra, rb = (json.loads((tmp_path / n / "report.json").read_text()) for n in "ab")
        for r in (ra, rb):
            r.pop("generated_at")
            for k in ("events_file", "trace_file"):
                r.pop(k)
        assert ra == rb


class TestScore:
    def write(self, path, events):
        path.write_text(json.dumps({"events": [{"start": s, "end": e} for s, e in events]}))
        return path

    def test_identical(self, tmp_path, capsys):
        ev = [(1.0, 1.3), (4.0, 4.2)]
        p, t = self.write(tmp_path / "p.json", ev), self.write(tmp_path / "t.json", ev)
        assert run_cli("score", "--pred", p, "--truth", t, "--duration", 60, "--out", tmp_path / "r.json") == 0
        rep = json.loads((tmp_path / "r.json").read_text())
        assert (rep["se"], rep["pr"], rep["f1"], rep["fp_per_hour"]) == (1.0, 1.0, 1.0, 0.0)
        assert "F1" in capsys.readouterr().out

    def test_empty_prediction(self, tmp_path):
        p, t = self.write(tmp_path / "p.json", []), self.write(tmp_path / "t.json", [(1.0, 1.3)])
        run_cli("score", "--pred", p, "--truth", t, "--duration", 60, "--out", tmp_path / "r.json")
        rep = json.loads((tmp_path / "r.json").read_text())
        assert rep["se"] == 0.0 and rep["fp_per_hour"] == 0.0

    def test_matches_library(self, tmp_path, rng):
        truth = [(float(i) * 3, float(i) * 3 + 0.3) for i in range(10)]
        pred = []
        for s, e in truth:
            a = s + float(rng.uniform(-0.4, 0.4))
            pred.append((a, max(a + 0.05, e + float(rng.uniform(-0.4, 0.4)))))
        pred.sort()
        p, t = self.write(tmp_path / "p.json", pred), self.write(tmp_path / "t.json", truth)
        run_cli("score", "--pred", p, "--truth", t, "--duration", 1800, "--out", tmp_path / "r.json")
        rep = json.loads((tmp_path / "r.json").read_text())
        assert rep == json.loads(json.dumps(metrics(match_events(pred, truth), 0.5).to_dict()))

    def test_manifest_scenarios(self, tmp_path):
        entries = []
        for i, tag in enumerate(("music", "quiet")):
            p = self.write(tmp_path / f"p{i}.json", [(1.0, 1.2), (5.0, 5.2)])
            t = tmp_path / f"t{i}.json"
            t.write_text(json.dumps({"events": [{"start": 1.0, "end": 1.2}], "scenario": tag}))
            entries.append({"pred": p.name, "truth": t.name, "duration_s": 1800})
        (tmp_path / "m.json").write_text(json.dumps(entries))
        assert run_cli("score", "--manifest", tmp_path / "m.json", "--out", tmp_path / "r.json") == 0
        rep = json.loads((tmp_path / "r.json").read_text())
        assert rep["tp"] == 2 and rep["fp"] == 2
        assert set(rep["scenarios"]) == {"music", "quiet"}

    def test_missing_truth_file(self, tmp_path):
        p = self.write(tmp_path / "p.json", [])
        assert run_cli("score", "--pred", p, "--truth", tmp_path / "x.json", "--duration", 1) == 2


class TestFeatures:
    def test_audio(self, fixture_dir, capsys):
        assert run_cli("features", "--audio", fixture_dir["audio"]) == 0
        rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
        assert rows[0] == list(registry.audio_feature_names("mel"))
        assert len(rows[0]) == 293 and len(rows) == 1 + 24

    def test_mfcc_with_times(self, fixture_dir, capsys):
        run_cli("features", "--audio", fixture_dir["audio"], "--variant", "mfcc", "--with-times")
        header = next(csv.reader(io.StringIO(capsys.readouterr().out)))
        assert header[:2] == ["t_start", "t_end"] and len(header) == 2 + 89

    def test_kinematic(self, fixture_dir, tmp_path):
        assert run_cli("features", "--imu", fixture_dir["imu"], "--out", tmp_path / "k.csv") == 0
        rows = list(csv.reader((tmp_path / "k.csv").open()))
        assert len(rows[0]) == 106 and len(rows) == 1 + 39

    def test_empty_audio(self, tmp_path, capsys):
        write_wav(tmp_path / "e.wav", AudioSignal(np.zeros(0), 8000.0))
        assert run_cli("features", "--audio", tmp_path / "e.wav") == 0
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 1 and out[0].count(",") == 292


class TestSimulate:
    def test_reference_totals(self, capsys):
        assert run_cli("simulate", "--reference-totals") == 0
        out = capsys.readouterr().out
        assert "70.56" in out

    def test_explicit_totals(self, tmp_path):
        assert run_cli("simulate", "--totals", "audio=36.99,kinematic=2.76,multimodal=10.89",
                       "--out", tmp_path / "s.json") == 0
        doc = json.loads((tmp_path / "s.json").read_text())
        assert json.dumps(doc)
        flat = json.dumps(doc)
        assert "70.5596" in flat

    def test_trace(self, fixture_dir, tmp_path):
        run_cli(*run_args(fixture_dir, tmp_path / "o"))
        assert run_cli("simulate", "--trace", tmp_path / "o" / "trace.jsonl", "--duration", 10,
                       "--out", tmp_path / "s.json") == 0
        doc = json.loads((tmp_path / "s.json").read_text())
        report = json.loads((tmp_path / "o" / "report.json").read_text())
        assert doc["energy_j"] == pytest.approx(report["energy"]["energy_j"])


class TestSweep:
    def args(self, fx, *extra):
        return ["sweep", "--audio", fx["audio"], "--imu", fx["imu"], "--annotations", fx["annotations"],
                "--meta", fx["meta"], "--audio-model", fx["audio_model"], "--kin-model", fx["kin_model"], *extra]

    def test_single_point(self, fixture_dir, capsys):
        assert run_cli(*self.args(fixture_dir, "--th-kin-grid", "0.05", "--th-audio-grid", "0.3")) == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert len(rows) == 1
        assert float(rows[0]["f1"]) == 1.0

    def test_pareto_column(self, fixture_dir, tmp_path):
        assert run_cli(*self.args(fixture_dir, "--modes", "rerun,no_rerun", "--n-max", "1,4",
                                  "--th-kin-grid", "0.05,0.5", "--th-audio-grid", "0.3:0.6:0.3",
                                  "--pareto", "--out", tmp_path / "s.csv")) == 0
        rows = list(csv.DictReader((tmp_path / "s.csv").open()))
        assert len(rows) == 16
        objs = [SweepRow(r["mode"], int(r["n_windows_max"]), float(r["th_kin"]), float(r["th_audio"]),
                         float(r["f1"]), float(r["energy_j"]), 0.0, 0.0) for r in rows]
        front = {id(o) for o in pareto_front(objs)}
        assert [r["pareto"] == "1" for r in rows] == [id(o) in front for o in objs]


class TestMisc:
    def test_fixture_command(self, tmp_path):
        assert run_cli("fixture", "--out", tmp_path / "f", "--seed", 3) == 0
        assert {p.name for p in (tmp_path / "f").iterdir()} == {
            "audio.wav", "imu.csv", "annotations.json", "meta.json", "audio_model.json", "kin_model.json"}

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "edgecough", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        for cmd in ("run", "score", "features", "simulate", "sweep"):
            assert cmd in out.stdout
