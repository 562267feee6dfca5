"""Command-line entry point: ``edgecough {run,score,features,simulate,sweep,fixture}``.

Exit codes: 0 on success, 1 on a pipeline error (message prefixed with the
failing module), 2 on usage errors and missing input files.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

from . import __version__, registry
from .dsp_audio import AudioFeatureConfig, extract_audio_features
from .dsp_kinematic import extract_kinematic_features
from .errors import ConfigError, PipelineError
from .evaluation import TOLERANCE_S, match_events, metrics, pool
from .fixtures import write_fixture
from .inference import load_model
from .ingest import (AudioSignal, SubjectMeta, decimate, frame_stream, load_recording, read_annotations,
                     read_imu_csv, read_meta, read_wav)
from .postproc import FLUSH_PERIOD_S, PhysioConstants, delineate_windows, events_document
from .scheduler import ExecutionTrace, SchedulerConfig, run_session, run_single_model
from .simkit import (CostTable, Grid, SweepSession, estimate, reference_cost_table, savings_report,
                     session_from_streams, sweep, sweep_csv, threshold_axis)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

RUN_MODES = ("multimodal", "audio-only", "kinematic-only")


class UsageError(Exception):
    pass


# --- configuration -----------------------------------------------------------

def read_config(path) -> dict:
    """TOML or JSON config; scheduler fields at top level, optional [postproc] and [audio] tables."""
    if path is None:
        return {}
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(text)
        else:
            doc = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}", module="cli") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a table/object", module="cli")
    return doc


def _pick(cls, doc, where):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown {where} setting(s): {', '.join(unknown)}", module="cli")
    return doc


def resolve_config(args, file_doc: dict):
    """Merge defaults < config file < command-line flags."""
    file_doc = dict(file_doc)
    post_doc = file_doc.pop("postproc", {}) or {}
    audio_doc = file_doc.pop("audio", {}) or {}
    sched = dict(_pick(SchedulerConfig, file_doc, "scheduler"))
    for name in ("n_windows_max", "th_kin", "th_audio", "audio_hop", "kin_hop"):
        value = getattr(args, name, None)
        if value is not None:
            sched[name] = value
    if getattr(args, "rerun_mode", None) is not None:
        sched["mode"] = args.rerun_mode
    post = dict(_pick(PhysioConstants, post_doc, "postproc"))
    audio = dict(_pick(AudioFeatureConfig, audio_doc, "audio"))
    return SchedulerConfig(**sched), PhysioConstants(**post), AudioFeatureConfig(**audio)


def _add_scheduler_flags(p):
    g = p.add_argument_group("scheduler (override the config file)")
    g.add_argument("--rerun-mode", choices=("rerun", "no_rerun"), help="audio anchoring after a kinematic trigger")
    g.add_argument("--n-windows-max", type=int, help="maximum consecutive audio windows per run")
    g.add_argument("--th-kin", type=float, help="kinematic cough threshold")
    g.add_argument("--th-audio", type=float, help="audio cough threshold")
    g.add_argument("--audio-hop", type=float, help="audio hop in seconds")
    g.add_argument("--kin-hop", type=float, help="kinematic hop in seconds")
    g.add_argument("--config", help="TOML (or JSON) config file")


# --- helpers -----------------------------------------------------------------

def _require(path, what):
    if path is not None and not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _events_from_windows(windows) -> list[dict]:
    """Merge overlapping positive windows into intervals (kinematic-only mode)."""
    spans = []
    for w in windows:
        if spans and w.t_start <= spans[-1][1]:
            spans[-1][1] = max(spans[-1][1], w.t_end)
        else:
            spans.append([w.t_start, w.t_end])
    return [{"start": round(s, 6), "peak": round(0.5 * (s + e), 6), "end": round(e, 6)} for s, e in spans]


def _read_events(path):
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or not isinstance(doc.get("events"), list):
        raise ConfigError(f"{path}: expected an object with an 'events' list", module="cli")
    return [(float(e["start"]), float(e["end"])) for e in doc["events"]]


def _metric_table(report: dict) -> str:
    rows = [("SE", f"{report['se']:.4f}"), ("PR", f"{report['pr']:.4f}"), ("F1", f"{report['f1']:.4f}"),
            ("FP/h", f"{report['fp_per_hour']:.2f}"), ("TP", str(report["tp"])), ("FP", str(report["fp"])),
            ("FN", str(report["fn"]))]
    return "\n".join(f"{k:<5} {v}" for k, v in rows) + "\n"


# --- subcommands -------------------------------------------------------------

def cmd_run(args) -> int:
    for what in ("audio", "imu", "config", "meta", "annotations", "costs"):
        _require(getattr(args, what), what.replace("_", " ") + " file")
    for flag, path, skip in (("--audio-model", args.audio_model, "kinematic-only"),
                             ("--kin-model", args.kin_model, "audio-only")):
        if args.mode != skip:
            if path is None:
                raise UsageError(f"{args.mode} mode needs {flag}")
            _require(path, "model file")
    sched, constants, audio_cfg = resolve_config(args, read_config(args.config))
    audio, kin, truth, meta = load_recording(args.audio, args.imu, args.annotations, args.meta)
    audio_model = load_model(args.audio_model) if args.mode != "kinematic-only" else None
    kin_model = load_model(args.kin_model) if args.mode != "audio-only" else None
    if audio_model is not None:
        audio = _resample(audio, audio_model.fs)

    if args.mode == "multimodal":
        result = run_session(audio, kin, audio_model, kin_model, sched, meta, audio_cfg)
    elif args.mode == "audio-only":
        result = run_single_model(audio, audio_model, sched, meta, audio_cfg)
    else:
        result = run_single_model(kin, kin_model, sched, meta)
    if args.mode == "kinematic-only":
        events = _events_from_windows(result.cough_windows)
        events_doc = {"events": events, "count": len(events)}
    else:
        events_doc = events_document(delineate_windows(result.cough_windows, constants, args.flush_period))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    events_path, trace_path, report_path = out / "events.json", out / "trace.jsonl", out / "report.json"
    events_path.write_text(_dump(events_doc))
    result.trace.write(trace_path)

    costs = CostTable.load(args.costs) if args.costs else reference_cost_table()
    report = {
        "edgecough_version": __version__,
        "mode": args.mode,
        "inputs": {"audio": str(args.audio), "imu": str(args.imu), "audio_model": _opt(args.audio_model),
                   "kin_model": _opt(args.kin_model), "annotations": _opt(args.annotations)},
        "config": {"scheduler": asdict(sched), "postproc": asdict(constants), "audio": asdict(audio_cfg)},
        "events_file": str(events_path),
        "trace_file": str(trace_path),
        "event_count": events_doc["count"],
        "energy": estimate(result.trace, costs).to_dict(),
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    if args.annotations:
        pred = [(e["start"], e["end"]) for e in events_doc["events"]]
        hours = result.trace.duration / 3600.0
        report["metrics"] = metrics(match_events(pred, truth, args.tol), hours).to_dict()
    report_path.write_text(_dump(report))
    print(f"{events_doc['count']} events -> {events_path}", file=sys.stderr)
    return 0


def _opt(value):
    return None if value is None else str(value)


def _resample(audio: AudioSignal, target_fs: float) -> AudioSignal:
    if abs(audio.fs - target_fs) < 1e-6:
        return audio
    ratio = audio.fs / target_fs
    factor = int(round(ratio))
    if factor < 2 or abs(ratio - factor) > 1e-9:
        raise ConfigError(f"cannot resample {audio.fs:g} Hz audio to {target_fs:g} Hz by decimation", module="cli")
    return decimate(audio, factor)


def cmd_score(args) -> int:
    """Pooled event metrics; a manifest adds a per-scenario breakdown."""
    items = []
    if args.manifest:
        _require(args.manifest, "manifest")
        base = Path(args.manifest).parent
        for entry in json.loads(Path(args.manifest).read_text()):
            pred_path, truth_path = base / entry["pred"], base / entry["truth"]
            _require(pred_path, "predicted events file")
            _require(truth_path, "annotation file")
            items.append((_read_events(pred_path), read_annotations(truth_path), float(entry["duration_s"])))
    else:
        if not (args.pred and args.truth and args.duration):
            raise UsageError("score needs --pred, --truth and --duration, or --manifest")
        _require(args.pred, "predicted events file")
        _require(args.truth, "annotation file")
        items.append((_read_events(args.pred), read_annotations(args.truth), float(args.duration)))

    results = [(match_events(p, t, args.tol), t.scenario, d) for p, t, d in items]
    total_h = sum(d for *_, d in results) / 3600.0
    report = metrics(pool(r for r, *_ in results), total_h).to_dict()
    scenarios = {}
    for r, tag, d in results:
        if tag is not None:
            scenarios.setdefault(tag, []).append((r, d))
    if scenarios:
        report["scenarios"] = {
            tag: metrics(pool(r for r, _ in group), sum(d for _, d in group) / 3600.0).to_dict()
            for tag, group in sorted(scenarios.items())
        }
    sys.stdout.write(_metric_table(report))
    if args.out:
        Path(args.out).write_text(_dump(report))
    return 0


def cmd_features(args) -> int:
    if (args.audio is None) == (args.imu is None):
        raise UsageError("features needs exactly one of --audio or --imu")
    src = args.audio or args.imu
    _require(src, "input file")
    _require(args.meta, "meta file")
    meta = read_meta(args.meta) if args.meta else SubjectMeta()
    empty = Path(src).stat().st_size == 0
    if args.audio is not None:
        cfg = AudioFeatureConfig(fs=args.fs, variant=args.variant)
        names = registry.audio_feature_names(args.variant)
        window, hop = args.window or 0.8, args.hop or 0.4
        cfg = replace(cfg, window_len=window)
        windows = [] if empty else frame_stream(_resample(read_wav(src), args.fs), window, hop)
        extract = lambda w: extract_audio_features(w, None, meta, cfg)  # noqa: E731
    else:
        names = registry.kinematic_feature_names()
        window, hop = args.window or 0.5, args.hop or 0.25
        windows = [] if empty else frame_stream(read_imu_csv(src), window, hop)
        extract = lambda w: extract_kinematic_features(w, None, meta, window)  # noqa: E731

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    prefix = ["t_start", "t_end"] if args.with_times else []
    writer.writerow(prefix + list(names))
    for w in windows:
        feats = extract(w)
        times = [repr(round(w.t_start, 9)), repr(round(w.t_end, 9))] if args.with_times else []
        writer.writerow(times + [repr(float(feats[n])) for n in names])
    _emit(buf.getvalue(), args.out)
    return 0


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _parse_totals(spec: str) -> dict:
    totals = {}
    for part in spec.split(","):
        name, _, value = part.partition("=")
        if not value:
            raise UsageError(f"--totals expects name=joules pairs, got {part!r}")
        totals[name.strip()] = float(value)
    return totals


def cmd_simulate(args) -> int:
    if args.totals or args.reference_totals:
        totals = _parse_totals(args.totals) if args.totals else dict(reference_cost_table().notes["totals_j"])
        savings = savings_report(totals, args.baseline)
        for name, pct in savings.items():
            if name != args.baseline:
                sys.stdout.write(f"{name}: {pct:.2f}% energy saving vs {args.baseline}\n")
        if args.out:
            Path(args.out).write_text(_dump({"totals_j": totals, "baseline": args.baseline, "saving_pct": savings}))
        return 0
    if not args.trace:
        raise UsageError("simulate needs --trace, --totals or --reference-totals")
    _require(args.trace, "trace file")
    _require(args.costs, "cost table")
    trace = ExecutionTrace.read(args.trace, args.duration)
    costs = CostTable.load(args.costs) if args.costs else reference_cost_table()
    _emit(_dump(estimate(trace, costs).to_dict()), args.out)
    return 0


def _axis(spec, cast=float):
    """``0.05:0.5:0.05`` (inclusive range) or ``0.1,0.2``."""
    if spec is None:
        return None
    if ":" in spec:
        lo, hi, step = (float(x) for x in spec.split(":"))
        return tuple(cast(v) for v in threshold_axis(lo, hi, step))
    return tuple(cast(x) for x in spec.split(",") if x.strip())


def cmd_sweep(args) -> int:
    for what in ("audio_model", "kin_model", "costs", "config", "manifest"):
        _require(getattr(args, what), what.replace("_", " "))
    base, constants, audio_cfg = resolve_config(args, read_config(args.config))
    audio_model, kin_model = load_model(args.audio_model), load_model(args.kin_model)
    if args.manifest:
        root = Path(args.manifest).parent
        entries = [{k: (str(root / v) if v else v) for k, v in e.items()}
                   for e in json.loads(Path(args.manifest).read_text())]
    elif args.audio and args.imu:
        entries = [{"audio": args.audio, "imu": args.imu, "annotations": args.annotations, "meta": args.meta}]
    else:
        raise UsageError("sweep needs --audio and --imu, or --manifest")
    sessions: list[SweepSession] = []
    for e in entries:
        for key in ("audio", "imu", "annotations", "meta"):
            _require(e.get(key), key + " file")
        audio, kin, truth, meta = load_recording(e["audio"], e["imu"], e.get("annotations"), e.get("meta"))
        audio = _resample(audio, audio_model.fs)
        sessions.append(session_from_streams(audio, kin, audio_model, kin_model, truth.events, meta, audio_cfg, base))
    defaults = Grid()
    grid = Grid(
        modes=_axis(args.modes, str) or (base.mode,),
        n_windows_max=_axis(args.n_max, int) or (base.n_windows_max,),
        th_kin=_axis(args.th_kin_grid) or defaults.th_kin,
        th_audio=_axis(args.th_audio_grid) or defaults.th_audio,
    )
    costs = CostTable.load(args.costs) if args.costs else reference_cost_table()
    rows = sweep(sessions, grid, costs, base, constants, jobs=args.jobs)
    _emit(sweep_csv(rows, mark_pareto=args.pareto), args.out)
    return 0


def cmd_fixture(args) -> int:
    paths = write_fixture(args.out, args.seed, args.events, args.duration, args.noise)
    sys.stdout.write(_dump({k: str(v) for k, v in paths.items()}))
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgecough", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the pipeline on one recording")
    p.add_argument("--audio", required=True, help="16-bit mono WAV")
    p.add_argument("--imu", required=True, help="kinematic CSV (t,ax,ay,az,yaw,pitch,roll)")
    p.add_argument("--audio-model", help="audio model JSON")
    p.add_argument("--kin-model", help="kinematic model JSON")
    p.add_argument("--meta", help="subject metadata JSON")
    p.add_argument("--annotations", help="ground-truth JSON; adds metrics to the report")
    p.add_argument("--costs", help="cost table JSON (default: shipped derived table)")
    p.add_argument("--mode", choices=RUN_MODES, default="multimodal", help="which models run (default multimodal)")
    p.add_argument("--flush-period", type=float, default=FLUSH_PERIOD_S, help="event flush cadence in seconds")
    p.add_argument("--tol", type=float, default=TOLERANCE_S, help="event matching tolerance in seconds")
    p.add_argument("--out", required=True, help="output directory")
    _add_scheduler_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", help="event-based metrics of predictions against annotations")
    p.add_argument("--pred", help="events JSON")
    p.add_argument("--truth", help="annotation JSON")
    p.add_argument("--duration", type=float, help="recording duration in seconds")
    p.add_argument("--manifest", help="JSON list of {pred, truth, duration_s}; scenarios come from annotation tags")
    p.add_argument("--tol", type=float, default=TOLERANCE_S, help="matching tolerance in seconds")
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("features", help="dump unmasked per-window features as CSV")
    p.add_argument("--audio", help="16-bit mono WAV")
    p.add_argument("--imu", help="kinematic CSV")
    p.add_argument("--meta", help="subject metadata JSON")
    p.add_argument("--window", type=float, help="window length in seconds (0.8 audio, 0.5 kinematic)")
    p.add_argument("--hop", type=float, help="hop in seconds (0.4 audio, 0.25 kinematic)")
    p.add_argument("--fs", type=float, default=8000.0, help="audio rate for extraction; input is decimated to it")
    p.add_argument("--variant", choices=("mel", "mfcc"), default="mel", help="audio band features")
    p.add_argument("--with-times", action="store_true", help="prepend t_start,t_end columns")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("simulate", help="energy/runtime estimate from a trace, or savings from totals")
    p.add_argument("--trace", help="trace JSONL")
    p.add_argument("--costs", help="cost table JSON (default: shipped derived table)")
    p.add_argument("--duration", type=float, help="session duration in seconds (default: trace span)")
    p.add_argument("--totals", help="name=joules pairs, e.g. audio=36.99,multimodal=10.89")
    p.add_argument("--reference-totals", action="store_true", help="use the published totals shipped with the package")
    p.add_argument("--baseline", default="audio", help="configuration savings are measured against")
    p.add_argument("--out", help="write JSON here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="grid search over scheduler settings")
    p.add_argument("--audio", help="16-bit mono WAV")
    p.add_argument("--imu", help="kinematic CSV")
    p.add_argument("--annotations", help="ground-truth JSON")
    p.add_argument("--meta", help="subject metadata JSON")
    p.add_argument("--manifest", help="JSON list of {audio, imu, annotations, meta} sessions")
    p.add_argument("--audio-model", required=True, help="audio model JSON")
    p.add_argument("--kin-model", required=True, help="kinematic model JSON")
    p.add_argument("--costs", help="cost table JSON (default: shipped derived table)")
    p.add_argument("--modes", help="comma list of rerun,no_rerun")
    p.add_argument("--n-max", help="comma list of n_windows_max values")
    p.add_argument("--th-kin-grid", help="lo:hi:step or comma list (default 0.05:0.5:0.05)")
    p.add_argument("--th-audio-grid", help="lo:hi:step or comma list (default 0.05:0.5:0.05)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for grid points")
    p.add_argument("--pareto", action="store_true", help="append a non-dominated marker column")
    p.add_argument("--out", help="CSV path (default stdout)")
    _add_scheduler_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fixture", help="write a synthetic session and matching toy models")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--events", type=int, default=3)
    p.add_argument("--duration", type=float, default=10.0, help="seconds")
    p.add_argument("--noise", type=float, default=0.0, help="background noise standard deviation")
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        msg = str(exc) if not exc.filename else f"file not found: {exc.filename}"
        print(f"edgecough: {msg}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"edgecough: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"edgecough: {exc.qualified()}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
