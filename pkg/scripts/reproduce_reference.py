#!/usr/bin/env python3
"""Optional check against the published multimodal test result.

Needs the public recordings converted to this package's formats plus the
trained models converted with ``convert_xgb_dump.py``. Neither ships with
the package, so without them the script prints SKIP and exits 0.

Manifest: a JSON list of ``{"audio", "imu", "annotations", "meta"}`` entries
(paths relative to the manifest). Every session runs multimodally with the
default scheduler settings; pooled event F1 must land within ``--tolerance``
of ``--target`` (0.78 +/- 0.05 by default).
"""

import argparse
import json
import sys
from pathlib import Path

from edgecough.evaluation import match_events, metrics, pool
from edgecough.inference import load_model
from edgecough.ingest import load_recording
from edgecough.postproc import delineate_windows
from edgecough.scheduler import SchedulerConfig, run_session

TARGET_F1 = 0.78
TOLERANCE = 0.05


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--manifest", help="JSON list of test sessions")
    ap.add_argument("--audio-model")
    ap.add_argument("--kin-model")
    ap.add_argument("--target", type=float, default=TARGET_F1)
    ap.add_argument("--tolerance", type=float, default=TOLERANCE)
    args = ap.parse_args(argv)

    inputs = (args.manifest, args.audio_model, args.kin_model)
    if not all(inputs) or not all(Path(p).exists() for p in inputs):
        print("SKIP: dataset manifest and converted models not supplied")
        return 0

    audio_model, kin_model = load_model(args.audio_model), load_model(args.kin_model)
    root = Path(args.manifest).parent
    config = SchedulerConfig()
    results, hours = [], 0.0
    for entry in json.loads(Path(args.manifest).read_text()):
        paths = {k: (root / v if v else None) for k, v in entry.items()}
        audio, kin, truth, meta = load_recording(paths["audio"], paths["imu"], paths.get("annotations"),
                                                 paths.get("meta"))
        session = run_session(audio, kin, audio_model, kin_model, config, meta)
        events = delineate_windows(session.cough_windows)
        results.append(match_events(events, truth))
        hours += session.trace.duration / 3600.0
    report = metrics(pool(results), hours)
    ok = abs(report.f1 - args.target) <= args.tolerance
    print(f"{'PASS' if ok else 'FAIL'}: F1 {report.f1:.3f} (target {args.target} +/- {args.tolerance}), "
          f"SE {report.se:.3f}, PR {report.pr:.3f}, FP/h {report.fp_per_hour:.1f}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
