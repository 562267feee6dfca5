"""Event-based scoring, training-segment labelling and feature separability."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import InvalidArgument
from .ingest import as_intervals

TOLERANCE_S = 0.25
JSD_BINS = 50


def _invalid(msg):
    return InvalidArgument(msg, module="eval")


@dataclass(frozen=True)
class EventMatchResult:
    tp: int
    fp: int
    fn: int
    pairs: tuple = ()


@dataclass(frozen=True)
class MetricReport:
    se: float
    pr: float
    f1: float
    fp_per_hour: float
    duration_h: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    se_defined: bool = True
    pr_defined: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def _check_sorted(events, label):
    for (a, _), (b, _) in zip(events, events[1:]):
        if b < a:
            raise _invalid(f"{label} events are not sorted by start time")
    for s, e in events:
        if e < s:
            raise _invalid(f"{label} event ends before it starts: ({s}, {e})")


def event_matches(pred: tuple, truth: tuple, tol: float = TOLERANCE_S) -> bool:
    """Both prediction boundaries fall inside the tolerance-widened truth interval."""
    lo, hi = truth[0] - tol, truth[1] + tol
    return lo <= pred[0] <= hi and lo <= pred[1] <= hi


def match_events(pred, truth, tol: float = TOLERANCE_S) -> EventMatchResult:
    """Greedy in-order one-to-one matching; each prediction takes the earliest open truth it matches."""
    pred, truth = as_intervals(pred), as_intervals(truth)
    _check_sorted(pred, "predicted")
    _check_sorted(truth, "ground-truth")
    used = [False] * len(truth)
    pairs = []
    first_open = 0
    for i, p in enumerate(pred):
        while first_open < len(truth) and (used[first_open] or truth[first_open][1] + tol < p[0]):
            first_open += 1
        for j in range(first_open, len(truth)):
            if truth[j][0] - tol > p[1]:
                break
            if not used[j] and event_matches(p, truth[j], tol):
                used[j] = True
                pairs.append((i, j))
                break
    tp = len(pairs)
    return EventMatchResult(tp, len(pred) - tp, len(truth) - tp, tuple(pairs))


def pool(results: Iterable[EventMatchResult]) -> EventMatchResult:
    """Sum counts over recordings (pairs are dropped: their indices are per recording)."""
    tp = fp = fn = 0
    for r in results:
        tp, fp, fn = tp + r.tp, fp + r.fp, fn + r.fn
    return EventMatchResult(tp, fp, fn)


def f1_score(se: float, pr: float) -> float:
    return 2 * se * pr / (se + pr) if se + pr > 0 else 0.0


def metrics(result: EventMatchResult, duration_hours: float) -> MetricReport:
    if not duration_hours > 0:
        raise _invalid(f"duration must be positive, got {duration_hours} h")
    se_ok = result.tp + result.fn > 0
    pr_ok = result.tp + result.fp > 0
    se = result.tp / (result.tp + result.fn) if se_ok else 0.0
    pr = result.tp / (result.tp + result.fp) if pr_ok else 0.0
    return MetricReport(se, pr, f1_score(se, pr), result.fp / duration_hours, duration_hours,
                        result.tp, result.fp, result.fn, se_ok, pr_ok)


def score_report(pred, truth, duration_hours: float, tol: float = TOLERANCE_S,
                 scenarios: Optional[Mapping[str, tuple]] = None) -> dict:
    """Overall metrics plus an optional per-scenario breakdown.

    ``scenarios`` maps a scenario tag to ``(pred, truth, duration_hours)``.
    """
    doc = metrics(match_events(pred, truth, tol), duration_hours).to_dict()
    if scenarios:
        doc["scenarios"] = {
            tag: metrics(match_events(p, t, tol), d).to_dict() for tag, (p, t, d) in sorted(scenarios.items())
        }
    return doc


def _merged_overlap(t0, t1, intervals):
    # union length of intervals clipped to [t0, t1]
    clipped = sorted((max(s, t0), min(e, t1)) for s, e in intervals if min(e, t1) > max(s, t0))
    total, cur_s, cur_e = 0.0, None, None
    for s, e in clipped:
        if cur_e is None or s > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    if cur_e is not None:
        total += cur_e - cur_s
    return total


def label_segment(t0: float, t1: float, truth) -> bool:
    """Positive when coughs fill most of the segment or most of one cough lies inside it."""
    events = as_intervals(truth)
    if _merged_overlap(t0, t1, events) > 0.5 * (t1 - t0):
        return True
    for s, e in events:
        inside = min(e, t1) - max(s, t0)
        if e > s and inside > 0.5 * (e - s):
            return True
    return False


def label_segments(windows: Iterable, truth) -> list[bool]:
    spans = []
    for w in windows:
        spans.append((w.t_start, w.t_end) if hasattr(w, "t_start") else tuple(w))
    return [label_segment(a, b, truth) for a, b in spans]


def _entropy(p):
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def js_divergence(hist_a, hist_b) -> float:
    """Jensen-Shannon divergence in nats, in [0, ln 2]."""
    a = np.asarray(hist_a, dtype=np.float64)
    b = np.asarray(hist_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise _invalid(f"histograms must be 1-D with equal bins, got {a.shape} and {b.shape}")
    if (a < 0).any() or (b < 0).any():
        raise _invalid("histogram counts must be non-negative")
    if a.sum() <= 0 or b.sum() <= 0:
        raise _invalid("histogram has zero mass")
    a, b = a / a.sum(), b / b.sum()
    jsd = _entropy(0.5 * (a + b)) - 0.5 * (_entropy(a) + _entropy(b))
    return min(max(jsd, 0.0), math.log(2))


def feature_separability(pos: Mapping[str, Sequence[float]], neg: Mapping[str, Sequence[float]],
                         bins: int = JSD_BINS) -> dict:
    """Per-feature JSD between class histograms over the pooled value range."""
    out = {}
    for name in pos:
        if name not in neg:
            raise _invalid(f"feature {name!r} missing from the negative class")
        a = np.asarray(pos[name], dtype=np.float64)
        b = np.asarray(neg[name], dtype=np.float64)
        if len(a) == 0 or len(b) == 0:
            raise _invalid(f"feature {name!r} has an empty class")
        lo = min(a.min(), b.min())
        hi = max(a.max(), b.max())
        if hi <= lo:
            out[name] = 0.0
            continue
        ha, _ = np.histogram(a, bins=bins, range=(lo, hi))
        hb, _ = np.histogram(b, bins=bins, range=(lo, hi))
        out[name] = js_divergence(ha, hb)
    return dict(sorted(out.items(), key=lambda kv: -kv[1]))
