"""Cough event delineation from cough-positive audio windows.

Two stages: hysteresis thresholding of a 2 kHz power envelope yields raw
regions (start, peak, end, amplitude); refinement then merges peaks closer
than one minimum cough, pulls starts ahead of their peaks and assigns ends
from bout structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidArgument
from .ingest import AudioSignal, Window, decimate

ENVELOPE_FS = 2000.0
SMOOTH_S = 0.010
FLUSH_PERIOD_S = 5.0


def _invalid(msg):
    return InvalidArgument(msg, module="postproc")


@dataclass(frozen=True)
class PhysioConstants:
    t_min_cough: float = 0.23
    t_max_cough: float = 0.55
    t_min_before_pk: float = 0.015
    decay: float = 0.5
    fallback_pk_to_end: float = 0.25
    pk_to_end_avg: Optional[float] = None  # pin instead of estimating per session

    def __post_init__(self):
        if not 0 < self.t_min_cough < self.t_max_cough:
            raise _invalid("need 0 < t_min_cough < t_max_cough")
        if self.t_min_before_pk <= 0 or 2 * self.t_min_before_pk >= self.t_min_cough:
            raise _invalid("t_min_before_pk must be positive and below half of t_min_cough")
        if not 0 < self.decay <= 1:
            raise _invalid("decay must lie in (0, 1]")
        limit = self.t_max_cough - self.t_min_before_pk
        for name in ("fallback_pk_to_end", "pk_to_end_avg"):
            v = getattr(self, name)
            if v is not None and not 0 < v <= limit:
                raise _invalid(f"{name} must lie in (0, {limit:g}]")

    @property
    def t_min_spike(self):
        return 2 * self.t_min_before_pk


@dataclass(frozen=True)
class CoughRegion:
    t_start: float
    t_peak: float
    t_end: float
    amplitude: float = 0.0

    def as_event(self) -> dict:
        return {"start": round(self.t_start, 6), "peak": round(self.t_peak, 6), "end": round(self.t_end, 6)}


@dataclass(frozen=True)
class PowerEnvelope:
    power: np.ndarray
    fs: float
    t0: float

    @property
    def rms_power(self) -> float:
        p = self.power
        return float(math.sqrt((p @ p) / len(p))) if len(p) else 0.0

    @property
    def max_power(self) -> float:
        return float(self.power.max()) if len(self.power) else 0.0


def power_envelope(signal) -> PowerEnvelope:
    """Squared signal at 2 kHz smoothed by a 10 ms moving average (shortened at the edges)."""
    if isinstance(signal, Window):
        signal = signal.payload
    if not isinstance(signal, AudioSignal):
        raise _invalid(f"expected audio, got {type(signal).__name__}")
    ratio = signal.fs / ENVELOPE_FS
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise _invalid(f"sampling rate {signal.fs} Hz is not an integer multiple of {ENVELOPE_FS:g} Hz")
    x = decimate(signal, factor).samples if factor > 1 else signal.samples
    n = max(1, int(round(SMOOTH_S * ENVELOPE_FS)))
    box = np.ones(n)
    # average over the samples actually inside the window so edges are not biased low
    support = np.convolve(np.ones(len(x)), box, mode="same")
    power = np.convolve(np.asarray(x, dtype=np.float64) ** 2, box, mode="same") / np.maximum(support, 1.0)
    return PowerEnvelope(np.maximum(power, 0.0), ENVELOPE_FS, signal.t0)


def hysteresis_regions(env: PowerEnvelope) -> list[CoughRegion]:
    """Open on an upward crossing of (rms+max)/2, close when power drops below rms.

    A burst already above the upper threshold at the first sample began in an
    earlier window and is ignored until the power falls below the lower
    threshold. A region still open at the last sample closes there.
    """
    p = env.power
    if len(p) == 0 or env.max_power <= 0:
        return []
    lower = env.rms_power
    upper = 0.5 * (lower + env.max_power)
    regions = []
    armed = p[0] <= upper
    start = None
    for i in range(len(p)):
        if start is None:
            if not armed:
                armed = p[i] < lower
            elif i > 0 and p[i] > upper >= p[i - 1]:
                start = i
        elif p[i] < lower:
            regions.append(_region(env, start, i))
            start = None
    if start is not None:
        regions.append(_region(env, start, len(p)))
    return regions


def _region(env, lo, hi):
    k = lo + int(np.argmax(env.power[lo:hi]))
    return CoughRegion(env.t0 + lo / env.fs, env.t0 + k / env.fs, env.t0 + hi / env.fs, float(env.power[k]))


def segment_power_peaks(window) -> list[CoughRegion]:
    return hysteresis_regions(power_envelope(window))


def avg_peak_to_end(peaks: Sequence[float], constants: PhysioConstants = PhysioConstants()) -> float:
    """Mean in-bout peak gap minus the minimum spike duration, or the fallback without bouts."""
    if len(peaks) < 1:
        raise _invalid("need at least one peak")
    gaps = [b - a for a, b in zip(peaks, peaks[1:]) if b - a < constants.t_max_cough]
    if not gaps:
        return constants.fallback_pk_to_end
    return sum(gaps) / len(gaps) - constants.t_min_spike


def _sort_key(r: CoughRegion):
    return (r.t_peak, r.t_start, r.t_end, r.amplitude)


@dataclass
class _Cluster:
    region: CoughRegion
    members: list = field(default_factory=list)


def merge_close_peaks(regions: Sequence[CoughRegion], constants: PhysioConstants) -> list[_Cluster]:
    """Sequential merge over peak-sorted regions: keep the louder peak (earlier on ties), union spans."""
    clusters: list[_Cluster] = []
    for r in regions:
        if clusters and r.t_peak - clusters[-1].region.t_peak < constants.t_min_cough:
            last = clusters[-1].region
            keep = last if last.amplitude >= r.amplitude else r
            clusters[-1].region = CoughRegion(
                min(last.t_start, r.t_start), keep.t_peak, max(last.t_end, r.t_end), keep.amplitude
            )
            clusters[-1].members.append(r)
        else:
            clusters.append(_Cluster(r, [r]))
    return clusters


@dataclass(frozen=True)
class _Context:
    peak: float
    end: float
    bout_pos: int


def _delineate(merged: Sequence[CoughRegion], constants: PhysioConstants, t_avg: float,
               context: Optional[_Context] = None) -> list[CoughRegion]:
    c = constants
    out = []
    prev = context
    for i, r in enumerate(merged):
        start = min(r.t_start, r.t_peak - c.t_min_before_pk)
        if prev is not None:
            in_bout = r.t_peak - prev.peak < c.t_max_cough
            start = max(start, prev.peak + c.t_min_before_pk if in_bout else prev.end)
            pos = prev.bout_pos + 1 if in_bout else 0
        else:
            pos = 0
        if out and in_bout:
            out[-1] = replace(out[-1], t_end=start)
        end = r.t_peak + t_avg * c.decay**pos
        out.append(CoughRegion(start, r.t_peak, end, r.amplitude))
        prev = _Context(r.t_peak, end, pos)
    return out


def refine_regions(regions: Iterable[CoughRegion], constants: PhysioConstants = PhysioConstants()) -> list[CoughRegion]:
    """Physiology-based refinement of raw regions.

    Output regions are disjoint and time ordered. Within a bout (peak gap
    below ``t_max_cough``) each end is the next start; otherwise the end sits
    ``t_avg * decay**k`` after the peak, k being the position in the bout.
    """
    ordered = sorted(regions, key=_sort_key)
    if not ordered:
        return []
    merged = [cl.region for cl in merge_close_peaks(ordered, constants)]
    t_avg = constants.pk_to_end_avg or avg_peak_to_end([r.t_peak for r in merged], constants)
    return _delineate(merged, constants, t_avg)


@dataclass(frozen=True)
class FlushResult:
    events: list
    count: int


class EventAccumulator:
    """Streaming refinement with a periodic flush.

    Contract: regions added after ``flush(boundary)`` have peaks at or after
    ``boundary``. Under it, ``finish()`` returns exactly what
    ``refine_regions`` returns on the full region list. Events emitted by
    intermediate flushes use the running end estimate unless
    ``pk_to_end_avg`` is pinned, in which case they are already final.
    """

    def __init__(self, constants: PhysioConstants = PhysioConstants(), period: float = FLUSH_PERIOD_S):
        if period <= 0:
            raise _invalid("flush period must be positive")
        self.constants = constants
        self.period = period
        self.pending: list[CoughRegion] = []
        self.final: list[CoughRegion] = []  # merged, undelineated
        self.emitted: list[CoughRegion] = []
        self.last_boundary = -math.inf

    def add(self, regions: Iterable[CoughRegion]) -> None:
        for r in regions:
            if r.t_peak < self.last_boundary:
                raise _invalid(f"region peak {r.t_peak:.3f} s precedes the last flush boundary")
            self.pending.append(r)

    def _t_avg(self, merged):
        c = self.constants
        if c.pk_to_end_avg:
            return c.pk_to_end_avg
        peaks = [r.t_peak for r in merged]
        return avg_peak_to_end(peaks, c) if peaks else c.fallback_pk_to_end

    def flush(self, boundary: float) -> FlushResult:
        c = self.constants
        stable = sorted((r for r in self.pending if r.t_peak < boundary), key=_sort_key)
        rest = [r for r in self.pending if r.t_peak >= boundary]
        clusters = merge_close_peaks(stable, c)
        n = len(clusters)
        n_final = max(n - 2, 0)
        if n >= 1:
            p_last = clusters[-1].region.t_peak
            settled_last = boundary >= p_last + c.t_max_cough
            members_last = boundary >= p_last + c.t_min_cough
            if n >= 2:
                gap = p_last - clusters[-2].region.t_peak
                if gap >= c.t_max_cough or members_last:
                    n_final = n - 1
            if settled_last:
                n_final = n
        self.final.extend(cl.region for cl in clusters[:n_final])
        self.pending = [m for cl in clusters[n_final:] for m in cl.members] + rest
        self.last_boundary = max(self.last_boundary, boundary)

        lookahead = [cl.region for cl in clusters[n_final:]]
        known = self.final + lookahead
        refined = _delineate(known, c, self._t_avg(known))
        new = refined[len(self.emitted):len(self.final)]
        self.emitted.extend(new)
        return FlushResult(new, len(self.final))

    def finish(self) -> list[CoughRegion]:
        self.flush(math.inf)
        if not self.final:
            return []
        return _delineate(self.final, self.constants, self._t_avg(self.final))


def delineate_windows(windows: Iterable, constants: PhysioConstants = PhysioConstants(),
                      period: float = FLUSH_PERIOD_S) -> list[CoughRegion]:
    """Raw regions from time-ordered cough windows, refined with a periodic flush."""
    acc = EventAccumulator(constants, period)
    next_flush = None
    for w in windows:
        t = w.t_start if isinstance(w, Window) else w.t0
        if next_flush is None:
            next_flush = t + period
        while t >= next_flush:
            acc.flush(next_flush)
            next_flush += period
        # regions whose peak precedes an earlier flush were already covered by overlapping windows
        acc.add(r for r in segment_power_peaks(w) if r.t_peak >= acc.last_boundary)
    return acc.finish()


def events_document(regions: Sequence[CoughRegion]) -> dict:
    return {"events": [r.as_event() for r in regions], "count": len(regions)}
