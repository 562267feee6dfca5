"""Kinematic time-domain features, including Approximate Zero Crossings (AZC)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import registry
from .dsp_audio import crest_factor, rms, sign_changes, zero_crossing_rate
from .errors import InvalidArgument
from .ingest import KIN_CHANNELS, KinematicSignal, SubjectMeta, Window

STD_FLOOR = 1e-9


def _invalid(msg):
    return InvalidArgument(msg, module="dsp_kinematic")


@dataclass(frozen=True)
class SimplifiedPolyline:
    indices: tuple
    epsilon: float


def douglas_peucker(signal, epsilon: float) -> SimplifiedPolyline:
    """Stack-based Douglas-Peucker on a uniformly sampled series.

    Deviation is measured vertically (in amplitude) from the chord between
    the current anchors; the farthest point is kept when its deviation
    exceeds ``epsilon``. Ties go to the lowest index.
    """
    x = np.asarray(signal, dtype=np.float64)
    if len(x) < 2:
        raise _invalid(f"Douglas-Peucker needs at least 2 samples, got {len(x)}")
    if epsilon < 0:
        raise _invalid(f"epsilon must be non-negative, got {epsilon}")
    keep = np.zeros(len(x), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(x) - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        i = np.arange(lo + 1, hi)
        chord = x[lo] + (x[hi] - x[lo]) * (i - lo) / (hi - lo)
        dev = np.abs(x[lo + 1:hi] - chord)
        j = int(np.argmax(dev))
        if dev[j] > epsilon:
            split = lo + 1 + j
            keep[split] = True
            stack.append((split, hi))
            stack.append((lo, split))
    return SimplifiedPolyline(tuple(int(k) for k in np.flatnonzero(keep)), float(epsilon))


def standardize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0 or np.ptp(x) == 0:
        return np.zeros_like(x)
    centered = x - x.mean()
    return centered / max(float(centered.std()), STD_FLOOR)


def azc(signal, epsilon: float) -> int:
    """Sign changes across the retained samples of the simplified, standardised signal."""
    z = standardize(signal)
    poly = douglas_peucker(z, epsilon)
    return sign_changes(z[list(poly.indices)])


def kurtosis(x) -> float:
    """Fisher kurtosis (0 for a normal distribution, 0 for constant input)."""
    x = np.asarray(x, dtype=np.float64)
    if np.ptp(x) == 0:
        return 0.0
    d = x - x.mean()
    m2 = (d @ d) / len(x)
    if m2 <= 0:
        return 0.0
    m4 = (d**4).sum() / len(x)
    return float(m4 / m2**2 - 3.0)


def line_length(x) -> float:
    return float(np.abs(np.diff(np.asarray(x, dtype=np.float64))).sum())


def kin_stats(x) -> dict:
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise _invalid("empty channel")
    return {
        "zcr": zero_crossing_rate(x),
        "rms": rms(x),
        "crest": crest_factor(x),
        "kurtosis": kurtosis(x),
        "linelength": line_length(x),
    }


def extract_kinematic_features(window, mask=None, meta: SubjectMeta | None = None,
                               window_len: float | None = None) -> dict:
    """Masked projection of the 106 kinematic features for one window."""
    if isinstance(window, Window):
        window = window.payload
    if not isinstance(window, KinematicSignal):
        raise _invalid(f"expected a kinematic window, got {type(window).__name__}")
    full = registry.kinematic_feature_names()
    if mask is None:
        wanted = set(full)
    else:
        wanted = set(mask)
        unknown = sorted(wanted - set(full))
        if unknown:
            raise _invalid(f"unknown kinematic feature names: {', '.join(unknown)}")
    if window_len is not None and len(window) != int(round(window_len * window.fs)):
        raise _invalid(f"window has {len(window)} samples, expected {window_len} s at {window.fs} Hz")
    if len(window) < 2:
        raise _invalid("kinematic window needs at least 2 samples")

    meta = meta or SubjectMeta()
    out = {}
    for ch in KIN_CHANNELS:
        names = [n for n in wanted if n.startswith(f"kin/{ch}/")]
        if not names:
            continue
        x = window.channels[ch]
        stats = kin_stats(x) if any("azc" not in n for n in names) else {}
        for eps in registry.AZC_EPSILONS:
            key = f"azc{round(eps * 10)}"
            if f"kin/{ch}/{key}" in wanted:
                stats[key] = float(azc(x, eps))
        for stat, value in stats.items():
            out[f"kin/{ch}/{stat}"] = value
    out[registry.GENDER] = float(meta.gender)
    out[registry.BMI] = float(meta.bmi)
    return {n: out[n] for n in full if n in wanted}
