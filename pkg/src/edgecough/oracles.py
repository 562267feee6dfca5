"""Slow reference implementations used only to cross-check the fast paths.

Nothing here calls into the modules under test.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np


def dft_naive(x) -> np.ndarray:
    """Textbook O(n^2) DFT as an explicit twiddle-matrix product (no FFT)."""
    x = np.asarray(x, dtype=np.complex128)
    return _twiddles(len(x)) @ x


@lru_cache(maxsize=8)
def _twiddles(n):
    k = np.arange(n)
    # reduce k*t mod n in integers before scaling, to keep the phases exact
    return np.exp(-2j * math.pi * (np.outer(k, k) % n) / n)


def douglas_peucker_recursive(x, epsilon: float) -> list[int]:
    """Recursive Douglas-Peucker with vertical deviation; ties keep the lowest index."""
    x = [float(v) for v in x]

    def rec(lo, hi):
        if hi - lo < 2:
            return []
        best, best_i = -1.0, None
        for i in range(lo + 1, hi):
            chord = x[lo] + (x[hi] - x[lo]) * (i - lo) / (hi - lo)
            d = abs(x[i] - chord)
            if d > best:
                best, best_i = d, i
        if best <= epsilon:
            return []
        return rec(lo, best_i) + [best_i] + rec(best_i, hi)

    return [0] + rec(0, len(x) - 1) + [len(x) - 1]


def _compatible(p, t, tol):
    lo, hi = t[0] - tol, t[1] + tol
    return lo <= p[0] <= hi and lo <= p[1] <= hi


def event_match_exhaustive(pred, truth, tol: float = 0.25) -> tuple[int, int, int]:
    """Maximum one-to-one matching by exhaustive search; returns (tp, fp, fn)."""
    pred = [tuple(map(float, p)) for p in pred]
    truth = [tuple(map(float, t)) for t in truth]
    edges = [[j for j, t in enumerate(truth) if _compatible(p, t, tol)] for p in pred]

    @lru_cache(maxsize=None)
    def best(i, used):
        if i == len(pred):
            return 0
        top = best(i + 1, used)
        for j in edges[i]:
            if not used >> j & 1:
                top = max(top, 1 + best(i + 1, used | (1 << j)))
        return top

    tp = best(0, 0)
    return tp, len(pred) - tp, len(truth) - tp


def dominance_naive(points) -> list[int]:
    """Indices of (f1, energy) points that no other point dominates."""
    keep = []
    for i, (f_i, e_i) in enumerate(points):
        dominated = False
        for j, (f_j, e_j) in enumerate(points):
            if j != i and f_j >= f_i and e_j <= e_i and (f_j > f_i or e_j < e_i):
                dominated = True
                break
        if not dominated:
            keep.append(i)
    return keep


def hysteresis_scan(power, upper: float, lower: float) -> list[tuple[int, int]]:
    """(open, close) sample indices of regions by a direct threshold scan.

    Opens where power steps from <= upper to > upper, closes at the first
    sample below lower afterwards, or at len(power).
    """
    out = []
    i, n = 1, len(power)
    suppressed = n > 0 and power[0] > upper
    while i < n:
        if suppressed:
            if power[i] < lower:
                suppressed = False
            i += 1
            continue
        if power[i - 1] <= upper < power[i]:
            j = i
            while j < n and not power[j] < lower:
                j += 1
            out.append((i, j))
            i = j + 1
            continue
        i += 1
    return out


def jsd_direct(a, b) -> float:
    """Jensen-Shannon divergence via the two KL terms."""
    sa, sb = float(sum(a)), float(sum(b))
    p = [v / sa for v in a]
    q = [v / sb for v in b]
    total = 0.0
    for pi, qi in zip(p, q):
        m = 0.5 * (pi + qi)
        if pi > 0:
            total += 0.5 * pi * math.log(pi / m)
        if qi > 0:
            total += 0.5 * qi * math.log(qi / m)
    return total


def count_envelope_peaks(env) -> int:
    """Local maxima above the mean by a plain scan; a flat top counts once."""
    env = [float(v) for v in env]
    n = len(env)
    if n < 3:
        return 0
    mean = sum(env) / n
    count, i = 0, 1
    while i < n - 1:
        if env[i - 1] < env[i]:
            j = i
            while j + 1 < n - 1 and env[j + 1] == env[i]:
                j += 1
            if env[j + 1] < env[i] and env[i] > mean:
                count += 1
            i = j + 1
        else:
            i += 1
    return count


def moving_average_direct(x, n: int):
    """Centred length-n boxcar with zero padding, same length as x."""
    x = [float(v) for v in x]
    half = (n - 1) // 2
    out = []
    for i in range(len(x)):
        acc = 0.0
        for k in range(n):
            j = i + half - k
            if 0 <= j < len(x):
                acc += x[j]
        out.append(acc / n)
    return out


def mel_bands_naive(power, fs: float, frame_len: int, n_mel: int):
    """HTK triangles evaluated bin by bin, each scaled to unit area; power is (bins, frames)."""
    def hz_to_mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10 ** (m / 2595.0) - 1.0)

    power = np.asarray(power, dtype=np.float64)
    top = hz_to_mel(fs / 2)
    edges = [mel_to_hz(top * i / (n_mel + 1)) for i in range(n_mel + 2)]
    out = np.zeros((n_mel, power.shape[1]))
    for i in range(n_mel):
        lo, mid, hi = edges[i:i + 3]
        for b in range(power.shape[0]):
            f = b * fs / frame_len
            w = 0.0
            if lo < f <= mid:
                w = (f - lo) / (mid - lo)
            elif mid < f < hi:
                w = (hi - f) / (hi - mid)
            if w:
                out[i] += w * 2.0 / (hi - lo) * power[b]
    return out
