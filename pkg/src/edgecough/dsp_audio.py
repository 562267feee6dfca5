"""Audio feature bank: Mel/MFCC band summaries, spectral, and time-domain features.

All functions operate on a single window. Shared tables (Hann window, Mel
filterbank, DCT cosine table, EEPD band-pass filters) are built once per
parameter set and cached read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional

import numpy as np
from scipy.signal import butter, find_peaks, sosfilt

from . import registry
from .errors import InvalidArgument
from .ingest import AudioSignal, SubjectMeta, Window

LOG_FLOOR = 1e-10
ROLLOFF_FRACTION = 0.85
EEPD_BANDS = tuple((50.0 * (k + 1), 50.0 * (k + 2)) for k in range(registry.N_EEPD))
EEPD_SMOOTH_S = 0.010
PSD_BANDS = {"psd_low": (0.0, 1000.0), "psd_mid": (1000.0, 2000.0), "psd_high": (2000.0, math.inf)}


def _invalid(msg):
    return InvalidArgument(msg, module="dsp_audio")


@dataclass(frozen=True)
class AudioFeatureConfig:
    fs: float = 8000.0
    window_len: float = 0.8
    frame_len: int = 1024
    hop: int = 512
    n_mel: int = 64
    n_mfcc: int = 13
    variant: str = "mel"
    use_cosine_lut: bool = True
    normalize_window: bool = False


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # [n_bins, n_frames]
    frame_len: int
    hop: int
    fs: float

    @property
    def n_frames(self):
        return self.magnitudes.shape[1]


@dataclass(frozen=True)
class MelSpectrogram:
    """Mel band energies; ``bands[i]`` is band ``rows[i]``.

    ``band_mask`` is None when every band was computed.
    """

    bands: np.ndarray
    n_mel: int
    band_mask: Optional[tuple] = None

    @property
    def rows(self):
        return self.band_mask if self.band_mask is not None else tuple(range(self.n_mel))

    def row(self, k):
        return self.bands[self.rows.index(k)]


def _samples(window) -> tuple[np.ndarray, float]:
    if isinstance(window, Window):
        window = window.payload
    if isinstance(window, AudioSignal):
        return window.samples, window.fs
    raise _invalid(f"expected an audio window, got {type(window).__name__}")


@lru_cache(maxsize=None)
def hann(frame_len: int) -> np.ndarray:
    n = np.arange(frame_len)
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_len)
    w.setflags(write=False)
    return w


def stft(window, frame_len: int = 1024, hop: int = 512) -> Spectrogram:
    """Hann-weighted magnitude STFT; frame k covers ``[k*hop, k*hop + frame_len)``."""
    x, fs = _samples(window)
    if frame_len < 2 or frame_len & (frame_len - 1):
        raise _invalid(f"frame_len must be a power of two, got {frame_len}")
    if hop < 1:
        raise _invalid(f"hop must be positive, got {hop}")
    if len(x) < frame_len:
        raise _invalid(f"window of {len(x)} samples is shorter than frame_len={frame_len}")
    n_frames = (len(x) - frame_len) // hop + 1
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * hann(frame_len)
    mags = np.abs(np.fft.rfft(frames, axis=1)).T
    return Spectrogram(mags, frame_len, hop, fs)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def mel_filterbank(fs: float, frame_len: int, n_mel: int = 64) -> np.ndarray:
    """Area-normalised triangular HTK-Mel filters spanning 0 Hz to Nyquist, shape [n_mel, n_bins]."""
    n_bins = frame_len // 2 + 1
    freqs = np.arange(n_bins) * fs / frame_len
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(fs / 2.0), n_mel + 2))
    fb = np.zeros((n_mel, n_bins))
    for i in range(n_mel):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling)) * (2.0 / (hi - lo))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=None)
def _filter_support(fs: float, frame_len: int, n_mel: int):
    fb = mel_filterbank(fs, frame_len, n_mel)
    support = []
    for row in fb:
        nz = np.flatnonzero(row)
        support.append((int(nz[0]), int(nz[-1]) + 1) if len(nz) else (0, 0))
    return tuple(support)


def _mel_row(fb_row, lo, hi, power):
    # One routine for masked and unmasked calls keeps the rows bit-identical.
    return fb_row[lo:hi] @ power[lo:hi]


def mel_spectrogram(spec: Spectrogram, n_mel: int = 64, band_mask: Optional[Iterable[int]] = None) -> MelSpectrogram:
    """Project the power spectrogram onto the Mel filterbank.

    With ``band_mask`` only the listed rows of the filterbank product are
    evaluated; each is identical to the corresponding row of the full call.
    """
    if band_mask is not None:
        rows = tuple(sorted({int(k) for k in band_mask}))
        bad = [k for k in rows if not 0 <= k < n_mel]
        if bad:
            raise _invalid(f"Mel band indices out of range [0, {n_mel}): {bad}")
    else:
        rows = tuple(range(n_mel))
    fb = mel_filterbank(spec.fs, spec.frame_len, n_mel)
    support = _filter_support(spec.fs, spec.frame_len, n_mel)
    power = spec.magnitudes ** 2
    bands = np.empty((len(rows), spec.n_frames))
    for i, k in enumerate(rows):
        lo, hi = support[k]
        bands[i] = _mel_row(fb[k], lo, hi, power)
    mask = None if band_mask is None else rows
    return MelSpectrogram(bands, n_mel, mask)


@lru_cache(maxsize=None)
def cosine_lut(n_mel: int = 64, n_mfcc: int = 13) -> np.ndarray:
    """Orthonormal DCT-II basis restricted to the first ``n_mfcc`` coefficients."""
    k = np.arange(n_mfcc)[:, None]
    n = np.arange(n_mel)[None, :]
    lut = np.cos(np.pi * k * (2 * n + 1) / (2 * n_mel))
    lut[0] *= math.sqrt(1.0 / n_mel)
    lut[1:] *= math.sqrt(2.0 / n_mel)
    lut.setflags(write=False)
    return lut


def _dct_direct(logmel: np.ndarray, n_mfcc: int) -> np.ndarray:
    n_mel, n_frames = logmel.shape
    out = np.zeros((n_mfcc, n_frames))
    for k in range(n_mfcc):
        scale = math.sqrt((1.0 if k == 0 else 2.0) / n_mel)
        for t in range(n_frames):
            acc = 0.0
            for n in range(n_mel):
                acc += logmel[n, t] * math.cos(math.pi * k * (2 * n + 1) / (2 * n_mel))
            out[k, t] = scale * acc
    return out


def mfcc(mel: MelSpectrogram, use_cosine_lut: bool = True, n_mfcc: int = 13) -> np.ndarray:
    """MFCCs as an ``[n_mfcc, n_frames]`` array (one column per frame).

    The LUT path multiplies by a precomputed cosine table; the direct path
    evaluates every cosine on the fly.
    """
    if mel.band_mask is not None and len(mel.band_mask) != mel.n_mel:
        raise _invalid("MFCC needs every Mel band; got a masked Mel spectrogram")
    logmel = np.log(np.maximum(mel.bands, LOG_FLOOR))
    if use_cosine_lut:
        return cosine_lut(mel.n_mel, n_mfcc) @ logmel
    return _dct_direct(logmel, n_mfcc)


def entropy(values) -> float:
    """Shannon entropy (nats) of ``|values|`` normalised to unit sum; 0 for an all-zero input."""
    a = np.abs(np.asarray(values, dtype=np.float64))
    total = a.sum()
    if total <= 0 or not np.isfinite(total):
        return 0.0
    p = a[a > 0] / total
    return float(-(p * np.log(p)).sum())


def summarize_bands(matrix, prefix: str, rows: Optional[Iterable[int]] = None) -> dict:
    """Mean, std, entropy and max of each row, named ``<prefix><row>/<stat>``."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if matrix.shape[1] < 1:
        raise _invalid("need at least one frame to summarise")
    rows = range(matrix.shape[0]) if rows is None else rows
    out = {}
    for k, row in zip(rows, matrix):
        out[f"{prefix}{k}/mean"] = float(row.mean())
        out[f"{prefix}{k}/std"] = float(row.std())
        out[f"{prefix}{k}/entropy"] = entropy(row)
        out[f"{prefix}{k}/max"] = float(row.max())
    return out


def welch_psd(window, frame_len: int = 1024, hop: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """One-sided Welch PSD using the STFT framing; short windows are zero-padded to one frame."""
    x, fs = _samples(window)
    if len(x) == 0:
        raise _invalid("empty window")
    if len(x) < frame_len:
        x = np.pad(x, (0, frame_len - len(x)))
    spec = stft(AudioSignal(x, fs), frame_len, hop)
    w = hann(frame_len)
    psd = (spec.magnitudes ** 2).mean(axis=1) / (fs * float(w @ w))
    psd[1:-1] *= 2.0
    freqs = np.arange(len(psd)) * fs / frame_len
    return freqs, psd


def spectral_centroid(freqs, psd):
    total = psd.sum()
    return float(freqs @ psd / total) if total > 0 else 0.0


def spectral_spread(freqs, psd):
    total = psd.sum()
    if total <= 0:
        return 0.0
    c = freqs @ psd / total
    return float(math.sqrt(max(((freqs - c) ** 2) @ psd / total, 0.0)))


def spectral_skew(freqs, psd):
    total = psd.sum()
    spread = spectral_spread(freqs, psd)
    if total <= 0 or spread <= 0:
        return 0.0
    c = freqs @ psd / total
    return float(((freqs - c) ** 3) @ psd / total / spread**3)


def spectral_flatness(psd):
    psd = np.asarray(psd, dtype=np.float64)
    mean = psd.mean()
    if mean <= 0:
        return 1.0
    geo = math.exp(np.log(np.maximum(psd, 1e-300)).mean())
    return float(geo / mean)


def spectral_rolloff(freqs, psd, fraction=ROLLOFF_FRACTION):
    total = psd.sum()
    if total <= 0:
        return 0.0
    idx = int(np.searchsorted(np.cumsum(psd), fraction * total))
    return float(freqs[min(idx, len(freqs) - 1)])


def spectral_decrease(psd):
    rest = psd[1:].sum()
    if rest <= 0:
        return 0.0
    k = np.arange(1, len(psd))
    return float(((psd[1:] - psd[0]) / k).sum() / rest)


def spectral_slope(freqs, psd):
    fc = freqs - freqs.mean()
    denom = fc @ fc
    return float(fc @ (psd - psd.mean()) / denom) if denom > 0 else 0.0


def spectral_features(window, config: AudioFeatureConfig | None = None) -> dict:
    """The 14 frequency-domain features computed from the Welch PSD."""
    cfg = config or AudioFeatureConfig()
    freqs, psd = welch_psd(window, cfg.frame_len, cfg.hop)
    df = freqs[1] - freqs[0]
    feats = {
        "decrease": spectral_decrease(psd),
        "slope": spectral_slope(freqs, psd),
        "rolloff": spectral_rolloff(freqs, psd),
        "skew": spectral_skew(freqs, psd),
        "centroid": spectral_centroid(freqs, psd),
        "spread": spectral_spread(freqs, psd),
        "flatness": spectral_flatness(psd),
        "std": float(psd.std()),
        "entropy": entropy(psd),
        "domfreq": float(freqs[int(np.argmax(psd))]) if psd.max() > 0 else 0.0,
        "psd_total": float(psd.sum() * df),
    }
    for name, (lo, hi) in PSD_BANDS.items():
        sel = (freqs >= lo) & (freqs < hi)
        feats[name] = float(psd[sel].sum() * df)
    return {f"audio/spec/{n}": feats[n] for n in registry.SPECTRAL_NAMES}


def sign_changes(x) -> int:
    """Number of adjacent sample pairs on opposite sides of zero (zero counts as positive)."""
    neg = np.signbit(np.asarray(x, dtype=np.float64)) & (np.asarray(x) != 0)
    return int(np.count_nonzero(neg[1:] != neg[:-1]))


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(math.sqrt((x @ x) / len(x)))


def crest_factor(x) -> float:
    r = rms(x)
    return float(np.max(np.abs(x)) / r) if r > 0 else 0.0


def zero_crossing_rate(x) -> float:
    return sign_changes(x) / (len(x) - 1) if len(x) > 1 else 0.0


def time_features_audio(window) -> dict:
    x, _ = _samples(window)
    if len(x) == 0:
        raise _invalid("empty window")
    return {
        "audio/time/rms": rms(x),
        "audio/time/zcr": zero_crossing_rate(x),
        "audio/time/crest": crest_factor(x),
    }


@lru_cache(maxsize=None)
def _eepd_sos(fs: float, lo: float, hi: float):
    # order-2 prototype -> 4th-order band-pass
    return butter(2, [lo, hi], btype="bandpass", fs=fs, output="sos")


def eepd_band_count(x: np.ndarray, fs: float, band: int) -> int:
    lo, hi = EEPD_BANDS[band]
    env = sosfilt(_eepd_sos(float(fs), lo, hi), x) ** 2
    n_smooth = max(1, int(round(EEPD_SMOOTH_S * fs)))
    env = np.convolve(env, np.ones(n_smooth) / n_smooth, mode="same")
    peaks, _ = find_peaks(env)
    return int(np.count_nonzero(env[peaks] > env.mean()))


def eepd(window, bands: Optional[Iterable[int]] = None) -> dict:
    """Energy-envelope peak counts in 19 contiguous 50 Hz bands between 50 and 1000 Hz."""
    x, fs = _samples(window)
    if fs < 2000:
        raise _invalid(f"EEPD needs fs >= 2 kHz, got {fs}")
    bands = range(registry.N_EEPD) if bands is None else bands
    return {f"audio/eepd{k}": float(eepd_band_count(x, fs, k)) for k in bands}


def _parse_band_name(name):
    # "audio/mel12/max" -> ("mel", 12)
    head = name.split("/")[1]
    for prefix in ("mfcc", "mel", "eepd"):
        if head.startswith(prefix):
            return prefix, int(head[len(prefix):])
    return head, None


def extract_audio_features(window, mask=None, meta: SubjectMeta | None = None,
                           config: AudioFeatureConfig | None = None) -> dict:
    """Compute the masked audio feature vector for one window.

    Only features named in ``mask`` (default: every feature of
    ``config.variant``) and their prerequisites are computed. The result is
    ordered by registry position.
    """
    cfg = config or AudioFeatureConfig()
    full = registry.audio_feature_names(cfg.variant)
    if mask is None:
        wanted = set(full)
    else:
        wanted = set(mask)
        known = set(registry.spectral_names() + registry.mel_names() + registry.mfcc_names()
                    + registry.audio_time_names() + registry.eepd_names() + (registry.GENDER,))
        unknown = sorted(wanted - known)
        if unknown:
            raise _invalid(f"unknown audio feature names: {', '.join(unknown)}")

    x, fs = _samples(window)
    if abs(fs - cfg.fs) > 1e-6:
        raise _invalid(f"window sampled at {fs} Hz, config expects {cfg.fs} Hz")
    expected = int(round(cfg.window_len * cfg.fs))
    if len(x) != expected:
        raise _invalid(f"window has {len(x)} samples, config expects {expected}")
    if cfg.normalize_window:
        peak = np.max(np.abs(x)) if len(x) else 0.0
        if peak > 0:
            x = x / peak
    sig = AudioSignal(x, fs)

    out = {}
    if wanted & set(registry.spectral_names()):
        out.update(spectral_features(sig, cfg))
    mel_rows = sorted({_parse_band_name(n)[1] for n in wanted if n.startswith("audio/mel")})
    need_mfcc = any(n.startswith("audio/mfcc") for n in wanted)
    if mel_rows or need_mfcc:
        spec = stft(sig, cfg.frame_len, cfg.hop)
        if need_mfcc:
            mel = mel_spectrogram(spec, cfg.n_mel)
            out.update(summarize_bands(mfcc(mel, cfg.use_cosine_lut, cfg.n_mfcc), "audio/mfcc"))
            if mel_rows:
                out.update(summarize_bands(mel.bands[mel_rows], "audio/mel", mel_rows))
        else:
            mel = mel_spectrogram(spec, cfg.n_mel, band_mask=mel_rows)
            out.update(summarize_bands(mel.bands, "audio/mel", mel.rows))
    if wanted & set(registry.audio_time_names()):
        out.update(time_features_audio(sig))
    eepd_bands = sorted({_parse_band_name(n)[1] for n in wanted if n.startswith("audio/eepd")})
    if eepd_bands:
        out.update(eepd(sig, eepd_bands))
    if registry.GENDER in wanted:
        out[registry.GENDER] = float((meta or SubjectMeta()).gender)
    order = registry.all_feature_names()
    return {n: out[n] for n in order if n in wanted}
