"""Recording ingestion: signal containers, resampling and sliding-window framing.

File formats
------------
* audio: 16-bit PCM mono WAV, rescaled to [-1, 1]
* kinematic: CSV with header ``t,ax,ay,az,yaw,pitch,roll`` (s, g, degrees);
  optional ``acc_norm``/``ang_norm`` columns are checked against the triads
* annotations: JSON ``{"events": [{"start": s, "end": s}, ...]}`` with an
  optional ``"scenario"`` tag
* subject metadata: JSON ``{"gender": 0|1, "bmi": float}``
"""

from __future__ import annotations

import csv
import json
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.signal import firwin

from .errors import AlignmentError, InvalidArgument, ParseError

KIN_CHANNELS = ("accx", "accy", "accz", "accnorm", "yaw", "pitch", "roll", "angnorm")
CSV_COLUMNS = ("t", "ax", "ay", "az", "yaw", "pitch", "roll")

FIR_TAPS = 63
FIR_CUTOFF = 0.8  # fraction of the post-decimation Nyquist frequency
MAX_DURATION_MISMATCH_S = 1.0


def _invalid(msg):
    return InvalidArgument(msg, module="ingest")


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    fs: float
    t0: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise _invalid("audio samples must be one-dimensional")
        if not self.fs > 0:
            raise _invalid(f"sampling rate must be positive, got {self.fs}")
        if not np.all(np.isfinite(samples)):
            raise _invalid("audio samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.fs

    def slice(self, start: int, stop: int) -> "AudioSignal":
        return AudioSignal(self.samples[start:stop], self.fs, self.t0 + start / self.fs)


@dataclass(frozen=True)
class KinematicSignal:
    """Eight time-aligned kinematic channels.

    Norm channels are derived from the acceleration and angle triads; use
    :meth:`from_triads` unless the norms are already available.
    """

    channels: dict
    fs: float = 100.0
    t0: float = 0.0

    def __post_init__(self):
        if not self.fs > 0:
            raise _invalid(f"sampling rate must be positive, got {self.fs}")
        missing = [c for c in KIN_CHANNELS if c not in self.channels]
        if missing:
            raise _invalid(f"kinematic signal missing channels: {', '.join(missing)}")
        chans = {}
        for name in KIN_CHANNELS:
            arr = np.asarray(self.channels[name], dtype=np.float64)
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise _invalid(f"channel {name} must be a finite 1-D series")
            arr.setflags(write=False)
            chans[name] = arr
        lengths = {len(a) for a in chans.values()}
        if len(lengths) > 1:
            raise _invalid("kinematic channels must have equal length")
        for norm, triad in (("accnorm", ("accx", "accy", "accz")), ("angnorm", ("yaw", "pitch", "roll"))):
            expected = np.sqrt(sum(chans[c] ** 2 for c in triad))
            if np.any(np.abs(expected - chans[norm]) > 1e-9):
                raise _invalid(f"{norm} does not match the l2 norm of {'/'.join(triad)}")
        object.__setattr__(self, "channels", chans)

    @classmethod
    def from_triads(cls, ax, ay, az, yaw, pitch, roll, fs=100.0, t0=0.0):
        ax, ay, az, yaw, pitch, roll = (np.asarray(v, dtype=np.float64) for v in (ax, ay, az, yaw, pitch, roll))
        return cls(
            {
                "accx": ax, "accy": ay, "accz": az,
                "accnorm": np.sqrt(ax**2 + ay**2 + az**2),
                "yaw": yaw, "pitch": pitch, "roll": roll,
                "angnorm": np.sqrt(yaw**2 + pitch**2 + roll**2),
            },
            fs, t0,
        )

    def __len__(self):
        return len(self.channels["accx"])

    @property
    def duration(self):
        return len(self) / self.fs

    def slice(self, start: int, stop: int) -> "KinematicSignal":
        return KinematicSignal(
            {k: v[start:stop] for k, v in self.channels.items()}, self.fs, self.t0 + start / self.fs
        )


@dataclass(frozen=True)
class SubjectMeta:
    gender: int = 0
    bmi: float = 22.0

    def __post_init__(self):
        if self.gender not in (0, 1):
            raise _invalid(f"gender must be 0 or 1, got {self.gender!r}")
        if not self.bmi > 0:
            raise _invalid(f"bmi must be positive, got {self.bmi}")


@dataclass(frozen=True)
class AnnotationSet:
    events: tuple = ()
    scenario: str | None = None

    def __post_init__(self):
        events = tuple((float(s), float(e)) for s, e in self.events)
        for s, e in events:
            if not s < e:
                raise AlignmentError(f"annotation end {e} is not after start {s}")
        if any(b[0] < a[0] for a, b in zip(events, events[1:])):
            raise AlignmentError("annotations must be sorted by start time")
        for a, b in zip(events, events[1:]):
            if b[1] <= a[1] and b[0] >= a[0]:
                raise AlignmentError(f"annotation {b} is contained in {a}")
        object.__setattr__(self, "events", events)

    def __len__(self):
        return len(self.events)


@dataclass(frozen=True)
class Window:
    modality: str
    t_start: float
    t_end: float
    payload: Union[AudioSignal, KinematicSignal] = field(repr=False)


def decimate(signal: AudioSignal, factor: int) -> AudioSignal:
    """Low-pass filter with a 63-tap linear-phase FIR, then keep every ``factor``-th sample."""
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise _invalid(f"decimation factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return signal
    if len(signal) < FIR_TAPS:
        raise _invalid(f"signal of {len(signal)} samples is shorter than the {FIR_TAPS}-tap filter")
    taps = firwin(FIR_TAPS, FIR_CUTOFF / factor)
    half = FIR_TAPS // 2
    # edge replication keeps DC gain at exactly 1 near the boundaries
    padded = np.pad(signal.samples, half, mode="edge")
    filtered = np.convolve(padded, taps, mode="valid")
    return AudioSignal(filtered[::factor], signal.fs / factor, signal.t0)


def frame_count(duration: float, window_len: float, hop: float) -> int:
    if duration + 1e-9 < window_len:
        return 0
    return int(math.floor((duration - window_len) / hop + 1e-9)) + 1


def frame_stream(signal, window_len: float, hop: float) -> list[Window]:
    """Cut ``signal`` into windows starting at ``t0 + k*hop``; the trailing remainder is dropped."""
    if not hop > 0:
        raise _invalid(f"hop must be positive, got {hop}")
    if not window_len > 0 or hop > window_len + 1e-12:
        raise _invalid(f"need 0 < hop <= window_len, got hop={hop}, window_len={window_len}")
    modality = "audio" if isinstance(signal, AudioSignal) else "kinematic"
    n_win = int(round(window_len * signal.fs))
    windows = []
    for k in range(frame_count(signal.duration, window_len, hop)):
        start = int(round(k * hop * signal.fs))
        if start + n_win > len(signal):
            break
        t_start = signal.t0 + k * hop
        windows.append(Window(modality, t_start, t_start + window_len, signal.slice(start, start + n_win)))
    return windows


def window_at(signal, t_start: float, window_len: float) -> Window | None:
    """Window of ``signal`` beginning at absolute time ``t_start``, or None if it does not fit."""
    modality = "audio" if isinstance(signal, AudioSignal) else "kinematic"
    start = int(round((t_start - signal.t0) * signal.fs))
    n_win = int(round(window_len * signal.fs))
    if start < 0 or start + n_win > len(signal):
        return None
    return Window(modality, t_start, t_start + window_len, signal.slice(start, start + n_win))


# --- file readers -----------------------------------------------------------

def read_wav(path) -> AudioSignal:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1:
                raise ParseError(f"{path}: expected mono audio, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise ParseError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
            fs = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise ParseError(f"{path}: malformed WAV header ({exc})") from exc
    if len(raw) % 2:
        raise ParseError(f"{path}: truncated sample data at byte {len(raw) - 1}")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return AudioSignal(pcm / 32768.0, float(fs), 0.0)


def write_wav(path, signal: AudioSignal) -> None:
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(round(signal.fs)))
        wf.writeframes(pcm.tobytes())


def read_imu_csv(path) -> KinematicSignal:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected header {','.join(CSV_COLUMNS)}") from None
        for col in CSV_COLUMNS:
            if col not in header:
                raise ParseError(f"{path}: missing column '{col}'")
        idx = {name: header.index(name) for name in header}
        extra = [c for c in ("acc_norm", "ang_norm") if c in idx]
        columns = {c: [] for c in CSV_COLUMNS + tuple(extra)}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                for c in columns:
                    columns[c].append(float(row[idx[c]]))
            except (ValueError, IndexError):
                raise ParseError(f"{path}: line {lineno}: bad or missing value in column '{c}'") from None
    data = {c: np.asarray(v, dtype=np.float64) for c, v in columns.items()}
    t = data["t"]
    if len(t) >= 2:
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise ParseError(f"{path}: line {int(np.argmax(dt <= 0)) + 3}: time column not increasing")
        fs = 1.0 / float(np.median(dt))
    else:
        fs = 100.0
    sig = KinematicSignal.from_triads(
        data["ax"], data["ay"], data["az"], data["yaw"], data["pitch"], data["roll"],
        fs=fs, t0=float(t[0]) if len(t) else 0.0,
    )
    for stored, derived in (("acc_norm", "accnorm"), ("ang_norm", "angnorm")):
        if stored in data and np.any(np.abs(data[stored] - sig.channels[derived]) > 1e-6):
            raise ParseError(f"{path}: column '{stored}' disagrees with the recomputed norm")
    return sig


def write_imu_csv(path, signal: KinematicSignal) -> None:
    ch = signal.channels
    t = signal.t0 + np.arange(len(signal)) / signal.fs
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for i in range(len(signal)):
            w.writerow([repr(float(t[i]))] + [repr(float(ch[c][i])) for c in ("accx", "accy", "accz", "yaw", "pitch", "roll")])


def _load_json(path):
    path = Path(path)
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def read_annotations(path) -> AnnotationSet:
    doc = _load_json(path)
    if not isinstance(doc, dict) or not isinstance(doc.get("events"), list):
        raise ParseError(f"{path}: expected an object with an 'events' list")
    try:
        events = [(float(e["start"]), float(e["end"])) for e in doc["events"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed event entry ({exc})") from exc
    return AnnotationSet(tuple(events), doc.get("scenario"))


def write_annotations(path, annotations: AnnotationSet) -> None:
    doc = {"events": [{"start": s, "end": e} for s, e in annotations.events]}
    if annotations.scenario is not None:
        doc["scenario"] = annotations.scenario
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_meta(path) -> SubjectMeta:
    doc = _load_json(path)
    try:
        return SubjectMeta(int(doc["gender"]), float(doc["bmi"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed subject metadata ({exc})") from exc


def load_recording(audio_path, imu_path, annotation_path=None, meta=None):
    """Load one recording; returns ``(audio, kinematic, annotations, meta)``.

    ``meta`` may be a :class:`SubjectMeta`, a path to a metadata JSON, or None
    for defaults. Audio and kinematic streams must agree in duration to
    within one second.
    """
    audio = read_wav(audio_path)
    kin = read_imu_csv(imu_path)
    gap = abs((audio.t0 + audio.duration) - (kin.t0 + kin.duration))
    if gap > MAX_DURATION_MISMATCH_S:
        raise AlignmentError(
            f"audio ({audio.duration:.3f} s) and kinematic ({kin.duration:.3f} s) durations differ by {gap:.3f} s"
        )
    annotations = read_annotations(annotation_path) if annotation_path else AnnotationSet()
    if meta is None:
        meta = SubjectMeta()
    elif not isinstance(meta, SubjectMeta):
        meta = read_meta(meta)
    return audio, kin, annotations, meta


def as_intervals(events: Sequence) -> list[tuple[float, float]]:
    """Normalise annotation sets, dicts or pairs into ``(start, end)`` tuples."""
    if isinstance(events, AnnotationSet):
        return list(events.events)
    out = []
    for e in events:
        if isinstance(e, dict):
            out.append((float(e["start"]), float(e["end"])))
        elif hasattr(e, "t_start"):
            out.append((float(e.t_start), float(e.t_end)))
        else:
            out.append((float(e[0]), float(e[1])))
    return out
