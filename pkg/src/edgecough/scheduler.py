"""Kinematic-triggers-audio duty cycling.

The kinematic classifier runs on a fixed lattice of windows. A kinematic
cough decision hands control to the audio classifier, which keeps running
until it says non-cough or has run ``n_windows_max`` consecutive windows;
the kinematic model then resumes on the first lattice point at or after the
end of the last audio window. Skipped kinematic windows are never
back-filled.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

from .dsp_audio import AudioFeatureConfig, extract_audio_features
from .dsp_kinematic import extract_kinematic_features
from .errors import ConfigError, InvalidArgument
from .inference import TreeEnsemble, predict_proba
from .ingest import AudioSignal, KinematicSignal, SubjectMeta, frame_stream, window_at

KINEMATIC = "kinematic"
AUDIO = "audio"
COUGH = "cough"
NON_COUGH = "non_cough"
MODES = ("rerun", "no_rerun")


def _t(x: float) -> float:
    # keep lattice arithmetic free of accumulated float drift
    return round(x, 9)


@dataclass(frozen=True)
class SchedulerConfig:
    mode: str = "rerun"
    n_windows_max: int = 4
    th_kin: float = 0.05
    th_audio: float = 0.3
    audio_window: float = 0.8
    audio_hop: float = 0.4
    kin_window: float = 0.5
    kin_hop: float = 0.25

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}", module="scheduler")
        if int(self.n_windows_max) != self.n_windows_max or self.n_windows_max < 1:
            raise ConfigError(f"n_windows_max must be a positive integer, got {self.n_windows_max}", module="scheduler")
        for name in ("th_kin", "th_audio"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {getattr(self, name)}", module="scheduler")
        for win, hop in (("audio_window", "audio_hop"), ("kin_window", "kin_hop")):
            if not 0 < getattr(self, hop) <= getattr(self, win):
                raise ConfigError(f"need 0 < {hop} <= {win}", module="scheduler")


@dataclass(frozen=True)
class SchedulerState:
    active_model: str = KINEMATIC
    audio_run_len: int = 0
    next_window_start: float = 0.0
    grid_origin: float = 0.0


@dataclass(frozen=True)
class TraceEntry:
    t_start: float
    t_end: float
    model: str
    probability: float
    decision: str

    @property
    def is_cough(self):
        return self.decision == COUGH


@dataclass
class ExecutionTrace:
    entries: list = field(default_factory=list)
    duration: float = 0.0

    def count(self, model: str) -> int:
        return sum(1 for e in self.entries if e.model == model)

    def audio_runs(self) -> list[list[TraceEntry]]:
        runs, current = [], []
        for e in self.entries:
            if e.model == AUDIO:
                current.append(e)
            elif current:
                runs.append(current)
                current = []
        if current:
            runs.append(current)
        return runs

    def __add__(self, other: "ExecutionTrace") -> "ExecutionTrace":
        return ExecutionTrace(self.entries + other.entries, self.duration + other.duration)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(e), sort_keys=True) + "\n" for e in self.entries)

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str, duration: float | None = None) -> "ExecutionTrace":
        entries = [TraceEntry(**json.loads(line)) for line in text.splitlines() if line.strip()]
        if duration is None:
            duration = (entries[-1].t_end - entries[0].t_start) if entries else 0.0
        return cls(entries, duration)

    @classmethod
    def read(cls, path, duration: float | None = None) -> "ExecutionTrace":
        return cls.from_jsonl(Path(path).read_text(), duration)


def next_grid_point(t: float, origin: float, hop: float) -> float:
    k = math.ceil((t - origin) / hop - 1e-9)
    return _t(origin + max(k, 0) * hop)


def step(state: SchedulerState, config: SchedulerConfig, probability: float) -> tuple[SchedulerState, TraceEntry]:
    """Apply one classifier output for the window starting at ``state.next_window_start``."""
    if not 0.0 <= probability <= 1.0:
        raise InvalidArgument(f"probability {probability} outside [0, 1]", module="scheduler")
    t = state.next_window_start
    if state.active_model == KINEMATIC:
        cough = probability >= config.th_kin
        entry = TraceEntry(t, _t(t + config.kin_window), KINEMATIC, probability, COUGH if cough else NON_COUGH)
        if cough:
            start = t if config.mode == "rerun" else _t(t + config.kin_window)
            return replace(state, active_model=AUDIO, audio_run_len=0, next_window_start=start), entry
        return replace(state, next_window_start=_t(t + config.kin_hop)), entry

    cough = probability >= config.th_audio
    entry = TraceEntry(t, _t(t + config.audio_window), AUDIO, probability, COUGH if cough else NON_COUGH)
    run = state.audio_run_len + 1
    if cough and run < config.n_windows_max:
        return replace(state, audio_run_len=run, next_window_start=_t(t + config.audio_hop)), entry
    resume = next_grid_point(entry.t_end, state.grid_origin, config.kin_hop)
    return replace(state, active_model=KINEMATIC, audio_run_len=0, next_window_start=resume), entry


ProbFn = Callable[[float], float]


def drive(config: SchedulerConfig, duration: float, kin_prob: ProbFn, audio_prob: ProbFn,
          t0: float = 0.0) -> ExecutionTrace:
    """Run the multimodal state machine over ``[t0, t0 + duration)``.

    ``kin_prob(t)`` / ``audio_prob(t)`` return the classifier probability for
    the window starting at ``t``; they are only called for windows the
    scheduler actually executes.
    """
    state = SchedulerState(next_window_start=_t(t0), grid_origin=t0)
    end = t0 + duration + 1e-9
    entries = []
    while True:
        t = state.next_window_start
        if state.active_model == KINEMATIC:
            if t + config.kin_window > end:
                break
            p = kin_prob(t)
        else:
            if t + config.audio_window > end:
                break
            p = audio_prob(t)
        state, entry = step(state, config, p)
        entries.append(entry)
    return ExecutionTrace(entries, duration)


def drive_single(model: str, config: SchedulerConfig, duration: float, prob: ProbFn, t0: float = 0.0) -> ExecutionTrace:
    """Single-modality execution on that modality's own window lattice."""
    if model == AUDIO:
        win, hop, th = config.audio_window, config.audio_hop, config.th_audio
    elif model == KINEMATIC:
        win, hop, th = config.kin_window, config.kin_hop, config.th_kin
    else:
        raise InvalidArgument(f"unknown model {model!r}", module="scheduler")
    entries = []
    k = 0
    while True:
        t = _t(t0 + k * hop)
        if t + win > t0 + duration + 1e-9:
            break
        p = prob(t)
        if not 0.0 <= p <= 1.0:
            raise InvalidArgument(f"probability {p} outside [0, 1]", module="scheduler")
        entries.append(TraceEntry(t, _t(t + win), model, p, COUGH if p >= th else NON_COUGH))
        k += 1
    return ExecutionTrace(entries, duration)


# --- model-backed execution ---------------------------------------------------

@dataclass
class SessionResult:
    trace: ExecutionTrace
    cough_windows: list  # Window objects with a cough decision


def _check_model(model: TreeEnsemble, modality: str, window_len: float, fs: float):
    if model.modality != modality:
        raise ConfigError(f"{modality} slot received a {model.modality} model", module="scheduler")
    if abs(model.window_len - window_len) > 1e-9:
        raise ConfigError(
            f"{modality} model expects {model.window_len} s windows, config uses {window_len} s", module="scheduler"
        )
    if abs(model.fs - fs) > 1e-6:
        raise ConfigError(f"{modality} model expects {model.fs} Hz, stream is {fs} Hz", module="scheduler")


class _ModelProb:
    """Window-start -> probability, extracting only the model's masked features."""

    def __init__(self, model, signal, window_len, meta, audio_config=None):
        self.model = model
        self.signal = signal
        self.window_len = window_len
        self.meta = meta
        self.audio_config = audio_config
        self.mask = model.mask
        self.windows = {}

    def window(self, t):
        w = window_at(self.signal, t, self.window_len)
        if w is None:
            raise InvalidArgument(f"window at {t:.3f} s does not fit the stream", module="scheduler")
        return w

    def __call__(self, t):
        w = self.window(t)
        if self.model.modality == AUDIO:
            feats = extract_audio_features(w, self.mask, self.meta, self.audio_config)
            self.windows[t] = w
        else:
            feats = extract_kinematic_features(w, self.mask, self.meta)
        return predict_proba(self.model, feats)


def _audio_config_for(model: TreeEnsemble, audio_config: Optional[AudioFeatureConfig]):
    cfg = audio_config or AudioFeatureConfig()
    return replace(cfg, fs=model.fs, window_len=model.window_len)


def run_session(audio: AudioSignal, kinematic: KinematicSignal, audio_model: TreeEnsemble,
                kin_model: TreeEnsemble, config: SchedulerConfig, meta: SubjectMeta | None = None,
                audio_config: AudioFeatureConfig | None = None) -> SessionResult:
    """Multimodal execution over two time-aligned streams."""
    _check_model(audio_model, AUDIO, config.audio_window, audio.fs)
    _check_model(kin_model, KINEMATIC, config.kin_window, kinematic.fs)
    t0 = max(audio.t0, kinematic.t0)
    duration = min(audio.t0 + audio.duration, kinematic.t0 + kinematic.duration) - t0
    audio_fn = _ModelProb(audio_model, audio, config.audio_window, meta, _audio_config_for(audio_model, audio_config))
    kin_fn = _ModelProb(kin_model, kinematic, config.kin_window, meta)
    trace = drive(config, _t(max(duration, 0.0)), kin_fn, audio_fn, t0)
    coughs = [audio_fn.windows[e.t_start] for e in trace.entries if e.model == AUDIO and e.is_cough]
    return SessionResult(trace, coughs)


def run_single_model(stream, model: TreeEnsemble, config: SchedulerConfig, meta: SubjectMeta | None = None,
                     audio_config: AudioFeatureConfig | None = None) -> SessionResult:
    """Run one classifier on every window of its own stream."""
    if isinstance(stream, AudioSignal):
        _check_model(model, AUDIO, config.audio_window, stream.fs)
        cfg = _audio_config_for(model, audio_config)
        windows = frame_stream(stream, config.audio_window, config.audio_hop)
        extract = lambda w: extract_audio_features(w, model.mask, meta, cfg)  # noqa: E731
        th, modality = config.th_audio, AUDIO
    elif isinstance(stream, KinematicSignal):
        _check_model(model, KINEMATIC, config.kin_window, stream.fs)
        windows = frame_stream(stream, config.kin_window, config.kin_hop)
        extract = lambda w: extract_kinematic_features(w, model.mask, meta)  # noqa: E731
        th, modality = config.th_kin, KINEMATIC
    else:
        raise InvalidArgument(f"unsupported stream type {type(stream).__name__}", module="scheduler")
    entries, coughs = [], []
    for w in windows:
        p = predict_proba(model, extract(w))
        entry = TraceEntry(_t(w.t_start), _t(w.t_end), modality, p, COUGH if p >= th else NON_COUGH)
        entries.append(entry)
        if entry.is_cough:
            coughs.append(w)
    return SessionResult(ExecutionTrace(entries, stream.duration), coughs)
