"""Seeded synthetic sessions and matching toy models.

A synthetic cough is band-limited noise (300-3000 Hz) under a short Hann
spike followed by a quieter, decaying expiration tail. Each cough is paired
with a half-sine transient on accel Z and roll that starts shortly before
the sound.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .errors import InvalidArgument
from .inference import TreeEnsemble, ensemble_from_dict, save_model
from .ingest import (AnnotationSet, AudioSignal, KinematicSignal, SubjectMeta, write_annotations, write_imu_csv,
                     write_wav)

SPIKE_S = (0.03, 0.05)
DECAY_S = (0.2, 0.5)
TAIL_LEVEL = 0.35
BURST_PEAK = 0.8
MIN_SPACING_S = 2.0
EDGE_MARGIN_S = 1.0
KIN_LEAD_S = 0.2
KIN_PULSE_S = 0.3
KIN_PULSE_G = 0.5
KIN_PULSE_DEG = 15.0


@dataclass(frozen=True)
class SyntheticSession:
    audio: AudioSignal
    kinematic: KinematicSignal
    annotations: AnnotationSet
    meta: SubjectMeta
    seed: int
    onsets: tuple

    @property
    def duration(self):
        return self.audio.duration

    def write(self, directory) -> dict:
        """Emit ``audio.wav``, ``imu.csv``, ``annotations.json`` and ``meta.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {
            "audio": d / "audio.wav",
            "imu": d / "imu.csv",
            "annotations": d / "annotations.json",
            "meta": d / "meta.json",
        }
        write_wav(paths["audio"], self.audio)
        write_imu_csv(paths["imu"], self.kinematic)
        write_annotations(paths["annotations"], self.annotations)
        paths["meta"].write_text(json.dumps({"gender": self.meta.gender, "bmi": self.meta.bmi}) + "\n")
        return paths


def _onsets(rng, n_events, duration):
    usable = duration - 2 * EDGE_MARGIN_S
    slack = usable - (n_events - 1) * MIN_SPACING_S
    if n_events > 0 and slack < 0:
        raise InvalidArgument(
            f"{n_events} events need {2 * EDGE_MARGIN_S + (n_events - 1) * MIN_SPACING_S:.1f} s, "
            f"session is {duration:.1f} s", module="fixtures")
    u = np.sort(rng.uniform(0.0, max(slack, 0.0), n_events))
    return [EDGE_MARGIN_S + float(u[i]) + i * MIN_SPACING_S for i in range(n_events)]


def _burst(rng, fs, sos):
    spike = rng.uniform(*SPIKE_S)
    decay = rng.uniform(*DECAY_S)
    n_spike = int(round(spike * fs))
    n_half = n_spike // 2
    n_decay = int(round(decay * fs))
    n = n_half + n_decay
    env = np.zeros(n)
    env[:n_spike] = np.hanning(n_spike + 2)[1:-1]
    tail = TAIL_LEVEL * 0.5 * (1.0 + np.cos(np.pi * np.arange(n_decay) / n_decay))
    env[n_half:] = np.maximum(env[n_half:], tail)
    noise = sosfiltfilt(sos, rng.standard_normal(n + 200))[100:-100]
    noise /= np.max(np.abs(noise))
    return BURST_PEAK * env * noise, n / fs


def gen_session(seed: int = 0, n_events: int = 3, duration: float = 10.0, noise: float = 0.0,
                fs_audio: float = 8000.0, fs_kin: float = 100.0) -> SyntheticSession:
    """Deterministic session with ``n_events`` injected coughs at least 2 s apart."""
    if n_events < 0:
        raise InvalidArgument("n_events must be non-negative", module="fixtures")
    if duration <= 0 or noise < 0:
        raise InvalidArgument("duration must be positive and noise non-negative", module="fixtures")
    rng = np.random.default_rng(seed)
    onsets = _onsets(rng, n_events, duration)

    n_audio = int(round(duration * fs_audio))
    audio = noise * rng.standard_normal(n_audio)
    sos = butter(4, [300.0, min(3000.0, 0.45 * fs_audio)], btype="bandpass", fs=fs_audio, output="sos")
    events = []
    for t in onsets:
        burst, length = _burst(rng, fs_audio, sos)
        i = int(round(t * fs_audio))
        audio[i:i + len(burst)] += burst
        events.append((t, t + length))
    audio = np.clip(audio, -1.0, 1.0)

    n_kin = int(round(duration * fs_kin))
    tk = np.arange(n_kin) / fs_kin
    kin_noise = 0.05 * noise
    ax = kin_noise * rng.standard_normal(n_kin)
    ay = kin_noise * rng.standard_normal(n_kin)
    az = 1.0 + kin_noise * rng.standard_normal(n_kin)
    yaw = 5.0 + kin_noise * rng.standard_normal(n_kin)
    pitch = -3.0 + kin_noise * rng.standard_normal(n_kin)
    roll = 2.0 + kin_noise * rng.standard_normal(n_kin)
    for t in onsets:
        phase = (tk - (t - KIN_LEAD_S)) / KIN_PULSE_S
        pulse = np.where((phase >= 0) & (phase <= 1), np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)
        az = az + KIN_PULSE_G * pulse
        roll = roll + KIN_PULSE_DEG * pulse
    kin = KinematicSignal.from_triads(ax, ay, az, yaw, pitch, roll, fs=fs_kin)

    return SyntheticSession(AudioSignal(audio, fs_audio), kin, AnnotationSet(tuple(events)),
                            SubjectMeta(gender=int(rng.integers(0, 2)), bmi=22.0), seed, tuple(onsets))


def _stump(modality, feature, threshold, window_len, fs, strength=4.0) -> TreeEnsemble:
    return ensemble_from_dict({
        "modality": modality,
        "base_score": 0.0,
        "window_len_s": window_len,
        "fs_hz": fs,
        "feature_names": [feature],
        "trees": [[{"f": feature, "t": threshold, "l": 1, "r": 2, "d": "l"},
                   {"leaf": -strength}, {"leaf": strength}]],
    }, f"{modality} fixture model")


def fixture_models(fs_audio: float = 8000.0, fs_kin: float = 100.0) -> tuple[TreeEnsemble, TreeEnsemble]:
    """(audio, kinematic) stumps that fire on burst loudness and accel-Z activity."""
    audio = _stump("audio", "audio/time/rms", 0.02, 0.8, fs_audio)
    kin = _stump("kinematic", "kin/accz/linelength", 0.1, 0.5, fs_kin)
    return audio, kin


def write_fixture(directory, seed: int = 0, n_events: int = 3, duration: float = 10.0, noise: float = 0.0) -> dict:
    """Session files plus both fixture models under ``directory``."""
    session = gen_session(seed, n_events, duration, noise)
    paths = session.write(directory)
    audio_model, kin_model = fixture_models(session.audio.fs, session.kinematic.fs)
    paths["audio_model"] = Path(directory) / "audio_model.json"
    paths["kin_model"] = Path(directory) / "kin_model.json"
    save_model(audio_model, paths["audio_model"])
    save_model(kin_model, paths["kin_model"])
    return paths
