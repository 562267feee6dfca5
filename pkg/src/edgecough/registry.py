"""Canonical feature-name registry.

The registry fixes feature order for CSV dumps, model binding and
tie-breaking during feature elimination. A machine-readable copy lives in
``data/feature_registry.json``; regenerate it with
``python -m edgecough.registry > src/edgecough/data/feature_registry.json``.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from .ingest import KIN_CHANNELS

N_MEL = 64
N_MFCC = 13
N_EEPD = 19
AZC_EPSILONS = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

SPECTRAL_NAMES = (
    "decrease", "slope", "rolloff", "skew", "centroid", "spread", "flatness",
    "std", "entropy", "domfreq", "psd_total", "psd_low", "psd_mid", "psd_high",
)
BAND_STATS = ("mean", "std", "entropy", "max")
AUDIO_TIME_NAMES = ("rms", "zcr", "crest")
KIN_STATS = ("zcr", "rms", "crest", "kurtosis", "linelength") + tuple(
    f"azc{round(e * 10)}" for e in AZC_EPSILONS
)

GENDER = "meta/gender"
BMI = "meta/bmi"

FORMULAS = {
    "audio/spec/decrease": "sum_{k>=1} (P_k - P_0) / k / sum_{k>=1} P_k",
    "audio/spec/slope": "least-squares slope of P against frequency (per Hz)",
    "audio/spec/rolloff": "lowest frequency whose cumulative power reaches 85% of total",
    "audio/spec/skew": "third standardised moment of frequency under p = P / sum(P)",
    "audio/spec/centroid": "sum f * p",
    "audio/spec/spread": "sqrt(sum (f - centroid)^2 * p)",
    "audio/spec/flatness": "geometric mean of P / arithmetic mean of P",
    "audio/spec/std": "standard deviation of P across bins",
    "audio/spec/entropy": "-sum p ln p",
    "audio/spec/domfreq": "frequency of the PSD maximum",
    "audio/spec/psd_total": "total power sum P * df (assumed summary)",
    "audio/spec/psd_low": "power in 0-1000 Hz (assumed summary)",
    "audio/spec/psd_mid": "power in 1000-2000 Hz (assumed summary)",
    "audio/spec/psd_high": "power above 2000 Hz (assumed summary)",
    "audio/time/rms": "sqrt(mean x^2)",
    "audio/time/zcr": "sign changes / (n - 1)",
    "audio/time/crest": "max|x| / rms",
}


def spectral_names():
    return tuple(f"audio/spec/{n}" for n in SPECTRAL_NAMES)


def mel_names():
    return tuple(f"audio/mel{k}/{s}" for k in range(N_MEL) for s in BAND_STATS)


def mfcc_names():
    return tuple(f"audio/mfcc{k}/{s}" for k in range(N_MFCC) for s in BAND_STATS)


def audio_time_names():
    return tuple(f"audio/time/{n}" for n in AUDIO_TIME_NAMES)


def eepd_names():
    return tuple(f"audio/eepd{k}" for k in range(N_EEPD))


def audio_feature_names(variant: str = "mel") -> tuple[str, ...]:
    """Full unmasked audio feature list for the ``mel`` or ``mfcc`` variant."""
    if variant == "mel":
        band = mel_names()
    elif variant == "mfcc":
        band = mfcc_names()
    else:
        raise ValueError(f"unknown audio feature variant {variant!r}")
    return spectral_names() + band + audio_time_names() + eepd_names() + (GENDER,)


def kinematic_feature_names() -> tuple[str, ...]:
    per_channel = tuple(f"kin/{ch}/{s}" for ch in KIN_CHANNELS for s in KIN_STATS)
    return per_channel + (GENDER, BMI)


@lru_cache(maxsize=None)
def all_feature_names() -> tuple[str, ...]:
    audio = spectral_names() + mel_names() + mfcc_names() + audio_time_names() + eepd_names() + (GENDER,)
    return audio + tuple(n for n in kinematic_feature_names() if n != GENDER)


@lru_cache(maxsize=None)
def _index():
    return {name: i for i, name in enumerate(all_feature_names())}


def registry_index(name: str) -> int:
    return _index()[name]


def is_registered(name: str) -> bool:
    return name in _index()


def registry_document() -> dict:
    def group(name):
        if name.startswith("meta/"):
            return "meta"
        head = name.split("/")[1]
        for prefix in ("mel", "mfcc", "eepd"):
            if head.startswith(prefix) and head[len(prefix):].isdigit():
                return prefix
        return name.split("/")[0] + "/" + head if name.startswith("audio/") else "kin"

    return {
        "version": 1,
        "variants": {
            "audio_mel": len(audio_feature_names("mel")),
            "audio_mfcc": len(audio_feature_names("mfcc")),
            "kinematic": len(kinematic_feature_names()),
        },
        "features": [
            {"name": n, "group": group(n), **({"formula": FORMULAS[n]} if n in FORMULAS else {})}
            for n in all_feature_names()
        ],
    }


def load_shipped_registry() -> dict:
    text = resources.files("edgecough").joinpath("data/feature_registry.json").read_text()
    return json.loads(text)


if __name__ == "__main__":
    print(json.dumps(registry_document(), indent=1))
