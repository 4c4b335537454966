"""Seeded synthetic EEG generator.

Pink-noise background plus class-dependent Gaussian-bump evoked templates at
event onsets, so every pipeline stage is testable without external data.
Zero template amplitude gives a label-free null dataset; strong templates give
a dataset any reasonable decoder separates well above chance.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
import numpy as np

from .core import PHONEMES, Event, LabelRecord, Recording
from .data_io import save_container

# Desk-scale CVC inventories built from the 11-symbol alphabet.
REAL_WORDS: tuple[tuple[str, str, str], ...] = (
    ("b", "a", "t"), ("b", "i", "t"), ("d", "o", "t"), ("s", "i", "t"),
    ("t", "o", "p"), ("z", "i", "p"), ("b", "u", "s"), ("p", "e", "t"),
)
PSEUDO_WORDS: tuple[tuple[str, str, str], ...] = (
    ("z", "a", "d"), ("p", "e", "z"), ("t", "i", "z"), ("s", "o", "b"),
    ("z", "u", "p"), ("d", "e", "b"), ("p", "i", "d"), ("b", "o", "z"),
)
DIPHONES: tuple[tuple[str, str], ...] = (
    ("b", "a"), ("d", "i"), ("s", "o"), ("a", "t"), ("u", "z"), ("e", "p"),
)


@dataclass(frozen=True)
class ClassTemplate:
    """Evoked response for one phoneme: Gaussian bump in time, fixed
    spatial weight pattern across channels."""
    latency_ms: float
    width_ms: float
    amplitude_uv: float
    channel_weights: tuple[float, ...]


@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int = 16
    n_channels: int = 8
    trials_per_class: int = 4        # single-phoneme trials per phoneme
    cvc_repeats: int = 1             # repeats of each CVC word (real + pseudo)
    diphone_repeats: int = 0
    fs: float = 2048.0
    noise_exponent: float = 1.0      # pink 1/f
    noise_uv: float = 10.0
    amplitude_uv: float = 20.0       # template peak; 0 = null dataset
    subject_gain: tuple[float, float] = (0.8, 1.2)
    tms_block: int = 12              # consecutive trials sharing a TMS condition
    iti_s: tuple[float, float] = (1.2, 1.5)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        if self.trials_per_class < 0 or self.cvc_repeats < 0:
            raise ValueError("trial counts must be >= 0")
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if self.amplitude_uv < 0:
            raise ValueError("amplitude_uv must be >= 0")
        if not self.subject_gain[0] <= self.subject_gain[1]:
            raise ValueError("subject_gain range reversed")


def pink_noise(n_samples: int, n_channels: int, exponent: float,
               rng: np.random.Generator) -> np.ndarray:
    """1/f^exponent noise per channel via spectral shaping, unit variance."""
    white = rng.standard_normal((n_samples, n_channels))
    spec = np.fft.rfft(white, axis=0)
    freqs = np.fft.rfftfreq(n_samples, d=1.0)
    scale = np.ones_like(freqs)
    scale[1:] = freqs[1:] ** (-exponent / 2.0)
    scale[0] = 0.0
    shaped = np.fft.irfft(spec * scale[:, None], n=n_samples, axis=0)
    std = shaped.std(axis=0, keepdims=True)
    std[std < 1e-30] = 1.0
    return shaped / std


def make_templates(spec: SynthSpec) -> dict[str, ClassTemplate]:
    """One distinct template per phoneme, deterministic in the spec seed."""
    rng = np.random.default_rng([spec.seed, 7001])
    templates = {}
    for i, phoneme in enumerate(PHONEMES):
        latency = 100.0 + 18.0 * i          # spread over 100-280 ms
        width = 35.0 + 2.0 * i
        weights = rng.uniform(0.2, 1.0, size=spec.n_channels)
        weights *= rng.choice([-1.0, 1.0], size=spec.n_channels)
        templates[phoneme] = ClassTemplate(
            latency_ms=latency, width_ms=width,
            amplitude_uv=spec.amplitude_uv,
            channel_weights=tuple(weights))
    return templates


def _bump(template: ClassTemplate, fs: float, offset_ms: float,
          n_samples: int, gain: float) -> tuple[int, np.ndarray]:
    """Gaussian bump waveform and the sample index where it starts."""
    center_s = (template.latency_ms + offset_ms) / 1000.0
    width_s = template.width_ms / 1000.0
    half = int(round(3 * width_s * fs))
    center = int(round(center_s * fs))
    t = (np.arange(center - half, center + half + 1) - center_s * fs) / fs
    wave = gain * template.amplitude_uv * np.exp(-0.5 * (t / width_s) ** 2)
    return center - half, np.outer(wave, template.channel_weights)


def _trial_plan(spec: SynthSpec, rng: np.random.Generator) -> list[dict]:
    trials: list[dict] = []
    for phoneme in PHONEMES:
        for _ in range(spec.trials_per_class):
            trials.append({"word": (phoneme,), "lexicality": "n/a"})
    for _ in range(spec.diphone_repeats):
        for word in DIPHONES:
            trials.append({"word": word, "lexicality": "n/a"})
    for _ in range(spec.cvc_repeats):
        for word in REAL_WORDS:
            trials.append({"word": word, "lexicality": "real"})
        for word in PSEUDO_WORDS:
            trials.append({"word": word, "lexicality": "pseudo"})
    order = rng.permutation(len(trials))
    return [trials[i] for i in order]


def generate_recording(spec: SynthSpec, subject: str,
                       subject_index: int) -> Recording:
    """One subject's continuous recording with its event table."""
    rng = np.random.default_rng([spec.seed, 101, subject_index])
    templates = make_templates(spec)
    gain = rng.uniform(*spec.subject_gain)
    trials = _trial_plan(spec, rng)

    onsets = []
    t = 0.5 + rng.uniform(0.0, 0.2)
    for _ in trials:
        onsets.append(int(round(t * spec.fs)))
        t += rng.uniform(*spec.iti_s)
    n_samples = int(round((t + 1.0) * spec.fs))

    samples = spec.noise_uv * pink_noise(n_samples, spec.n_channels,
                                         spec.noise_exponent, rng)
    # Positional stagger puts each phoneme of a word in its own third of the
    # post-onset window, matching how multi-phoneme trials are decoded.
    events = []
    tms_cycle = ("NULL", "LipTMS", "TongueTMS")
    for i, (onset, trial) in enumerate(zip(onsets, trials)):
        word = trial["word"]
        for pos, phoneme in enumerate(word):
            offset_ms = pos * (800.0 / 3.0)
            start, wave = _bump(templates[phoneme], spec.fs, offset_ms,
                                n_samples, gain)
            lo = max(0, onset + start)
            hi = min(n_samples, onset + start + wave.shape[0])
            if hi > lo:
                samples[lo:hi] += wave[lo - (onset + start):
                                       hi - (onset + start)]
        tms = tms_cycle[(i // spec.tms_block) % 3]
        label = LabelRecord.create(subject=subject, phoneme=word[0], tms=tms,
                                   lexicality=trial["lexicality"],
                                   word_phonemes=word)
        events.append(Event(onset_sample=onset, label=label))

    names = tuple(_channel_names(spec.n_channels))
    return Recording(samples=samples, fs=spec.fs, channel_names=names,
                     events=tuple(events))


def _channel_names(n: int) -> list[str]:
    # First channels get frontal names so the EOG-proxy default applies.
    standard = ["Fp1", "Fp2", "AF7", "AF8", "Cz", "Pz", "O1", "O2",
                "C3", "C4", "F3", "F4", "P3", "P4", "T7", "T8"]
    if n <= len(standard):
        return standard[:n]
    return standard + [f"EEG{i:03d}" for i in range(n - len(standard))]


def subject_names(n: int) -> list[str]:
    return [f"S{i:02d}" for i in range(1, n + 1)]


def generate_synthetic(spec: SynthSpec, out_dir: str) -> list[str]:
    """Write one container directory per subject; returns their paths."""
    paths = []
    for idx, subject in enumerate(subject_names(spec.n_subjects)):
        rec = generate_recording(spec, subject, idx)
        path = os.path.join(out_dir, subject)
        save_container(path, rec, subject)
        paths.append(path)
    return paths
