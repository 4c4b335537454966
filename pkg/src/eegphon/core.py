"""Domain types, phoneme label schema, and cross-validation split construction.

Everything here is immutable after construction so instances can be shared
freely across worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Class index order is the fixed alphabetical phoneme order. All confusion
# matrices and logits use this order.
PHONEMES: tuple[str, ...] = ("a", "b", "d", "e", "i", "o", "p", "s", "t", "u", "z")
PHONEME_INDEX: dict[str, int] = {p: i for i, p in enumerate(PHONEMES)}

VOWELS = frozenset("aeiou")
CONSONANTS = frozenset(PHONEMES) - VOWELS

_PLACE = {"b": "bilabial", "p": "bilabial",
          "d": "alveolar", "t": "alveolar", "s": "alveolar", "z": "alveolar"}
_MANNER = {"s": "fricative", "z": "fricative",
           "b": "stop", "d": "stop", "p": "stop", "t": "stop"}
_VOICING = {"b": "voiced", "d": "voiced", "z": "voiced",
            "p": "unvoiced", "s": "unvoiced", "t": "unvoiced"}

TMS_CONDITIONS = ("NULL", "LipTMS", "TongueTMS")
LEXICALITIES = ("real", "pseudo", "n/a")

# Task name -> number of classes for that classification target.
TASK_CLASSES: dict[str, int] = {
    "phoneme": 11,
    "place": 2,
    "manner": 2,
    "voicing": 2,
    "category": 2,
    "complexity": 3,
}

# Binary articulatory class index order (index 0 listed first).
TASK_LABEL_ORDER: dict[str, tuple[str, ...]] = {
    "phoneme": PHONEMES,
    "place": ("alveolar", "bilabial"),
    "manner": ("fricative", "stop"),
    "voicing": ("voiced", "unvoiced"),
    "category": ("consonant", "vowel"),
    "complexity": ("single", "diphone", "triphone"),
}


def derive_labels(phoneme: str) -> dict[str, str]:
    """Map a phoneme symbol to its articulatory feature labels.

    Returns a dict with keys place, manner, voicing, category. Vowels get
    "n/a" for the three consonant features.
    """
    if phoneme not in PHONEME_INDEX:
        raise ValueError(f"unknown phoneme symbol {phoneme!r}; "
                         f"expected one of {' '.join(PHONEMES)}")
    if phoneme in VOWELS:
        return {"place": "n/a", "manner": "n/a", "voicing": "n/a",
                "category": "vowel"}
    return {"place": _PLACE[phoneme], "manner": _MANNER[phoneme],
            "voicing": _VOICING[phoneme], "category": "consonant"}


@dataclass(frozen=True)
class LabelRecord:
    """Per-trial label: phoneme identity plus derived articulatory features.

    Construct via :meth:`create`, which fills the derived fields from the
    phoneme so they can never drift out of sync.
    """

    subject: str
    phoneme: str
    place: str
    manner: str
    voicing: str
    category: str
    complexity: str
    tms: str = "NULL"
    lexicality: str = "n/a"
    word_phonemes: tuple[str, ...] = ()

    @classmethod
    def create(cls, subject: str, phoneme: str, tms: str = "NULL",
               lexicality: str = "n/a",
               word_phonemes: Sequence[str] | None = None) -> "LabelRecord":
        if word_phonemes is None:
            word_phonemes = (phoneme,)
        word_phonemes = tuple(word_phonemes)
        if not 1 <= len(word_phonemes) <= 3:
            raise ValueError(f"word_phonemes length must be 1-3, "
                             f"got {len(word_phonemes)}")
        for p in word_phonemes:
            if p not in PHONEME_INDEX:
                raise ValueError(f"unknown phoneme symbol {p!r} in word")
        if tms not in TMS_CONDITIONS:
            raise ValueError(f"unknown TMS condition {tms!r}")
        if lexicality not in LEXICALITIES:
            raise ValueError(f"unknown lexicality {lexicality!r}")
        derived = derive_labels(phoneme)
        complexity = ("single", "diphone", "triphone")[len(word_phonemes) - 1]
        return cls(subject=subject, phoneme=phoneme, tms=tms,
                   lexicality=lexicality, word_phonemes=word_phonemes,
                   complexity=complexity, **derived)

    def __post_init__(self) -> None:
        derived = derive_labels(self.phoneme)
        for key, want in derived.items():
            if getattr(self, key) != want:
                raise ValueError(
                    f"inconsistent derived label for {self.phoneme!r}: "
                    f"{key}={getattr(self, key)!r}, expected {want!r}")

    def task_value(self, task: str) -> str:
        """String class label for a task ('n/a' when undefined)."""
        return getattr(self, task) if task != "phoneme" else self.phoneme

    def task_index(self, task: str) -> int:
        """Integer class index for a task, or -1 when the task is undefined
        for this trial (vowel on a binary articulatory task)."""
        value = self.task_value(task)
        order = TASK_LABEL_ORDER[task]
        if value == "n/a":
            return -1
        return order.index(value)


@dataclass(frozen=True)
class Event:
    onset_sample: int
    label: LabelRecord

    def __post_init__(self) -> None:
        if self.onset_sample < 0:
            raise ValueError(f"onset_sample must be >= 0, got {self.onset_sample}")


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Recording:
    """Continuous multi-channel signal, time-major (time x channels), in uV."""

    samples: np.ndarray
    fs: float
    channel_names: tuple[str, ...]
    events: tuple[Event, ...] = ()

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValueError("samples must be 2-D (time x channels)")
        n_time, n_chan = samples.shape
        if self.fs <= 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        if n_chan < 1 or n_time < 2:
            raise ValueError(f"need >= 1 channel and >= 2 time points, "
                             f"got shape {samples.shape}")
        if len(self.channel_names) != n_chan:
            raise ValueError("channel_names length does not match channel count")
        if len(set(self.channel_names)) != n_chan:
            raise ValueError("channel names must be unique")
        for ev in self.events:
            if not 0 <= ev.onset_sample < n_time:
                raise ValueError(f"event onset {ev.onset_sample} outside "
                                 f"[0, {n_time})")
        object.__setattr__(self, "samples", _freeze(samples))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "events", tuple(self.events))

    @property
    def n_times(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    def replace_samples(self, samples: np.ndarray, fs: float | None = None,
                        events: tuple[Event, ...] | None = None) -> "Recording":
        return Recording(samples=samples,
                         fs=self.fs if fs is None else fs,
                         channel_names=self.channel_names,
                         events=self.events if events is None else events)


@dataclass(frozen=True)
class EpochSet:
    """Stimulus-locked windows: ERP samples (T x C) or DDA coefficients (T x 3C).

    ``data`` is (epoch x time x feature). ``n_edge_skipped`` counts events too
    close to a recording edge; ``n_amplitude_rejected`` counts epochs dropped
    by the amplitude criterion. Epochs + skipped + rejected = events.
    """

    data: np.ndarray
    labels: tuple[LabelRecord, ...]
    feature_kind: str
    window_ms: tuple[float, float] = (-200.0, 800.0)
    n_edge_skipped: int = 0
    n_amplitude_rejected: int = 0

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError("data must be 3-D (epoch x time x feature)")
        if data.shape[0] != len(self.labels):
            raise ValueError(f"{data.shape[0]} epochs but {len(self.labels)} labels")
        if self.feature_kind not in ("ERP", "DDA"):
            raise ValueError(f"feature_kind must be ERP or DDA, "
                             f"got {self.feature_kind!r}")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "window_ms",
                           (float(self.window_ms[0]), float(self.window_ms[1])))

    @property
    def n_epochs(self) -> int:
        return self.data.shape[0]

    @property
    def n_times(self) -> int:
        return self.data.shape[1]

    @property
    def n_features(self) -> int:
        return self.data.shape[2]

    def subjects(self) -> tuple[str, ...]:
        return tuple(sorted({lab.subject for lab in self.labels}))

    def select(self, mask: np.ndarray) -> "EpochSet":
        """Subset by boolean mask or index array (drop counters reset)."""
        idx = np.asarray(mask)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return EpochSet(data=self.data[idx],
                        labels=tuple(self.labels[i] for i in idx),
                        feature_kind=self.feature_kind,
                        window_ms=self.window_ms)


@dataclass(frozen=True)
class DatasetSplit:
    train_subjects: frozenset[str]
    val_subjects: frozenset[str]
    test_subjects: frozenset[str]
    scheme: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "train_subjects", frozenset(self.train_subjects))
        object.__setattr__(self, "val_subjects", frozenset(self.val_subjects))
        object.__setattr__(self, "test_subjects", frozenset(self.test_subjects))
        self.check()

    def check(self) -> None:
        """Re-validate disjointness; called again right before training runs."""
        if (self.train_subjects & self.val_subjects
                or self.train_subjects & self.test_subjects
                or self.val_subjects & self.test_subjects):
            raise ValueError("train/val/test subject sets must be disjoint")
        if self.scheme not in ("fixed", "loso", "expanded"):
            raise ValueError(f"unknown split scheme {self.scheme!r}")
        if self.scheme == "loso" and len(self.test_subjects) != 1:
            raise ValueError("loso split must hold exactly one test subject")


def make_loso_folds(subjects: Sequence[str]) -> list[DatasetSplit]:
    """One leave-one-subject-out fold per subject.

    Fold i tests on subject i (sorted order) and trains on all others.
    """
    subjects = sorted(set(subjects))
    if len(subjects) < 2:
        raise ValueError(f"need >= 2 subjects for LOSO, got {len(subjects)}")
    folds = []
    for s in subjects:
        folds.append(DatasetSplit(
            train_subjects=frozenset(x for x in subjects if x != s),
            val_subjects=frozenset(),
            test_subjects=frozenset({s}),
            scheme="loso"))
    return folds


STUDY2_SUBJECTS = tuple(f"S{i:02d}" for i in range(1, 17))
FIXED_VAL_SUBJECTS = ("S04", "S09", "S14")


def fixed_split(subjects: Sequence[str] = STUDY2_SUBJECTS) -> DatasetSplit:
    """Named preset: 13 train / 3 validation subjects."""
    subjects = set(subjects)
    val = set(FIXED_VAL_SUBJECTS) & subjects
    return DatasetSplit(train_subjects=frozenset(subjects - val),
                        val_subjects=frozenset(val),
                        test_subjects=frozenset(),
                        scheme="fixed")


def expanded_split(subjects: Sequence[str] = STUDY2_SUBJECTS) -> DatasetSplit:
    """Named preset: first half train, second half validation."""
    ordered = sorted(set(subjects))
    half = len(ordered) // 2
    return DatasetSplit(train_subjects=frozenset(ordered[:half]),
                        val_subjects=frozenset(ordered[half:]),
                        test_subjects=frozenset(),
                        scheme="expanded")
