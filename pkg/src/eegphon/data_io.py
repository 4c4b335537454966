"""On-disk container format for recordings and a deterministic array archive.

Container layout (one directory per subject):

    manifest.json   -- sampling rate, channel names, raw geometry, subject id
    raw.f32         -- little-endian 32-bit floats, time-major (time x channels)
    events.tsv      -- tab-separated, header row:
                       onset_sample  subject  phoneme  tms  lexicality  word_phonemes
                       (word_phonemes comma-joined, e.g. "b,a,t")

The archive format used for epoch sets and model checkpoints is a single
file: magic, an 8-byte little-endian header length, a JSON header (sorted
keys), then the raw array bytes back to back. Byte-identical for identical
content, so output checksums are reproducible.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Any

import numpy as np

from .core import Event, LabelRecord, Recording

ARCHIVE_MAGIC = b"EEGPHON1\n"
_ALLOWED_DTYPES = {"<f4", "<f8", "<i8"}


def content_hash(*paths: str) -> str:
    """sha256 over the raw bytes of the given files (sorted), for provenance."""
    h = hashlib.sha256()
    for path in sorted(paths):
        with open(path, "rb") as f:
            while True:
                chunk = f.read(1 << 20)
                if not chunk:
                    break
                h.update(chunk)
    return h.hexdigest()


def save_archive(path: str, arrays: dict[str, np.ndarray],
                 meta: dict[str, Any]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in arrays:
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype == np.float32:
            dtype = "<f4"
        elif arr.dtype == np.float64:
            dtype = "<f8"
        elif arr.dtype == np.int64:
            dtype = "<i8"
        else:
            raise ValueError(f"unsupported archive dtype {arr.dtype} for {name!r}")
        blob = arr.astype(dtype).tobytes()
        entries.append({"name": name, "dtype": dtype,
                        "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_archive(path: str) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    with open(path, "rb") as f:
        magic = f.read(len(ARCHIVE_MAGIC))
        if magic != ARCHIVE_MAGIC:
            raise ValueError(f"{path}: not an eegphon archive")
        header_len = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(header_len))
        body = f.read()
    arrays = {}
    for entry in header["arrays"]:
        if entry["dtype"] not in _ALLOWED_DTYPES:
            raise ValueError(f"{path}: bad dtype {entry['dtype']!r}")
        raw = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ValueError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
    return arrays, header["meta"]


@dataclass(frozen=True)
class ContainerManifest:
    fs: float
    n_channels: int
    n_samples: int
    channel_names: tuple[str, ...]
    subject: str
    layout: str = "time-major"
    dtype: str = "<f4"
    events_file: str = "events.tsv"

    def validate(self, raw_size: int) -> None:
        expected = self.n_channels * self.n_samples * 4
        if raw_size != expected:
            raise ValueError(
                f"raw file size {raw_size} bytes does not match manifest "
                f"({self.n_samples} samples x {self.n_channels} channels x 4 "
                f"= {expected} bytes)")
        if len(set(self.channel_names)) != self.n_channels:
            raise ValueError("manifest channel names are not unique")
        if self.layout != "time-major":
            raise ValueError(f"unsupported layout {self.layout!r}")
        if self.dtype != "<f4":
            raise ValueError(f"unsupported dtype {self.dtype!r}")


EVENT_COLUMNS = ("onset_sample", "subject", "phoneme", "tms",
                 "lexicality", "word_phonemes")


def _label_to_row(onset: int, label: LabelRecord) -> str:
    word = ",".join(label.word_phonemes)
    return "\t".join([str(onset), label.subject, label.phoneme,
                      label.tms, label.lexicality, word])


def save_container(directory: str, rec: Recording, subject: str) -> None:
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "fs": float(rec.fs),
        "n_channels": rec.n_channels,
        "n_samples": rec.n_times,
        "channel_names": list(rec.channel_names),
        "layout": "time-major",
        "dtype": "<f4",
        "events_file": "events.tsv",
        "subject": subject,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    rec.samples.astype("<f4").tofile(os.path.join(directory, "raw.f32"))
    lines = ["\t".join(EVENT_COLUMNS)]
    for ev in rec.events:
        lines.append(_label_to_row(ev.onset_sample, ev.label))
    with open(os.path.join(directory, "events.tsv"), "w") as f:
        f.write("\n".join(lines) + "\n")


def _parse_events(path: str, subject: str) -> list[Event]:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines or lines[0].split("\t") != list(EVENT_COLUMNS):
        raise ValueError(f"{path}: bad or missing header row")
    events: list[Event] = []
    prev_onset = -1
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(EVENT_COLUMNS):
            raise ValueError(f"{path}:{lineno}: expected "
                             f"{len(EVENT_COLUMNS)} fields, got {len(fields)}")
        onset_s, subj, phoneme, tms, lex, word = fields
        try:
            onset = int(onset_s)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad onset_sample {onset_s!r}")
        if onset < prev_onset:
            raise ValueError(f"{path}:{lineno}: onsets must be non-decreasing "
                             f"({onset} after {prev_onset})")
        prev_onset = onset
        word_phonemes = tuple(word.split(",")) if word else (phoneme,)
        try:
            label = LabelRecord.create(subject=subj, phoneme=phoneme, tms=tms,
                                       lexicality=lex,
                                       word_phonemes=word_phonemes)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
        if subj != subject:
            raise ValueError(f"{path}:{lineno}: event subject {subj!r} does "
                             f"not match manifest subject {subject!r}")
        events.append(Event(onset_sample=onset, label=label))
    return events


def load_container(directory: str) -> Recording:
    """Load and validate one subject container; rejects size mismatches,
    unknown phonemes, and non-monotone onsets, naming the offending record."""
    manifest_path = os.path.join(directory, "manifest.json")
    with open(manifest_path) as f:
        raw_manifest = json.load(f)
    try:
        manifest = ContainerManifest(
            fs=float(raw_manifest["fs"]),
            n_channels=int(raw_manifest["n_channels"]),
            n_samples=int(raw_manifest["n_samples"]),
            channel_names=tuple(raw_manifest["channel_names"]),
            subject=str(raw_manifest["subject"]),
            layout=raw_manifest.get("layout", "time-major"),
            dtype=raw_manifest.get("dtype", "<f4"),
            events_file=raw_manifest.get("events_file", "events.tsv"),
        )
    except KeyError as exc:
        raise ValueError(f"{manifest_path}: missing field {exc}") from exc
    raw_path = os.path.join(directory, "raw.f32")
    manifest.validate(os.path.getsize(raw_path))
    samples = np.fromfile(raw_path, dtype="<f4").reshape(
        manifest.n_samples, manifest.n_channels).astype(np.float64)
    events = _parse_events(os.path.join(directory, manifest.events_file),
                           manifest.subject)
    for ev in events:
        if ev.onset_sample >= manifest.n_samples:
            raise ValueError(f"{directory}: event onset {ev.onset_sample} "
                             f"beyond recording end {manifest.n_samples}")
    return Recording(samples=samples, fs=manifest.fs,
                     channel_names=manifest.channel_names,
                     events=tuple(events))


def find_subject_dirs(root: str) -> list[str]:
    """Subject container dirs under root (root itself if it is a container)."""
    if os.path.isfile(os.path.join(root, "manifest.json")):
        return [root]
    out = []
    for name in sorted(os.listdir(root)):
        sub = os.path.join(root, name)
        if os.path.isdir(sub) and os.path.isfile(os.path.join(sub, "manifest.json")):
            out.append(sub)
    if not out:
        raise ValueError(f"{root}: no subject containers found")
    return out


def _labels_to_meta(labels) -> list[dict[str, Any]]:
    return [{"subject": lab.subject, "phoneme": lab.phoneme, "tms": lab.tms,
             "lexicality": lab.lexicality,
             "word_phonemes": list(lab.word_phonemes)} for lab in labels]


def _labels_from_meta(rows) -> tuple[LabelRecord, ...]:
    return tuple(LabelRecord.create(subject=r["subject"], phoneme=r["phoneme"],
                                    tms=r["tms"], lexicality=r["lexicality"],
                                    word_phonemes=tuple(r["word_phonemes"]))
                 for r in rows)


def save_epochs(path: str, epochs, provenance: dict[str, Any]) -> None:
    meta = {
        "kind": "epochs",
        "feature_kind": epochs.feature_kind,
        "window_ms": list(epochs.window_ms),
        "labels": _labels_to_meta(epochs.labels),
        "n_edge_skipped": epochs.n_edge_skipped,
        "n_amplitude_rejected": epochs.n_amplitude_rejected,
        "provenance": provenance,
    }
    save_archive(path, {"data": epochs.data.astype(np.float64)}, meta)


def load_epochs(path: str):
    from .core import EpochSet
    arrays, meta = load_archive(path)
    if meta.get("kind") != "epochs":
        raise ValueError(f"{path}: not an epochs archive")
    return EpochSet(data=arrays["data"],
                    labels=_labels_from_meta(meta["labels"]),
                    feature_kind=meta["feature_kind"],
                    window_ms=tuple(meta["window_ms"]),
                    n_edge_skipped=meta.get("n_edge_skipped", 0),
                    n_amplitude_rejected=meta.get("n_amplitude_rejected", 0))
