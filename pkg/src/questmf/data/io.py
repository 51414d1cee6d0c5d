"""On-disk formats: binary feature matrices, the JSON manifest, transcripts.

Feature file (little-endian)::

    bytes 0-3   magic b"QMF1"
    bytes 4-7   uint32 row count
    bytes 8-11  uint32 column count
    then rows*cols float32 values, row-major

Text files hold one row per participant turn (already embedded), audio files
one row per frame (``audio_rate`` frames per second, default 100) and video
files one row per video frame (``video_rate`` frames per second).

Manifest (JSON, ``schema_version`` 1)::

    {
      "schema_version": 1,
      "audio_rate": 100,            # optional default for all sessions
      "video_rate": 30,             # optional default for all sessions
      "sessions": [
        {
          "id": "300",
          "split": "train",                      # train | validation | test
          "labels": [1, 0, 2, 3, 0, 1, 2, 0],    # optional, each 0..3
          "total": 9,                            # optional, must equal sum(labels)
          "features": {"text": "300/text.qmf", "audio": "300/audio.qmf",
                       "video": "300/video.qmf"},
          "turns": [[0.0, 3.2], [4.1, 9.0]],     # optional if a transcript is given
          "transcript": "300/transcript.tsv",    # optional
          "audio_rate": 100, "video_rate": 30    # optional per-session overrides
        }
      ]
    }

Paths are relative to the manifest's directory. The transcript is a
tab-separated table with header ``turn_index t_start t_end speaker text``;
only participant rows define turns.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sessions import (
    MODALITIES,
    NORMALIZED,
    SPLITS,
    DataError,
    Dataset,
    Session,
    aggregate_turn_window,
    check_labels,
)
from ..layers import mean_pool_normalize

MAGIC = b"QMF1"
HEADER = struct.Struct("<4sII")
SCHEMA_VERSION = 1
DEFAULT_AUDIO_RATE = 100.0
PARTICIPANT = {"participant", "p"}


class FeatureFormatError(DataError):
    pass


class ManifestError(DataError):
    pass


def write_feature_matrix(path, matrix) -> None:
    m = np.asarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, m.shape[0], m.shape[1]))
        fh.write(np.ascontiguousarray(m).tobytes())
    os.replace(tmp, path)


def read_feature_matrix(path) -> np.ndarray:
    """Load a feature file as a float64 (rows, cols) array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header")
    magic, rows, cols = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    need = rows * cols * 4
    payload = raw[HEADER.size:]
    if len(payload) < need:
        raise FeatureFormatError(f"{path}: payload has {len(payload)} bytes, need {need}")
    data = np.frombuffer(payload, dtype="<f4", count=rows * cols).reshape(rows, cols)
    if not np.all(np.isfinite(data)):
        raise FeatureFormatError(f"{path}: non-finite values")
    return data.astype(np.float64)


def read_transcript(path) -> list[tuple[float, float]]:
    """Participant turn windows from a transcript table, in file order."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        need = {"turn_index", "t_start", "t_end", "speaker", "text"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: transcript needs columns {sorted(need)}")
        rows = [r for r in reader if r["speaker"].strip().lower() in PARTICIPANT]
    rows.sort(key=lambda r: int(r["turn_index"]))
    return [(float(r["t_start"]), float(r["t_end"])) for r in rows]


def write_transcript(path, windows, texts=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["turn_index", "t_start", "t_end", "speaker", "text"])
        for i, (a, b) in enumerate(windows):
            w.writerow([i, repr(float(a)), repr(float(b)), "Participant", texts[i] if texts else ""])


@dataclass
class SessionDescriptor:
    id: str
    split: str
    files: dict[str, Path]
    labels: list[int] | None = None
    total: int | None = None
    turns: list[tuple[float, float]] | None = None
    transcript: Path | None = None
    rates: dict[str, float] = field(default_factory=dict)


def parse_manifest(path) -> list[SessionDescriptor]:
    """Validate a manifest and resolve its file references."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: unreadable manifest ({exc})") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    root = path.parent
    defaults = {
        "audio": float(doc.get("audio_rate", DEFAULT_AUDIO_RATE)),
        "video": doc.get("video_rate"),
    }
    seen = set()
    out = []
    for entry in doc.get("sessions", []):
        sid = str(entry.get("id", ""))
        if not sid:
            raise ManifestError("session without id")
        if sid in seen:
            raise ManifestError(f"duplicate session id {sid!r}")
        seen.add(sid)
        split = entry.get("split")
        if split not in SPLITS:
            raise ManifestError(f"session {sid}: unknown split {split!r}")
        labels = entry.get("labels")
        total = entry.get("total")
        if labels is not None:
            check_labels(sid, np.asarray(labels, dtype=int), total)
            labels = [int(x) for x in labels]
        if total is not None:
            total = int(total)
            if not 0 <= total <= 24:
                raise ManifestError(f"session {sid}: total {total} outside 0..24")
        files = {}
        for m, rel in (entry.get("features") or {}).items():
            if m not in MODALITIES:
                raise ManifestError(f"session {sid}: unknown modality {m!r}")
            p = root / rel
            if not p.is_file():
                raise ManifestError(f"session {sid}: missing file {rel}")
            files[m] = p
        if not files:
            raise ManifestError(f"session {sid}: no feature files")
        transcript = None
        if entry.get("transcript"):
            transcript = root / entry["transcript"]
            if not transcript.is_file():
                raise ManifestError(f"session {sid}: missing file {entry['transcript']}")
        turns = entry.get("turns")
        if turns is not None:
            turns = [(float(a), float(b)) for a, b in turns]
        rates = {}
        for m in ("audio", "video"):
            r = entry.get(f"{m}_rate", defaults[m])
            if r is not None:
                rates[m] = float(r)
        out.append(SessionDescriptor(sid, split, files, labels, total, turns, transcript, rates))
    if not out:
        raise ManifestError(f"{path}: no sessions")
    return out


def load_session(desc: SessionDescriptor) -> Session:
    windows = desc.turns
    if windows is None and desc.transcript is not None:
        windows = read_transcript(desc.transcript)
    feats = {}
    for m, p in desc.files.items():
        mat = read_feature_matrix(p)
        if m == "text":
            if windows is not None and mat.shape[0] != len(windows):
                raise DataError(
                    f"session {desc.id}: {mat.shape[0]} text rows for {len(windows)} turns"
                )
            feats[m] = np.stack([mean_pool_normalize(r[None]) for r in mat])
            continue
        if windows is None:
            raise DataError(f"session {desc.id}: turn windows needed to aggregate {m}")
        rate = desc.rates.get(m)
        if rate is None:
            raise DataError(f"session {desc.id}: no frame rate for {m}")
        for a, b in windows:
            if not b > a >= 0:
                raise DataError(f"session {desc.id}: bad turn window [{a}, {b})")
        feats[m] = np.stack(
            [aggregate_turn_window(mat, a, b, rate, NORMALIZED[m]) for a, b in windows]
        )
    t_start = t_end = None
    if windows is not None:
        t_start = np.array([a for a, _ in windows])
        t_end = np.array([b for _, b in windows])
    return Session(desc.id, desc.split, feats, t_start, t_end,
                   None if desc.labels is None else np.array(desc.labels), desc.total)


def load_dataset(manifest_path) -> Dataset:
    descs = parse_manifest(manifest_path)
    return Dataset([load_session(d) for d in descs], meta={"manifest": str(manifest_path)})
