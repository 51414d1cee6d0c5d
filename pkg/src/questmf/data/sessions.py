"""Session model, turn-window aggregation and padded batches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..layers import mean_pool_normalize

MODALITIES = ("text", "audio", "video")
SPLITS = ("train", "validation", "test")
N_QUESTIONS = 8
MAX_TURNS = 120

QUESTIONS = (
    "Little interest or pleasure in doing things",
    "Feeling down, depressed, irritable or hopeless",
    "Trouble falling or staying asleep, or sleeping too much",
    "Feeling tired or having little energy",
    "Poor appetite or overeating",
    "Feeling bad about yourself",
    "Trouble concentrating on things",
    "Moving or speaking slowly, or being fidgety or restless",
)

# text and video turn vectors are unit-normalised, audio vectors are not
NORMALIZED = {"text": True, "audio": False, "video": True}


class DataError(Exception):
    """Invalid input data (manifest, feature file, labels)."""


@dataclass(frozen=True)
class Turn:
    index: int
    t_start: float
    t_end: float
    text_embedding: np.ndarray | None
    audio_features: np.ndarray | None
    video_features: np.ndarray | None


@dataclass
class Session:
    """One interview: per-modality turn vectors plus optional labels.

    ``features[m]`` is an (n_turns, width) array of turn-level vectors.
    """

    id: str
    split: str
    features: dict[str, np.ndarray]
    t_start: np.ndarray | None = None
    t_end: np.ndarray | None = None
    labels: np.ndarray | None = None
    total: int | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"session {self.id}: unknown split {self.split!r}")
        counts = {m: f.shape[0] for m, f in self.features.items()}
        if len(set(counts.values())) != 1:
            raise DataError(f"session {self.id}: modalities disagree on turn count {counts}")
        if self.n_turns < 1:
            raise DataError(f"session {self.id}: no turns")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            check_labels(self.id, self.labels, self.total)
            if self.total is None:
                self.total = int(self.labels.sum())
        if self.total is not None and not 0 <= self.total <= 3 * N_QUESTIONS:
            raise DataError(f"session {self.id}: total {self.total} outside 0..24")

    @property
    def n_turns(self) -> int:
        return next(iter(self.features.values())).shape[0]

    def _row(self, modality: str, i: int):
        f = self.features.get(modality)
        return None if f is None else f[i]

    @property
    def turns(self) -> list[Turn]:
        return [
            Turn(
                index=i,
                t_start=float(self.t_start[i]) if self.t_start is not None else float(i),
                t_end=float(self.t_end[i]) if self.t_end is not None else float(i + 1),
                text_embedding=self._row("text", i),
                audio_features=self._row("audio", i),
                video_features=self._row("video", i),
            )
            for i in range(self.n_turns)
        ]


def check_labels(sid: str, labels: np.ndarray, total) -> None:
    if labels.shape != (N_QUESTIONS,):
        raise DataError(f"session {sid}: expected {N_QUESTIONS} labels, got {labels.shape}")
    if np.any(labels < 0) or np.any(labels > 3):
        raise DataError(f"session {sid}: label outside 0..3 in {labels.tolist()}")
    if total is not None and int(total) != int(labels.sum()):
        raise DataError(f"session {sid}: total {total} != label sum {int(labels.sum())}")


@dataclass
class Dataset:
    sessions: list[Session]
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list[Session]:
        return [s for s in self.sessions if s.split == name]

    def widths(self) -> dict[str, int]:
        s = self.sessions[0]
        return {m: f.shape[1] for m, f in s.features.items()}

    def __len__(self):
        return len(self.sessions)


def aggregate_turn_window(frames, t_start: float, t_end: float, rate: float, normalize: bool) -> np.ndarray:
    """Mean of frames ``[floor(t_start*rate), floor(t_end*rate))`` clipped to the data."""
    frames = np.asarray(frames, dtype=np.float64)
    lo = max(int(np.floor(t_start * rate)), 0)
    hi = min(int(np.floor(t_end * rate)), frames.shape[0])
    if hi <= lo:
        raise DataError(f"empty window [{t_start}, {t_end}) at rate {rate} over {frames.shape[0]} frames")
    window = frames[lo:hi]
    return mean_pool_normalize(window) if normalize else window.mean(axis=0)


@dataclass
class PaddedBatch:
    """Per-modality (B, max_turns, width) arrays; zeros where ``mask`` is false."""

    ids: list[str]
    features: dict[str, np.ndarray]
    mask: np.ndarray
    labels: np.ndarray | None
    totals: np.ndarray | None

    def __len__(self):
        return len(self.ids)

    def take(self, idx) -> "PaddedBatch":
        """Rows ``idx``, with turn slots cut after the longest selected session."""
        idx = np.asarray(idx, dtype=np.intp)
        mask = self.mask[idx]
        span = max(int(mask.sum(axis=1).max()), 1)
        return PaddedBatch(
            [self.ids[i] for i in idx],
            {m: f[idx, :span] for m, f in self.features.items()},
            mask[:, :span],
            None if self.labels is None else self.labels[idx],
            None if self.totals is None else self.totals[idx],
        )


def build_padded_batch(sessions, max_turns: int = MAX_TURNS, modalities=None) -> PaddedBatch:
    """Stack sessions, keeping the first ``max_turns`` turns of each."""
    if not sessions:
        raise DataError("empty batch")
    modalities = modalities or tuple(sessions[0].features)
    B = len(sessions)
    mask = np.zeros((B, max_turns), dtype=bool)
    feats = {}
    for m in modalities:
        width = sessions[0].features[m].shape[1]
        arr = np.zeros((B, max_turns, width))
        for b, s in enumerate(sessions):
            f = s.features[m][:max_turns]
            arr[b, : f.shape[0]] = f
        feats[m] = arr
    for b, s in enumerate(sessions):
        mask[b, : min(s.n_turns, max_turns)] = True
    labels = None
    if all(s.labels is not None for s in sessions):
        labels = np.stack([s.labels for s in sessions])
    totals = None
    if all(s.total is not None for s in sessions):
        totals = np.array([s.total for s in sessions], dtype=np.float64)
    return PaddedBatch([s.id for s in sessions], feats, mask, labels, totals)
