"""Deterministic synthetic interviews standing in for restricted clinical data.

Generative process, per session:

1. Item scores ``s_q`` are drawn from the per-question class prior through a
   Gaussian copula: a session-level severity ``z ~ N(0, 1)`` and item noise
   ``e_q`` give ``u_q = Phi(rho * z + sqrt(1 - rho^2) * e_q)``, and ``s_q`` is
   the prior quantile of ``u_q``. Marginals match the prior exactly; ``rho``
   only correlates the items.
2. Every modality owns one random unit direction per question. A turn vector
   is isotropic Gaussian noise (expected norm ``noise``) plus
   ``strength[m] * affinity[q][m] * (s_q - 1.5) / 1.5`` times that question's
   direction, summed over questions, plus a fixed modality offset.
3. Vectors are rounded to float32 (the on-disk precision), then text and
   video vectors are unit-normalised as ingestion would do.

Noise is drawn independently per modality, so the modalities carry
complementary evidence about the same scores.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from ..layers import mean_pool_normalize
from ..rng import stream
from .io import SCHEMA_VERSION, write_feature_matrix, write_transcript
from .sessions import MODALITIES, N_QUESTIONS, NORMALIZED, DataError, Dataset, Session

DEFAULT_PRIOR = (0.5, 0.25, 0.15, 0.10)


@dataclass
class SynthConfig:
    n_train: int = 163
    n_validation: int = 56
    n_test: int = 56
    class_prior: tuple = DEFAULT_PRIOR
    widths: dict = field(default_factory=lambda: {"text": 384, "audio": 23, "video": 2048})
    strength: dict = field(default_factory=lambda: {"text": 0.03, "audio": 0.15, "video": 0.015})
    # per-question multipliers on modality strength, rows ordered like the questions
    affinity: list | None = None
    noise: float = 1.0
    offset: float = 0.5
    turn_range: tuple = (8, 24)
    item_correlation: float = 0.5
    test_item_labels: bool = True
    min_expected_count: float = 5.0
    seed: int = 42

    def priors(self) -> np.ndarray:
        p = np.asarray(self.class_prior, dtype=np.float64)
        if p.ndim == 1:
            p = np.tile(p, (N_QUESTIONS, 1))
        return p

    def validate(self) -> None:
        p = self.priors()
        if p.shape != (N_QUESTIONS, 4):
            raise DataError(f"class prior must have 4 entries per question, got {p.shape}")
        if np.any(p <= 0):
            raise DataError("every class needs a positive prior")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise DataError("class priors must sum to 1")
        if np.any(p * self.n_train < self.min_expected_count):
            raise DataError(
                f"expected train count per class below {self.min_expected_count}"
            )
        lo, hi = self.turn_range
        if not 1 <= lo <= hi:
            raise DataError(f"bad turn range {self.turn_range}")
        if self.noise < 0 or not 0 <= self.item_correlation < 1:
            raise DataError("noise must be >= 0 and item_correlation in [0, 1)")
        if min(self.n_train, self.n_validation, self.n_test) < 0:
            raise DataError("split sizes must be non-negative")

    def affinity_matrix(self) -> np.ndarray:
        if self.affinity is None:
            return np.ones((N_QUESTIONS, len(MODALITIES)))
        a = np.asarray(self.affinity, dtype=np.float64)
        if a.shape != (N_QUESTIONS, len(MODALITIES)):
            raise DataError("affinity must be 8 rows of (text, audio, video) multipliers")
        return a

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_prior"] = np.asarray(self.class_prior).tolist()
        d["turn_range"] = list(self.turn_range)
        return d


def _draw_labels(rng, n, priors, rho, require_all):
    cum = np.cumsum(priors, axis=1)
    for _ in range(10_000):
        z = rng.standard_normal((n, 1))
        e = rng.standard_normal((n, N_QUESTIONS))
        u = ndtr(rho * z + np.sqrt(1.0 - rho * rho) * e)
        labels = np.stack(
            [np.minimum(np.searchsorted(cum[q], u[:, q], side="right"), 3) for q in range(N_QUESTIONS)],
            axis=1,
        )
        if not require_all or all(
            np.all(np.bincount(labels[:, q], minlength=4) > 0) for q in range(N_QUESTIONS)
        ):
            return labels
    raise DataError("could not draw a training split containing every class")


def _directions(seed, modality, width):
    d = stream(seed, f"synth/directions/{modality}").standard_normal((N_QUESTIONS, width))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    off = stream(seed, f"synth/offset/{modality}").standard_normal(width)
    return d, off / np.linalg.norm(off)


def synth_generate(config: SynthConfig | None = None) -> Dataset:
    """Generate a labelled dataset; identical configs give identical arrays."""
    config = config or SynthConfig()
    config.validate()
    priors = config.priors()
    affinity = config.affinity_matrix()
    dirs = {m: _directions(config.seed, m, config.widths[m]) for m in MODALITIES}
    sessions = []
    counts = {"train": config.n_train, "validation": config.n_validation, "test": config.n_test}
    for split, n in counts.items():
        if n == 0:
            continue
        rng = stream(config.seed, f"synth/{split}")
        labels = _draw_labels(rng, n, priors, config.item_correlation, split == "train")
        lo, hi = config.turn_range
        n_turns = rng.integers(lo, hi + 1, size=n)
        for i in range(n):
            s = labels[i]
            signal_coef = (s - 1.5) / 1.5
            feats = {}
            for j, m in enumerate(MODALITIES):
                d, off = dirs[m]
                w = config.widths[m]
                coef = config.strength[m] * affinity[:, j] * signal_coef
                noise = rng.standard_normal((n_turns[i], w)) * (config.noise / np.sqrt(w))
                x = noise + coef @ d + config.offset * off
                x = x.astype(np.float32).astype(np.float64)
                if NORMALIZED[m]:
                    x = np.stack([mean_pool_normalize(r[None]) for r in x])
                feats[m] = x
            keep_items = split != "test" or config.test_item_labels
            t = np.arange(n_turns[i], dtype=np.float64)
            sessions.append(
                Session(
                    id=f"{split[:3]}{i:04d}",
                    split=split,
                    features=feats,
                    t_start=t,
                    t_end=t + 1.0,
                    labels=s.copy() if keep_items else None,
                    total=int(s.sum()),
                )
            )
    return Dataset(sessions, meta={"synth": config.to_dict()})


def write_dataset(dataset: Dataset, out_dir, raw: dict | None = None) -> Path:
    """Write features, transcripts and a manifest; returns the manifest path.

    Turns are laid out one per second and audio/video are stored at one
    frame per second, so reloading reproduces the turn vectors exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in dataset.sessions:
        files = {}
        for m, f in s.features.items():
            rel = f"{s.id}/{m}.qmf"
            write_feature_matrix(out / rel, f)
            files[m] = rel
        windows = list(zip(s.t_start.tolist(), s.t_end.tolist()))
        write_transcript(out / s.id / "transcript.tsv", windows)
        entry = {"id": s.id, "split": s.split, "features": files, "transcript": f"{s.id}/transcript.tsv"}
        if s.labels is not None:
            entry["labels"] = [int(x) for x in s.labels]
        if s.total is not None:
            entry["total"] = int(s.total)
        entries.append(entry)
    doc = {"schema_version": SCHEMA_VERSION, "audio_rate": 1.0, "video_rate": 1.0, "sessions": entries}
    if dataset.meta.get("synth"):
        doc["generator"] = dataset.meta["synth"]
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path
