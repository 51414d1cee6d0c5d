"""Turn-based encoders, cross-attention fusion and the question-wise ensemble.

Shapes: B sessions, T = ``max_turns`` turn slots, D = 2 * ``d_lstm``.

* :class:`TurnEncoder` maps (B, T, width) turn vectors through a BiLSTM and a
  stack of self-attention layers to (B, T, D).
* :class:`SingleModalityModel` flattens the encoder output to (B, T * D) and
  applies an MLP head.
* :class:`FusionModel` runs one encoder per modality, lets every modality
  query every other one with cross-attention, concatenates the cross outputs
  per query modality, applies one self-attention per query modality and
  flattens the concatenation into an MLP head. With two modalities this is the
  pairwise model; with three, six cross layers.

Padded turn slots are zeroed on entry, never attended to and zeroed after
every attention layer, so their contents cannot reach any output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .autograd import Tensor
from .data.sessions import MODALITIES, N_QUESTIONS, PaddedBatch
from .layers import EVAL, BiLSTM, MlpHead, Module, MultiheadAttention

N_CLASSES = 4


@dataclass
class ArchConfig:
    d_lstm: int = 50
    heads: int = 4
    mlp_hidden: int = 256
    max_turns: int = 120
    attn_layers: dict = field(default_factory=lambda: {"text": 1, "audio": 2, "video": 2})
    attn_dropout: dict = field(default_factory=lambda: {"text": 0.5, "audio": 0.2, "video": 0.2})
    encoder_head_dropouts: tuple = (0.2, 0.2)
    fusion_attn_dropout: float = 0.8
    fusion_head_dropouts: tuple = (0.8, 0.5)

    @property
    def width(self) -> int:
        return 2 * self.d_lstm

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_head_dropouts"] = list(self.encoder_head_dropouts)
        d["fusion_head_dropouts"] = list(self.fusion_head_dropouts)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        d = dict(d)
        for k in ("encoder_head_dropouts", "fusion_head_dropouts"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def _masked_input(x: np.ndarray, mask: np.ndarray) -> Tensor:
    return Tensor(np.where(mask[..., None], x, 0.0))


def _live_span(mask: np.ndarray) -> int:
    # slots past the longest real session are padding in every row; they are
    # inert, so the recurrent and attention layers skip them
    return max(int(mask.sum(axis=1).max()), 1)


class TurnEncoder(Module):
    def __init__(self, modality: str, input_width: int, arch: ArchConfig):
        super().__init__()
        self.modality = modality
        self.input_width = input_width
        self.lstm = self.add_module("lstm", BiLSTM(input_width, arch.d_lstm))
        self.attn = [
            self.add_module(
                f"attn{i}",
                MultiheadAttention(arch.width, arch.heads, arch.attn_dropout[modality]),
            )
            for i in range(arch.attn_layers[modality])
        ]

    def __call__(self, x: np.ndarray, mask: np.ndarray, mode: str = EVAL, rng=None) -> Tensor:
        if x.shape[-1] != self.input_width:
            raise ValueError(
                f"{self.modality} encoder expects width {self.input_width}, got {x.shape[-1]}"
            )
        if not mask.any(axis=-1).all():
            raise ValueError("a session has no real turns")
        h = self.lstm(_masked_input(x, mask), mask)
        for layer in self.attn:
            h = layer(h, h, mask, mode, rng, query_mask=mask)
        return h


class SingleModalityModel(Module):
    """Encoder plus MLP head over the flattened session encoding."""

    def __init__(self, modality: str, input_width: int, arch: ArchConfig, out_width: int):
        super().__init__()
        self.modality = modality
        self.arch = arch
        self.out_width = out_width
        self.encoder = self.add_module("enc", TurnEncoder(modality, input_width, arch))
        self.head = self.add_module(
            "head",
            MlpHead(arch.max_turns * arch.width, out_width, arch.mlp_hidden, arch.encoder_head_dropouts),
        )

    @property
    def modalities(self) -> tuple[str, ...]:
        return (self.modality,)

    def encode(self, batch: PaddedBatch, mode: str = EVAL, rng=None):
        """Returns ``(turn_encodings, head_output)``."""
        span = _live_span(batch.mask)
        x = batch.features[self.modality][:, :span]
        turns = self.encoder(x, batch.mask[:, :span], mode, rng)
        # the head reads the slots past the span as zeros
        out = self.head(ops.reshape(turns, (turns.shape[0], -1)), mode, rng)
        return ops.pad_axis(turns, self.arch.max_turns, axis=1), out

    def forward(self, batch: PaddedBatch, mode: str = EVAL, rng=None) -> Tensor:
        return self.encode(batch, mode, rng)[1]


class FusionModel(Module):
    """Cross-attention fusion of two or three modalities.

    Concatenation order follows the query modality in (text, audio, video)
    order, and within a query modality the key/value modalities in the same
    order. Encoders named in ``frozen`` always run in eval mode.
    """

    def __init__(self, input_widths: dict[str, int], arch: ArchConfig, out_width: int):
        super().__init__()
        mods = tuple(m for m in MODALITIES if m in input_widths)
        if len(mods) not in (2, 3):
            raise ValueError("fusion needs two or three modalities")
        self.mods = mods
        self.arch = arch
        self.out_width = out_width
        self.frozen: set[str] = set()
        D = arch.width
        enc = self.add_module("enc", Module())
        self.encoders = {m: enc.add_module(m, TurnEncoder(m, input_widths[m], arch)) for m in mods}
        cross = self.add_module("cross", Module())
        self.cross = {
            (src, dst): cross.add_module(
                f"{src}_to_{dst}", MultiheadAttention(D, arch.heads, arch.fusion_attn_dropout)
            )
            for dst in mods
            for src in mods
            if src != dst
        }
        acc_width = (len(mods) - 1) * D
        selfm = self.add_module("self", Module())
        self.self_attn = {
            m: selfm.add_module(m, MultiheadAttention(acc_width, arch.heads, arch.fusion_attn_dropout))
            for m in mods
        }
        self.head = self.add_module(
            "head",
            MlpHead(
                arch.max_turns * acc_width * len(mods),
                out_width,
                arch.mlp_hidden,
                arch.fusion_head_dropouts,
            ),
        )

    @property
    def modalities(self) -> tuple[str, ...]:
        return self.mods

    def fuse(self, encodings: dict[str, Tensor], mask: np.ndarray, mode: str = EVAL, rng=None) -> Tensor:
        """Fused (B, T, width) encoding from per-modality turn encodings."""
        widths = {m: e.shape[-1] for m, e in encodings.items()}
        if any(w != self.arch.width for w in widths.values()):
            raise ValueError(f"fusion expects encodings of width {self.arch.width}, got {widths}")
        parts = []
        for dst in self.mods:
            acc = [
                self.cross[(src, dst)](encodings[dst], encodings[src], mask, mode, rng, query_mask=mask)
                for src in self.mods
                if src != dst
            ]
            acc = acc[0] if len(acc) == 1 else ops.concat(acc, axis=-1)
            parts.append(self.self_attn[dst](acc, acc, mask, mode, rng, query_mask=mask))
        return ops.concat(parts, axis=-1)

    def forward_encodings(self, encodings, mask, mode: str = EVAL, rng=None) -> Tensor:
        """Head output from (B, T', D) encodings covering the first T' slots."""
        fused = self.fuse(encodings, mask[:, : next(iter(encodings.values())).shape[1]], mode, rng)
        return self.head(ops.reshape(fused, (fused.shape[0], -1)), mode, rng)

    def encode(self, batch: PaddedBatch, mode: str = EVAL, rng=None) -> dict[str, Tensor]:
        span = _live_span(batch.mask)
        return {
            m: self.encoders[m](
                batch.features[m][:, :span],
                batch.mask[:, :span],
                EVAL if m in self.frozen else mode,
                rng,
            )
            for m in self.mods
        }

    def forward(self, batch: PaddedBatch, mode: str = EVAL, rng=None) -> Tensor:
        return self.forward_encodings(self.encode(batch, mode, rng), batch.mask, mode, rng)


@dataclass
class Prediction:
    """Per-session outputs of a question-wise or total model."""

    totals: np.ndarray
    scores: np.ndarray | None = None  # (B, 8): argmax classes or clamped scalars
    classes: np.ndarray | None = None  # (B, 8) integer classes for display
    probs: np.ndarray | None = None  # (B, 8, 4) for classification losses


class QuestMfModel:
    """One model per question (``questmf``) or one total-score model (``total``)."""

    def __init__(self, framework: str, loss_kind: str, models: list):
        if framework not in ("questmf", "total"):
            raise ValueError(f"unknown framework {framework!r}")
        expected = N_QUESTIONS if framework == "questmf" else 1
        if len(models) != expected:
            raise ValueError(f"{framework} needs {expected} model(s), got {len(models)}")
        if framework == "total" and loss_kind != "mse":
            raise ValueError("the total framework regresses with MSE")
        self.framework = framework
        self.loss_kind = loss_kind
        self.models = list(models)

    @property
    def classification(self) -> bool:
        return self.loss_kind != "mse"


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def scores_from_outputs(outputs: list[np.ndarray], classification: bool) -> Prediction:
    """Turn per-question model outputs into scores and totals.

    Classification: argmax class (ties go to the lower class), totals sum the
    classes. Regression: outputs clamped to [0, 3], totals sum the clamped
    values, displayed classes round half up.
    """
    if classification:
        probs = np.stack([_softmax_np(o) for o in outputs], axis=1)
        classes = np.argmax(probs, axis=-1)
        return Prediction(totals=classes.sum(axis=1).astype(np.float64), scores=classes, classes=classes, probs=probs)
    vals = np.stack([np.clip(o.reshape(-1), 0.0, 3.0) for o in outputs], axis=1)
    classes = np.floor(vals + 0.5).astype(int)
    return Prediction(totals=vals.sum(axis=1), scores=vals, classes=classes)


def questmf_forward(batch: PaddedBatch, model: QuestMfModel, mode: str = EVAL, rng=None) -> Prediction:
    if model.framework != "questmf":
        raise ValueError("questmf_forward needs a questmf model")
    outputs = [m.forward(batch, mode, rng).data for m in model.models]
    return scores_from_outputs(outputs, model.classification)


def total_forward(batch: PaddedBatch, model: QuestMfModel, mode: str = EVAL, rng=None) -> Prediction:
    if model.framework != "total":
        raise ValueError("total_forward needs a total model")
    out = model.models[0].forward(batch, mode, rng).data.reshape(-1)
    return Prediction(totals=np.clip(out, 0.0, 24.0))


def predict(batch: PaddedBatch, model: QuestMfModel, mode: str = EVAL, rng=None) -> Prediction:
    fn = questmf_forward if model.framework == "questmf" else total_forward
    return fn(batch, model, mode, rng)
