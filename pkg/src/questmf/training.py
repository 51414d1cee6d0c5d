"""Staged training, checkpoint selection and multi-seed orchestration.

Stage 1 trains one single-modality model per (modality, question slot) and
keeps two checkpoints: lowest validation loss and best validation CCC.
Stage 2 rebuilds each slot as a fusion model whose encoders start from the
lowest-loss stage-1 checkpoints; the text encoder, when present, is frozen
and run in eval mode. Fusion heads start fresh. The best validation CCC
checkpoint is kept.

Run directory::

    <root>/<config-hash>/config.json
    <root>/<config-hash>/<seed>/stage1/<modality>/<slot>/{min_val_loss,max_val_ccc}.qmfc
    <root>/<config-hash>/<seed>/stage2/fusion/<slot>/max_val_ccc.qmfc
    .../<slot>/history.tsv      epoch, train_loss, val_loss, val_ccc
    <root>/<config-hash>/<seed>/metrics.json

Slots are ``q1`` .. ``q8`` for the question-wise framework and ``total`` for
the single total-score model. History row 0 describes the initialization.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tape, reverse_sweep
from .checkpoint import read_checkpoint, write_checkpoint
from .data.sessions import MODALITIES, N_QUESTIONS, DataError, Dataset, PaddedBatch, build_padded_batch
from .layers import EVAL, TRAIN
from .losses import LossConfig, batch_loss, class_weight_table
from .metrics import MetricsReport, aggregate_seeds, ccc, evaluate_scores
from .models import ArchConfig, FusionModel, QuestMfModel, SingleModalityModel, predict
from .optim import AdamW
from .rng import stream

log = logging.getLogger(__name__)

FRAMEWORKS = ("questmf", "total")
MIN_VAL_LOSS = "min_val_loss"
MAX_VAL_CCC = "max_val_ccc"
EVAL_CHUNK = 64


class ConfigError(ValueError):
    """Invalid training configuration."""


def _default_epochs() -> dict[str, int]:
    return {"text": 20, "audio": 50, "video": 50, "fusion": 20}


@dataclass
class TrainConfig:
    framework: str = "questmf"
    loss: str = "imboll"
    alpha: float = 1.0
    beta: float = 0.5
    modalities: tuple = MODALITIES
    lr: float = 5e-4
    batch_size: int = 10
    weight_decay: float = 0.01
    epochs: dict = field(default_factory=_default_epochs)
    pooled_weights: bool = False
    seed: int = 42
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        self.validate()
        self.modalities = tuple(m for m in MODALITIES if m in self.modalities)

    def validate(self) -> None:
        if self.framework not in FRAMEWORKS:
            raise ConfigError(f"unknown framework {self.framework!r}")
        if not self.modalities:
            raise ConfigError("at least one modality is required")
        bad = [m for m in self.modalities if m not in MODALITIES]
        if bad:
            raise ConfigError(f"unknown modalities {bad}")
        if self.framework == "total" and self.loss != "mse":
            raise ConfigError("the total framework trains with the mse loss")
        try:
            LossConfig(self.loss, self.alpha, self.beta)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not self.lr > 0 or self.batch_size < 1 or self.weight_decay < 0:
            raise ConfigError("lr must be positive, batch_size >= 1, weight_decay >= 0")
        for k in (*MODALITIES, "fusion"):
            if int(self.epochs.get(k, 0)) < 0:
                raise ConfigError(f"negative epoch count for {k}")

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(self.loss, self.alpha, self.beta)

    @property
    def out_width(self) -> int:
        return 4 if self.loss_config.is_classification else 1

    @property
    def slots(self) -> list[str]:
        if self.framework == "total":
            return ["total"]
        return [f"q{q + 1}" for q in range(N_QUESTIONS)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modalities"] = list(self.modalities)
        d["arch"] = self.arch.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "arch" in d:
            try:
                d["arch"] = ArchConfig.from_dict(d["arch"])
            except TypeError as exc:
                raise ConfigError(f"bad arch section: {exc}") from exc
        if "modalities" in d:
            d["modalities"] = tuple(d["modalities"])
        if "epochs" in d:
            d["epochs"] = {**_default_epochs(), **{k: int(v) for k, v in d["epochs"].items()}}
        return cls(**d)

    def config_hash(self) -> str:
        """Stable id of everything except the seed."""
        d = self.to_dict()
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class Stage:
    name: str  # "stage1" or "stage2"
    group: str  # modality name or "fusion"
    modalities: tuple
    epochs: int
    criteria: tuple
    frozen: tuple = ()  # parameter path prefixes


@dataclass
class StagePlan:
    stages: list[Stage]

    @property
    def final(self) -> tuple[Stage, str]:
        """Stage and criterion whose checkpoints make up the evaluated model."""
        last = self.stages[-1]
        return last, MAX_VAL_CCC


def plan_stages(config: TrainConfig) -> StagePlan:
    stages = [
        Stage("stage1", m, (m,), int(config.epochs[m]), (MIN_VAL_LOSS, MAX_VAL_CCC))
        for m in config.modalities
    ]
    if len(config.modalities) > 1:
        frozen = ("enc.text.",) if "text" in config.modalities else ()
        stages.append(
            Stage("stage2", "fusion", config.modalities, int(config.epochs["fusion"]), (MAX_VAL_CCC,), frozen)
        )
    return StagePlan(stages)


def select_checkpoint(history: list[dict], criterion: str) -> int:
    """Epoch index chosen by ``criterion``; ties go to the earliest epoch."""
    if not history:
        raise ValueError("empty history")
    if criterion == MIN_VAL_LOSS:
        vals = [h["val_loss"] for h in history]
        return int(np.argmin(vals))
    if criterion == MAX_VAL_CCC:
        vals = [h["val_ccc"] for h in history]
        return int(np.argmax(vals))
    raise ValueError(f"unknown selection criterion {criterion!r}")


def _slot_targets(batch: PaddedBatch, slot: str) -> np.ndarray:
    if slot == "total":
        return batch.totals
    return batch.labels[:, int(slot[1:]) - 1]


def _slot_scores(outputs: np.ndarray, slot: str, classification: bool) -> np.ndarray:
    """Per-session score a slot model predicts, as used for its validation CCC."""
    if classification:
        return np.argmax(outputs, axis=-1).astype(np.float64)
    hi = 24.0 if slot == "total" else 3.0
    return np.clip(outputs.reshape(-1), 0.0, hi)


def _eval_chunks(batch: PaddedBatch):
    for lo in range(0, len(batch), EVAL_CHUNK):
        yield batch.take(np.arange(lo, min(lo + EVAL_CHUNK, len(batch))))


@dataclass
class _Fit:
    model: object
    slot: str
    config: TrainConfig
    weights: np.ndarray | None
    path: str  # stream namespace for this run

    def loss_on(self, batch: PaddedBatch, mode: str, rng) -> tuple[float, np.ndarray]:
        out = self.model.forward(batch, mode, rng)
        loss = batch_loss(out, _slot_targets(batch, self.slot), self.config.loss_config, self.weights)
        return float(loss.data), out.data

    def validate(self, val: PaddedBatch) -> tuple[float, float]:
        total, preds = 0.0, []
        for chunk in _eval_chunks(val):
            loss, out = self.loss_on(chunk, EVAL, None)
            total += loss * len(chunk)
            preds.append(out)
        scores = _slot_scores(np.concatenate(preds), self.slot, self.config.loss_config.is_classification)
        return total / len(val), ccc(scores, _slot_targets(val, self.slot))

    def batches(self, n: int, rng):
        order = rng.permutation(n)
        bs = self.config.batch_size
        return [order[i : i + bs] for i in range(0, n, bs)]

    def run(self, train: PaddedBatch, val: PaddedBatch, epochs: int, criteria) -> tuple[list[dict], dict]:
        """Train for ``epochs``; returns (history, {criterion: (epoch, state)})."""
        model, cfg = self.model, self.config
        params = [p for _, p in model.named_parameters() if p.requires_grad]
        opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
        shuffle = stream(cfg.seed, "shuffle/" + self.path)
        drop = stream(cfg.seed, "dropout/" + self.path)
        probe = stream(cfg.seed, "probe/" + self.path)

        n = len(train)
        init_loss = sum(
            self.loss_on(train.take(idx), TRAIN, probe)[0] * len(idx) for idx in self.batches(n, probe)
        ) / n
        history = []
        best: dict[str, tuple[int, dict]] = {}

        def record(epoch, train_loss):
            val_loss, val_ccc = self.validate(val)
            history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_ccc": val_ccc})
            for c in criteria:
                better = (
                    c not in best
                    or (c == MIN_VAL_LOSS and val_loss < history[best[c][0]]["val_loss"])
                    or (c == MAX_VAL_CCC and val_ccc > history[best[c][0]]["val_ccc"])
                )
                if better:
                    best[c] = (epoch, model.state_dict())

        record(0, init_loss)
        for epoch in range(1, epochs + 1):
            total = 0.0
            for idx in self.batches(n, shuffle):
                batch = train.take(idx)
                with Tape() as tape:
                    out = model.forward(batch, TRAIN, drop)
                    loss = batch_loss(out, _slot_targets(batch, self.slot), cfg.loss_config, self.weights)
                grads = reverse_sweep(tape, loss, params, compact=True)
                opt.step(grads)
                total += float(loss.data) * len(idx)
            record(epoch, total / n)
        return history, best


def write_history(path, history: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["epoch\ttrain_loss\tval_loss\tval_ccc"]
    lines += [f"{h['epoch']}\t{h['train_loss']!r}\t{h['val_loss']!r}\t{h['val_ccc']!r}" for h in history]
    path.write_text("\n".join(lines) + "\n")


def read_history(path) -> list[dict]:
    rows = Path(path).read_text().splitlines()[1:]
    out = []
    for r in rows:
        e, t, vl, vc = r.split("\t")
        out.append({"epoch": int(e), "train_loss": float(t), "val_loss": float(vl), "val_ccc": float(vc)})
    return out


def _check_dataset(dataset: Dataset, config: TrainConfig) -> dict[str, int]:
    widths = dataset.widths()
    missing = [m for m in config.modalities if m not in widths]
    if missing:
        raise DataError(f"dataset lacks modalities {missing}")
    for split in ("train", "validation"):
        sessions = dataset.split(split)
        if not sessions:
            raise DataError(f"dataset has no {split} sessions")
        if config.framework == "questmf" and any(s.labels is None for s in sessions):
            raise DataError(f"{split} split is missing per-question labels")
        if any(s.total is None for s in sessions):
            raise DataError(f"{split} split is missing total scores")
    return {m: widths[m] for m in config.modalities}


def _class_weights(dataset: Dataset, config: TrainConfig):
    if config.loss != "imboll":
        return None
    labels = np.stack([s.labels for s in dataset.split("train")])
    try:
        return class_weight_table(labels, pooled=config.pooled_weights)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _slot_weights(table, slot: str):
    return None if table is None else table[int(slot[1:]) - 1]


def _split_batch(dataset: Dataset, split: str, config: TrainConfig) -> PaddedBatch:
    return build_padded_batch(dataset.split(split), config.arch.max_turns, config.modalities)


def seed_dir(run_root, config: TrainConfig) -> Path:
    return Path(run_root) / config.config_hash() / str(config.seed)


def _meta(config: TrainConfig, stage: Stage, slot: str, epoch: int, h: dict, widths: dict, kind: str) -> dict:
    return {
        "stage": stage.name,
        "group": stage.group,
        "slot": slot,
        "model": kind,
        "modalities": list(stage.modalities),
        "input_widths": widths,
        "out_width": config.out_width,
        "epoch": epoch,
        "val_loss": h["val_loss"],
        "val_ccc": h["val_ccc"],
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "arch": config.arch.to_dict(),
    }


def train_single_encoders(dataset: Dataset, config: TrainConfig, run_root) -> dict[tuple[str, str], dict[str, Path]]:
    """Stage 1 for every requested modality and slot.

    Returns ``{(modality, slot): {criterion: checkpoint path}}``.
    """
    widths = _check_dataset(dataset, config)
    table = _class_weights(dataset, config)
    train, val = _split_batch(dataset, "train", config), _split_batch(dataset, "validation", config)
    root = seed_dir(run_root, config)
    out = {}
    for stage in plan_stages(config).stages:
        if stage.name != "stage1":
            continue
        m = stage.group
        for slot in config.slots:
            model = SingleModalityModel(m, widths[m], config.arch, config.out_width)
            ns = f"stage1/{m}/{slot}"
            model.initialize(config.seed, ns + "/")
            fit = _Fit(model, slot, config, _slot_weights(table, slot), ns)
            history, best = fit.run(train, val, stage.epochs, stage.criteria)
            d = root / "stage1" / m / slot
            write_history(d / "history.tsv", history)
            paths = {}
            for c, (epoch, state) in best.items():
                paths[c] = d / f"{c}.qmfc"
                write_checkpoint(paths[c], state, _meta(config, stage, slot, epoch, history[epoch], {m: widths[m]}, "single"))
            out[(m, slot)] = paths
            log.info("stage1 %s %s: best val ccc %.4f", m, slot, history[best[MAX_VAL_CCC][0]]["val_ccc"])
    return out


def train_fusion_stage(
    dataset: Dataset, encoder_checkpoints: dict[tuple[str, str], dict[str, Path]], config: TrainConfig, run_root
) -> dict[str, Path]:
    """Stage 2 for every slot; returns ``{slot: checkpoint path}``."""
    widths = _check_dataset(dataset, config)
    plan = plan_stages(config)
    stage = plan.stages[-1]
    if stage.name != "stage2":
        raise ConfigError("fusion needs at least two modalities")
    table = _class_weights(dataset, config)
    train, val = _split_batch(dataset, "train", config), _split_batch(dataset, "validation", config)
    root = seed_dir(run_root, config)
    out = {}
    for slot in config.slots:
        model = FusionModel(widths, config.arch, config.out_width)
        ns = f"stage2/fusion/{slot}"
        model.initialize(config.seed, ns + "/")
        for m in config.modalities:
            try:
                path = encoder_checkpoints[(m, slot)][MIN_VAL_LOSS]
            except KeyError:
                raise FileNotFoundError(f"no stage-1 {m} checkpoint for {slot}") from None
            state, _ = read_checkpoint(path)
            enc = {k[len("enc."):]: v for k, v in state.items() if k.startswith("enc.")}
            model.encoders[m].load_state_dict(enc)
        for prefix in stage.frozen:
            m = prefix.split(".")[1]
            model.encoders[m].set_trainable(False)
            model.frozen.add(m)
        fit = _Fit(model, slot, config, _slot_weights(table, slot), ns)
        history, best = fit.run(train, val, stage.epochs, stage.criteria)
        d = root / "stage2" / "fusion" / slot
        write_history(d / "history.tsv", history)
        epoch, state = best[MAX_VAL_CCC]
        out[slot] = d / f"{MAX_VAL_CCC}.qmfc"
        write_checkpoint(out[slot], state, _meta(config, stage, slot, epoch, history[epoch], widths, "fusion"))
        log.info("stage2 fusion %s: best val ccc %.4f", slot, history[epoch]["val_ccc"])
    return out


def load_slot_model(path):
    """Rebuild a single-modality or fusion model from its checkpoint."""
    state, meta = read_checkpoint(path)
    arch = ArchConfig.from_dict(meta["arch"])
    if meta["model"] == "single":
        (m, w), = meta["input_widths"].items()
        model = SingleModalityModel(m, w, arch, meta["out_width"])
    else:
        model = FusionModel(meta["input_widths"], arch, meta["out_width"])
    model.load_state_dict(state)
    return model, meta


def final_checkpoints(run_root, config: TrainConfig) -> list[Path]:
    stage, criterion = plan_stages(config).final
    root = seed_dir(run_root, config) / stage.name / stage.group
    paths = [root / slot / f"{criterion}.qmfc" for slot in config.slots]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise FileNotFoundError(f"missing checkpoints: {missing[0]}")
    return paths


def load_run_model(run_root, config: TrainConfig) -> QuestMfModel:
    models = [load_slot_model(p)[0] for p in final_checkpoints(run_root, config)]
    return QuestMfModel(config.framework, config.loss, models)


def predict_sessions(sessions, model: QuestMfModel, max_turns: int):
    """Eval-mode predictions for a list of sessions, in chunks."""
    mods = model.models[0].modalities
    batch = build_padded_batch(sessions, max_turns, mods)
    parts = [predict(chunk, model) for chunk in _eval_chunks(batch)]
    return batch, parts


def evaluate_split(sessions, model: QuestMfModel, max_turns: int = 120) -> MetricsReport:
    """Total-score metrics, plus per-question metrics where item labels exist."""
    if not sessions:
        raise DataError("empty split")
    if any(s.total is None for s in sessions):
        raise DataError("split has sessions without total scores")
    batch, parts = predict_sessions(sessions, model, max_turns)
    totals = np.concatenate([p.totals for p in parts])
    items = labels = None
    if model.framework == "questmf" and batch.labels is not None:
        items = np.concatenate([p.scores for p in parts])
        labels = batch.labels
    return evaluate_scores(totals, batch.totals, items, labels)


def write_config(run_root, config: TrainConfig) -> Path:
    d = Path(run_root) / config.config_hash()
    d.mkdir(parents=True, exist_ok=True)
    cfg = config.to_dict()
    cfg.pop("seed")
    path = d / "config.json"
    path.write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    return path


def run_pipeline(dataset: Dataset, config: TrainConfig, run_root) -> MetricsReport:
    """Stage 1, stage 2 when fusing, then test-split evaluation for one seed."""
    write_config(run_root, config)
    ckpts = train_single_encoders(dataset, config, run_root)
    if len(config.modalities) > 1:
        train_fusion_stage(dataset, ckpts, config, run_root)
    model = load_run_model(run_root, config)
    report = evaluate_split(dataset.split("test"), model, config.arch.max_turns)
    report.seeds = [config.seed]
    path = seed_dir(run_root, config) / "metrics.json"
    path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    return report


def run_multi_seed(dataset: Dataset, config: TrainConfig, run_root, seeds=(42, 100, 1234)) -> MetricsReport:
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("no seeds given")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"duplicate seeds in {seeds}")
    reports = []
    for s in seeds:
        cfg = TrainConfig.from_dict({**config.to_dict(), "seed": s})
        reports.append(run_pipeline(dataset, cfg, run_root))
    return aggregate_seeds(reports)
