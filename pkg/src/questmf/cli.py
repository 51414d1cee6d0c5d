"""Command-line entry point: ``questmf <verb> [flags]``.

Verbs: synth, validate, train, eval, predict, report. Failures print one
JSON line ``{"error": kind, "message": ...}`` to stderr and exit with 2
(usage), 3 (configuration), 4 (input data or run artifacts) or 1 (anything
else).

A config file is JSON with optional ``"train"`` and ``"synth"`` sections
holding the fields of :class:`~questmf.training.TrainConfig` and
:class:`~questmf.data.synth.SynthConfig`. Flags override file values.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .data import DataError, SynthConfig, load_dataset, parse_manifest, read_feature_matrix, synth_generate, write_dataset
from .metrics import MetricsReport, aggregate_seeds, format_table
from .training import (
    ConfigError,
    TrainConfig,
    load_run_model,
    predict_sessions,
    evaluate_split,
    run_multi_seed,
    run_pipeline,
)

EXIT_USAGE, EXIT_CONFIG, EXIT_DATA = 2, 3, 4
LOSS_NAMES = {"mse": "MSE", "oll": "OLL", "imboll": "ImbOLL"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path)
    common.add_argument("--out", type=Path)
    common.add_argument("--data", type=Path)
    common.add_argument("--seed", type=int)

    train_flags = _Parser(add_help=False)
    train_flags.add_argument("--framework", choices=("questmf", "total"))
    train_flags.add_argument("--loss", choices=tuple(LOSS_NAMES))
    train_flags.add_argument("--alpha", type=float)
    train_flags.add_argument("--beta", type=float)
    train_flags.add_argument("--modalities", help="comma-separated, e.g. text,audio")

    p = _Parser(prog="questmf", description="Question-wise multimodal PHQ-8 scoring.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset to --out")
    sub.add_parser("validate", parents=[common], help="dry-run load of a manifest")
    t = sub.add_parser("train", parents=[common, train_flags], help="run the staged pipeline")
    t.add_argument("--seeds", help="comma-separated seeds; overrides --seed")
    for verb in ("eval", "predict"):
        e = sub.add_parser(verb, parents=[common, train_flags])
        e.add_argument("--split", default="test", choices=("train", "validation", "test"))
    r = sub.add_parser("report", parents=[common], help="mean ± std over seed runs under --out")
    r.add_argument("--run", type=Path, help="one config-hash directory instead of all under --out")
    return p


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg} at line {exc.lineno}") from exc
    if not isinstance(doc, dict) or set(doc) - {"train", "synth"}:
        raise ConfigError("config must be an object with optional 'train' and 'synth' sections")
    return doc


def _train_config(args) -> TrainConfig:
    d = dict(_load_config_file(args.config).get("train", {}))
    for key in ("framework", "loss", "alpha", "beta", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if getattr(args, "modalities", None):
        d["modalities"] = [m.strip() for m in args.modalities.split(",") if m.strip()]
    if d.get("framework") == "total" and "loss" not in d:
        d["loss"] = "mse"
    try:
        return TrainConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _synth_config(args) -> SynthConfig:
    d = dict(_load_config_file(args.config).get("synth", {}))
    if args.seed is not None:
        d["seed"] = args.seed
    try:
        cfg = SynthConfig(**d)
        cfg.validate()
    except (TypeError, DataError) as exc:
        raise ConfigError(f"bad synth section: {exc}") from exc
    return cfg


def _manifest(args) -> Path:
    if args.data is None:
        raise ConfigError("--data is required")
    return args.data / "manifest.json" if args.data.is_dir() else args.data


def _require_out(args) -> Path:
    if args.out is None:
        raise ConfigError("--out is required")
    return args.out


def _label(config: dict) -> str:
    mods = "+".join(m[0].upper() for m in config.get("modalities", []))
    if config.get("framework") == "total":
        return f"Total {mods}"
    return f"QuestMF({LOSS_NAMES.get(config.get('loss'), config.get('loss'))}) {mods}"


def cmd_synth(args) -> int:
    out = _require_out(args)
    cfg = _synth_config(args)
    path = write_dataset(synth_generate(cfg), out)
    print(path)
    return 0


def cmd_validate(args) -> int:
    descs = parse_manifest(_manifest(args))
    rows = 0
    for d in descs:
        for p in d.files.values():
            rows += read_feature_matrix(p).shape[0]
    splits = {s: sum(d.split == s for d in descs) for s in ("train", "validation", "test")}
    print(json.dumps({"sessions": len(descs), "feature_rows": rows, "splits": splits}))
    return 0


def cmd_train(args) -> int:
    out = _require_out(args)
    cfg = _train_config(args)
    dataset = load_dataset(_manifest(args))
    if args.seeds:
        try:
            seeds = [int(s) for s in args.seeds.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad --seeds {args.seeds!r}") from exc
        report = run_multi_seed(dataset, cfg, out, seeds)
    else:
        report = run_pipeline(dataset, cfg, out)
    print(format_table([(_label(cfg.to_dict()), report)]), end="")
    return 0


def _split_sessions(args):
    dataset = load_dataset(_manifest(args))
    sessions = dataset.split(args.split)
    if not sessions:
        raise DataError(f"no {args.split} sessions in {args.data}")
    return sessions


def cmd_eval(args) -> int:
    cfg = _train_config(args)
    sessions = _split_sessions(args)
    model = load_run_model(_require_out(args), cfg)
    report = evaluate_split(sessions, model, cfg.arch.max_turns)
    report.seeds = [cfg.seed]
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_predict(args) -> int:
    cfg = _train_config(args)
    sessions = _split_sessions(args)
    model = load_run_model(_require_out(args), cfg)
    batch, parts = predict_sessions(sessions, model, cfg.arch.max_turns)
    print(format_predictions(batch.ids, parts), end="")
    return 0


def format_predictions(ids, parts) -> str:
    """Per session: a header, one row per question, then the total."""
    lines = []
    i = 0
    for pred in parts:
        for b in range(len(pred.totals)):
            lines.append(f"session\t{ids[i]}")
            if pred.classes is not None:
                lines.append("question\tclass\tp0\tp1\tp2\tp3")
                for q in range(pred.classes.shape[1]):
                    probs = pred.probs[b, q] if pred.probs is not None else [np.nan] * 4
                    cells = "\t".join("-" if np.isnan(x) else f"{x:.4f}" for x in probs)
                    lines.append(f"q{q + 1}\t{int(pred.classes[b, q])}\t{cells}")
            total = pred.totals[b]
            lines.append(f"total\t{int(total) if float(total).is_integer() else f'{total:.4f}'}")
            lines.append("")
            i += 1
    return "\n".join(lines)


def cmd_report(args) -> int:
    if args.run is not None:
        run_dirs = [args.run]
    else:
        root = _require_out(args)
        run_dirs = sorted(p.parent for p in root.glob("*/config.json"))
    rows = []
    for d in run_dirs:
        cfg_path = d / "config.json"
        if not cfg_path.is_file():
            raise DataError(f"{d} is not a run directory")
        config = json.loads(cfg_path.read_text())
        reports = [
            MetricsReport.from_dict(json.loads(p.read_text()))
            for p in sorted(d.glob("*/metrics.json"), key=lambda p: int(p.parent.name))
        ]
        if reports:
            rows.append((_label(config), aggregate_seeds(reports)))
    if not rows:
        raise DataError("no finished runs to report")
    print(format_table(rows), end="")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "validate": cmd_validate,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "report": cmd_report,
}


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except Exception as exc:  # noqa: BLE001 - last-resort single-line report
        return _fail(type(exc).__name__, exc, 1)


if __name__ == "__main__":
    sys.exit(main())
