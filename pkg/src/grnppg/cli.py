"""Command-line entry point: ``grnppg <synth|preprocess|train|evaluate|compare|report>``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .dataset import PulseDataset, read_pulse_csv, write_pulse_csv
from .errors import ConfigError, DataError, GrnPpgError
from .models import MODEL_KINDS
from .preprocessing import preprocess, read_signal_csv, write_signal_csv
from .synthetic import (
    AnnotatedFrame,
    GeneratorConfig,
    build_corpus,
    generate_frame,
    label_pulses,
    labeled_pulses,
    read_intervals_json,
    write_intervals_json,
)
from .training import (
    AGGREGATE_COLUMNS,
    CURVE_COLUMNS,
    DEFAULT_PORTIONS,
    EvalReport,
    compare,
    confusion,
    metrics,
    run_cell,
)

log = logging.getLogger("grnppg")


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_csv(rows: Sequence[dict], columns: Sequence[str], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row[k] is None else f"{row[k]:.9g}" if isinstance(row[k], float) else row[k]) for k in columns})


def _csv_list(text: str, cast):
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {text!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg: RunConfig, out: Path) -> int:
    gen = cfg.generator
    if args.pulses:
        corpus = build_corpus(args.pulses, gen, frame_s=args.frame_s, spec=cfg.bandpass)
        write_pulse_csv(corpus, out / "pulses.csv")
        n, n_art = len(corpus), int(corpus.y.sum())
    else:
        annotated = generate_frame(gen, source_id="synth")
        write_signal_csv(annotated.frame, out / "raw.csv")
        write_intervals_json(annotated.intervals, out / "intervals.json")
        pulses, rejections = labeled_pulses(annotated, cfg.bandpass)
        corpus = PulseDataset.from_pulses(pulses)
        write_pulse_csv(corpus, out / "pulses.csv")
        _dump_json(rejections.to_dict(), out / "rejections.json")
        n, n_art = len(pulses), int(corpus.y.sum()) if pulses else 0
    prevalence = n_art / n if n else 0.0
    _dump_json({"config": cfg.to_dict(), "n_pulses": n, "n_artifact": n_art, "prevalence": prevalence},
               out / "synth.json")
    print(f"prevalence: {prevalence:.4f} ({n_art} of {n} pulses labeled artifact)")
    return 0


def cmd_preprocess(args, cfg: RunConfig, out: Path) -> int:
    frame = read_signal_csv(args.input)
    pulses, rejections = preprocess(frame, cfg.bandpass)
    if args.intervals:
        intervals = read_intervals_json(args.intervals)
        pulses = label_pulses(AnnotatedFrame(frame, intervals, 0), pulses)
    if not pulses:
        raise DataError(f"{args.input}: no pulses survived preprocessing")
    write_pulse_csv(PulseDataset.from_pulses(pulses), out / "pulses.csv")
    _dump_json({"config": cfg.to_dict(), "input": str(args.input), "n_pulses": len(pulses),
                "rejections": rejections.to_dict()}, out / "rejections.json")
    print(f"{len(pulses)} pulses kept, {rejections.total} rejected")
    return 0


def cmd_train(args, cfg: RunConfig, out: Path) -> int:
    if args.model not in MODEL_KINDS:
        raise ConfigError(f"unsupported model {args.model!r}; supported: {', '.join(MODEL_KINDS)}")
    corpus = read_pulse_csv(args.data)
    if not corpus.labeled:
        raise DataError(f"{args.data}: training needs every pulse labeled")
    result = run_cell(corpus, args.model, args.portion, cfg.seed, cfg.experiment())
    report = result.report
    report.config["run"] = cfg.to_dict()
    test = result.data.subset(result.split.test)
    write_pulse_csv(test, out / "test.csv")
    extra = {}
    if args.model == "knn":
        write_pulse_csv(result.train_data, out / "train.csv")
        extra["train_csv"] = "train.csv"
    else:
        save_checkpoint(result.model, out / "model", seed=cfg.seed,
                        metrics={k: getattr(report, k) for k in ("acc", "pre", "rec", "f1")}, extra=extra)
    if args.model == "knn":
        _dump_json({"format_version": 1, "model": "knn", "config": dataclasses.asdict(result.model.cfg),
                    "seed": cfg.seed, "extra": extra}, out / "model.json")
    (out / "report.json").write_text(report.to_json())
    print(f"{args.model}: acc={report.acc:.4f} pre={report.pre:.4f} rec={report.rec:.4f} f1={report.f1:.4f} "
          f"epochs={report.epochs}")
    return 0


def _load_model(path: Path):
    manifest_path = path.with_suffix(".json")
    try:
        head = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {manifest_path}: {exc}") from exc
    if head.get("model") == "knn":
        from .models import KnnClassifier, KnnConfig

        model = KnnClassifier(KnnConfig(**head["config"]))
        model.fit(read_pulse_csv(manifest_path.parent / head["extra"]["train_csv"]))
        return model, head
    return load_checkpoint(path)


def cmd_evaluate(args, cfg: RunConfig, out: Path) -> int:
    model, manifest = _load_model(Path(args.checkpoint))
    data = read_pulse_csv(args.data)
    probs = model.predict_proba(data.X)
    pred = (probs >= 0.5).astype(int)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "prob", "pred"])
        for sid, p, c in zip(data.source_ids, probs, pred):
            w.writerow([sid, f"{p:.9g}", c])
    if (data.y < 0).all():
        print(f"{len(data)} unlabeled pulses: predictions only")
        return 0
    if (data.y < 0).any():
        raise DataError(f"{args.data}: mix of labeled and unlabeled pulses")
    report = EvalReport(model.kind, 1.0, int(manifest.get("seed", 0)), "", config={"checkpoint": manifest})
    report.set_metrics(metrics(*confusion(data.y, pred)))
    report.n_test = len(data)
    (out / "eval.json").write_text(report.to_json())
    print(f"{model.kind}: acc={report.acc:.4f} pre={report.pre:.4f} rec={report.rec:.4f} f1={report.f1:.4f}")
    return 0


def cmd_compare(args, cfg: RunConfig, out: Path) -> int:
    models = _csv_list(args.models, str)
    portions = _csv_list(args.portions, float)
    seeds = _csv_list(args.seeds, int)
    if args.data:
        corpus = read_pulse_csv(args.data)
    else:
        corpus = build_corpus(args.pulses, cfg.generator, spec=cfg.bandpass)
    res = compare(corpus, models, portions, seeds, cfg.experiment(), threads=args.threads)
    _write_csv(res.aggregate_rows(), AGGREGATE_COLUMNS, out / "aggregate.csv")
    _write_csv(res.curve_rows(), CURVE_COLUMNS, out / "curves.csv")
    _dump_json({"config": cfg.to_dict(), "models": models, "portions": portions, "seeds": seeds,
                "summary": res.summary, "flags": res.flags,
                "reports": [r.to_dict() for r in res.reports]}, out / "summary.json")
    print(format_summary(res.summary, res.flags))
    return 0


def format_summary(summary: Sequence[dict], flags: Sequence[str] = ()) -> str:
    lines = ["model            portion  n   acc            pre            rec            f1             smoothness"]
    for row in summary:
        cells = []
        for key in ("acc", "pre", "rec", "f1", "smoothness"):
            m, s = row.get(f"{key}_mean"), row.get(f"{key}_std")
            cells.append("n/a".ljust(14) if m is None else f"{m:.4f}±{s:.4f}".ljust(14))
        lines.append(f"{row['model']:<16} {row['portion']:<8g} {row['n_seeds']:<3d} " + " ".join(cells))
    lines.extend(f"FLAG {f}" for f in flags)
    return "\n".join(lines)


def read_aggregate_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != AGGREGATE_COLUMNS:
            raise DataError(f"{path}: expected columns {','.join(AGGREGATE_COLUMNS)}")
        rows = []
        for r in reader:
            row = {"model": r["model"], "portion": float(r["portion"]), "seed": int(r["seed"]), "epochs": int(r["epochs"])}
            for k in ("acc", "pre", "rec", "f1", "smoothness", "wall_s"):
                row[k] = float(r[k]) if r[k] != "" else None
            rows.append(row)
    return rows


def cmd_report(args, cfg: RunConfig, out: Path) -> int:
    src = Path(args.input)
    rows = read_aggregate_csv(src / "aggregate.csv" if src.is_dir() else src)
    reports = [EvalReport(r["model"], r["portion"], r["seed"], "", acc=r["acc"], pre=r["pre"], rec=r["rec"],
                          f1=r["f1"], smoothness=r["smoothness"], epochs=r["epochs"]) for r in rows]
    from .training import _summarize, directional_flags

    summary = _summarize(reports)
    flags = directional_flags(reports)
    text = format_summary(summary, flags)
    (out / "report.txt").write_text(text + "\n")
    print(text)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="JSON config file")
    p.add_argument("--seed", type=int, default=d(None), help="global seed (overrides the config file)")
    p.add_argument("--out", default=d("out"), help="output directory (default: out)")
    p.add_argument("--threads", type=int, default=d(os.cpu_count() or 1), help="worker threads for compare")
    p.add_argument("--set", action="append", default=d([]), metavar="SECTION.FIELD=VALUE",
                   help="override any config field, e.g. --set transformer.d_model=64")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, help="maximum training epochs")
    p.add_argument("--patience", type=int, help="early-stopping patience in epochs")
    p.add_argument("--lr", type=float, help="learning rate (default depends on model)")
    p.add_argument("--batch-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grnppg", description="PPG artifact detection with GRN-Transformers")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        return p

    p = add("synth", "generate a synthetic PPG recording with artifact annotations")
    for f in dataclasses.fields(GeneratorConfig):
        if f.name == "seed":
            continue
        names = [f"--{f.name.replace('_', '-')}"]
        if f.name == "duration_s":
            names.append("--duration")
        p.add_argument(*names, dest=f"gen_{f.name}", default=None,
                       help=f"generator {f.name}" + (" (JSON object)" if f.name == "artifact_mix" else ""))
    p.add_argument("--pulses", type=int, default=0, help="build a labeled corpus of this many pulses instead")
    p.add_argument("--frame-s", type=float, default=120.0, help="frame length used for --pulses corpora")

    p = add("preprocess", "filter, segment, resample and normalize a raw recording")
    p.add_argument("--input", required=True, help="raw CSV with header t_s,ppg")
    p.add_argument("--intervals", help="intervals.json used to label pulses")

    p = add("train", "train one model and evaluate it on its held-out split")
    p.add_argument("--data", required=True, help="labeled pulse CSV")
    p.add_argument("--model", default="grn-transformer", help=f"one of {', '.join(MODEL_KINDS)}")
    p.add_argument("--portion", type=float, default=1.0, help="stratified fraction of the data to use")
    _train_flags(p)

    p = add("evaluate", "score a checkpoint on a pulse CSV")
    p.add_argument("--checkpoint", required=True, help="checkpoint path (the .json manifest)")
    p.add_argument("--data", required=True)

    p = add("compare", "train every model on every portion for every seed")
    p.add_argument("--data", help="labeled pulse CSV (default: generate a corpus)")
    p.add_argument("--pulses", type=int, default=4000, help="corpus size when generating")
    p.add_argument("--models", default="transformer,grn-transformer,mlp,grn-mlp,knn")
    p.add_argument("--portions", default=",".join(str(v) for v in DEFAULT_PORTIONS))
    p.add_argument("--seeds", default="0,1,2")
    _train_flags(p)

    p = add("report", "summarize the output of compare")
    p.add_argument("--input", required=True, help="compare output directory or aggregate.csv")
    return parser


def resolve_config(args) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    for item in args.set:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects SECTION.FIELD=VALUE, got {item!r}")
        cfg.set(key.strip(), value.strip())
    if args.command == "synth":
        for f in dataclasses.fields(GeneratorConfig):
            v = getattr(args, f"gen_{f.name}", None)
            if v is not None:
                cfg.set(f"generator.{f.name}", v)
    for flag, key in (("epochs", "train.max_epochs"), ("patience", "train.early_stop_patience"),
                      ("lr", "train.lr"), ("batch_size", "train.batch_size")):
        v = getattr(args, flag, None)
        if v is not None:
            cfg.set(key, v)
    cfg.generator.seed = cfg.seed
    cfg.validate()
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train,
                "evaluate": cmd_evaluate, "compare": cmd_compare, "report": cmd_report}
    try:
        cfg = resolve_config(args)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"cannot create output directory {out}: {exc}") from exc
        return handlers[args.command](args, cfg, out)
    except GrnPpgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
