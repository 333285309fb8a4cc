"""Command-line entry point.

Every command writes ``manifest.tsv`` into ``--out``. The manifest records the
full argument vector, so ``convnlu --from-manifest OUT/manifest.tsv`` re-runs
the same command (later flags override, e.g. ``--out elsewhere``).

Exit codes: 0 success, 2 usage or configuration, 3 data or format, 4 numeric.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bench import LatencyReport, allocation_growth, benchmark, paired_benchmark
from .checkpoint import load_checkpoint, save_checkpoint
from .data import build_label_maps, build_vocab, dataset_checksum, encode_split, load_dataset, load_word_vectors
from .distillation import DistillConfig, distill_curve
from .errors import ConfigError, ConvNLUError, UsageError
from .metrics import RunMetrics, flip_analysis, write_flip_report
from .model import ModelConfig, TrainConfig, count_params, evaluate, init_model, train
from .pruning import (
    PruneSchedule,
    SparsityCurvePoint,
    prune_iterative,
    prune_one_shot,
    read_curve,
    write_curve,
)

logger = logging.getLogger("convnlu")

MANIFEST_NAME = "manifest.tsv"
METRIC_FIELDS = ("split", "intent_acc", "slot_precision", "slot_recall", "slot_f1", "params")
LATENCY_FIELDS = ("model", "checkpoint", "mean_ms", "std_ms", "per_sample_ms", "batch_size", "warmup", "samples",
                  "alloc_growth_bytes", "hardware")
COMBINED_FIELDS = ("compression_rate", "prune_params", "prune_intent_acc", "prune_slot_f1",
                   "distill_params", "distill_intent_acc", "distill_slot_f1")
ABSENT = "absent"


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


class Manifest:
    """Key/value run record written as a two-column TSV."""

    def __init__(self, command: str, argv: list[str], args: argparse.Namespace):
        self.rows: list[tuple[str, str]] = [("command", command), ("argv", json.dumps(argv))]
        for key, value in sorted(vars(args).items()):
            if key not in ("func", "command"):
                self.rows.append((f"arg.{key}", "" if value is None else str(value)))
        self.rows += [("seed", str(args.seed)), ("toolkit_version", __version__),
                      ("numpy_version", np.__version__), ("started", _now())]

    def add(self, key: str, value) -> None:
        self.rows.append((key, str(value)))

    def output(self, name: str, path) -> None:
        self.add(f"output.{name}", path)

    def write(self, directory) -> Path:
        path = Path(directory) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("key\tvalue\n")
            for key, value in self.rows:
                fh.write(f"{key}\t{value}\n")
        return path


def read_manifest(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"manifest not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != "key\tvalue":
            raise ConfigError(f"{path}: not a run manifest")
        for line in fh:
            key, _, value = line.rstrip("\n").partition("\t")
            out[key] = value
    return out


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _need_dir(value, flag: str) -> Path:
    if not value:
        raise UsageError(f"{flag} is required")
    path = Path(value)
    if not path.is_dir():
        raise UsageError(f"{flag} {value}: no such directory")
    return path


def _need_file(value, flag: str) -> Path:
    if not value:
        raise UsageError(f"{flag} is required")
    path = Path(value)
    if not path.is_file():
        raise UsageError(f"{flag} {value}: no such file")
    return path


def _train_config(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, batch_size=args.batch_size, max_epochs=args.epochs, patience=args.patience,
                       seed=args.seed)


def _encoded_splits(args, manifest: Manifest, vocab, labels, names=("train", "dev", "test")):
    root = _need_dir(args.data, "--data")
    raw = load_dataset(root)
    manifest.add("dataset_checksum", dataset_checksum(root))
    return {name: encode_split(raw[name], vocab, labels, args.max_seq_len) for name in names}


def _load_model(path, args):
    return load_checkpoint(_need_file(path, "--checkpoint"), dropout=args.dropout, max_seq_len=args.max_seq_len)


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def write_metrics(rows: dict[str, RunMetrics], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(METRIC_FIELDS) + "\n")
        for split, m in rows.items():
            vals = (split, m.intent_accuracy, m.slot_precision, m.slot_recall, m.slot_f1, m.params)
            fh.write("\t".join(_fmt(v) for v in vals) + "\n")
    return path


def _describe(m: RunMetrics) -> str:
    parts = []
    if m.intent_accuracy is not None:
        parts.append(f"intent acc {100 * m.intent_accuracy:.2f}")
    if m.slot_f1 is not None:
        parts.append(f"slot F1 {100 * m.slot_f1:.2f}")
    parts.append(f"params {m.params}")
    return ", ".join(parts)


def _baseline_point(model, test_split, checkpoint) -> SparsityCurvePoint:
    m = evaluate(model, test_split)
    return SparsityCurvePoint(model.num_filters, count_params(model), 0.0, m.intent_accuracy, m.slot_f1,
                              str(checkpoint))


def _rates(text: str) -> list[float]:
    try:
        rates = [float(r) for r in text.split(",") if r.strip()]
    except ValueError:
        raise UsageError(f"bad rate list {text!r}") from None
    if not rates or any(not 0.0 < r < 1.0 for r in rates):
        raise UsageError("rates must lie in (0, 1)")
    return rates


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args, manifest: Manifest) -> int:
    root = _need_dir(args.data, "--data")
    vectors = _need_file(args.vectors, "--vectors") if args.vectors else None
    raw = load_dataset(root)
    manifest.add("dataset_checksum", dataset_checksum(root))
    vocab = build_vocab(raw["train"], args.min_count)
    labels = build_label_maps(raw["train"], raw["dev"], raw["test"])
    embeddings, coverage = load_word_vectors(vectors, vocab, args.embed_dim, args.seed)
    if vectors is None:
        logger.warning("no --vectors given; embeddings are random and stay frozen")
    manifest.add("vector_coverage", f"{coverage.covered}/{coverage.covered + coverage.uncovered}")
    splits = {name: encode_split(raw[name], vocab, labels, args.max_seq_len) for name in ("train", "dev", "test")}
    config = ModelConfig(args.embed_dim, args.filters, args.kernel_size, args.dropout, args.alpha,
                         args.max_seq_len, args.task)
    model = init_model(config, embeddings, labels, vocab, args.seed)
    result = train(model, splits["train"], splits["dev"], _train_config(args))
    out = Path(args.out)
    ckpt = save_checkpoint(result.model, out / "model.ckpt")
    metrics = {name: evaluate(result.model, splits[name]) for name in ("dev", "test")}
    mpath = write_metrics(metrics, out / "metrics.tsv")
    hpath = out / "history.tsv"
    with open(hpath, "w", encoding="utf-8") as fh:
        fh.write("epoch\ttrain_loss\tdev_intent_acc\tdev_slot_f1\tdev_metric\timproved\n")
        for r in result.history:
            vals = (r.epoch, r.train_loss, r.dev_intent_accuracy, r.dev_slot_f1, r.dev_metric, int(r.improved))
            fh.write("\t".join(_fmt(v) for v in vals) + "\n")
    manifest.add("best_epoch", result.best_epoch)
    manifest.add("diverged", result.diverged)
    manifest.output("checkpoint", ckpt)
    manifest.output("metrics", mpath)
    manifest.output("history", hpath)
    print(f"test: {_describe(metrics['test'])}")
    print(f"checkpoint: {ckpt}")
    return 4 if result.diverged and result.best_epoch == 0 else 0


def cmd_eval(args, manifest: Manifest) -> int:
    model = _load_model(args.checkpoint, args)
    split = _encoded_splits(args, manifest, model.vocab, model.labels, (args.split,))[args.split]
    m = evaluate(model, split)
    path = write_metrics({args.split: m}, Path(args.out) / "metrics.tsv")
    manifest.output("metrics", path)
    print(f"{args.split}: {_describe(m)}")
    return 0


def cmd_prune(args, manifest: Manifest) -> int:
    if not 0.0 <= args.target < 1.0:
        raise UsageError(f"--target must lie in [0, 1), got {args.target}")
    levels = _rates(args.levels) if args.levels else None
    schedule = PruneSchedule(args.norm, args.mode, args.step, args.target,
                             _train_config(args) if args.mode == "iterative" else None, levels)
    model = _load_model(args.checkpoint, args)
    out = Path(args.out)
    if args.mode == "one-shot":
        pruned = prune_one_shot(model, schedule)
        ckpt = save_checkpoint(pruned, out / f"pruned_{pruned.num_filters:04d}.ckpt")
        manifest.output("checkpoint", ckpt)
        points = []
        if args.data:
            splits = _encoded_splits(args, manifest, model.vocab, model.labels, ("test",))
            if args.include_baseline:
                points.append(_baseline_point(model, splits["test"], args.checkpoint))
            m = evaluate(pruned, splits["test"])
            points.append(SparsityCurvePoint(pruned.num_filters, count_params(pruned),
                                             1.0 - pruned.num_filters / model.num_filters,
                                             m.intent_accuracy, m.slot_f1, str(ckpt)))
        else:
            points.append(SparsityCurvePoint(pruned.num_filters, count_params(pruned),
                                             1.0 - pruned.num_filters / model.num_filters, None, None, str(ckpt)))
        print(f"pruned to {pruned.num_filters} filters: {ckpt}")
    else:
        splits = _encoded_splits(args, manifest, model.vocab, model.labels)
        points = [_baseline_point(model, splits["test"], args.checkpoint)] if args.include_baseline else []
        points += prune_iterative(model, splits, schedule, out)
        for p in points:
            manifest.output(f"checkpoint.{p.filters_remaining}", p.checkpoint)
    curve = write_curve(points, out / "curve.tsv")
    manifest.output("curve", curve)
    for p in points:
        print(_point_line(p))
    return 0


def cmd_distill(args, manifest: Manifest) -> int:
    teacher = _load_model(args.checkpoint, args)
    splits = _encoded_splits(args, manifest, teacher.vocab, teacher.labels)
    student_cfg = ModelConfig(teacher.config.embed_dim, teacher.num_filters, teacher.config.kernel_size,
                              args.dropout, teacher.config.alpha, args.max_seq_len, teacher.config.task)
    config = DistillConfig(args.temperature, args.hard_weight, student_cfg, _train_config(args), args.seed)
    out = Path(args.out)
    points = [_baseline_point(teacher, splits["test"], args.checkpoint)] if args.include_baseline else []
    points += distill_curve(teacher, config, splits, _rates(args.rates), out)
    curve = write_curve(points, out / "curve.tsv")
    manifest.output("curve", curve)
    for p in points:
        manifest.output(f"checkpoint.{p.filters_remaining}", p.checkpoint)
        print(_point_line(p))
    return 0


def _point_line(p: SparsityCurvePoint) -> str:
    def pct(v):
        return "n/a" if v is None else f"{100 * v:.2f}"

    return (f"{p.filters_remaining} filters ({100 * p.compression_rate:g}%): {p.params} params, "
            f"intent acc {pct(p.intent_accuracy)}, slot F1 {pct(p.slot_f1)}")


def _rate_key(rate: float) -> float:
    return round(100.0 * rate, 1)


def merge_curves(pruning: list[SparsityCurvePoint], distilled: list[SparsityCurvePoint]):
    """Rows keyed by compression rate (percent) over the union of both grids."""
    by_p = {_rate_key(p.compression_rate): p for p in pruning}
    by_d = {_rate_key(p.compression_rate): p for p in distilled}
    if set(by_p) != set(by_d):
        common = sorted(set(by_p) & set(by_d))
        logger.warning("compression grids differ; shared points: %s", ", ".join(f"{r:g}%" for r in common) or "none")
    return [(rate, by_p.get(rate), by_d.get(rate)) for rate in sorted(set(by_p) | set(by_d))]


def _cell(point, attr, base) -> str:
    if point is None or getattr(point, attr) is None:
        return ABSENT
    value = 100 * getattr(point, attr)
    if base is None or getattr(base, attr) is None:
        return f"{value:.2f}"
    return f"{value:.2f} ({value - 100 * getattr(base, attr):+.2f})"


def format_table(rows) -> str:
    """Text table: one row per compression rate, deltas against each method's 0% row."""
    base_p = next((p for r, p, _ in rows if r == 0.0 and p is not None), None)
    base_d = next((d for r, _, d in rows if r == 0.0 and d is not None), None)
    header = ("compression", "params", "pruned intent", "pruned slot F1", "distilled intent", "distilled slot F1")
    body = []
    for rate, p, d in rows:
        params = p.params if p is not None else (d.params if d is not None else ABSENT)
        body.append((f"{rate:g}%", str(params), _cell(p, "intent_accuracy", base_p), _cell(p, "slot_f1", base_p),
                     _cell(d, "intent_accuracy", base_d), _cell(d, "slot_f1", base_d)))
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_combined(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(COMBINED_FIELDS) + "\n")
        for rate, p, d in rows:
            vals = [rate / 100.0]
            for point in (p, d):
                vals += [None, None, None] if point is None else [point.params, point.intent_accuracy, point.slot_f1]
            fh.write("\t".join(_fmt(v) for v in vals) + "\n")
    return path


def cmd_compare(args, manifest: Manifest) -> int:
    pruning = read_curve(_need_file(args.pruning, "--pruning"))
    distilled = read_curve(_need_file(args.distillation, "--distillation"))
    rows = merge_curves(pruning, distilled)
    out = Path(args.out)
    combined = write_combined(rows, out / "combined.tsv")
    table = format_table(rows)
    (out / "table.txt").write_text(table, encoding="utf-8")
    manifest.output("combined", combined)
    manifest.output("table", out / "table.txt")
    print(table, end="")
    return 0


def cmd_flips(args, manifest: Manifest) -> int:
    before = _load_model(args.checkpoint, args)
    after = _load_model(args.against, args)
    if before.labels != after.labels:
        raise ConfigError("the two checkpoints use different label maps")
    if before.vocab.itos != after.vocab.itos:
        raise ConfigError("the two checkpoints use different vocabularies")
    split = _encoded_splits(args, manifest, before.vocab, before.labels, (args.split,))[args.split]
    report = flip_analysis(before, after, split)
    path = write_flip_report(report, Path(args.out) / "flips.tsv")
    manifest.output("flips", path)
    manifest.output("summary", f"{path}.summary")
    for key, value in report.summary().items():
        print(f"{key}: {value}")
    return 0


def cmd_bench(args, manifest: Manifest) -> int:
    model = _load_model(args.checkpoint, args)
    split = _encoded_splits(args, manifest, model.vocab, model.labels, (args.split,))[args.split]
    models = {"model": model}
    paths = {"model": args.checkpoint}
    if args.baseline:
        models["baseline"] = _load_model(args.baseline, args)
        paths["baseline"] = args.baseline
        if models["baseline"].vocab.itos != model.vocab.itos:
            raise ConfigError("baseline checkpoint uses a different vocabulary")
        reports = paired_benchmark(models, split, args.warmup, args.rounds)
    else:
        reports = {"model": benchmark(model, split, args.warmup)}
    path = Path(args.out) / "latency.tsv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(LATENCY_FIELDS) + "\n")
        for name, r in reports.items():
            growth = allocation_growth(models[name], split)[1]
            vals = (name, paths[name], r.mean_ms, r.std_ms, r.per_sample_ms, r.batch_size, r.warmup, r.samples,
                    growth, r.hardware)
            fh.write("\t".join(_fmt(v) for v in vals) + "\n")
            print(_latency_line(name, r, models[name].num_filters))
    manifest.output("latency", path)
    return 0


def _latency_line(name: str, r: LatencyReport, filters: int) -> str:
    return (f"{name} ({filters} filters): {r.mean_ms:.4f} ms/sample (std {r.std_ms:.4f}, "
            f"{r.samples} samples, warmup {r.warmup}) on {r.hardware}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convnlu", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--data", metavar="DIR", help="dataset root with train/dev/test directories")
    shared.add_argument("--vectors", metavar="FILE", help="word vectors in text format")
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--out", metavar="DIR", default="out")
    shared.add_argument("--checkpoint", metavar="FILE")
    shared.add_argument("--max-seq-len", type=int, default=50)
    shared.add_argument("--dropout", type=float, default=0.5)

    fit = argparse.ArgumentParser(add_help=False)
    fit.add_argument("--lr", type=float, default=1e-3)
    fit.add_argument("--batch-size", type=int, default=32)
    fit.add_argument("--epochs", type=int, default=50, help="maximum epochs")
    fit.add_argument("--patience", type=int, default=5)

    p = sub.add_parser("train", parents=[shared, fit], help="train a model from scratch")
    p.add_argument("--task", choices=("intent", "slot", "joint"), default="joint")
    p.add_argument("--alpha", type=float, default=0.2, help="intent weight in the joint loss")
    p.add_argument("--filters", type=int, default=300)
    p.add_argument("--kernel-size", type=int, default=5)
    p.add_argument("--embed-dim", type=int, default=100)
    p.add_argument("--min-count", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[shared], help="evaluate a checkpoint")
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prune", parents=[shared, fit], help="structured filter pruning")
    p.add_argument("--mode", choices=("one-shot", "iterative"), default="iterative")
    p.add_argument("--target", type=float, default=0.5, help="target filter sparsity")
    p.add_argument("--step", type=float, default=0.1, help="fraction of the original filters per iteration")
    p.add_argument("--norm", choices=("l1", "l2"), default="l2")
    p.add_argument("--levels", help="explicit comma-separated sparsity levels, replacing --step")
    p.add_argument("--include-baseline", action="store_true", help="add the unpruned model as a 0%% point")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("distill", parents=[shared, fit], help="train narrower students from a teacher")
    p.add_argument("--rates", default="0.5", help="comma-separated compression rates")
    p.add_argument("--temperature", type=float, default=2.0)
    p.add_argument("--hard-weight", type=float, default=0.5, help="weight of the hard-label loss")
    p.add_argument("--include-baseline", action="store_true", help="add the teacher as a 0%% point")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("compare", parents=[shared], help="merge a pruning and a distillation curve")
    p.add_argument("--pruning", metavar="FILE", required=True)
    p.add_argument("--distillation", metavar="FILE", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("flips", parents=[shared], help="correct-to-incorrect changes between two checkpoints")
    p.add_argument("--against", metavar="FILE", required=True, help="the second (e.g. pruned) checkpoint")
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.set_defaults(func=cmd_flips)

    p = sub.add_parser("bench", parents=[shared], help="batch-1 CPU latency")
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--baseline", metavar="FILE", help="second checkpoint for an interleaved paired run")
    p.add_argument("--rounds", type=int, default=3, help="rounds in a paired run")
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.set_defaults(func=cmd_bench)
    return parser


def _expand_manifest(argv: list[str]) -> list[str]:
    if argv and argv[0] == "--from-manifest":
        if len(argv) < 2:
            raise UsageError("--from-manifest needs a file")
        recorded = json.loads(read_manifest(argv[1])["argv"])
        return recorded + argv[2:]
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _expand_manifest(argv)
    except ConvNLUError as exc:
        print(f"convnlu: error: {exc}", file=sys.stderr)
        return exc.exit_code
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    recorded = [a for a in argv if a not in ("-v", "--verbose")]
    manifest = Manifest(args.command, recorded, args)
    code = 1
    try:
        code = args.func(args, manifest)
    except ConvNLUError as exc:
        print(f"convnlu: error: {exc}", file=sys.stderr)
        code = exc.exit_code
    except OSError as exc:
        print(f"convnlu: error: {exc}", file=sys.stderr)
        code = 3
    finally:
        manifest.add("finished", _now())
        manifest.add("exit_code", code)
        manifest.write(args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
