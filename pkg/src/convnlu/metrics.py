"""Intent accuracy, conlleval-style chunk F1, and correct-to-incorrect flip analysis."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, TagFormatError

_TAG = re.compile(r"^([BI])-(.+)$")


class Chunk(NamedTuple):
    type: str
    start: int
    end: int  # inclusive


@dataclass
class RunMetrics:
    intent_accuracy: float | None = None
    slot_precision: float | None = None
    slot_recall: float | None = None
    slot_f1: float | None = None
    params: int | None = None
    latency_ms: float | None = None


def intent_accuracy(preds, gold) -> float:
    preds, gold = np.asarray(preds), np.asarray(gold)
    if preds.shape != gold.shape:
        raise DimensionError(f"{preds.shape[0] if preds.ndim else 0} predictions for {gold.shape[0] if gold.ndim else 0} gold labels")
    if gold.size == 0:
        raise DimensionError("intent_accuracy needs at least one sample")
    return float((preds == gold).mean())


def _split(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    m = _TAG.match(tag)
    if m is None:
        raise TagFormatError(f"malformed IOB tag {tag!r}")
    return m.group(1), m.group(2)


def extract_chunks(tags: Sequence[str]) -> set[Chunk]:
    """Chunks under conlleval rules.

    An ``I-x`` that does not continue an open ``x`` chunk starts a new one.
    """
    chunks = set()
    start, ctype = None, None
    for i, tag in enumerate(tags):
        prefix, t = _split(tag)
        if start is not None and (prefix != "I" or t != ctype):
            chunks.add(Chunk(ctype, start, i - 1))
            start, ctype = None, None
        if prefix != "O" and start is None:
            start, ctype = i, t
    if start is not None:
        chunks.add(Chunk(ctype, start, len(tags) - 1))
    return chunks


def slot_f1(pred_seqs: Sequence[Sequence[str]], gold_seqs: Sequence[Sequence[str]]) -> tuple[float, float, float]:
    """Micro-averaged chunk precision, recall and F1 over all utterances."""
    if len(pred_seqs) != len(gold_seqs):
        raise DimensionError(f"{len(pred_seqs)} predicted sequences for {len(gold_seqs)} gold sequences")
    matched = n_pred = n_gold = 0
    for i, (p, g) in enumerate(zip(pred_seqs, gold_seqs)):
        if len(p) != len(g):
            raise DimensionError(f"utterance {i}: {len(p)} predicted tags for {len(g)} gold tags")
        pc, gc = extract_chunks(p), extract_chunks(g)
        matched += len(pc & gc)
        n_pred += len(pc)
        n_gold += len(gc)
    precision = matched / n_pred if n_pred else 0.0
    recall = matched / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


# ---------------------------------------------------------------------------
# flip analysis
# ---------------------------------------------------------------------------


@dataclass
class FlipRecord:
    index: int
    task: str  # "intent" or "slot"
    position: int  # token position for slot records, -1 for intents
    before_correct: bool
    after_correct: bool
    gold: str
    before: str
    after: str


@dataclass
class FlipReport:
    """Correct-to-incorrect flips between two models on the same split.

    ``records`` holds only correct->incorrect changes; incorrect->correct
    changes are tallied in ``recovered``.
    """

    records: list[FlipRecord] = field(default_factory=list)
    n_samples: int = 0
    n_tokens: int = 0
    recovered: Counter = field(default_factory=Counter)

    @property
    def flips(self) -> int:
        return len(self.records)

    def by_gold(self, task: str) -> Counter:
        return Counter(r.gold for r in self.records if r.task == task)

    def by_after(self, task: str) -> Counter:
        return Counter(r.after for r in self.records if r.task == task)

    def to_outside(self) -> int:
        return sum(1 for r in self.records if r.task == "slot" and r.after == "O")

    def summary(self) -> dict[str, object]:
        slot_after = self.by_after("slot")
        return {
            "samples": self.n_samples,
            "tokens": self.n_tokens,
            "intent_flips": sum(1 for r in self.records if r.task == "intent"),
            "slot_flips": sum(1 for r in self.records if r.task == "slot"),
            "slot_flips_to_O": self.to_outside(),
            "modal_slot_after": slot_after.most_common(1)[0][0] if slot_after else "",
            "intent_recovered": self.recovered["intent"],
            "slot_recovered": self.recovered["slot"],
        }


FLIP_FIELDS = ("index", "task", "position", "before_correct", "after_correct", "gold", "before", "after")


def compare_predictions(gold_intents, before_intents, after_intents,
                        gold_tags, before_tags, after_tags) -> FlipReport:
    """Build a FlipReport from label-string predictions. Either task may be ``None``."""
    report = FlipReport()
    if gold_intents is not None:
        report.n_samples = len(gold_intents)
        for i, (g, b, a) in enumerate(zip(gold_intents, before_intents, after_intents)):
            _tally(report, i, "intent", -1, g, b, a)
    if gold_tags is not None:
        report.n_samples = report.n_samples or len(gold_tags)
        for i, (gs, bs, as_) in enumerate(zip(gold_tags, before_tags, after_tags)):
            if not (len(gs) == len(bs) == len(as_)):
                raise DimensionError(f"utterance {i}: tag sequences differ in length")
            report.n_tokens += len(gs)
            for pos, (g, b, a) in enumerate(zip(gs, bs, as_)):
                _tally(report, i, "slot", pos, g, b, a)
    return report


def _tally(report: FlipReport, index, task, position, gold, before, after) -> None:
    bc, ac = before == gold, after == gold
    if bc and not ac:
        report.records.append(FlipRecord(index, task, position, bc, ac, gold, before, after))
    elif ac and not bc:
        report.recovered[task] += 1


def flip_analysis(model_before, model_after, split) -> FlipReport:
    """Evaluate both models on ``split`` and collect correct-to-incorrect flips."""
    from .model import gold_labels, predict_labels

    if model_before.labels != model_after.labels:
        raise ConfigError("models were trained with different label maps")
    if model_before.config.task != model_after.config.task:
        raise ConfigError("models solve different tasks")
    before, after = predict_labels(model_before, split), predict_labels(model_after, split)
    gold = gold_labels(model_before, split)
    return compare_predictions(gold.intents, before.intents, after.intents, gold.tags, before.tags, after.tags)


def write_flip_report(report: FlipReport, path) -> Path:
    """Write flips as tab-separated records and the aggregates to ``<path>.summary``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(FLIP_FIELDS) + "\n")
        for r in report.records:
            fh.write("\t".join(str(getattr(r, f)).lower() if isinstance(getattr(r, f), bool) else str(getattr(r, f))
                               for f in FLIP_FIELDS) + "\n")
    summary_path = path.with_name(path.name + ".summary")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("key\tvalue\n")
        for key, value in report.summary().items():
            fh.write(f"{key}\t{value}\n")
        for task in ("intent", "slot"):
            for label, count in sorted(report.by_gold(task).items(), key=lambda kv: (-kv[1], kv[0])):
                fh.write(f"{task}_gold:{label}\t{count}\n")
            for label, count in sorted(report.by_after(task).items(), key=lambda kv: (-kv[1], kv[0])):
                fh.write(f"{task}_after:{label}\t{count}\n")
    return path


def read_flip_report(path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        return [dict(zip(header, line.rstrip("\n").split("\t"))) for line in fh if line.strip()]
