"""Structured filter pruning: rank conv filters by norm and splice the losers out.

Removing filter ``c`` deletes row ``c`` of the conv weights and bias and the
matching input row of every head, so the pruned model is a smaller dense
model rather than a masked one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateModelError
from .model import JointModel, TrainConfig, count_params, evaluate, train

logger = logging.getLogger(__name__)

NORMS = ("l1", "l2")
MODES = ("one-shot", "iterative")
CURVE_FIELDS = ("filters", "params", "compression_rate", "intent_acc", "slot_f1", "checkpoint_path")


@dataclass
class PruneSchedule:
    """How far and how to prune.

    ``step_fraction`` is a fraction of the *original* filter count removed per
    iteration (at least one filter). ``levels`` optionally replaces the
    arithmetic grid with explicit sparsity levels, e.g. ``(0.2, 0.4, 0.9, 0.99)``.
    """

    norm: str = "l2"
    mode: str = "iterative"
    step_fraction: float = 0.1
    target_sparsity: float = 0.5
    retrain: TrainConfig | None = field(default_factory=TrainConfig)
    levels: Sequence[float] | None = None

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.target_sparsity < 1.0:
            raise ConfigError(f"target sparsity must lie in [0, 1), got {self.target_sparsity}")
        if self.mode == "iterative":
            if self.levels is not None:
                lv = list(self.levels)
                if not lv or any(not 0.0 < s < 1.0 for s in lv) or lv != sorted(set(lv)):
                    raise ConfigError("levels must be strictly increasing sparsities in (0, 1)")
            elif not 0.0 < self.step_fraction <= self.target_sparsity:
                raise ConfigError("need 0 < step_fraction <= target_sparsity")
            if self.retrain is None:
                raise ConfigError("iterative pruning needs a retrain config")

    def filter_counts(self, original: int) -> list[int]:
        """Filters remaining after each iteration, strictly decreasing."""
        if self.levels is not None:
            counts = [remaining_filters(original, s) for s in self.levels]
            out = []
            for c in counts:
                if c < original and (not out or c < out[-1]):
                    out.append(c)
            return out
        target = remaining_filters(original, self.target_sparsity)
        step = max(1, int(round(self.step_fraction * original)))
        counts, c = [], original
        while c > target:
            c = max(c - step, target)
            counts.append(c)
        return counts


def remaining_filters(original: int, sparsity: float) -> int:
    """``ceil((1 - sparsity) * original)``, at least one filter."""
    return max(1, math.ceil(round((1.0 - sparsity) * original, 9)))


@dataclass
class SparsityCurvePoint:
    filters_remaining: int
    params: int
    compression_rate: float
    intent_accuracy: float | None
    slot_f1: float | None
    checkpoint: str = ""


def filter_norms(conv_w, norm: str = "l2") -> np.ndarray:
    """Per-filter norm over its ``k*d`` weights (bias not included)."""
    w = np.asarray(getattr(conv_w, "data", conv_w), dtype=np.float64)
    flat = w.reshape(w.shape[0], -1)
    if norm == "l2":
        return np.sqrt((flat * flat).sum(axis=1))
    if norm == "l1":
        return np.abs(flat).sum(axis=1)
    raise ConfigError(f"norm must be one of {NORMS}, got {norm!r}")


def splice_filters(model: JointModel, remove) -> JointModel:
    """Model with the given conv filters and their head input rows deleted."""
    remove = sorted(set(int(i) for i in remove))
    C = model.num_filters
    if any(i < 0 or i >= C for i in remove):
        raise IndexError(f"filter index outside [0, {C}): {remove}")
    if len(remove) >= C:
        raise DegenerateModelError("cannot remove every filter")
    if not remove:
        return model.copy()
    keep = np.setdiff1d(np.arange(C), remove)

    def rows(t):
        return None if t is None else t.data[keep].copy()

    cfg = model.config
    new_cfg = type(cfg)(**{**cfg.__dict__, "num_filters": len(keep)})
    return JointModel(new_cfg, model.embeddings, rows(model.conv_w), rows(model.conv_b),
                      rows(model.intent_w), None if model.intent_b is None else model.intent_b.data.copy(),
                      rows(model.slot_w), None if model.slot_b is None else model.slot_b.data.copy(),
                      vocab=model.vocab, labels=model.labels)


def lowest_norm_filters(model: JointModel, count: int, norm: str = "l2") -> list[int]:
    norms = filter_norms(model.conv_w, norm)
    order = np.lexsort((np.arange(len(norms)), norms))  # by norm, then index
    return sorted(order[:count].tolist())


def prune_step(model: JointModel, count: int, norm: str | PruneSchedule = "l2") -> JointModel:
    """Remove the ``count`` lowest-norm filters (ties: lower index goes first)."""
    if isinstance(norm, PruneSchedule):
        norm = norm.norm
    if count < 0:
        raise ConfigError("count must be non-negative")
    if count >= model.num_filters:
        raise DegenerateModelError(f"cannot remove {count} of {model.num_filters} filters")
    return splice_filters(model, lowest_norm_filters(model, count, norm))


def prune_one_shot(model: JointModel, schedule: PruneSchedule) -> JointModel:
    target = remaining_filters(model.num_filters, schedule.target_sparsity)
    return prune_step(model, model.num_filters - target, schedule.norm)


def prune_iterative(model: JointModel, splits: dict, schedule: PruneSchedule, out_dir=None,
                    on_point: Callable[[SparsityCurvePoint, JointModel], None] | None = None
                    ) -> list[SparsityCurvePoint]:
    """Alternate pruning steps with retraining to early-stopping convergence.

    ``splits`` maps ``train``/``dev``/``test`` to encoded splits. Each point is
    evaluated on ``test`` with the model exactly as retrained (no further
    fine-tuning). Checkpoints go to ``out_dir`` when given.
    """
    from .checkpoint import save_checkpoint

    if schedule.mode != "iterative":
        raise ConfigError("prune_iterative needs an iterative schedule")
    original = model.num_filters
    points, current = [], model
    for step, remaining in enumerate(schedule.filter_counts(original), start=1):
        current = prune_step(current, current.num_filters - remaining, schedule.norm)
        result = train(current, splits["train"], splits["dev"], schedule.retrain)
        if result.diverged:
            logger.warning("retraining diverged at %d filters; keeping last good weights", remaining)
        current = result.model
        m = evaluate(current, splits["test"])
        ckpt = ""
        if out_dir is not None:
            ckpt = str(save_checkpoint(current, Path(out_dir) / f"pruned_{remaining:04d}.ckpt"))
        point = SparsityCurvePoint(remaining, count_params(current), 1.0 - remaining / original,
                                   m.intent_accuracy, m.slot_f1, ckpt)
        logger.info("step %d: %d filters, %d params, intent %s slot %s", step, remaining, point.params,
                    m.intent_accuracy, m.slot_f1)
        points.append(point)
        if on_point is not None:
            on_point(point, current)
    return points


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_curve(points: Sequence[SparsityCurvePoint], path) -> Path:
    """Tab-separated curve file with a one-line header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(CURVE_FIELDS) + "\n")
        for p in points:
            row = (p.filters_remaining, p.params, p.compression_rate, p.intent_accuracy, p.slot_f1, p.checkpoint)
            fh.write("\t".join(_fmt(v) for v in row) + "\n")
    return path


def read_curve(path) -> list[SparsityCurvePoint]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != CURVE_FIELDS:
            raise ConfigError(f"{path}: unexpected curve header {header}")
        points = []
        for line in fh:
            if not line.strip():
                continue
            rec = dict(zip(header, line.rstrip("\n").split("\t")))
            points.append(SparsityCurvePoint(
                int(rec["filters"]), int(rec["params"]), float(rec["compression_rate"]),
                float(rec["intent_acc"]) if rec["intent_acc"] else None,
                float(rec["slot_f1"]) if rec["slot_f1"] else None,
                rec.get("checkpoint_path", "")))
    return points
