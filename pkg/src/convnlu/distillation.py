"""Knowledge-distillation baseline: a narrower student trained against a frozen teacher."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .metrics import RunMetrics
from .model import (
    JointModel,
    ModelConfig,
    TrainConfig,
    _slot_targets,
    count_params,
    evaluate,
    forward,
    init_model,
    joint_loss,
    train,
)
from .pruning import SparsityCurvePoint, remaining_filters
from .tensor import IGNORE_INDEX, Tensor, soft_kl, softmax_xent, weighted_sum

logger = logging.getLogger(__name__)


@dataclass
class DistillConfig:
    temperature: float = 2.0
    hard_weight: float = 0.5
    student: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.hard_weight <= 1.0:
            raise ConfigError(f"hard_weight must lie in [0, 1], got {self.hard_weight}")


def kd_loss(student_logits: Tensor, teacher_logits, temperature: float, hard_target, hard_weight: float) -> Tensor:
    """``w * xent(student, target) + (1 - w) * T^2 * KL(p_teacher^T || p_student^T)``.

    Rows whose hard target is ``IGNORE_INDEX`` are left out of both terms.
    """
    teacher_logits = np.asarray(getattr(teacher_logits, "data", teacher_logits))
    if teacher_logits.shape != student_logits.shape:
        raise DimensionError(f"class axis: student {student_logits.shape} vs teacher {teacher_logits.shape}")
    target = np.asarray(hard_target, dtype=np.int64)
    mask = target != IGNORE_INDEX
    terms, weights = [], []
    if hard_weight > 0.0:
        terms.append(softmax_xent(student_logits, target)[0])
        weights.append(hard_weight)
    if hard_weight < 1.0:
        terms.append(soft_kl(student_logits, teacher_logits, temperature, mask))
        weights.append(1.0 - hard_weight)
    return terms[0] if weights == [1.0] else weighted_sum(terms, weights)


def make_student(teacher: JointModel, num_filters: int, seed: int = 0, dropout: float | None = None) -> JointModel:
    """Same architecture as the teacher with ``num_filters`` filters, randomly initialised."""
    if num_filters < 1:
        raise ConfigError("student needs at least one filter")
    cfg = teacher.config
    student_cfg = ModelConfig(cfg.embed_dim, num_filters, cfg.kernel_size,
                              cfg.dropout if dropout is None else dropout, cfg.alpha, cfg.max_seq_len, cfg.task)
    return init_model(student_cfg, teacher.embeddings, teacher.labels, teacher.vocab, seed)


def distill_loss(teacher: JointModel, config: DistillConfig):
    """Batch loss closure for :func:`convnlu.model.train`; the teacher runs in eval mode."""

    def loss_fn(student, batch, rng):
        with_teacher = forward(teacher, batch)
        out = forward(student, batch, training=True, rng=rng)
        T, w = config.temperature, config.hard_weight
        intent = slot = None
        if out.intent_logits is not None:
            intent = kd_loss(out.intent_logits, with_teacher.intent_logits.data, T, batch.intent_ids, w)
        if out.slot_logits is not None:
            slot = kd_loss(out.slot_logits, with_teacher.slot_logits.data, T,
                           _slot_targets(batch, out.slot_logits.shape[1]), w)
        if intent is not None and slot is not None:
            return joint_loss(intent, slot, student.config.alpha)
        return intent if intent is not None else slot

    return loss_fn


def distill(teacher: JointModel, config: DistillConfig, splits: dict) -> tuple[JointModel, RunMetrics]:
    """Train a fresh student against ``teacher`` and evaluate it on ``splits['test']``."""
    if config.student.num_filters >= teacher.num_filters:
        logger.warning("student (%d filters) is not smaller than teacher (%d)",
                       config.student.num_filters, teacher.num_filters)
    student = make_student(teacher, config.student.num_filters, config.seed, config.student.dropout)
    result = train(student, splits["train"], splits["dev"], config.train, loss_fn=distill_loss(teacher, config))
    metrics = evaluate(result.model, splits["test"])
    return result.model, metrics


def distill_curve(teacher: JointModel, config: DistillConfig, splits: dict, rates, out_dir=None,
                  on_point=None) -> list[SparsityCurvePoint]:
    """One student per compression rate, reported in the pruning curve format."""
    from pathlib import Path

    from .checkpoint import save_checkpoint

    original = teacher.num_filters
    points = []
    for rate in rates:
        C = remaining_filters(original, rate)
        cfg = DistillConfig(config.temperature, config.hard_weight,
                            ModelConfig(**{**config.student.__dict__, "num_filters": C}), config.train, config.seed)
        student, m = distill(teacher, cfg, splits)
        ckpt = str(save_checkpoint(student, Path(out_dir) / f"student_{C:04d}.ckpt")) if out_dir else ""
        point = SparsityCurvePoint(C, count_params(student), 1.0 - C / original, m.intent_accuracy, m.slot_f1, ckpt)
        logger.info("student %d filters: intent %s slot %s", C, m.intent_accuracy, m.slot_f1)
        points.append(point)
        if on_point is not None:
            on_point(point, student)
    return points
