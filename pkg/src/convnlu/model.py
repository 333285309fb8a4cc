"""Single-conv-block joint intent/slot model and its training loop.

Data path per utterance::

    embed -> pad_centered -> conv1d -+-> max_over_time -> dropout -> intent head
                                     +-> dropout -> slot head (per position)

Intent-only models skip the centered padding. Embeddings are frozen.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .data import PAD_ID, EncodedExample, EncodedSplit, LabelMaps, Vocabulary, check_token_ids
from .errors import ConfigError, DataError, EmptySequenceError, NumericError, TruncationError
from .metrics import RunMetrics, intent_accuracy, slot_f1
from .tensor import (
    IGNORE_INDEX,
    AdamState,
    GradTape,
    Tensor,
    adam_step,
    conv1d,
    dropout,
    linear,
    max_over_time,
    pad_centered,
    softmax_xent,
    weighted_sum,
)

logger = logging.getLogger(__name__)

TASKS = ("intent", "slot", "joint")


@dataclass
class ModelConfig:
    embed_dim: int = 100
    num_filters: int = 300
    kernel_size: int = 5
    dropout: float = 0.5
    alpha: float = 0.2
    max_seq_len: int = 50
    task: str = "joint"

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if min(self.embed_dim, self.num_filters, self.max_seq_len) < 1:
            raise ConfigError("embed_dim, num_filters and max_seq_len must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")

    @property
    def has_intent(self) -> bool:
        return self.task in ("intent", "joint")

    @property
    def has_slot(self) -> bool:
        return self.task in ("slot", "joint")

    @property
    def centered(self) -> bool:
        return self.task != "intent"


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, patience and max_epochs must be at least 1")


class JointModel:
    """Frozen embeddings, one conv layer, and an intent and/or slot head."""

    def __init__(self, config: ModelConfig, embeddings: np.ndarray, conv_w, conv_b,
                 intent_w=None, intent_b=None, slot_w=None, slot_b=None,
                 vocab: Vocabulary | None = None, labels: LabelMaps | None = None):
        self.config = config
        emb = np.asarray(embeddings, dtype=np.float32)
        if emb.flags.writeable:
            emb = emb.copy()
            emb.setflags(write=False)
        self.embeddings = emb
        self.conv_w = _param(conv_w, "conv.weight")
        self.conv_b = _param(conv_b, "conv.bias")
        self.intent_w = _param(intent_w, "intent.weight")
        self.intent_b = _param(intent_b, "intent.bias")
        self.slot_w = _param(slot_w, "slot.weight")
        self.slot_b = _param(slot_b, "slot.bias")
        self.vocab = vocab
        self.labels = labels
        self._check()

    def _check(self):
        C, k, d = self.conv_w.shape
        cfg = self.config
        if (k, d) != (cfg.kernel_size, cfg.embed_dim) or self.embeddings.shape[1] != d:
            raise ConfigError(f"conv weights {self.conv_w.shape} disagree with config/embeddings")
        if C != cfg.num_filters or self.conv_b.shape != (C,):
            raise ConfigError(f"conv has {C} filters but config says {cfg.num_filters}")
        for w, b, want in ((self.intent_w, self.intent_b, cfg.has_intent), (self.slot_w, self.slot_b, cfg.has_slot)):
            if want and (w is None or b is None):
                raise ConfigError(f"task {cfg.task!r} needs both heads it predicts")
            if w is not None and (w.shape[0] != C or b.shape != (w.shape[1],)):
                raise ConfigError(f"head of shape {w.shape} does not take {C} input channels")

    @property
    def num_filters(self) -> int:
        return self.conv_w.shape[0]

    @property
    def num_intents(self) -> int:
        return self.intent_w.shape[1] if self.intent_w is not None else (self.labels.num_intents if self.labels else 0)

    @property
    def num_slots(self) -> int:
        return self.slot_w.shape[1] if self.slot_w is not None else (self.labels.num_slots if self.labels else 0)

    def parameters(self) -> dict[str, Tensor]:
        named = {"conv.weight": self.conv_w, "conv.bias": self.conv_b,
                 "intent.weight": self.intent_w, "intent.bias": self.intent_b,
                 "slot.weight": self.slot_w, "slot.bias": self.slot_b}
        return {k: v for k, v in named.items() if v is not None}

    def copy(self) -> "JointModel":
        """Deep copy of the trainable weights; the frozen embedding matrix is shared."""
        p = {k: (None if v is None else v.data.copy()) for k, v in
             (("conv_w", self.conv_w), ("conv_b", self.conv_b), ("intent_w", self.intent_w),
              ("intent_b", self.intent_b), ("slot_w", self.slot_w), ("slot_b", self.slot_b))}
        return JointModel(copy.copy(self.config), self.embeddings, vocab=self.vocab, labels=self.labels, **p)

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters().items():
            p.data = state[name].copy()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def __repr__(self) -> str:
        c = self.config
        return (f"JointModel(task={c.task!r}, d={c.embed_dim}, C={self.num_filters}, k={c.kernel_size}, "
                f"I={self.num_intents}, S={self.num_slots}, V={self.embeddings.shape[0]})")


def _param(value, name):
    if value is None:
        return None
    t = value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float32))
    t.requires_grad = True
    t.name = name
    return t


def init_model(config: ModelConfig, embeddings: np.ndarray, labels: LabelMaps,
               vocab: Vocabulary | None = None, seed: int = 0) -> JointModel:
    """Fresh model; weights uniform in +-1/sqrt(fan_in), biases likewise."""
    rng = np.random.default_rng(seed)
    C, k, d = config.num_filters, config.kernel_size, config.embed_dim
    if embeddings.shape[1] != d:
        raise ConfigError(f"embeddings have d={embeddings.shape[1]}, config says {d}")

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(np.float32)

    conv_w, conv_b = uniform((C, k, d), k * d), uniform((C,), k * d)
    heads = {}
    if config.has_intent:
        heads["intent_w"], heads["intent_b"] = uniform((C, labels.num_intents), C), uniform((labels.num_intents,), C)
    if config.has_slot:
        heads["slot_w"], heads["slot_b"] = uniform((C, labels.num_slots), C), uniform((labels.num_slots,), C)
    return JointModel(config, embeddings, conv_w, conv_b, vocab=vocab, labels=labels, **heads)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


class ForwardOutput(NamedTuple):
    intent_logits: Tensor | None
    slot_logits: Tensor | None
    valid_len: np.ndarray


def embed(tokens, embeddings: np.ndarray) -> Tensor:
    """Row lookup in the frozen embedding matrix; returns a constant tensor."""
    ids = np.asarray(tokens, dtype=np.int64)
    check_token_ids(ids, embeddings.shape[0])
    return Tensor(embeddings[ids])


def _batch_ids(model: JointModel, token_ids: np.ndarray, valid_len: np.ndarray) -> np.ndarray:
    """Trim trailing all-PAD columns; keep at least ``k`` columns for unpadded convs."""
    cfg = model.config
    if np.any(valid_len < 1):
        raise EmptySequenceError("utterance with valid_len 0")
    if np.any(valid_len > cfg.max_seq_len) or np.any(valid_len > token_ids.shape[1]):
        raise TruncationError(f"valid_len {int(valid_len.max())} exceeds max_seq_len {cfg.max_seq_len}")
    width = int(valid_len.max())
    if not cfg.centered:
        width = max(width, cfg.kernel_size)
    if width > token_ids.shape[1]:
        token_ids = np.pad(token_ids, ((0, 0), (0, width - token_ids.shape[1])), constant_values=PAD_ID)
    return token_ids[:, :width]


def forward(model: JointModel, batch, training: bool = False,
            rng: np.random.Generator | None = None) -> ForwardOutput:
    """Logits for a single :class:`EncodedExample` or a batched :class:`EncodedSplit`.

    For a single example the slot logits are ``[valid_len, S]``; for a batch
    they are ``[B, T, S]`` where ``T`` is the longest valid length in the
    batch and positions past each row's ``valid_len`` carry no meaning.
    """
    single = isinstance(batch, EncodedExample)
    if single:
        token_ids, valid_len = batch.token_ids[None, :], np.array([batch.valid_len])
    else:
        token_ids, valid_len = batch.token_ids, np.asarray(batch.valid_len)
    cfg = model.config
    ids = _batch_ids(model, np.asarray(token_ids), valid_len)
    x = embed(ids, model.embeddings)
    beyond = np.arange(ids.shape[1])[None, :] >= valid_len[:, None]
    if beyond.any():
        # the model sees zeros past the utterance whatever the PAD row holds
        x.data[beyond] = 0.0
    if cfg.centered:
        x = pad_centered(x, cfg.kernel_size)
    features = conv1d(x, model.conv_w, model.conv_b)

    intent_logits = slot_logits = None
    if cfg.has_intent:
        pool_len = valid_len if cfg.centered else np.clip(valid_len - cfg.kernel_size + 1, 1, features.shape[1])
        pooled, _ = max_over_time(features, pool_len)
        intent_logits = linear(dropout(pooled, cfg.dropout, training, rng), model.intent_w, model.intent_b)
    if cfg.has_slot:
        slot_logits = linear(dropout(features, cfg.dropout, training, rng), model.slot_w, model.slot_b)

    if single:
        n = int(valid_len[0])
        intent_logits = None if intent_logits is None else Tensor(intent_logits.data[0])
        slot_logits = None if slot_logits is None else Tensor(slot_logits.data[0, :n])
    return ForwardOutput(intent_logits, slot_logits, valid_len)


def joint_loss(intent_loss, slot_loss, alpha: float):
    """``alpha * intent_loss + (1 - alpha) * slot_loss`` for floats or scalar tensors."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    for name, value in (("intent", intent_loss), ("slot", slot_loss)):
        v = value.item() if isinstance(value, Tensor) else float(value)
        if not math.isfinite(v):
            raise NumericError(f"non-finite {name} loss in the {name} pass: {v}")
    if isinstance(intent_loss, Tensor):
        return weighted_sum([intent_loss, slot_loss], [alpha, 1.0 - alpha])
    return alpha * intent_loss + (1.0 - alpha) * slot_loss


def _slot_targets(batch: EncodedSplit, width: int) -> np.ndarray:
    tgt = batch.slot_ids[:, :width]
    if tgt.shape[1] < width:
        tgt = np.pad(tgt, ((0, 0), (0, width - tgt.shape[1])), constant_values=IGNORE_INDEX)
    return tgt


def task_loss(model: JointModel, batch: EncodedSplit, rng=None, training: bool = True) -> Tensor:
    """Training objective for ``model.config.task`` on one batch."""
    out = forward(model, batch, training, rng)
    cfg = model.config
    intent = slot = None
    if out.intent_logits is not None:
        intent, _ = softmax_xent(out.intent_logits, batch.intent_ids)
    if out.slot_logits is not None:
        slot, _ = softmax_xent(out.slot_logits, _slot_targets(batch, out.slot_logits.shape[1]))
    if intent is not None and slot is not None:
        return joint_loss(intent, slot, cfg.alpha)
    return intent if intent is not None else slot


# ---------------------------------------------------------------------------
# inference and evaluation
# ---------------------------------------------------------------------------


class Predictions(NamedTuple):
    intents: np.ndarray | None  # [N]
    slots: list[np.ndarray] | None  # per utterance, length valid_len


class LabeledPredictions(NamedTuple):
    intents: list[str] | None
    tags: list[list[str]] | None


def predict(model: JointModel, split: EncodedSplit, batch_size: int = 256) -> Predictions:
    intents, slots = [], []
    for batch in split.batches(batch_size):
        out = forward(model, batch)
        if out.intent_logits is not None:
            intents.append(out.intent_logits.data.argmax(axis=-1))
        if out.slot_logits is not None:
            arg = out.slot_logits.data.argmax(axis=-1)
            slots.extend(arg[i, :n] for i, n in enumerate(batch.valid_len))
    return Predictions(np.concatenate(intents) if intents else None, slots if slots else None)


def predict_labels(model: JointModel, split: EncodedSplit) -> LabeledPredictions:
    pred = predict(model, split)
    labels = model.labels
    intents = None if pred.intents is None else [labels.intents[i] for i in pred.intents]
    tags = None if pred.slots is None else [[labels.slots[i] for i in row] for row in pred.slots]
    return LabeledPredictions(intents, tags)


def gold_labels(model: JointModel, split: EncodedSplit) -> LabeledPredictions:
    labels, cfg = model.labels, model.config
    intents = [labels.intents[i] for i in split.intent_ids] if cfg.has_intent else None
    tags = None
    if cfg.has_slot:
        tags = [[labels.slots[i] for i in split.slot_ids[r, :n]] for r, n in enumerate(split.valid_len)]
    return LabeledPredictions(intents, tags)


def evaluate(model: JointModel, split: EncodedSplit) -> RunMetrics:
    pred = predict_labels(model, split)
    gold = gold_labels(model, split)
    m = RunMetrics(params=count_params(model))
    if pred.intents is not None:
        m.intent_accuracy = intent_accuracy(pred.intents, gold.intents)
    if pred.tags is not None:
        m.slot_precision, m.slot_recall, m.slot_f1 = slot_f1(pred.tags, gold.tags)
    return m


def selection_metric(m: RunMetrics) -> float:
    """Dev-set model-selection score: intent accuracy + slot F1 (whichever exist)."""
    return (m.intent_accuracy or 0.0) + (m.slot_f1 or 0.0)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_intent_accuracy: float | None
    dev_slot_f1: float | None
    dev_metric: float
    improved: bool


@dataclass
class TrainResult:
    model: JointModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    diverged: bool = False

    def __iter__(self):
        # allows ``model, history = train(...)``
        yield self.model
        yield self.history


LossFn = Callable[[JointModel, EncodedSplit, np.random.Generator], Tensor]


def train(model: JointModel, train_split: EncodedSplit, dev_split: EncodedSplit,
          config: TrainConfig | None = None, loss_fn: LossFn | None = None,
          evaluate_fn: Callable[[JointModel, EncodedSplit], RunMetrics] | None = None) -> TrainResult:
    """Mini-batch Adam with dev-based early stopping.

    The input model is not modified. Returns the best-on-dev checkpoint. A
    non-finite loss aborts training and returns the last good checkpoint with
    ``diverged=True``.
    """
    config = config or TrainConfig()
    if len(train_split) == 0 or len(dev_split) == 0:
        raise DataError("train and dev splits must be non-empty")
    loss_fn = loss_fn or task_loss
    evaluate_fn = evaluate_fn or evaluate
    model = model.copy()
    params = model.parameters()
    rng = np.random.default_rng(config.seed)
    state = AdamState(config.lr, config.beta1, config.beta2, config.eps)
    result = TrainResult(model)
    best_state, best_metric, wait = model.state(), -math.inf, 0
    for epoch in range(1, config.max_epochs + 1):
        total, n_batches = 0.0, 0
        for batch in train_split.batches(config.batch_size, rng.permutation(len(train_split))):
            with GradTape() as tape:
                loss = loss_fn(model, batch, rng)
                value = loss.item()
                if not math.isfinite(value):
                    logger.error("loss became %s at epoch %d; keeping last good checkpoint", value, epoch)
                    result.diverged = True
                    break
                tape.backward(loss)
            adam_step(params, {k: p.grad for k, p in params.items()}, state)
            total += value
            n_batches += 1
        if result.diverged:
            break
        m = evaluate_fn(model, dev_split)
        metric = selection_metric(m)
        improved = metric > best_metric
        if improved:
            best_state, best_metric, wait = model.state(), metric, 0
            result.best_epoch = epoch
        else:
            wait += 1
        result.history.append(EpochRecord(epoch, total / max(n_batches, 1), m.intent_accuracy,
                                          m.slot_f1, metric, improved))
        logger.info("epoch %d loss %.4f dev %.4f%s", epoch, total / max(n_batches, 1), metric,
                    " *" if improved else "")
        if wait >= config.patience:
            break
    model.load_state(best_state)
    return result


# ---------------------------------------------------------------------------
# size
# ---------------------------------------------------------------------------


def param_count(num_filters: int, kernel_size: int, embed_dim: int, num_intents: int, num_slots: int,
                task: str = "joint") -> int:
    """Trainable parameters: conv weights and biases plus the heads the task uses."""
    C = num_filters
    total = C * kernel_size * embed_dim + C
    if task in ("intent", "joint"):
        total += C * num_intents + num_intents
    if task in ("slot", "joint"):
        total += C * num_slots + num_slots
    return total


def count_params(model: JointModel, include_embeddings: bool = False) -> int:
    cfg = model.config
    n = param_count(model.num_filters, cfg.kernel_size, cfg.embed_dim, model.num_intents, model.num_slots, cfg.task)
    if include_embeddings:
        n += model.embeddings.size
    return n


def config_dict(config) -> dict:
    return asdict(config)
