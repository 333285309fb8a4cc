"""scikit-learn style wrappers around the functional core.

``X`` is a sequence of utterances, each either a whitespace-separated string
or a list of tokens. ``y`` holds intent labels and ``tags`` the per-token IOB
slot tags.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .data import RawExample, build_label_maps, build_vocab, encode_split, load_word_vectors
from .errors import ConfigError, DataError, DimensionError
from .metrics import slot_f1
from .model import ModelConfig, TrainConfig, count_params, init_model, predict, train
from .pruning import PruneSchedule, prune_iterative, prune_one_shot


def check_utterances(X) -> list[list[str]]:
    """Normalise ``X`` to a list of non-empty token lists."""
    if isinstance(X, str):
        raise DataError("X must be a sequence of utterances, not a single string")
    out = []
    for i, utt in enumerate(X):
        tokens = utt.split() if isinstance(utt, str) else [str(t) for t in utt]
        if not tokens:
            raise DataError(f"utterance {i} is empty")
        out.append(tokens)
    if not out:
        raise DataError("X is empty")
    return out


def check_tags(tokens: list[list[str]], tags) -> list[list[str]]:
    tags = [t.split() if isinstance(t, str) else list(t) for t in tags]
    if len(tags) != len(tokens):
        raise DimensionError(f"{len(tokens)} utterances but {len(tags)} tag sequences")
    for i, (tok, tag) in enumerate(zip(tokens, tags)):
        if len(tok) != len(tag):
            raise DimensionError(f"utterance {i}: {len(tok)} tokens but {len(tag)} tags")
    return tags


def _examples(tokens, y, tags, task) -> list[RawExample]:
    n = len(tokens)
    y = ["_"] * n if y is None else [str(v) for v in y]
    if len(y) != n:
        raise DimensionError(f"{n} utterances but {len(y)} intent labels")
    tags = [["O"] * len(t) for t in tokens] if tags is None else tags
    return [RawExample(t, g, i) for t, g, i in zip(tokens, tags, y)]


class ConvJointNLU(ClassifierMixin, BaseEstimator):
    """Single conv layer joint intent classifier and slot tagger.

    ``predict`` returns intents; ``predict_tags`` returns slot tag sequences.
    Word vectors are read from ``vectors`` (text format) when given, otherwise
    the frozen embeddings are random.
    """

    def __init__(self, task="joint", num_filters=300, kernel_size=5, embed_dim=100, dropout=0.5, alpha=0.2,
                 max_seq_len=50, lr=1e-3, batch_size=32, max_epochs=50, patience=5, min_count=1,
                 vectors=None, validation_fraction=0.1, random_state=0):
        self.task = task
        self.num_filters = num_filters
        self.kernel_size = kernel_size
        self.embed_dim = embed_dim
        self.dropout = dropout
        self.alpha = alpha
        self.max_seq_len = max_seq_len
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_count = min_count
        self.vectors = vectors
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig(self.embed_dim, self.num_filters, self.kernel_size, self.dropout, self.alpha,
                           self.max_seq_len, self.task)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience=self.patience, seed=self.random_state)

    def _split_examples(self, X, y, tags, eval_set):
        config = self._model_config()
        if config.has_intent and y is None:
            raise ConfigError(f"task {self.task!r} needs intent labels y")
        if config.has_slot and tags is None:
            raise ConfigError(f"task {self.task!r} needs slot tags")
        tokens = check_utterances(X)
        train_ex = _examples(tokens, y, check_tags(tokens, tags) if tags is not None else None, self.task)
        if eval_set is not None:
            Xd, yd, td = (tuple(eval_set) + (None,))[:3]
            dtok = check_utterances(Xd)
            dev_ex = _examples(dtok, yd, check_tags(dtok, td) if td is not None else None, self.task)
            return train_ex, dev_ex
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1) when no eval_set is given")
        order = np.random.default_rng(self.random_state).permutation(len(train_ex))
        n_dev = max(1, int(round(self.validation_fraction * len(train_ex))))
        if n_dev >= len(train_ex):
            raise DataError("too few utterances to hold out a validation set")
        return [train_ex[i] for i in order[n_dev:]], [train_ex[i] for i in order[:n_dev]]

    def fit(self, X, y=None, tags=None, eval_set=None):
        """Train with early stopping on ``eval_set`` (or a held-out fraction of ``X``)."""
        train_ex, dev_ex = self._split_examples(X, y, tags, eval_set)
        config = self._model_config()
        vocab = build_vocab(train_ex, self.min_count)
        labels = build_label_maps(train_ex, dev_ex)
        embeddings, self.coverage_ = load_word_vectors(self.vectors, vocab, self.embed_dim, self.random_state)
        model = init_model(config, embeddings, labels, vocab, self.random_state)
        tr = encode_split(train_ex, vocab, labels, self.max_seq_len)
        dv = encode_split(dev_ex, vocab, labels, self.max_seq_len)
        result = train(model, tr, dv, self._train_config())
        self._set_model(result.model)
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self

    def _set_model(self, model) -> None:
        self.model_ = model
        self.classes_ = np.array(model.labels.intents) if model.config.has_intent else np.array([])
        self.slot_tags_ = list(model.labels.slots)
        self.n_params_ = count_params(model)

    def _encode(self, X):
        check_is_fitted(self, "model_")
        tokens = check_utterances(X)
        labels = self.model_.labels
        fill_intent = labels.intents[0] if labels.intents else "_"
        raw = [RawExample(t, [labels.slots[0]] * len(t), fill_intent) for t in tokens]
        return tokens, encode_split(raw, self.model_.vocab, labels, self.model_.config.max_seq_len)

    def predict(self, X) -> np.ndarray:
        """Intent label per utterance."""
        _, split = self._encode(X)
        if not self.model_.config.has_intent:
            raise ConfigError("this model has no intent head")
        pred = predict(self.model_, split)
        return self.classes_[pred.intents]

    def predict_tags(self, X) -> list[list[str]]:
        """Slot tag sequence per utterance (tokens past ``max_seq_len`` get ``O``)."""
        tokens, split = self._encode(X)
        if not self.model_.config.has_slot:
            raise ConfigError("this model has no slot head")
        pred = predict(self.model_, split)
        slots = self.model_.labels.slots
        out = []
        for row, toks in zip(pred.slots, tokens):
            n = min(len(toks), split.max_seq_len)
            out.append([slots[i] for i in row[:n]] + ["O"] * (len(toks) - n))
        return out

    def score(self, X, y, sample_weight=None) -> float:
        """Intent accuracy (or slot F1 for a slot-only model, with ``y`` as tags)."""
        check_is_fitted(self, "model_")
        if self.model_.config.has_intent:
            return super().score(X, y, sample_weight)
        tokens = check_utterances(X)
        return slot_f1(self.predict_tags(X), check_tags(tokens, y))[2]

    def save(self, path):
        check_is_fitted(self, "model_")
        return save_checkpoint(self.model_, path)

    @classmethod
    def from_checkpoint(cls, path, dropout=0.5, max_seq_len=50) -> "ConvJointNLU":
        """A fitted estimator wrapping a stored model."""
        model = load_checkpoint(path, dropout, max_seq_len)
        return cls.from_model(model)

    @classmethod
    def from_model(cls, model) -> "ConvJointNLU":
        cfg = model.config
        est = cls(task=cfg.task, num_filters=model.num_filters, kernel_size=cfg.kernel_size,
                  embed_dim=cfg.embed_dim, dropout=cfg.dropout, alpha=cfg.alpha, max_seq_len=cfg.max_seq_len)
        est._set_model(model)
        return est


class StructuredPruner(BaseEstimator):
    """Prunes a fitted :class:`ConvJointNLU` and exposes the result as ``estimator_``.

    ``fit`` needs the training data only in iterative mode, where each pruning
    step is followed by retraining.
    """

    def __init__(self, estimator=None, norm="l2", mode="iterative", target_sparsity=0.5, step_fraction=0.1,
                 levels=None):
        self.estimator = estimator
        self.norm = norm
        self.mode = mode
        self.target_sparsity = target_sparsity
        self.step_fraction = step_fraction
        self.levels = levels

    def fit(self, X=None, y=None, tags=None, eval_set=None):
        if self.estimator is None:
            raise ConfigError("StructuredPruner needs a fitted ConvJointNLU")
        check_is_fitted(self.estimator, "model_")
        base = self.estimator
        schedule = PruneSchedule(self.norm, self.mode, self.step_fraction, self.target_sparsity,
                                 base._train_config() if self.mode == "iterative" else None, self.levels)
        model = base.model_
        self.curve_ = []
        if self.mode == "one-shot":
            pruned = prune_one_shot(model, schedule)
        else:
            if X is None:
                raise ConfigError("iterative pruning retrains and needs training data")
            train_ex, dev_ex = base._split_examples(X, y, tags, eval_set)
            enc = {name: encode_split(ex, model.vocab, model.labels, model.config.max_seq_len)
                   for name, ex in (("train", train_ex), ("dev", dev_ex))}
            enc["test"] = enc["dev"]
            kept = {}
            self.curve_ = prune_iterative(model, enc, schedule, on_point=lambda p, m: kept.update(model=m))
            pruned = kept.get("model", model)
        est = clone(base)
        est.num_filters = pruned.num_filters
        est._set_model(pruned)
        self.estimator_ = est
        return self

    def predict(self, X):
        check_is_fitted(self, "estimator_")
        return self.estimator_.predict(X)

    def predict_tags(self, X):
        check_is_fitted(self, "estimator_")
        return self.estimator_.predict_tags(X)

    def score(self, X, y, sample_weight=None) -> float:
        check_is_fitted(self, "estimator_")
        return self.estimator_.score(X, y, sample_weight)
