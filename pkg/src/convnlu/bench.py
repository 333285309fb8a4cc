"""Batch-1 CPU latency measurement.

:class:`InferenceSession` allocates every buffer once, so the timed loop
does no per-sample model allocation. Only the forward call is timed.
"""

from __future__ import annotations

import gc
import platform
import statistics
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .data import EncodedSplit
from .errors import ConfigError, DataError
from .model import JointModel


@dataclass
class LatencyReport:
    mean_ms: float
    std_ms: float
    batch_size: int
    warmup: int
    samples: int
    hardware: str
    total_ms: float = 0.0

    @property
    def per_sample_ms(self) -> float:
        """Total measured time normalised by the number of test samples."""
        return self.total_ms / self.samples


def hardware_description() -> str:
    try:
        with open("/proc/cpuinfo", encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()


class InferenceSession:
    """Eval-mode forward pass for one utterance at a time, into preallocated buffers.

    Produces the same logits as :func:`convnlu.model.forward` on the padded
    ``max_seq_len`` input.
    """

    def __init__(self, model: JointModel, max_seq_len: int | None = None):
        cfg = model.config
        self.model = model
        self.L = max_seq_len or cfg.max_seq_len
        k, d, C = cfg.kernel_size, cfg.embed_dim, model.num_filters
        self.k, self.d = k, d
        if self.L < k:
            raise ConfigError(f"max_seq_len {self.L} is shorter than the kernel ({k})")
        self.pad = (k - 1) // 2 if cfg.centered else 0
        self.n_out = self.L if cfg.centered else self.L - k + 1
        self.emb = model.embeddings
        self.w2 = np.ascontiguousarray(model.conv_w.data.reshape(C, k * d).T)
        self.b = model.conv_b.data
        self.x = np.zeros((self.L + 2 * self.pad, d), dtype=np.float32)
        self.cols = np.empty((self.n_out, k * d), dtype=np.float32)
        self.windows = np.lib.stride_tricks.as_strided(self.x, shape=(self.n_out, k * d),
                                                       strides=(self.x.strides[0], self.x.strides[1]))
        self.features = np.empty((self.n_out, C), dtype=np.float32)
        self.pooled = np.empty(C, dtype=np.float32)
        self.intent_w = self.intent_b = self.slot_w = self.slot_b = None
        self.intent_logits = self.slot_logits = None
        if model.intent_w is not None:
            self.intent_w, self.intent_b = model.intent_w.data, model.intent_b.data
            self.intent_logits = np.empty(self.intent_w.shape[1], dtype=np.float32)
        if model.slot_w is not None:
            self.slot_w, self.slot_b = model.slot_w.data, model.slot_b.data
            self.slot_logits = np.empty((self.n_out, self.slot_w.shape[1]), dtype=np.float32)

    def run(self, token_ids: np.ndarray, valid_len: int):
        """Forward one padded utterance; returns views into the session buffers."""
        np.take(self.emb, token_ids[:self.L], axis=0, out=self.x[self.pad:self.pad + self.L])
        self.x[self.pad + valid_len:self.pad + self.L] = 0.0
        np.copyto(self.cols, self.windows)
        np.matmul(self.cols, self.w2, out=self.features)
        self.features += self.b
        intent = slots = None
        if self.intent_logits is not None:
            n = valid_len if self.pad else max(valid_len - self.k + 1, 1)
            np.max(self.features[:n], axis=0, out=self.pooled)
            np.matmul(self.pooled, self.intent_w, out=self.intent_logits)
            self.intent_logits += self.intent_b
            intent = self.intent_logits
        if self.slot_logits is not None:
            np.matmul(self.features, self.slot_w, out=self.slot_logits)
            self.slot_logits += self.slot_b
            slots = self.slot_logits[:valid_len]
        return intent, slots


def benchmark(model: JointModel, split: EncodedSplit, warmup: int = 50) -> LatencyReport:
    """Time one forward pass per test sample after ``warmup`` discarded passes.

    BLAS is pinned to one thread for the duration, so exactly one inference
    is in flight at a time.
    """
    n = len(split)
    if n == 0:
        raise DataError("cannot benchmark on an empty split")
    with threadpool_limits(limits=1):
        return _timed_sweep(model, split, warmup)


def _timed_sweep(model: JointModel, split: EncodedSplit, warmup: int) -> LatencyReport:
    n = len(split)
    session = InferenceSession(model, split.max_seq_len)
    ids, lens = split.token_ids, split.valid_len.tolist()
    for i in range(warmup):
        session.run(ids[i % n], lens[i % n])
    timings = np.empty(n, dtype=np.float64)
    clock = time.perf_counter_ns
    gc_was_enabled = gc.isenabled()
    gc.disable()  # collector pauses are not inference time
    try:
        for i in range(n):
            row, length = ids[i], lens[i]
            t0 = clock()
            session.run(row, length)
            timings[i] = clock() - t0
    finally:
        if gc_was_enabled:
            gc.enable()
    timings /= 1e6
    return LatencyReport(float(timings.mean()), float(timings.std()), 1, warmup, n, hardware_description(),
                         float(timings.sum()))


def allocation_growth(model: JointModel, split: EncodedSplit, passes: int = 2) -> tuple[int, int]:
    """Traced-memory growth over repeated sweeps of ``split``.

    Returns ``(growth_after_first_sweep, growth_after_last_sweep)`` in bytes,
    measured after one warm sweep. Steady state means both stay near zero.
    """
    session = InferenceSession(model, split.max_seq_len)
    ids, lens = split.token_ids, split.valid_len.tolist()
    for i in range(len(split)):
        session.run(ids[i], lens[i])
    tracemalloc.start()
    try:
        base = tracemalloc.get_traced_memory()[0]
        growth = []
        for _ in range(passes):
            for i in range(len(split)):
                session.run(ids[i], lens[i])
            growth.append(tracemalloc.get_traced_memory()[0] - base)
    finally:
        tracemalloc.stop()
    return growth[0], growth[-1]


def paired_benchmark(models: dict[str, JointModel], split: EncodedSplit, warmup: int = 50,
                     rounds: int = 3) -> dict[str, LatencyReport]:
    """Interleave runs of several models and keep each model's median-mean round."""
    reports: dict[str, list[LatencyReport]] = {name: [] for name in models}
    for _ in range(rounds):
        for name, model in models.items():
            reports[name].append(benchmark(model, split, warmup))
    out = {}
    for name, runs in reports.items():
        med = statistics.median(r.mean_ms for r in runs)
        out[name] = min(runs, key=lambda r: abs(r.mean_ms - med))
    return out
