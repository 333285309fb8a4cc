"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian, reals 32-bit LE)::

    b"CNLU" | version | d | C | k | V | I | S | task_mode | alpha (f32)
    7 tensors: embeddings, conv weights, conv bias, intent head, intent bias,
               slot head, slot bias -- each as ndim, dims..., row-major f32 data;
               an absent head is written as ndim = 0 with no data
    intent labels, slot labels, vocabulary -- each as count, then per string
               its UTF-8 byte length and bytes

Dropout rate and maximum sequence length are not stored; pass them to
:func:`load_checkpoint` when they differ from the defaults.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .data import LabelMaps, Vocabulary
from .errors import FormatError
from .model import JointModel, ModelConfig

MAGIC = b"CNLU"
VERSION = 1
TASK_CODES = {"intent": 0, "slot": 1, "joint": 2}
TASK_NAMES = {v: k for k, v in TASK_CODES.items()}


def _u32(fh, *values) -> None:
    fh.write(struct.pack(f"<{len(values)}I", *values))


def _write_tensor(fh, arr) -> None:
    if arr is None:
        _u32(fh, 0)
        return
    arr = np.asarray(arr, dtype="<f4")
    _u32(fh, arr.ndim, *arr.shape)
    fh.write(np.ascontiguousarray(arr).tobytes())


def _write_strings(fh, strings) -> None:
    _u32(fh, len(strings))
    for s in strings:
        b = s.encode("utf-8")
        _u32(fh, len(b))
        fh.write(b)


def dumps(model: JointModel) -> bytes:
    cfg = model.config
    C, k, d = model.conv_w.shape
    fh = io.BytesIO()
    fh.write(MAGIC)
    _u32(fh, VERSION, d, C, k, model.embeddings.shape[0], model.num_intents, model.num_slots, TASK_CODES[cfg.task])
    fh.write(struct.pack("<f", cfg.alpha))
    for t in (model.embeddings, model.conv_w, model.conv_b, model.intent_w, model.intent_b, model.slot_w, model.slot_b):
        _write_tensor(fh, None if t is None else getattr(t, "data", t))
    _write_strings(fh, model.labels.intents)
    _write_strings(fh, model.labels.slots)
    _write_strings(fh, model.vocab.itos)
    return fh.getvalue()


def save_checkpoint(model: JointModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(model))
    return path


class _Reader:
    def __init__(self, buf: bytes, source):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint at byte {self.pos}", self.source)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, n: int = 1):
        vals = struct.unpack(f"<{n}I", self.take(4 * n))
        return vals if n > 1 else vals[0]

    def tensor(self):
        ndim = self.u32()
        if ndim == 0:
            return None
        dims = self.u32(ndim) if ndim > 1 else (self.u32(),)
        count = int(np.prod(dims))
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32).reshape(dims)

    def strings(self) -> list[str]:
        return [self.take(self.u32()).decode("utf-8") for _ in range(self.u32())]


def loads(buf: bytes, dropout: float = 0.5, max_seq_len: int = 50, source=None) -> JointModel:
    r = _Reader(buf, source)
    if r.take(4) != MAGIC:
        raise FormatError("not a checkpoint (bad magic)", source)
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", source)
    d, C, k, V, I, S, task = r.u32(7)
    (alpha,) = struct.unpack("<f", r.take(4))
    emb, conv_w, conv_b, intent_w, intent_b, slot_w, slot_b = (r.tensor() for _ in range(7))
    intents, slots, itos = r.strings(), r.strings(), r.strings()
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes", source)
    if emb.shape != (V, d) or conv_w.shape != (C, k, d) or len(intents) != I or len(slots) != S or len(itos) != V:
        raise FormatError("header and payload disagree", source)
    config = ModelConfig(embed_dim=d, num_filters=C, kernel_size=k, dropout=dropout, alpha=float(alpha),
                         max_seq_len=max_seq_len, task=TASK_NAMES[task])
    return JointModel(config, emb, conv_w, conv_b, intent_w, intent_b, slot_w, slot_b,
                      vocab=Vocabulary.from_list(itos), labels=LabelMaps(intents, slots))


def load_checkpoint(path, dropout: float = 0.5, max_seq_len: int = 50) -> JointModel:
    path = Path(path)
    return loads(path.read_bytes(), dropout, max_seq_len, source=path)
