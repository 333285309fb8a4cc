"""Dense tensors with a reverse-mode tape for the handful of ops the model needs.

Every op accepts an optional leading batch axis. Arithmetic runs in float32;
float64 tensors are accepted everywhere so :func:`grad_check` can compare
against finite differences at tight tolerances.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigError, DimensionError, EmptySequenceError, LabelError, NumericError

IGNORE_INDEX = -1

_state = threading.local()


class Tensor:
    """Row-major dense array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            src = getattr(data, "dtype", None)  # ndarray or numpy scalar
            dtype = src if src in (np.float32, np.float64) else np.float32
        arr = np.asarray(data, dtype=dtype, order="C")
        if arr.ndim and 0 in arr.shape:
            raise DimensionError(f"zero-sized axis in shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype.name})"


@dataclass
class TapeRecord:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], None]


@dataclass
class GradTape:
    """Ordered log of executed ops; ``backward`` replays it in reverse.

    Inputs that require grad get a fresh zero buffer the first time the tape
    sees them, so parameters start each pass at zero and untouched-but-used
    parameters still end up with a (zero) gradient.
    """

    records: list[TapeRecord] = field(default_factory=list)
    pool_events: list[tuple[np.ndarray, bool]] = field(default_factory=list)
    _seen: set[int] = field(default_factory=set)

    def __enter__(self) -> "GradTape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward) -> None:
        tracked = tuple(t for t in inputs if t.requires_grad)
        if not tracked:
            return
        for t in tracked:
            if id(t) not in self._seen:
                self._seen.add(id(t))
                t.grad = np.zeros_like(t.data)
        output.requires_grad = True
        self.records.append(TapeRecord(op, tracked, output, backward))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self.records):
            if rec.output.grad is None:
                continue
            rec.backward(rec.output.grad)


def _tape_stack() -> list[GradTape]:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def _active_tape() -> GradTape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _needs_grad(*tensors: Tensor) -> GradTape | None:
    tape = _active_tape()
    if tape is None or not any(t.requires_grad for t in tensors):
        return None
    return tape


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _result_dtype(*tensors: Tensor):
    return np.result_type(*(t.data.dtype for t in tensors))


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def pad_centered(x: Tensor, k: int) -> Tensor:
    """Zero-pad the time axis by ``(k - 1) // 2`` rows on each side.

    ``x`` is ``[n, d]`` or ``[B, n, d]``; ``k`` must be odd so the following
    convolution emits exactly one output per input position.
    """
    if k < 1 or k % 2 == 0:
        raise ConfigError(f"kernel size must be a positive odd integer, got {k}")
    h = (k - 1) // 2
    if h == 0:
        return x
    t_axis = x.data.ndim - 2
    widths = [(0, 0)] * x.data.ndim
    widths[t_axis] = (h, h)
    out = Tensor(np.pad(x.data, widths))
    tape = _needs_grad(x)
    if tape:
        n = x.shape[t_axis]

        def backward(g):
            _accumulate(x, g[..., h:h + n, :])

        tape.record("pad_centered", (x,), out, backward)
    return out


def _windows(xp: np.ndarray, k: int) -> np.ndarray:
    """Zero-copy im2col: row ``t`` is the contiguous ``k*d`` block starting at ``xp[t]``."""
    *lead, n_padded, d = xp.shape
    n_out = n_padded - k + 1
    s = xp.strides
    if lead:
        return as_strided(xp, shape=(lead[0], n_out, k * d), strides=(s[0], s[1], s[2]), writeable=False)
    return as_strided(xp, shape=(n_out, k * d), strides=(s[0], s[1]), writeable=False)


def conv1d(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Valid 1-D convolution over time.

    ``out[t, c] = bias[c] + sum_{j<k, m<d} weights[c, j, m] * x[t + j, m]``
    with output length ``n_padded - k + 1``.
    """
    if weights.data.ndim != 3:
        raise DimensionError(f"conv weights must be [C, k, d], got {weights.shape}")
    C, k, d = weights.shape
    if x.data.ndim not in (2, 3):
        raise DimensionError(f"conv input must be [n, d] or [B, n, d], got {x.shape}")
    if x.shape[-1] != d:
        raise DimensionError(f"embedding axis: input has d={x.shape[-1]}, weights expect d={d}")
    n_padded = x.shape[-2]
    if n_padded < k:
        raise DimensionError(f"time axis: length {n_padded} shorter than kernel {k}")
    if bias.shape != (C,):
        raise DimensionError(f"bias axis: expected ({C},), got {bias.shape}")
    dtype = _result_dtype(x, weights, bias)
    xd = np.ascontiguousarray(x.data, dtype=dtype)
    cols = np.ascontiguousarray(_windows(xd, k))
    w2 = weights.data.reshape(C, k * d).astype(dtype, copy=False)
    out = Tensor(cols @ w2.T + bias.data.astype(dtype, copy=False))
    tape = _needs_grad(x, weights, bias)
    if tape:
        n_out = n_padded - k + 1

        def backward(g):
            g2 = g.reshape(-1, C)
            if weights.requires_grad:
                _accumulate(weights, (g2.T @ cols.reshape(-1, k * d)).reshape(C, k, d))
            if bias.requires_grad:
                _accumulate(bias, g2.sum(axis=0))
            if x.requires_grad:
                dcols = g @ w2
                dx = np.zeros_like(xd)
                for j in range(k):
                    dx[..., j:j + n_out, :] += dcols[..., j * d:(j + 1) * d]
                _accumulate(x, dx)

        tape.record("conv1d", (x, weights, bias), out, backward)
    return out


def max_over_time(features: Tensor, valid_len) -> tuple[Tensor, np.ndarray]:
    """Per-channel max over positions ``t < valid_len``.

    Returns ``(pooled, argmax)``; ties go to the smallest ``t`` and the
    gradient flows only to that winner.
    """
    f = features.data
    if f.ndim not in (2, 3):
        raise DimensionError(f"features must be [n, C] or [B, n, C], got {features.shape}")
    batched = f.ndim == 3
    n = f.shape[-2]
    lens = np.atleast_1d(np.asarray(valid_len, dtype=np.int64))
    if np.any(lens < 1):
        raise EmptySequenceError("max_over_time needs valid_len >= 1")
    if np.any(lens > n):
        raise DimensionError(f"time axis: valid_len {lens.max()} exceeds length {n}")
    f3 = f if batched else f[None]
    if batched and lens.shape[0] != f.shape[0]:
        raise DimensionError(f"batch axis: {lens.shape[0]} lengths for {f.shape[0]} rows")
    masked = f3
    if np.any(lens < n):
        invalid = np.arange(n)[None, :] >= lens[:, None]
        masked = np.where(invalid[:, :, None], -np.inf, f3)
    arg = masked.argmax(axis=1)
    pooled = np.take_along_axis(f3, arg[:, None, :], axis=1)[:, 0, :]
    tape = _active_tape()
    if tape is not None:
        ties = bool(np.any((masked == pooled[:, None, :]).sum(axis=1) > 1))
        tape.pool_events.append((arg.copy(), ties))
    if not batched:
        pooled, arg = pooled[0], arg[0]
    out = Tensor(pooled)
    tape = _needs_grad(features)
    if tape:

        def backward(g):
            dx = np.zeros_like(f3)
            g3 = g if batched else g[None]
            np.put_along_axis(dx, arg.reshape(f3.shape[0], 1, -1), g3[:, None, :], axis=1)
            _accumulate(features, dx if batched else dx[0])

        tape.record("max_over_time", (features,), out, backward)
    return out, arg


def linear(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map on the trailing axis: ``x @ weights + bias``."""
    if weights.data.ndim != 2:
        raise DimensionError(f"linear weights must be [in, out], got {weights.shape}")
    n_in, n_out = weights.shape
    if x.shape[-1] != n_in:
        raise DimensionError(f"input axis: x has {x.shape[-1]} features, weights expect {n_in}")
    if bias.shape != (n_out,):
        raise DimensionError(f"bias axis: expected ({n_out},), got {bias.shape}")
    dtype = _result_dtype(x, weights, bias)
    out = Tensor(x.data @ weights.data.astype(dtype, copy=False) + bias.data.astype(dtype, copy=False))
    tape = _needs_grad(x, weights, bias)
    if tape:

        def backward(g):
            g2 = g.reshape(-1, n_out)
            if weights.requires_grad:
                _accumulate(weights, x.data.reshape(-1, n_in).T @ g2)
            if bias.requires_grad:
                _accumulate(bias, g2.sum(axis=0))
            if x.requires_grad:
                _accumulate(x, g @ weights.data.T)

        tape.record("linear", (x, weights, bias), out, backward)
    return out


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity outside training."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    out = Tensor(x.data * keep)
    tape = _needs_grad(x)
    if tape:
        tape.record("dropout", (x,), out, lambda g: _accumulate(x, g * keep))
    return out


def log_softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = logits / temperature if temperature != 1.0 else logits
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    return np.exp(log_softmax(logits, temperature))


def _target_mask(targets: np.ndarray, K: int) -> np.ndarray:
    valid = targets != IGNORE_INDEX
    bad = valid & ((targets < 0) | (targets >= K))
    if np.any(bad):
        raise LabelError(f"target {int(targets[bad][0])} outside [0, {K})")
    return valid


def softmax_xent(logits: Tensor, target) -> tuple[Tensor, np.ndarray]:
    """Mean negative log-likelihood of ``target`` under ``softmax(logits)``.

    ``target`` may be a scalar class id or an integer array matching the
    leading axes of ``logits``; entries equal to ``IGNORE_INDEX`` are skipped
    and the mean runs over the remaining positions.
    """
    K = logits.shape[-1]
    tgt = np.asarray(target, dtype=np.int64)
    if tgt.shape != logits.shape[:-1]:
        raise DimensionError(f"target shape {tgt.shape} does not match logits {logits.shape}")
    valid = _target_mask(tgt, K)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptySequenceError("softmax_xent has no non-ignored targets")
    logp = log_softmax(logits.data)
    safe = np.where(valid, tgt, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * valid).sum() / n_valid
    probs = np.exp(logp)
    out = Tensor(np.asarray(loss, dtype=logits.dtype))
    tape = _needs_grad(logits)
    if tape:

        def backward(g):
            d = probs.copy()
            np.put_along_axis(d, safe[..., None], np.take_along_axis(d, safe[..., None], axis=-1) - 1.0, axis=-1)
            d *= valid[..., None] * (g / n_valid)
            _accumulate(logits, d.astype(logits.dtype, copy=False))

        tape.record("softmax_xent", (logits,), out, backward)
    return out, probs


def soft_kl(student_logits: Tensor, teacher_logits: np.ndarray, temperature: float, mask=None) -> Tensor:
    """Mean ``T**2 * KL(softmax(teacher/T) || softmax(student/T))`` over rows.

    ``mask`` (boolean, leading-axes shaped) restricts the mean to selected rows.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    teacher_logits = np.asarray(teacher_logits)
    if teacher_logits.shape != student_logits.shape:
        raise DimensionError(f"class axis: student {student_logits.shape} vs teacher {teacher_logits.shape}")
    lead = student_logits.shape[:-1]
    m = np.ones(lead, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    n_valid = int(m.sum())
    if n_valid == 0:
        raise EmptySequenceError("soft_kl has no selected rows")
    T = float(temperature)
    log_pt = log_softmax(teacher_logits.astype(student_logits.dtype), T)
    log_ps = log_softmax(student_logits.data, T)
    pt = np.exp(log_pt)
    kl_rows = (pt * (log_pt - log_ps)).sum(axis=-1)
    loss = T * T * (kl_rows * m).sum() / n_valid
    out = Tensor(np.asarray(max(loss, 0.0), dtype=student_logits.dtype))
    tape = _needs_grad(student_logits)
    if tape:

        def backward(g):
            d = T * (np.exp(log_ps) - pt) * m[..., None] * (g / n_valid)
            _accumulate(student_logits, d.astype(student_logits.dtype, copy=False))

        tape.record("soft_kl", (student_logits,), out, backward)
    return out


def weighted_sum(terms: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    """``sum_i weights[i] * terms[i]`` for equally shaped tensors."""
    if len(terms) != len(weights) or not terms:
        raise DimensionError("weighted_sum needs one weight per term")
    shape = terms[0].shape
    if any(t.shape != shape for t in terms):
        raise DimensionError("weighted_sum terms must share a shape")
    dtype = _result_dtype(*terms)
    acc = np.zeros(shape, dtype=dtype)
    for t, w in zip(terms, weights):
        acc = acc + dtype.type(w) * t.data
    out = Tensor(acc)
    tape = _needs_grad(*terms)
    if tape:

        def backward(g):
            for t, w in zip(terms, weights):
                _accumulate(t, (w * g).astype(t.dtype, copy=False))

        tape.record("weighted_sum", tuple(terms), out, backward)
    return out


def contract(x: Tensor, probe: np.ndarray) -> Tensor:
    """Scalar ``sum(x * probe)``; turns any tensor op into a scalar for checking."""
    if probe.shape != x.shape:
        raise DimensionError(f"probe shape {probe.shape} does not match {x.shape}")
    out = Tensor(np.asarray((x.data * probe).sum(), dtype=x.dtype))
    tape = _needs_grad(x)
    if tape:
        tape.record("contract", (x,), out, lambda g: _accumulate(x, (g * probe).astype(x.dtype, copy=False)))
    return out


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, in place. No weight decay."""
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {grads[name].shape}, param {p.shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m or state.m[name].shape != p.shape:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        p.data -= update.astype(p.dtype, copy=False)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    skipped: list[tuple[int, int]]
    checked: int
    tie: bool = False

    def __float__(self) -> float:
        return self.max_rel_error


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-5,
               floor: float = 1e-4) -> GradCheckResult:
    """Compare reverse-mode gradients of scalar ``fn(*tensors)`` with central differences.

    Runs in float64. Relative error per element is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``. Elements whose
    perturbation moves any max-pool winner (or that sit on an exact pool tie)
    are non-differentiable points; they are skipped and listed in ``skipped``
    as ``(input_index, flat_index)``.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ConfigError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    base = [np.array(a, dtype=np.float64) for a in inputs]

    def run(arrays, with_grad):
        ts = [Tensor(a, requires_grad=with_grad, dtype=np.float64) for a in arrays]
        with GradTape() as tape:
            out = fn(*ts)
            if out.data.size != 1:
                raise DimensionError("grad_check needs a scalar-valued function")
            if with_grad:
                tape.backward(out)
        return float(out.data), ts, tape.pool_events

    _, tensors, events0 = run(base, True)
    tie = any(t for _, t in events0)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def same_winners(events):
        return len(events) == len(events0) and all(np.array_equal(a, b) for (a, _), (b, _) in zip(events, events0))

    worst, skipped, checked = 0.0, [], 0
    for i, arr in enumerate(base):
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            f_plus, _, ev_plus = run(base, False)
            flat[j] = orig - eps
            f_minus, _, ev_minus = run(base, False)
            flat[j] = orig
            if not (same_winners(ev_plus) and same_winners(ev_minus)):
                skipped.append((i, j))
                continue
            num = (f_plus - f_minus) / (2.0 * eps)
            ana = float(analytic[i].reshape(-1)[j])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            if math.isnan(err):
                raise NumericError(f"NaN gradient at input {i}, element {j}")
            worst = max(worst, err)
            checked += 1
    return GradCheckResult(worst, skipped, checked, tie)
