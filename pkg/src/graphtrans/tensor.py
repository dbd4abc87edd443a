"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation appends an entry to the active :class:`Tape`.
``backward(loss)`` replays the entries recorded up to ``loss`` in reverse
order.  Open a fresh tape per training step::

    with Tape():
        loss = model_loss(batch)
        backward(loss)

Leaving the ``with`` block releases the recorded entries, so ``backward`` must
run inside it.
"""
from __future__ import annotations

import contextlib
import dataclasses
import math
import threading
from typing import Any, Callable, Iterator, Sequence

import numpy as np

from .errors import DegenerateRowError, GraphTransError, DeterminismError, ParameterError, ShapeError

_DTYPES = {32: np.float32, 64: np.float64}
_precision = {"dtype": np.float32}
_local = threading.local()


def set_precision(bits: int) -> None:
    """Select the floating-point width (32 or 64) for newly created tensors."""
    if bits not in _DTYPES:
        raise ParameterError(f"precision must be 32 or 64, got {bits}")
    _precision["dtype"] = _DTYPES[bits]


def get_dtype() -> type:
    return _precision["dtype"]


@contextlib.contextmanager
def precision(bits: int) -> Iterator[None]:
    old = _precision["dtype"]
    set_precision(bits)
    try:
        yield
    finally:
        _precision["dtype"] = old


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator used for initialisation, shuffling and dropout."""
    return np.random.Generator(np.random.Philox(seed))


class Tape:
    """Ordered record of operations.  Entries are ``(inputs, output, backward_fn)``."""

    def __init__(self) -> None:
        self.entries: list[tuple[tuple[Tensor, ...], Tensor, Callable]] = []
        self.released = False

    def __enter__(self) -> Tape:
        _stack().append(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        _stack().pop()
        self.released = True
        self.entries = []

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self) -> None:
        self.entries.clear()

    def record(self, inputs: tuple[Tensor, ...], out: Tensor, backward_fn: Callable) -> None:
        out.tape = self
        out.trace_id = len(self.entries)
        self.entries.append((inputs, out, backward_fn))

    def backward(self, loss: Tensor) -> None:
        if self.released:
            raise GraphTransError("backward called after the tape's block exited")
        pending: dict[int, np.ndarray] = {loss.trace_id: np.ones_like(loss.data)}
        for inputs, out, backward_fn in reversed(self.entries[: loss.trace_id + 1]):
            g = pending.pop(out.trace_id, None)
            if g is None:
                continue
            _accumulate(out, g)
            for inp, ig in zip(inputs, backward_fn(g)):
                if ig is None or not inp.requires_grad:
                    continue
                if inp.trace_id is None or inp.tape is not self:
                    _accumulate(inp, ig)
                elif inp.trace_id in pending:
                    pending[inp.trace_id] = pending[inp.trace_id] + ig
                else:
                    pending[inp.trace_id] = ig


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.data.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def _stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = [Tape()]
        _local.recording = True
    return _local.stack


def current_tape() -> Tape:
    return _stack()[-1]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording; operations return constants."""
    _stack()
    old = _local.recording
    _local.recording = False
    try:
        yield
    finally:
        _local.recording = old


def _recording() -> bool:
    _stack()
    return _local.recording


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape", "trace_id", "name")

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None, dtype: Any = None):
        arr = np.asarray(data)
        self.data = arr.astype(dtype or get_dtype(), copy=False)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape: Tape | None = None
        self.trace_id: int | None = None
        self.name = name

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __add__(self, other: Any) -> Tensor:
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Any) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return sub(as_tensor(other), self)

    def __mul__(self, other: Any) -> Tensor:
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape: int) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> Tensor:
        return transpose(self, axes or None)

    def relu(self) -> Tensor:
        return relu(self)

    def log(self) -> Tensor:
        return log(self)


def as_tensor(x: Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data: Any, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    out = Tensor(out_data, dtype=out_data.dtype)
    if _recording() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        current_tape().record(inputs, out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _binary_operands(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None
    return a, b


# ---------------------------------------------------------------- elementwise


def add(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands(a, b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands(a, b)
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Any, b: Any) -> Tensor:
    a, b = _binary_operands(a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return _make(x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return _make(np.where(keep, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * keep,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


# ------------------------------------------------------------------ structure


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inverse = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def tsum(x: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(tsum(x, axis, keepdims), 1.0 / n)


def embedding(table: Tensor, index: np.ndarray) -> Tensor:
    """Row lookup ``table[index]`` for an integer array of any shape."""
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeError(f"embedding index out of range for table of shape {table.shape}")

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros_like(table.data)
        np.add.at(out, index.reshape(-1), g.reshape(-1, table.shape[1]))
        return (out,)

    return _make(table.data[index], (table,), backward)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """For ``x`` of shape [B, S, d] pick ``x[b, index[b]]``, giving [B, d]."""
    index = np.asarray(index)
    rows = np.arange(x.shape[0])

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros_like(x.data)
        out[rows, index] = g
        return (out,)

    return _make(x.data[rows, index], (x,), backward)


# ------------------------------------------------------------------ linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes with batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight (+ bias)`` with ``weight`` stored as [in, out]."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ------------------------------------------------------------------ normalisation


def masked_softmax(logits: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis restricted to positions where ``mask`` is true.

    Masked positions get exactly zero probability.  A row without any unmasked
    position raises :class:`DegenerateRowError`.
    """
    x = logits.data
    if mask is None:
        m = np.ones(x.shape, dtype=bool)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if x.size and not m.any(axis=-1).all():
            raise DegenerateRowError("softmax row is fully masked")
    z = np.where(m, x, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(m, np.exp(z), 0).astype(x.dtype)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (logits,), backward)


def softmax(logits: Tensor) -> Tensor:
    return masked_softmax(logits, None)


def log_softmax(logits: Tensor) -> Tensor:
    x = logits.data
    z = x - x.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return _make(out, (logits,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit (population) variance, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std
    out = xhat * gain.data + bias.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        dxhat = g * gain.data
        dx = inv_std * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat = g.reshape(-1, g.shape[-1])
        return dx, (flat * xhat.reshape(flat.shape)).sum(axis=0), flat.sum(axis=0)

    return _make(out.astype(x.data.dtype, copy=False), (x, gain, bias), backward)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p); identity outside training."""
    if not 0 <= p < 1:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs a generator")
    keep = (rng.random(x.shape) >= p) * x.data.dtype.type(1.0 / (1.0 - p))
    keep = keep.astype(x.data.dtype)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# ------------------------------------------------------------------ autodiff entry points


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor that ``loss`` depends on.  Calls accumulate."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.trace_id is None:
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
        return
    loss.tape.backward(loss)


def named_tensors(obj: Any, prefix: str = "") -> dict[str, Tensor]:
    """Flatten nested dataclasses / dicts / lists of tensors into dotted names."""
    out: dict[str, Tensor] = {}
    if isinstance(obj, Tensor):
        out[prefix] = obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            out.update(named_tensors(getattr(obj, f.name), f"{prefix}{f.name}."))
    elif isinstance(obj, dict):
        for k, v in obj.items():
            out.update(named_tensors(v, f"{prefix}{k}."))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            out.update(named_tensors(v, f"{prefix}{i}."))
    return {k.rstrip("."): v for k, v in out.items()}


def grad_check(forward: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The error for a coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.  ``forward``
    must return a scalar and be deterministic.
    """
    with no_grad():
        first, second = forward().data.copy(), forward().data.copy()
    if not np.array_equal(first, second):
        raise DeterminismError("forward returned different values for identical calls")

    for p in params:
        p.zero_grad()
    with Tape():
        backward(forward())
    worst = 0.0
    with no_grad():
        for p in params:
            analytic = np.zeros_like(p.data) if p.grad is None else p.grad
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = float(forward().data)
                flat[i] = orig - step
                down = float(forward().data)
                flat[i] = orig
                numeric = (up - down) / (2 * step)
                a = float(analytic.reshape(-1)[i])
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
    return worst


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name: str | None = None) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)), name)


def zeros(*shape: int, name: str | None = None) -> Tensor:
    return parameter(np.zeros(shape), name)
