"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active ComputationTape only when a tape is
open and at least one input requires a gradient, so inference runs without any
bookkeeping. Arrays are numpy float64 throughout.
"""

import math

import numpy as np

from errors import DimensionError, EmptySequenceError, NumericError, TapeError

# Masked attention logits use a finite stand-in for -infinity so that mask
# arithmetic never produces inf - inf.
NEG_INF = -1e9
LAYER_NORM_EPS = 1e-6

_ACTIVE_TAPES = []


class Tensor:
    """A float64 array, optionally tracked for gradients.

    Leaf tensors created with requires_grad=True (model parameters) receive
    their gradient in `grad` after `backward`. Tensors produced by recorded
    operations remember their position on the tape that produced them.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_tape", "_tape_index")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape = None
        self._tape_index = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class TapeEntry:
    __slots__ = ("op", "output", "inputs", "backward_fn")

    def __init__(self, op, output, inputs, backward_fn):
        self.op = op
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class ComputationTape:
    """Ordered record of primitive operations, used as a context manager.

    Entries are appended as operations execute, so every entry's inputs are
    either leaves or outputs of earlier entries.
    """

    def __init__(self):
        self.entries = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.entries)

    def record(self, op, output, inputs, backward_fn):
        index = len(self.entries)
        for tensor in inputs:
            if tensor._tape is self and tensor._tape_index >= index:
                raise TapeError(f"input of {op} was produced after it on the tape")
        output._tape = self
        output._tape_index = index
        output.requires_grad = True
        self.entries.append(TapeEntry(op, output, inputs, backward_fn))


def active_tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(data, name=None):
    """Create a trainable leaf tensor"""
    return Tensor(data, requires_grad=True, name=name)


def _emit(op, data, inputs, backward_fn):
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(op, out, inputs, backward_fn)
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`"""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -----------------------------------------------------------------------------
# Elementwise
# -----------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", a.data + b.data, (a, b), backward_fn)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("sub", a.data - b.data, (a, b), backward_fn)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("mul", a.data * b.data, (a, b), backward_fn)


def relu(x):
    x = as_tensor(x)
    positive = x.data > 0

    def backward_fn(g):
        return (g * positive,)

    return _emit("relu", np.where(positive, x.data, 0.0), (x,), backward_fn)


def tensor_sum(x):
    """Sum of all elements as a scalar tensor"""
    x = as_tensor(x)

    def backward_fn(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum", np.asarray(x.data.sum()), (x,), backward_fn)


def dropout(x, rate, rng):
    """Inverted dropout; identity when rate is 0 or no generator is given"""
    x = as_tensor(x)
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


# -----------------------------------------------------------------------------
# Shape manipulation
# -----------------------------------------------------------------------------


def reshape(x, shape):
    x = as_tensor(x)
    original = x.shape

    def backward_fn(g):
        return (g.reshape(original),)

    return _emit("reshape", x.data.reshape(shape), (x,), backward_fn)


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        return (g.transpose(inverse),)

    return _emit("transpose", x.data.transpose(axes), (x,), backward_fn)


def concat(tensors, axis=-1):
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    split_points = np.cumsum(sizes)[:-1]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise DimensionError(f"cannot concatenate shapes {shapes}: {e}") from e

    def backward_fn(g):
        return tuple(np.split(g, split_points, axis=axis))

    return _emit("concat", data, tensors, backward_fn)


def embedding(table, ids):
    """Gather rows of `table` for an integer id array of any shape"""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(
            f"token id out of range for embedding table of shape {table.shape}"
        )

    def backward_fn(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return _emit("embedding", table.data[ids], (table,), backward_fn)


# -----------------------------------------------------------------------------
# Linear algebra and normalization
# -----------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product, batched over leading dimensions with broadcasting"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def backward_fn(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _emit("matmul", a.data @ b.data, (a, b), backward_fn)


def softmax_rows(x):
    """Softmax over the last axis, stabilized by subtracting the row maximum"""
    x = as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"softmax input of shape {x.shape} contains non-finite values")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    y = exps / exps.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", y, (x,), backward_fn)


def log_softmax(values):
    """Plain numpy log-softmax over the last axis (no gradient tracking)"""
    values = np.asarray(values, dtype=np.float64)
    shifted = values - values.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(
            f"layer_norm gain {gain.shape} / bias {bias.shape} do not match last dimension {width}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward_fn(g):
        dxhat = g * gain.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit("layer_norm", out, (x, gain, bias), backward_fn)


def cross_entropy(logits, targets, pad_id, label_smoothing=0.0):
    """Mean token negative log-likelihood over non-pad target positions.

    With label smoothing e the per-token target distribution is
    (1 - e) * one_hot + e / V.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    vocab = logits.shape[-1]
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(
            f"cross_entropy logits {logits.shape} do not match targets {targets.shape}"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise DimensionError(f"target id outside vocabulary of size {vocab}")
    valid = targets != pad_id
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptySequenceError("empty loss support")

    logp = log_softmax(logits.data)
    target_logp = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    token_loss = -(1.0 - label_smoothing) * target_logp
    if label_smoothing:
        token_loss = token_loss - label_smoothing * logp.mean(axis=-1)
    loss = float((token_loss * valid).sum() / n_valid)

    def backward_fn(g):
        q = np.full(logp.shape, label_smoothing / vocab)
        np.put_along_axis(
            q, targets[..., None], (1.0 - label_smoothing) + label_smoothing / vocab, axis=-1
        )
        grad = (np.exp(logp) - q) * valid[..., None] / n_valid
        return (grad * g,)

    return _emit("cross_entropy", np.asarray(loss), (logits,), backward_fn)


# -----------------------------------------------------------------------------
# Reverse pass
# -----------------------------------------------------------------------------


def backward(loss, tape):
    """Populate `grad` on every leaf that `loss` depends on"""
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is not tape:
        raise TapeError("loss was not produced on the given tape")

    pending = {loss._tape_index: np.ones_like(loss.data)}
    for index in range(loss._tape_index, -1, -1):
        grad = pending.pop(index, None)
        if grad is None:
            continue
        entry = tape.entries[index]
        input_grads = entry.backward_fn(grad)
        for tensor, input_grad in zip(entry.inputs, input_grads):
            if input_grad is None or not tensor.requires_grad:
                continue
            if tensor._tape is tape:
                if tensor._tape_index >= index:
                    raise TapeError(f"cycle detected at tape entry {index} ({entry.op})")
                previous = pending.get(tensor._tape_index)
                pending[tensor._tape_index] = (
                    input_grad if previous is None else previous + input_grad
                )
            else:
                tensor.grad = input_grad.copy() if tensor.grad is None else tensor.grad + input_grad


def sinusoidal_positions(length, d_model):
    """Fixed sine/cosine position table of shape (length, d_model)"""
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, d_model, 2) / d_model))
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: d_model // 2])
    return table
