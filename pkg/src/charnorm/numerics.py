"""Dense tensors with a reverse-mode gradient tape.

Only what the encoder-decoder needs is here: no general broadcasting, every
binary op wants equal shapes (bias addition is its own op). Ops record onto
the innermost active :class:`Tape`; with no tape active they are plain numpy
calls wrapped in :class:`Tensor`, which is what inference uses.

Row convention: a batch of vectors is a ``[B, n]`` array and layers compute
``x @ W``, so the GRU matrix ``W`` has shape ``[d_in, 3d]`` with gate blocks
laid out as ``(z, r, candidate)``.
"""

from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, EmptySourceError

TRAIN_DTYPE = np.float32
CHECK_DTYPE = np.float64

_active_tapes: list["Tape"] = []


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
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

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager around the forward pass, then call
    :meth:`backward` on the scalar loss::

        with Tape() as tape:
            loss = model.forward_train(batch, rng)
        tape.backward(loss)
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        produced = {id(rec.out) for rec in self.records}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            input_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, input_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    leaves[key] = t
        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            g = g.astype(t.data.dtype, copy=False)
            t.grad = g.copy() if t.grad is None else t.grad + g


def no_tape_active() -> bool:
    return not _active_tapes


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs and bool(_active_tapes))
    if out.requires_grad:
        _active_tapes[-1].records.append(_Record(out, tuple(inputs), backward))
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# Elementwise and linear algebra
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, factor: float) -> Tensor:
    return _record(a.data * factor, (a,), lambda g: (g * factor,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows and gives sigmoid(-inf) == 0 exactly
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "tanh": tanh, "sigmoid": sigmoid}


def elementwise(op: str, *operands: Tensor) -> Tensor:
    """Dispatch by name: ``elementwise("tanh", x)``, ``elementwise("add", a, b)``."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ConfigError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with ``b`` of shape ``[n]`` repeated over every leading index of ``x``."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not fit {x.shape}")
    lead = tuple(range(x.data.ndim - 1))
    return _record(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)))


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, W)
    return y if b is None else add_bias(y, b)


def total(a: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    shape = a.shape
    return _record(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, g, dtype=a.dtype),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.shape
    return _record(np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, g / n, dtype=a.dtype),))


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _record(out, (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: mismatched shapes {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _record(out, tuple(tensors), backward)


def select(a: Tensor, index: int, axis: int = 1) -> Tensor:
    """Take one slice along ``axis`` (drops that axis)."""
    shape = a.shape
    out = np.take(a.data, index, axis=axis)

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return _record(out, (a,), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` for an integer array ``ids`` of any shape."""
    ids = np.asarray(ids)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding id out of range for table with {n} rows")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _record(table.data[ids], (table,), backward)


def blend(keep_new, new: Tensor, old: Tensor) -> Tensor:
    """Row-wise choice: rows where ``keep_new`` is true come from ``new``, others from ``old``."""
    _same_shape("blend", new, old)
    m = np.asarray(keep_new, dtype=bool).reshape(-1, *([1] * (new.data.ndim - 1)))
    out = np.where(m, new.data, old.data)
    return _record(out, (new, old), lambda g: (np.where(m, g, 0), np.where(m, 0, g)))


# ---------------------------------------------------------------------------
# Softmax family
# ---------------------------------------------------------------------------

def _softmax(x: np.ndarray, mask=None) -> np.ndarray:
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; positions where ``mask`` is false get probability 0."""
    if x.shape[-1] < 1:
        raise EmptySourceError("softmax over an empty axis")
    y = _softmax(x.data, mask)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record(y, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    y = _log_softmax(x.data)
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _record(y, (x,), backward)


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean over unmasked rows of ``-log softmax(logits)[target]``.

    ``logits`` is ``[N, V]``; ``targets`` holds N ids; ``mask`` (N booleans)
    removes rows from both the sum and the count.
    """
    targets = np.asarray(targets)
    n, v = logits.shape
    if targets.shape != (n,):
        raise DimensionError(f"cross_entropy: {targets.shape} targets for {n} rows")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"cross_entropy: target id outside [0, {v})")
    m = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(m.sum())
    if count == 0:
        raise ValueError("cross_entropy: every position is masked")
    logp = _log_softmax(logits.data)
    rows = np.arange(n)
    picked = logp[rows, targets]
    loss = -(picked * m).sum() / count

    def backward(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        grad *= (m / count)[:, None]
        return (grad * g,)

    return _record(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


# ---------------------------------------------------------------------------
# Regularization
# ---------------------------------------------------------------------------

def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p), inference is the identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _record(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# Recurrent and attention layers
# ---------------------------------------------------------------------------

def _gru_forward(gx, h, U):
    d = h.shape[-1]
    gh = h @ U[:, : 2 * d]
    z = _sigmoid(gx[:, :d] + gh[:, :d])
    r = _sigmoid(gx[:, d : 2 * d] + gh[:, d:])
    rh = r * h
    cand = np.tanh(gx[:, 2 * d :] + rh @ U[:, 2 * d :])
    return (1.0 - z) * h + z * cand, (z, r, rh, cand)


def _gru_backward(g, h, U, cache):
    """Gradients of one GRU step w.r.t. (pre-activations gx, h, U)."""
    z, r, rh, cand = cache
    d = h.shape[-1]
    dz = g * (cand - h)
    da_c = g * z * (1.0 - cand * cand)
    d_rh = da_c @ U[:, 2 * d :].T
    da_z = dz * z * (1.0 - z)
    da_r = d_rh * h * r * (1.0 - r)
    da_zr = np.concatenate([da_z, da_r], axis=1)
    dgx = np.concatenate([da_zr, da_c], axis=1)
    dh = g * (1.0 - z) + d_rh * r + da_zr @ U[:, : 2 * d].T
    dU = np.concatenate([h.T @ da_zr, rh.T @ da_c], axis=1)
    return dgx, dh, dU


def _check_gru(gx: Tensor, h: Tensor, U: Tensor):
    d = h.shape[-1]
    if U.shape != (d, 3 * d) or gx.shape[-1] != 3 * d:
        raise DimensionError(f"GRU: hidden {h.shape}, recurrent {U.shape}, input projection {gx.shape}")


def gru_step(gx: Tensor, h: Tensor, U: Tensor) -> Tensor:
    """One GRU update from precomputed input projections ``gx = x @ W + b``."""
    _check_gru(gx, h, U)
    if gx.shape[:-1] != h.shape[:-1]:
        raise DimensionError(f"GRU: batch of {gx.shape} vs state {h.shape}")
    hd, Ud = h.data, U.data
    out, cache = _gru_forward(gx.data, hd, Ud)

    def backward(g):
        return _gru_backward(g, hd, Ud, cache)

    return _record(out, (gx, h, U), backward)


def gru_cell(x: Tensor, h: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """Cho-style GRU cell on a batch of rows.

    z = sig(x W_z + h U_z + b_z), r = sig(x W_r + h U_r + b_r),
    cand = tanh(x W_c + (r*h) U_c + b_c), h' = (1-z)*h + z*cand.
    """
    if x.shape[-1] != W.shape[0] or W.shape[1] != U.shape[1] or b.shape != (W.shape[1],):
        raise DimensionError(f"GRU: input {x.shape}, W {W.shape}, U {U.shape}, b {b.shape}")
    return gru_step(add_bias(matmul(x, W), b), h, U)


def gru_sequence(gx: Tensor, h0: Tensor, U: Tensor, lengths=None, reverse: bool = False) -> Tensor:
    """Run a GRU over a ``[B, T, 3d]`` sequence of input projections.

    Rows are right-padded: for row ``b`` only steps ``t < lengths[b]`` update
    the state, padded steps carry it unchanged. With ``reverse`` the scan goes
    from ``T-1`` down to 0, so a padded row's state stays ``h0`` until its
    last real position. Returns all states, ``[B, T, d]``, with BPTT done in
    a single backward call.
    """
    _check_gru(gx, h0, U)
    B, T, _ = gx.shape
    if h0.shape[0] != B:
        raise DimensionError(f"GRU: {B} sequences but initial state {h0.shape}")
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    order = range(T - 1, -1, -1) if reverse else range(T)
    gxd, Ud = gx.data, U.data
    d = h0.shape[-1]
    out = np.empty((B, T, d), dtype=np.result_type(gxd, h0.data))
    steps = []
    h = h0.data
    for t in order:
        live = (t < lengths)[:, None]
        h_new, cache = _gru_forward(gxd[:, t], h, Ud)
        steps.append((t, live, h, cache))
        h = np.where(live, h_new, h)
        out[:, t] = h

    def backward(g):
        dgx = np.zeros_like(gxd)
        dU = np.zeros_like(Ud)
        dh = np.zeros_like(h0.data)
        for t, live, h_prev, cache in reversed(steps):
            dh = dh + g[:, t]
            g_new = np.where(live, dh, 0)
            dgx_t, dh_prev, dU_t = _gru_backward(g_new, h_prev, Ud, cache)
            dgx[:, t] = dgx_t
            dU += dU_t
            dh = np.where(live, dh_prev, dh)
        return dgx, dh, dU

    return _record(out, (gx, h0, U), backward)


def attention_scores(query: Tensor, keys: Tensor) -> Tensor:
    """``scores[b, t] = keys[b, t] . query[b]`` for query ``[B, d]``, keys ``[B, T, d]``."""
    if keys.data.ndim != 3 or query.shape != (keys.shape[0], keys.shape[2]):
        raise DimensionError(f"attention: query {query.shape} vs keys {keys.shape}")
    q, k = query.data, keys.data
    out = (k @ q[:, :, None])[:, :, 0]

    def backward(g):
        dq = (g[:, None, :] @ k)[:, 0, :]
        dk = g[:, :, None] * q[:, None, :]
        return dq, dk

    return _record(out, (query, keys), backward)


def weighted_sum(weights: Tensor, values: Tensor) -> Tensor:
    """``out[b] = sum_t weights[b, t] * values[b, t]``."""
    if values.data.ndim != 3 or weights.shape != values.shape[:2]:
        raise DimensionError(f"weighted_sum: weights {weights.shape} vs values {values.shape}")
    w, v = weights.data, values.data
    out = (w[:, None, :] @ v)[:, 0, :]

    def backward(g):
        dw = (v @ g[:, :, None])[:, :, 0]
        dv = w[:, :, None] * g[:, None, :]
        return dw, dv

    return _record(out, (weights, values), backward)


def luong_attention(h_dec: Tensor, enc_outs: Tensor, W_a: Tensor, W_c: Tensor, mask=None):
    """Luong "general" attention for a batch of decoder states.

    ``h_dec`` is ``[B, d]``, ``enc_outs`` ``[B, T, d]``; ``mask`` marks real
    (non-padding) encoder positions. Returns ``(context, attn_out, weights)``
    with ``attn_out = tanh([context; h_dec] W_c)``.
    """
    if enc_outs.data.ndim != 3 or enc_outs.shape[1] == 0:
        raise EmptySourceError("attention over an empty source")
    scores = attention_scores(matmul(h_dec, W_a), enc_outs)
    weights = softmax(scores, mask)
    context = weighted_sum(weights, enc_outs)
    attn_out = tanh(matmul(concat([context, h_dec], axis=-1), W_c))
    return context, attn_out, weights


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

class ParamStore:
    """Named parameters in insertion order (the checkpoint order)."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(data, requires_grad=trainable, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def trainable(self) -> list[Tensor]:
        return [t for t in self._params.values() if t.requires_grad]

    def count(self) -> int:
        """Number of trainable scalars."""
        return sum(t.data.size for t in self.trainable())

    def zero_grad(self) -> None:
        for t in self.trainable():
            t.grad = np.zeros_like(t.data)


def uniform_unit_variance(rng: np.random.Generator, shape, dtype=TRAIN_DTYPE) -> np.ndarray:
    """Uniform on [-sqrt(3), sqrt(3)]: mean 0, variance 1."""
    bound = np.sqrt(3.0)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, dtype=TRAIN_DTYPE):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)).astype(dtype)
