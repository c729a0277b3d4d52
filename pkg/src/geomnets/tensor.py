"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Every operation validates shapes, promotes inputs to float64 and aborts with
NumericError the moment a non-finite value is produced. Backward passes are
built out of the same taped operations, so a gradient obtained from one
backward call can itself be differentiated again (needed when a position
gradient appears inside a training loss).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_UID = itertools.count()


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array, optionally attached to a Tape."""

    __slots__ = ("data", "tape", "requires_grad", "uid")

    def __init__(self, values, tape: "Tape | None" = None, requires_grad: bool = False):
        self.data = _as_array(values)
        self.tape = tape
        self.requires_grad = requires_grad
        self.uid = next(_UID)
        if requires_grad and tape is None:
            raise ContractError("a tensor that requires grad must live on a tape")
        if not np.isfinite(self.data).all():
            raise NumericError("tensor created with non-finite values")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flags = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flags})"

    # arithmetic sugar; plain numbers and arrays become constants
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return slice_(self, key)


@dataclass
class _Record:
    """One executed operation: inputs, output and its vector-Jacobian rule."""

    name: str
    input_uids: tuple[int, ...]
    output_uid: int
    vjp: Callable[[Tensor], Sequence[Tensor | None]]


@dataclass
class Tape:
    """Append-only record of operations for one differentiation context."""

    records: list[_Record] = field(default_factory=list)
    _watched: dict[int, Tensor] = field(default_factory=dict)
    _record_of: dict[int, int] = field(default_factory=dict)

    def watch(self, tensor: Tensor) -> Tensor:
        """Mark a leaf whose gradient should be tracked."""
        if tensor.tape is not None and tensor.tape is not self:
            raise ContractError("tensor already belongs to a different tape")
        if tensor.uid in self._record_of:
            raise ContractError("only leaf tensors can be watched")
        tensor.tape = self
        tensor.requires_grad = True
        self._watched[tensor.uid] = tensor
        return tensor

    def tensor(self, values, requires_grad: bool = True) -> Tensor:
        t = Tensor(values)
        if requires_grad:
            self.watch(t)
        return t

    def _append(self, record: _Record) -> None:
        self._record_of[record.output_uid] = len(self.records)
        self.records.append(record)

    def _root_index(self, root: Tensor) -> int:
        if root.tape is not self:
            raise ContractError("root tensor is not on this tape")
        if root.size != 1:
            raise ContractError("backward root must be a scalar")
        return self._record_of.get(root.uid, -1)

    def gradient(self, root: Tensor, wrt: Sequence[Tensor]) -> list[Tensor]:
        """Gradients of a scalar root w.r.t. the given tensors.

        Tensors that do not influence the root get zero gradients. The
        returned tensors are recorded on the tape, so they stay
        differentiable.
        """
        root_idx = self._root_index(root)
        wrt_uids = {t.uid for t in wrt}

        # which nodes descend from any wrt tensor
        descends: set[int] = set(wrt_uids)
        for rec in self.records[: root_idx + 1]:
            if any(u in descends for u in rec.input_uids):
                descends.add(rec.output_uid)

        # which nodes the root depends on
        reach: set[int] = {root.uid}
        for rec in reversed(self.records[: root_idx + 1]):
            if rec.output_uid in reach:
                reach.update(rec.input_uids)

        active = reach & descends
        grads: dict[int, Tensor] = {root.uid: Tensor(np.ones_like(root.data))}
        for rec in reversed(self.records[: root_idx + 1]):
            g = grads.pop(rec.output_uid, None)
            if g is None or rec.output_uid not in active:
                continue
            for uid, contrib in zip(rec.input_uids, rec.vjp(g)):
                if contrib is None or uid not in active:
                    continue
                held = grads.get(uid)
                grads[uid] = contrib if held is None else add(held, contrib)
        out = []
        for t in wrt:
            g = grads.get(t.uid)
            out.append(g if g is not None else Tensor(np.zeros_like(t.data)))
        return out

    def backward(self, root: Tensor) -> dict[int, Tensor]:
        """Gradient of a scalar root for every watched leaf, keyed by uid."""
        leaves = list(self._watched.values())
        grads = self.gradient(root, leaves)
        return {t.uid: g for t, g in zip(leaves, grads)}


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _common_tape(tensors: Iterable[Tensor]) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ContractError("operands live on different tapes")
    return tape


def _op(name: str, inputs: Sequence[Tensor], data: np.ndarray, vjp) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite result in op '{name}'")
    tape = _common_tape(inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.tape = tape
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.uid = next(_UID)
    if tape is not None:
        tape._append(_Record(name, tuple(t.uid for t in inputs), out.uid, vjp))
    return out


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum a gradient back down to the shape of a broadcast operand."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = sum_(g, axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    if g.shape != shape:
        raise ShapeError(f"cannot reduce gradient {g.shape} to {shape}")
    return g


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    return _op(
        "add",
        (a, b),
        a.data + b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    return _op(
        "sub",
        (a, b),
        a.data - b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(mul(g, -1.0), b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    return _op(
        "mul",
        (a, b),
        a.data * b.data,
        lambda g: (_unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    with np.errstate(all="ignore"):
        data = a.data / b.data
    return _op(
        "div",
        (a, b),
        data,
        lambda g: (
            _unbroadcast(div(g, b), a.shape),
            _unbroadcast(mul(div(mul(g, a), mul(b, b)), -1.0), b.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return _op(
        "matmul",
        (a, b),
        a.data @ b.data,
        lambda g: (
            _unbroadcast(matmul(g, transpose2(b)), a.shape),
            _unbroadcast(matmul(transpose2(a), g), b.shape),
        ),
    )


def transpose2(a) -> Tensor:
    """Swap the last two axes."""
    a = _coerce(a)
    if a.ndim < 2:
        raise ShapeError("transpose2 needs at least two dimensions")
    return _op("transpose2", (a,), np.swapaxes(a.data, -1, -2), lambda g: (transpose2(g),))


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _coerce(a)
    old = a.shape
    return _op("reshape", (a,), a.data.reshape(shape), lambda g: (reshape(g, old),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    ax = axis if axis >= 0 else data.ndim + axis
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        outs = []
        for i in range(len(tensors)):
            key = [slice(None)] * data.ndim
            key[ax] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(slice_(g, tuple(key)))
        return outs

    return _op("concat", tensors, data, vjp)


def slice_(a, key) -> Tensor:
    """Basic slicing (slices and ints only; use gather for index arrays)."""
    a = _coerce(a)
    _check_basic_key(key)
    in_shape = a.shape
    return _op("slice", (a,), a.data[key], lambda g: (unslice(g, key, in_shape),))


def unslice(g, key, shape: tuple[int, ...]) -> Tensor:
    """Adjoint of slice_: embed into zeros of the original shape."""
    g = _coerce(g)
    _check_basic_key(key)
    data = np.zeros(shape, dtype=np.float64)
    data[key] = g.data
    return _op("unslice", (g,), data, lambda gg: (slice_(gg, key),))


def _check_basic_key(key) -> None:
    parts = key if isinstance(key, tuple) else (key,)
    for p in parts:
        if not isinstance(p, (slice, int, np.integer)):
            raise ContractError("slice accepts slices and ints only")


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = _op("sigmoid", (a,), data, lambda g: (mul(g, mul(out, sub(1.0, out))),))
    return out


def silu(a) -> Tensor:
    a = _coerce(a)
    return mul(a, sigmoid(a))


def tanh(a) -> Tensor:
    a = _coerce(a)
    out = _op("tanh", (a,), np.tanh(a.data), lambda g: (mul(g, sub(1.0, mul(out, out))),))
    return out


def exp(a) -> Tensor:
    a = _coerce(a)
    with np.errstate(all="ignore"):
        data = np.exp(a.data)
    out = _op("exp", (a,), data, lambda g: (mul(g, out),))
    return out


def log(a) -> Tensor:
    a = _coerce(a)
    with np.errstate(all="ignore"):
        data = np.log(a.data)
    return _op("log", (a,), data, lambda g: (div(g, a),))


def sin(a) -> Tensor:
    a = _coerce(a)
    return _op("sin", (a,), np.sin(a.data), lambda g: (mul(g, cos(a)),))


def cos(a) -> Tensor:
    a = _coerce(a)
    return _op("cos", (a,), np.cos(a.data), lambda g: (mul(mul(g, sin(a)), -1.0),))


def power(a, p: float) -> Tensor:
    a = _coerce(a)
    p = float(p)
    with np.errstate(all="ignore"):
        data = a.data**p
    return _op("power", (a,), data, lambda g: (mul(g, mul(power(a, p - 1.0), p)),))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    in_shape = a.shape
    data = a.data.sum(axis=axis, keepdims=keepdims)
    axes = _norm_axes(axis, len(in_shape))

    def vjp(g):
        if not keepdims and axes is not None:
            kd_shape = tuple(1 if i in axes else d for i, d in enumerate(in_shape))
            g = reshape(g, kd_shape)
        elif not keepdims and axes is None:
            g = reshape(g, (1,) * len(in_shape))
        return (mul(g, Tensor(np.ones(in_shape))),)

    return _op("sum", (a,), data, vjp)


def _norm_axes(axis, ndim) -> tuple[int, ...] | None:
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    axes = _norm_axes(axis, a.ndim)
    if axes is None:
        count = a.size
    else:
        count = int(np.prod([a.shape[i] for i in axes]))
    if count == 0:
        raise ContractError("mean over an empty axis")
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def norm(a, axis: int = -1, keepdims: bool = False, eps: float = 0.0) -> Tensor:
    """Euclidean norm along one axis; pass eps > 0 when zeros can occur."""
    a = _coerce(a)
    sq = sum_(mul(a, a), axis=axis, keepdims=keepdims)
    if eps:
        sq = add(sq, eps * eps)
    return power(sq, 0.5)


def gather(a, index) -> Tensor:
    """Select rows along the leading axis."""
    a = _coerce(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather index must be one-dimensional")
    if a.ndim < 1:
        raise ShapeError("gather needs at least one dimension")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError("gather index out of range")
    n = a.shape[0]
    return _op("gather", (a,), a.data[idx], lambda g: (scatter_sum(g, idx, n),))


def scatter_sum(values, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of `values` into `num_segments` buckets along axis 0."""
    values = _coerce(values)
    idx = np.asarray(segment_ids, dtype=np.int64)
    if idx.ndim != 1 or (values.ndim >= 1 and idx.shape[0] != values.shape[0]):
        raise ShapeError("segment ids must be 1-D and match the leading axis")
    if idx.size and (idx.min() < 0 or idx.max() >= num_segments):
        raise IndexError("segment id out of range")
    data = np.zeros((num_segments,) + values.shape[1:], dtype=np.float64)
    np.add.at(data, idx, values.data)
    return _op("scatter_sum", (values,), data, lambda g: (gather(g, idx),))


def stop_gradient(a) -> Tensor:
    a = _coerce(a)
    return Tensor(a.data.copy())


def segment_softmax(scores: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Softmax over rows sharing a segment id, stabilized by the segment max.

    The subtracted max is treated as a constant, which leaves both the value
    and the gradient of the softmax unchanged.
    """
    idx = np.asarray(segment_ids, dtype=np.int64)
    if scores.ndim != 1:
        raise ShapeError("segment_softmax expects 1-D scores")
    raw_max = np.full(num_segments, -np.inf)
    np.maximum.at(raw_max, idx, scores.data)
    raw_max[~np.isfinite(raw_max)] = 0.0
    shifted = sub(scores, Tensor(raw_max[idx]))
    e = exp(shifted)
    denom = scatter_sum(e, idx, num_segments)
    return div(e, gather(denom, idx))


# ---------------------------------------------------------------------------
# multi-layer perceptrons


@dataclass(frozen=True)
class MlpSpec:
    """Widths of a dense network, e.g. (in, hidden, out), plus activation."""

    widths: tuple[int, ...]
    activation: str = "silu"

    def __post_init__(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ContractError("MlpSpec needs at least two positive widths")
        if self.activation not in ("silu", "identity", "tanh"):
            raise ContractError(f"unknown activation '{self.activation}'")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(spec: MlpSpec, rng: np.random.Generator, prefix: str = "mlp") -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for i, (fi, fo) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        params[f"{prefix}.w{i}"] = glorot_uniform(rng, fi, fo)
        params[f"{prefix}.b{i}"] = np.zeros(fo)
    return params


def mlp_apply(spec: MlpSpec, params: dict[str, Tensor], x: Tensor, prefix: str = "mlp") -> Tensor:
    if x.shape[-1] != spec.widths[0]:
        raise ShapeError(f"mlp input width {x.shape[-1]} != {spec.widths[0]}")
    act = {"silu": silu, "tanh": tanh, "identity": lambda t: t}[spec.activation]
    h = x
    last = len(spec.widths) - 2
    for i in range(last + 1):
        h = add(matmul(h, params[f"{prefix}.w{i}"]), params[f"{prefix}.b{i}"])
        if i < last:
            h = act(h)
    return h


def lift(params: dict[str, np.ndarray], tape: Tape | None = None) -> dict[str, Tensor]:
    """Wrap a numpy parameter dict as tensors, watched when a tape is given."""
    out: dict[str, Tensor] = {}
    for k, v in params.items():
        t = Tensor(v)
        if tape is not None:
            tape.watch(t)
        out[k] = t
    return out


# ---------------------------------------------------------------------------
# finite-difference checking and checkpoints


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-6) -> float:
    """Max relative error between taped and central-difference gradients."""
    x0 = _as_array(x)
    tape = Tape()
    xt = Tensor(x0.copy())
    tape.watch(xt)
    analytic = tape.gradient(f(xt), [xt])[0].data
    worst = 0.0
    flat = x0.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += eps
        hi = f(Tensor(bumped.reshape(x0.shape))).item()
        bumped[i] -= 2 * eps
        lo = f(Tensor(bumped.reshape(x0.shape))).item()
        fd = (hi - lo) / (2 * eps)
        err = abs(analytic.reshape(-1)[i] - fd) / max(1.0, abs(fd))
        worst = max(worst, err)
    return worst


def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    """Write named parameters as JSON: {name: {shape, values}}, sorted keys."""
    payload = {
        name: {"shape": list(arr.shape), "values": np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}
        for name, arr in params.items()
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        payload = json.load(fh)
    out = {}
    for name, entry in payload.items():
        out[name] = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
    return out
