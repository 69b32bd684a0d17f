"""Tensor-level reverse-mode automatic differentiation.

Every differentiable operation appends one node to the :class:`Tape` owning its
inputs. A node stores the vector-Jacobian product of the operation as a closure
over the values it needs, so :meth:`Tape.backward` is a single sweep over the
nodes in reverse creation order.

Tensors without a node (constants) never record anything, and the
:func:`no_record` context disables recording entirely, which makes the same
solver code usable for tape-free reference rollouts.
"""

from __future__ import annotations

import threading
from collections.abc import Callable, Sequence
from contextlib import contextmanager
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tape",
    "Tensor",
    "TapeError",
    "ShapeError",
    "LinearMap",
    "no_record",
    "is_recording",
    "constant",
    "checkpoint_free_forward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "square",
    "sqrt",
    "absolute",
    "relu",
    "softplus",
    "minimum",
    "maximum",
    "amax",
    "sum",
    "mean",
    "matmul",
    "conv1d",
    "concat",
    "stack",
    "reshape",
    "expand",
    "roll",
    "lincomb",
    "apply_linear",
]


class TapeError(RuntimeError):
    """Misuse of a tape: mixing tapes, reusing a consumed tape, bad loss."""


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


_local = threading.local()


def is_recording() -> bool:
    return getattr(_local, "recording", True)


@contextmanager
def no_record():
    """Evaluate operations without recording, even on tape-owned tensors."""
    previous = is_recording()
    _local.recording = False
    try:
        yield
    finally:
        _local.recording = previous


class Tape:
    """Append-only record of tensor operations.

    Use ``tape.parameter(name, value)`` to create trainable leaves, build a
    scalar loss from them, then call ``tape.backward(loss)``. A tape can be
    differentiated once; its node storage is released afterwards.
    """

    def __init__(self) -> None:
        self._nodes: list[tuple[Callable | None, tuple] | None] = []
        self.parameter_ids: dict[str, int] = {}
        self.consumed = False

    def __len__(self) -> int:
        return len(self._nodes)

    def parameter(self, name: str, value) -> Tensor:
        if self.consumed:
            raise TapeError("tape already consumed")
        if name in self.parameter_ids:
            raise TapeError(f"duplicate parameter name {name!r}")
        data = np.array(value, dtype=np.float64)
        node_id = len(self._nodes)
        self._nodes.append((None, ()))
        self.parameter_ids[name] = node_id
        return Tensor(data, self, node_id)

    def leaf(self, value) -> Tensor:
        """Non-parameter leaf; gradients reaching it are discarded."""
        if self.consumed:
            raise TapeError("tape already consumed")
        node_id = len(self._nodes)
        self._nodes.append((None, ()))
        return Tensor(np.array(value, dtype=np.float64), self, node_id)

    def _append(self, vjp: Callable, input_ids: tuple) -> int:
        node_id = len(self._nodes)
        self._nodes.append((vjp, input_ids))
        return node_id

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradient of a scalar ``loss`` with respect to every parameter.

        Parameters the loss does not depend on get a zero gradient.
        """
        if self.consumed:
            raise TapeError("tape already consumed")
        if loss.tape is not self or loss.node_id is None:
            raise TapeError("loss is not recorded on this tape")
        if loss.data.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")

        nodes = self._nodes
        grads: list[Any] = [None] * len(nodes)
        grads[loss.node_id] = np.ones_like(loss.data)
        keep = set(self.parameter_ids.values())
        for i in range(loss.node_id, -1, -1):
            g = grads[i]
            node = nodes[i]
            nodes[i] = None
            if g is None or node is None:
                continue
            vjp, input_ids = node
            if vjp is None:
                continue
            if i not in keep:
                grads[i] = None
            for j, gj in zip(input_ids, vjp(g)):
                if j is None or gj is None:
                    continue
                if grads[j] is None:
                    grads[j] = gj
                else:
                    grads[j] = grads[j] + gj

        result = {}
        for name, pid in self.parameter_ids.items():
            g = grads[pid]
            result[name] = np.zeros(()) if g is None else np.asarray(g, dtype=np.float64)
        self.release()
        return result

    def release(self) -> None:
        self._nodes = []
        self.consumed = True


class Tensor:
    """Dense float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node_id")
    __array_priority__ = 100.0

    def __init__(self, data, tape: Tape | None = None, node_id: int | None = None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def requires_grad(self) -> bool:
        return self.node_id is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = "" if self.node_id is None else f", node={self.node_id}"
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self) -> int:
        return len(self.data)

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

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return _getitem(self, index)


def constant(value) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64))


def _t(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(out: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Attach ``out`` to the tape shared by ``inputs`` (if any are recorded)."""
    if not is_recording():
        return Tensor(out)
    tape = None
    for x in inputs:
        if x.node_id is not None:
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError("operands live on different tapes")
    if tape is None:
        return Tensor(out)
    if tape.consumed:
        raise TapeError("tape already consumed")
    ids = tuple(x.node_id for x in inputs)
    return Tensor(out, tape, tape._append(vjp, ids))


def _check_same(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape and a.ndim and b.ndim:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _unscalar(g: np.ndarray, shape: tuple) -> np.ndarray:
    # undo the only broadcast we allow: a 0-d operand against a full tensor
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_same(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unscalar(g, sa), _unscalar(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_same(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unscalar(g, sa), _unscalar(-g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(b, (Tensor, np.ndarray)):
        return scale(_t(a), float(b))
    if not isinstance(a, (Tensor, np.ndarray)):
        return scale(_t(b), float(a))
    a, b = _t(a), _t(b)
    _check_same(a.data, b.data, "mul")
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape
    return _record(ad * bd, (a, b), lambda g: (_unscalar(g * bd, sa), _unscalar(g * ad, sb)))


def div(a, b) -> Tensor:
    if not isinstance(b, (Tensor, np.ndarray)):
        return scale(_t(a), 1.0 / float(b))
    a, b = _t(a), _t(b)
    _check_same(a.data, b.data, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    sa, sb = a.shape, b.shape
    return _record(out, (a, b), lambda g: (_unscalar(g / bd, sa), _unscalar(-g * out / bd, sb)))


def scale(x, c: float) -> Tensor:
    x = _t(x)
    return _record(x.data * c, (x,), lambda g: (g * c,))


def neg(x) -> Tensor:
    return scale(x, -1.0)


def square(x) -> Tensor:
    x = _t(x)
    xd = x.data
    return _record(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def sqrt(x) -> Tensor:
    x = _t(x)
    out = np.sqrt(x.data)
    return _record(out, (x,), lambda g: (0.5 * g / out,))


def absolute(x) -> Tensor:
    x = _t(x)
    sgn = np.sign(x.data)
    return _record(np.abs(x.data), (x,), lambda g: (g * sgn,))


def relu(x) -> Tensor:
    x = _t(x)
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def softplus(x) -> Tensor:
    """ln(1 + e^x), evaluated without overflow."""
    x = _t(x)
    xd = x.data
    out = np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * xd))
    return _record(out, (x,), lambda g: (g * sig,))


def minimum(a, b) -> Tensor:
    """Elementwise min; on exact ties the gradient goes to ``a``."""
    a, b = _t(a), _t(b)
    _check_same(a.data, b.data, "minimum")
    take_a = a.data <= b.data
    sa, sb = a.shape, b.shape
    return _record(
        np.where(take_a, a.data, b.data),
        (a, b),
        lambda g: (_unscalar(g * take_a, sa), _unscalar(g * ~take_a, sb)),
    )


def maximum(a, b) -> Tensor:
    """Elementwise max; on exact ties the gradient goes to ``a``."""
    a, b = _t(a), _t(b)
    _check_same(a.data, b.data, "maximum")
    take_a = a.data >= b.data
    sa, sb = a.shape, b.shape
    return _record(
        np.where(take_a, a.data, b.data),
        (a, b),
        lambda g: (_unscalar(g * take_a, sa), _unscalar(g * ~take_a, sb)),
    )


# reductions


def amax(x, axis: int) -> Tensor:
    """Max-reduce along ``axis``; ties resolve to the first index."""
    x = _t(x)
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _record(np.squeeze(out, axis=axis), (x,), vjp)


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001
    x = _t(x)
    shape = x.shape
    if axis is None:
        return _record(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))
    return _record(
        x.data.sum(axis=axis),
        (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),),
    )


def mean(x, axis: int | None = None) -> Tensor:
    x = _t(x)
    n = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis), 1.0 / n)


# linear algebra


def matmul(a, b) -> Tensor:
    """Contract the last axis of ``a`` with the first axis of a matrix ``b``.

    ``a`` may have any number of leading axes; ``b`` must be 2-D.
    """
    a, b = _t(a), _t(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot contract {a.shape} with {b.shape}")
    ad, bd = a.data, b.data
    k = bd.shape[0]

    def vjp(g):
        ga = g @ bd.T if a.node_id is not None else None
        gb = None
        if b.node_id is not None:
            gb = ad.reshape(-1, k).T @ g.reshape(-1, bd.shape[1])
        return ga, gb

    return _record(ad @ bd, (a, b), vjp)


def _pad(x: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if mode == "circular":
        return np.concatenate([x[:, -pad:], x, x[:, :pad]], axis=1)
    if mode == "replicate":
        return np.concatenate(
            [np.repeat(x[:, :1], pad, axis=1), x, np.repeat(x[:, -1:], pad, axis=1)], axis=1
        )
    raise ValueError(f"unknown padding mode {mode!r}")


def _unpad(gp: np.ndarray, pad: int, mode: str) -> np.ndarray:
    g = gp[:, pad:-pad].copy()
    if mode == "circular":
        g[:, -pad:] += gp[:, :pad]
        g[:, :pad] += gp[:, -pad:]
    else:
        g[:, 0] += gp[:, :pad].sum(axis=1)
        g[:, -1] += gp[:, -pad:].sum(axis=1)
    return g


def conv1d(x, weight, bias, padding: str = "circular") -> Tensor:
    """Same-length 1D convolution (cross-correlation).

    x: (C_in, L), weight: (C_out, C_in, k) with k odd, bias: (C_out,).
    ``padding`` is ``"circular"`` or ``"replicate"``.
    """
    x, weight, bias = _t(x), _t(weight), _t(bias)
    c_out, c_in, k = weight.shape
    if x.ndim != 2 or x.shape[0] != c_in or bias.shape != (c_out,) or k % 2 == 0:
        raise ShapeError(f"conv1d: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    length = x.shape[1]
    pad = k // 2
    xp = _pad(x.data, pad, padding) if pad else x.data
    # cols[(c, i), l] = xp[c, l + i]
    cols = sliding_window_view(xp, length, axis=1).reshape(c_in * k, length)
    w2 = weight.data.reshape(c_out, c_in * k)
    out = w2 @ cols + bias.data[:, None]

    def vjp(g):
        gw = (g @ cols.T).reshape(c_out, c_in, k) if weight.node_id is not None else None
        gb = g.sum(axis=1) if bias.node_id is not None else None
        gx = None
        if x.node_id is not None:
            gcols = (w2.T @ g).reshape(c_in, k, length)
            gxp = np.zeros((c_in, length + 2 * pad))
            for i in range(k):
                gxp[:, i : i + length] += gcols[:, i, :]
            gx = _unpad(gxp, pad, padding) if pad else gxp
        return gx, gw, gb

    return _record(out, (x, weight, bias), vjp)


# structural


def _getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape)
        gx[index] = g
        return (gx,)

    return _record(np.array(out, dtype=np.float64), (x,), vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_t(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    out = np.concatenate([t.data for t in ts], axis=axis)
    return _record(out, ts, lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_t(t) for t in tensors]
    n = len(ts)
    out = np.stack([t.data for t in ts], axis=axis)
    return _record(out, ts, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def reshape(x, shape) -> Tensor:
    x = _t(x)
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def expand(x, shape) -> Tensor:
    """Explicit broadcast of ``x`` to ``shape`` (numpy broadcasting rules)."""
    x = _t(x)
    old = x.shape
    shape = tuple(shape)
    lead = len(shape) - len(old)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(old) if n == 1 and shape[lead + i] != 1
    )

    def vjp(g):
        return (g.sum(axis=axes, keepdims=True).reshape(old) if axes else g,)

    return _record(np.broadcast_to(x.data, shape).copy(), (x,), vjp)


def roll(x, shift: int, axis: int) -> Tensor:
    x = _t(x)
    return _record(np.roll(x.data, shift, axis=axis), (x,), lambda g: (np.roll(g, -shift, axis=axis),))


def lincomb(coeffs: Sequence[float], tensors: Sequence) -> Tensor:
    """Σ c_i x_i for same-shape tensors, recorded as a single node."""
    ts = [_t(t) for t in tensors]
    shape = ts[0].shape
    out = coeffs[0] * ts[0].data
    for c, t in zip(coeffs[1:], ts[1:]):
        if t.shape != shape:
            raise ShapeError(f"lincomb: shapes {shape} and {t.shape} differ")
        out = out + c * t.data
    cs = tuple(coeffs)
    return _record(out, ts, lambda g: tuple(c * g for c in cs))


class LinearMap:
    """Affine map x -> A x + b given as a pair of callables.

    ``forward`` evaluates the full affine map; ``adjoint`` must apply the
    transpose of its linear part. Used to record large structured operators
    (DG lifting, face extraction) as one tape node.
    """

    def __init__(self, forward: Callable[[np.ndarray], np.ndarray], adjoint: Callable[[np.ndarray], np.ndarray]):
        self.forward = forward
        self.adjoint = adjoint

    def __call__(self, x) -> Tensor:
        return apply_linear(self, x)


def apply_linear(op: LinearMap, x) -> Tensor:
    x = _t(x)
    adjoint = op.adjoint
    return _record(op.forward(x.data), (x,), lambda g: (adjoint(g),))


def checkpoint_free_forward(step_fn: Callable, state, n_steps: int):
    """Run ``n_steps`` of ``step_fn`` with recording disabled."""
    with no_record():
        for _ in range(n_steps):
            state = step_fn(state)
    return state
