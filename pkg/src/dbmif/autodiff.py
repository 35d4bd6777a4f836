"""Tape-based reverse-mode differentiation on numpy arrays.

Every forward call records a node holding its parents and a closure that maps
the output gradient to per-parent gradients. ``Tensor.backward`` walks the
recorded graph in reverse topological order. The graph is rebuilt on every
forward pass.

Precision is a global engine setting: 32-bit for training, 64-bit for
finite-difference gradient checks.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, PreconditionError

_DTYPE = np.float32
_GRAD_ENABLED = True
_ids = itertools.count()
_BRANCHES: list | None = None


def set_precision(bits: int) -> None:
    global _DTYPE
    if bits == 32:
        _DTYPE = np.float32
    elif bits == 64:
        _DTYPE = np.float64
    else:
        raise ConfigurationError(f"precision must be 32 or 64 bits, got {bits}")


def get_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(bits: int):
    previous = 64 if _DTYPE == np.float64 else 32
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(previous)


@contextlib.contextmanager
def record_branches():
    """Collect the discrete choices (kink sides, selected rows) made by a forward pass.

    Finite-difference checks use this to discard coordinates whose perturbation
    crosses a non-differentiable point.
    """
    global _BRANCHES
    previous = _BRANCHES
    _BRANCHES = []
    try:
        yield _BRANCHES
    finally:
        _BRANCHES = previous


def _branch(choice: np.ndarray) -> None:
    if _BRANCHES is not None:
        _BRANCHES.append(choice)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """A value array plus an optional gradient and its place in the tape."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- bookkeeping -----------------------------------------------------
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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every tensor on the tape."""
        if self.data.size != 1 or self.data.ndim > 1:
            raise PreconditionError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {self.node_id: np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.node_id in grads:
                    grads[parent.node_id] = grads[parent.node_id] + pg
                else:
                    grads[parent.node_id] = pg

    # -- operator sugar ----------------------------------------------------
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
        if isinstance(other, Tensor):
            raise ConfigurationError("division is only supported by Python scalars")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.node_id not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- pointwise -------------------------------------------------------------

def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0 or t.data.size == 1 and t.data.ndim <= 1


def _check_pointwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or _is_scalar(a) or _is_scalar(b):
        return
    raise ConfigurationError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, like: Tensor) -> np.ndarray:
    if g.shape == like.shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(like.shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pointwise(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pointwise(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pointwise(a, b, "mul")
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_reduce_to(g * b.data, a), _reduce_to(g * a.data, b)),
    )


def power(a: Tensor, exponent: float) -> Tensor:
    return _node(a.data**exponent, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so exp never overflows
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(a: Tensor, alpha: float = 0.1) -> Tensor:
    _branch(a.data > 0)
    slope = np.where(a.data > 0, 1.0, alpha).astype(a.data.dtype)
    return _node(a.data * slope, (a,), lambda g: (g * slope,))


def relu(a: Tensor) -> Tensor:
    _branch(a.data > 0)
    mask = (a.data > 0).astype(a.data.dtype)
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    _branch(sign)
    return _node(np.abs(a.data), (a,), lambda g: (g * sign,))


def pointwise(op: str, *args, alpha: float = 0.1) -> Tensor:
    """Dispatch a named elementwise op (sigmoid, leaky_relu, tanh, add, mul, sub)."""
    unary = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "abs": abs_}
    binary = {"add": add, "mul": mul, "sub": sub}
    if op in unary:
        return unary[op](as_tensor(args[0]))
    if op == "leaky_relu":
        return leaky_relu(as_tensor(args[0]), alpha)
    if op in binary:
        return binary[op](*args)
    raise ConfigurationError(f"unknown pointwise op {op!r}")


# -- reductions and shape ops ------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return _node(np.array(a.data[index]), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _node(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    return _node(
        np.stack([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.moveaxis(g, axis, 0)),
    )


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Explicit broadcast; the only place size-1 axes are expanded."""
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise ConfigurationError(f"cannot broadcast {a.shape} to {shape}") from exc
    lead = len(shape) - a.ndim

    def backward(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(a.shape) if n == 1 and g.shape[i] != 1)
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return _node(out, (a,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the frame (last) axis: (..., C, T) -> (..., C)."""
    if x.shape[-1] < 1:
        raise PreconditionError("global_avg_pool needs at least one frame")
    return mean(x, axis=-1)


def gather_rows(candidates: Sequence[Tensor], index: np.ndarray) -> Tensor:
    """Row r of the result is row r of ``candidates[index[r]]``."""
    index = np.asarray(index)
    _branch(index)
    stacked = np.stack([c.data for c in candidates])
    rows = np.arange(stacked.shape[1])
    out = stacked[index, rows]

    def backward(g):
        grads = []
        for i in range(len(candidates)):
            mask = (index == i).reshape((-1,) + (1,) * (g.ndim - 1))
            grads.append(g * mask if mask.any() else None)
        return tuple(grads)

    return _node(out, candidates, backward)


# -- linear algebra ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ConfigurationError(f"linear: input features {x.shape[-1]} != weight in {weight.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        gx = g @ weight.data
        gw = np.tensordot(g, x.data, axes=(lead, lead))
        gb = g.sum(axis=lead) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, backward)


def weight_norm(direction: Tensor, magnitude: Tensor, axis: int = 0) -> Tensor:
    """Effective weight ``magnitude * direction / ||direction||`` per output channel."""
    v = direction.data
    reduce_axes = tuple(i for i in range(v.ndim) if i != axis)
    shape = [1] * v.ndim
    shape[axis] = v.shape[axis]
    if magnitude.data.size != v.shape[axis]:
        raise ConfigurationError(
            f"weight_norm: {magnitude.data.size} magnitudes for {v.shape[axis]} output channels"
        )
    norm = np.sqrt((v * v).sum(axis=reduce_axes, keepdims=True))
    g = magnitude.data.reshape(shape)
    w = g * v / norm

    def backward(grad):
        dot = (grad * v).sum(axis=reduce_axes, keepdims=True)
        dg = (dot / norm).reshape(magnitude.shape)
        dv = g / norm * (grad - dot * v / (norm * norm))
        return (dv, dg)

    return _node(w, (direction, magnitude), backward)


# -- convolutions -------------------------------------------------------------

def conv_output_length(frames: int, kernel: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    return (frames + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def _im2col(xp: np.ndarray, kernel: int, stride: int, dilation: int, t_out: int) -> np.ndarray:
    # xp: (B, G, Cg, Tp) -> (B, G, Cg*K, Tout)
    span = dilation * (kernel - 1) + 1
    win = sliding_window_view(xp, span, axis=-1)[..., : stride * (t_out - 1) + 1 : stride, ::dilation]
    b, g, cg = xp.shape[:3]
    return np.ascontiguousarray(np.swapaxes(win, -1, -2)).reshape(b, g, cg * kernel, t_out)


def _col2im(cols: np.ndarray, kernel: int, stride: int, dilation: int, t_pad: int) -> np.ndarray:
    # inverse scatter of _im2col: (B, G, Cg*K, Tout) -> (B, G, Cg, Tp)
    b, g, ck, t_out = cols.shape
    cg = ck // kernel
    cols = cols.reshape(b, g, cg, kernel, t_out)
    out = np.zeros((b, g, cg, t_pad), dtype=cols.dtype)
    for k in range(kernel):
        start = k * dilation
        out[..., start : start + stride * (t_out - 1) + 1 : stride] += cols[:, :, :, k, :]
    return out


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise ConfigurationError(f"expected (batch, channels, frames), got shape {x.shape}")
    return x, False


def conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    dilation: int = 1,
    groups: int = 1,
    padding: int = 0,
) -> Tensor:
    """Grouped, strided, dilated 1-D cross-correlation.

    ``x`` is (B, C_in, T) or (C_in, T); ``weight`` is (C_out, C_in/groups, K).
    """
    x, squeeze = _as_batched(as_tensor(x))
    weight = as_tensor(weight)
    batch, c_in, frames = x.shape
    c_out, cg, kernel = weight.shape
    if c_in % groups or c_out % groups or cg * groups != c_in:
        raise ConfigurationError(
            f"conv1d: input channels {c_in}, weight {weight.shape}, groups {groups} are inconsistent"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ConfigurationError(f"conv1d: bias shape {bias.shape} != ({c_out},)")
    t_out = conv_output_length(frames, kernel, stride, padding, dilation)
    if t_out < 1:
        raise ConfigurationError(
            f"conv1d: {frames} frames too short for kernel {kernel}, dilation {dilation}, padding {padding}"
        )
    og = c_out // groups
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))).reshape(batch, groups, cg, -1)
    cols = _im2col(xp, kernel, stride, dilation, t_out)
    w = weight.data.reshape(groups, og, cg * kernel)
    out = np.matmul(w, cols).reshape(batch, c_out, t_out)
    if bias is not None:
        out = out + bias.data[:, None]

    def backward(g):
        gg = g.reshape(batch, groups, og, t_out)
        gw = np.matmul(gg, np.swapaxes(cols, -1, -2)).sum(axis=0).reshape(weight.shape)
        gcols = np.matmul(np.swapaxes(w, -1, -2), gg)
        gxp = _col2im(gcols, kernel, stride, dilation, xp.shape[-1]).reshape(batch, c_in, -1)
        gx = gxp[..., padding : padding + frames]
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    out_t = _node(out, parents, backward)
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


def conv_transpose_output_length(frames: int, kernel: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    return (frames - 1) * stride - 2 * padding + dilation * (kernel - 1) + 1


def conv_transpose1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """Adjoint of :func:`conv1d` (groups=1); ``weight`` is (C_in, C_out, K)."""
    x, squeeze = _as_batched(as_tensor(x))
    weight = as_tensor(weight)
    batch, c_in, frames = x.shape
    w_in, c_out, kernel = weight.shape
    if w_in != c_in:
        raise ConfigurationError(f"conv_transpose1d: input channels {c_in} != weight {weight.shape}")
    if bias is not None and bias.shape != (c_out,):
        raise ConfigurationError(f"conv_transpose1d: bias shape {bias.shape} != ({c_out},)")
    t_full = (frames - 1) * stride + dilation * (kernel - 1) + 1
    t_out = t_full - 2 * padding
    if t_out < 1:
        raise ConfigurationError(f"conv_transpose1d: padding {padding} removes every frame")
    # (C_out*K, C_in) so that columns scatter exactly like conv1d's input gradient
    w = np.ascontiguousarray(np.transpose(weight.data, (1, 2, 0))).reshape(c_out * kernel, c_in)
    cols = np.matmul(w, x.data)[:, None]
    full = _col2im(cols, kernel, stride, dilation, t_full).reshape(batch, c_out, t_full)
    out = full[..., padding : padding + t_out]
    if bias is not None:
        out = out + bias.data[:, None]

    def backward(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (padding, padding)))[:, None]
        gcols = _im2col(gfull, kernel, stride, dilation, frames)[:, 0]
        gx = np.matmul(w.T, gcols)
        gw = np.matmul(gcols, np.swapaxes(x.data, -1, -2)).sum(axis=0)
        gw = np.transpose(gw.reshape(c_out, kernel, c_in), (2, 0, 1))
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    out_t = _node(np.ascontiguousarray(out), parents, backward)
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
