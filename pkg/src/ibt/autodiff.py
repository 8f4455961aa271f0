"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is 64-bit and row-major. Each differentiable operation records a
graph node holding its parent tensors and a backward closure; ``backward``
walks the graph once in reverse topological order and accumulates gradients
into every reachable tensor that requires them. Tensors built from constants
(``requires_grad=False`` and no differentiable parents) carry no node, so
constant subgraphs are pruned automatically.

Broadcasting follows numpy's trailing-dimension alignment rules.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import (CheckpointError, ContractError, DimensionError,
                     DomainError, NumericError)


class Node:
    """One step in the differentiation graph.

    ``backward_fn(grad)`` maps the output gradient to a tuple of parent
    gradients (``None`` for parents that do not require grad).
    """

    __slots__ = ("parents", "backward_fn", "op")

    def __init__(self, parents: tuple["Tensor", ...],
                 backward_fn: Callable[[np.ndarray], tuple], op: str):
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op


class Tensor:
    """A dense float64 array, optionally attached to the differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, node: Node | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node = node

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
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{tag})"

    # operator sugar; the module-level functions do the real work
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable tensor. Always requires grad; named when registered in a model."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...],
          backward_fn: Callable[[np.ndarray], tuple], op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, node=Node(parents, backward_fn, op))
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} do not broadcast")


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), backward, "mul")


def scale(x, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)

    def backward(g):
        return (g * c,)

    return _make(x.data * c, (x,), backward, "scale")


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def backward(g):
        return (g * (x.data > 0.0),)

    return _make(out, (x,), backward, "relu")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # stable on both tails
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    out[~pos] = e / (1.0 + e)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), backward, "sigmoid")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: empty tensor list")
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
                i != axis and t.shape[i] != ref[i] for i in range(len(ref))):
            raise DimensionError(
                f"concat axis {axis}: shapes {list(ref)} and {list(t.shape)} disagree off-axis")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        pieces = np.split(g, offsets, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(pieces, tensors))

    return _make(out, tuple(tensors), backward, "concat")


def broadcast_to(x, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast: cannot expand {list(x.shape)} to {list(shape)}")

    def backward(g):
        return (_unbroadcast(g, x.shape),)

    return _make(out, (x,), backward, "broadcast")


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), backward, "reshape")


def transpose(x, axes: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    inverse = np.argsort(axes)

    def backward(g):
        return (g.transpose(inverse),)

    return _make(x.data.transpose(axes), (x,), backward, "transpose")


# ---------------------------------------------------------------------------
# matmul

def matmul(a, b) -> Tensor:
    """Batched matrix product ``[..,M,K] x [..,K,P] -> [..,M,P]``.

    Batch dimensions must agree or broadcast from size 1.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must be at least 2-D, got {list(a.shape)} and {list(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions disagree for {list(a.shape)} x {list(b.shape)}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dimensions disagree for {list(a.shape)} x {list(b.shape)}")
    out = a.data @ b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return (ga, gb)

    return _make(out, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# softmax family

def softmax(x, axis: int) -> Tensor:
    """Max-subtracted exponential normalization along ``axis``."""
    x = _as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for shape {list(x.shape)}")
    if not np.isfinite(x.data).all():
        raise NumericError("softmax: non-finite input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), backward, "softmax")


def log_softmax(x, axis: int) -> Tensor:
    x = _as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"log_softmax: axis {axis} out of range for shape {list(x.shape)}")
    if not np.isfinite(x.data).all():
        raise NumericError("log_softmax: non-finite input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


# ---------------------------------------------------------------------------
# reductions

def _check_axis(x: Tensor, axis: int, op: str) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for shape {list(x.shape)}")
    return axis % x.ndim


def reduce_max(x, axis: int) -> tuple[Tensor, np.ndarray]:
    """Max along ``axis`` plus argmax indices; ties go to the lowest index,
    which also receives the whole gradient."""
    x = _as_tensor(x)
    axis = _check_axis(x, axis, "reduce_max")
    if x.shape[axis] == 0:
        raise DomainError(f"reduce_max: empty axis {axis} in shape {list(x.shape)}")
    idx = np.argmax(x.data, axis=axis)  # first occurrence = lowest index
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, (x,), backward, "reduce_max"), idx


def reduce_sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    if axis is not None:
        axis = _check_axis(x, axis, "reduce_sum")
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _make(out, (x,), backward, "reduce_sum")


def reduce_mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.size if axis is None else x.shape[_check_axis(x, axis, "reduce_mean")]
    if n == 0:
        raise DomainError("reduce_mean: empty reduction")
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# gather / scatter

def gather_rows(x, idx: np.ndarray) -> Tensor:
    """``out[i, j, :] = x[idx[i, j], :]`` for ``x`` of shape [N, D].

    Backward scatter-adds into the source rows, so duplicate indices
    accumulate additively.
    """
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"gather_rows: expected 2-D source, got shape {list(x.shape)}")
    idx = np.asarray(idx)
    if idx.ndim != 2 or not np.issubdtype(idx.dtype, np.integer):
        raise DimensionError("gather_rows: index table must be a 2-D integer array")
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: index out of range for {n} rows")
    out = x.data[idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx.ravel(), g.reshape(-1, x.shape[1]))
        return (gx,)

    return _make(out, (x,), backward, "gather_rows")


# ---------------------------------------------------------------------------
# batch normalization

def batch_norm(x, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool,
               eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Normalize over every axis except the last (channel) axis.

    Training mode uses batch statistics and updates the running buffers in
    place; eval mode uses the running buffers. ``gamma``/``beta`` are
    per-channel affine parameters.
    """
    x = _as_tensor(x)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,) or running_mean.shape != (c,):
        raise DimensionError(
            f"batch_norm: channel dim {c} does not match state of {running_mean.shape[0]} channels")
    axes = tuple(range(x.ndim - 1))
    n = int(np.prod([x.shape[i] for i in axes])) if axes else 1

    if training:
        mean = x.data.mean(axis=axes)
        centered = x.data - mean
        var = (centered * centered).mean(axis=axes)  # biased
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean
        var = running_var
        centered = x.data - mean

    inv_std = 1.0 / np.sqrt(var + eps)
    scale_vec = gamma.data * inv_std
    out = centered * scale_vec + beta.data

    def backward(g):
        g_sum = g.sum(axis=axes)
        gc_sum = (g * centered).sum(axis=axes)
        gg = gc_sum * inv_std if gamma.requires_grad else None
        gb = g_sum if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            if training:
                # d/dx of using batch statistics: remove the mean and
                # variance components of the gradient
                gx = (g - g_sum / n
                      - centered * (inv_std * inv_std * gc_sum / n)) * scale_vec
            else:
                gx = g * scale_vec
        return (gx, gg, gb)

    return _make(out, (x, gamma, beta), backward, "batch_norm")


# ---------------------------------------------------------------------------
# backward pass

def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor with ``requires_grad``.

    The loss must be a single-element tensor. Each graph node's backward rule
    runs exactly once, in reverse topological order. Gradients from repeated
    calls accumulate until ``zero_grad``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {list(loss.shape)}")
    if loss.node is None:
        if loss.requires_grad:
            seed = np.ones_like(loss.data)
            loss.grad = seed if loss.grad is None else loss.grad + seed
        return

    # iterative DFS for topological order
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

    accum: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = accum.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            # grad arrays are never mutated in place, so sharing is safe
            t.grad = g if t.grad is None else t.grad + g
        if t.node is None:
            continue
        parent_grads = t.node.backward_fn(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in accum:
                accum[key] = accum[key] + pg
            else:
                accum[key] = pg


# ---------------------------------------------------------------------------
# modules: parameter containers with train/eval modes

class Module:
    """Base class for parameterized blocks.

    Child modules and parameters are discovered by walking instance
    attributes (lists and tuples of modules included), in definition order.
    """

    def __init__(self):
        self.training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                full = f"{prefix}{name}"
                value.name = full
                yield full, value
        for name, child in self._children():
            yield from child.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray):
                yield f"{prefix}{name}", value
        for name, child in self._children():
            yield from child.named_buffers(prefix=f"{prefix}{name}.")

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters plus buffers, keyed by path; the checkpoint payload."""
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        own = {name: p for name, p in self.named_parameters()}
        buffers = dict(self.named_buffers())
        for name, arr in state.items():
            if name in own:
                target = own[name].data
            elif name in buffers:
                target = buffers[name]
            else:
                raise CheckpointError(f"unexpected entry '{name}'")
            if target.shape != arr.shape:
                raise CheckpointError(
                    f"shape mismatch for '{name}': model {list(target.shape)}, file {list(arr.shape)}")
            target[...] = arr
        missing = (set(own) | set(buffers)) - set(state)
        if missing:
            raise CheckpointError(f"missing entries: {sorted(missing)}")

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """uniform(-a, a) with a = 1/sqrt(fan_in)."""
    a = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-a, a, size=shape)
