"""Minimal reverse-mode differentiation on numpy arrays.

Every op builds a node holding its output array, its parents and a closure
that pushes the output gradient back to the parents. ``Tensor.backward``
walks the graph in reverse topological order. Broadcasting follows numpy;
gradients are summed back to the operand shape.
"""

from __future__ import annotations

import contextlib
import os
from typing import Callable, Iterable, Sequence

import numpy as np

_DEBUG = os.environ.get("NLDF_DEBUG", "") not in ("", "0")
_GRAD_ENABLED = True


class NonFiniteError(FloatingPointError):
    pass


def set_debug(flag: bool) -> None:
    """Toggle the finite-value assertion run after every op."""
    global _DEBUG
    _DEBUG = bool(flag)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "",
                 _parents: tuple = (), _backward: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` on every reachable tensor that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        # Intermediate gradients live only for this pass; leaves keep accumulating.
        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """Trainable leaf with Adam moment buffers and its own step count."""

    __slots__ = ("m", "v", "step")

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, copy=True), requires_grad=True, name=name)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _make(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {backward.__qualname__}")
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype if isinstance(b, Tensor) else None))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), backward)


def square(a: Tensor) -> Tensor:
    def backward(g):
        return (2.0 * g * a.data,)

    return _make(a.data * a.data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _make(out, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        return (g.T,)

    return _make(a.data.T, (a,), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    def backward(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), backward)


def broadcast_to(a: Tensor, shape: tuple) -> Tensor:
    def backward(g):
        return (_unbroadcast(g, a.shape),)

    return _make(np.broadcast_to(a.data, shape), (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def getitem(a: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return tuple(out)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    pos = a.data > 0
    out = np.where(pos, a.data, slope * a.data)

    def backward(g):
        return (np.where(pos, g, slope * g),)

    return _make(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so large |x| never overflows exp
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (a,), backward)


def mse(pred: Tensor, target) -> Tensor:
    """Mean over all elements of the squared difference."""
    return mean(square(sub(pred, target)))


# ----------------------------------------------------------------- layers


class Module:
    """Owns parameters in a fixed, named order (used by checkpoints and Adam)."""

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out: list[tuple[str, Parameter]] = []
        for key, val in self.__dict__.items():
            if isinstance(val, Parameter):
                out.append((key, val))
            elif isinstance(val, Module):
                out.extend((f"{key}.{n}", p) for n, p in val.named_parameters())
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for i, sub_mod in enumerate(val):
                    out.extend((f"{key}.{i}.{n}", p) for n, p in sub_mod.named_parameters())
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def he_uniform(rng: np.random.Generator, fan_in: int, shape: tuple, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Dense(Module):
    """y = x Wᵀ + b with W of shape (out, in)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float64, zero_init: bool = False):
        w = np.zeros((n_out, n_in), dtype) if zero_init else he_uniform(rng, max(n_in, 1), (n_out, n_in), dtype)
        self.W = Parameter(w)
        self.b = Parameter(np.zeros(n_out, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return dense_forward(self.W, self.b, x)


def dense_forward(W: Tensor, b: Tensor, x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ValueError(f"dense input {x.shape} incompatible with weight {W.shape}")
    return add(matmul(x, transpose(W)), b)


class ResBlock(Module):
    """x + Dense₂(act(Dense₁(x))); Dense₂ starts at zero so the block starts as identity."""

    def __init__(self, width: int, rng: np.random.Generator, dtype=np.float64,
                 zero_last: bool = True, slope: float = 0.01):
        self.width = width
        self.slope = slope
        self.fc1 = Dense(width, width, rng, dtype)
        self.fc2 = Dense(width, width, rng, dtype, zero_init=zero_last)

    def __call__(self, x: Tensor) -> Tensor:
        return res_block_forward(self, x)


def res_block_forward(block: ResBlock, x: Tensor) -> Tensor:
    if x.shape[-1] != block.width:
        raise ValueError(f"residual block width {block.width} != input width {x.shape[-1]}")
    return add(x, block.fc2(leaky_relu(block.fc1(x), block.slope)))


# -------------------------------------------------------------- optimizer


class Adam:
    """Bias-corrected Adam; each parameter keeps its own step count."""

    def __init__(self, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, params: Iterable[Parameter], lr: float | None = None) -> None:
        adam_step(params, self.lr if lr is None else lr, self.beta1, self.beta2, self.eps)


def adam_step(params: Iterable[Parameter], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    for p in params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        p.step += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


# ------------------------------------------------------------ grad check


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5,
               max_coords: int | None = 64, seed: int = 0) -> float:
    """Max relative error between backward() and central differences.

    ``loss_fn`` rebuilds the graph from the current parameter values. At
    most ``max_coords`` coordinates per parameter are checked, chosen with
    ``seed``. Relative error is |a - n| / max(|a| + |n|, 1e-8).
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("grad_check requires float64 parameters")
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            num = (up - down) / (2 * eps)
            a = ga.reshape(-1)[i]
            rel = abs(a - num) / max(abs(a) + abs(num), 1e-8)
            worst = max(worst, rel)
    for p in params:
        p.grad = None
    return worst
