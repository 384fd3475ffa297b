"""Minimal reverse-mode automatic differentiation on numpy buffers.

Written from scratch on purpose: the classifier's training loop must be
fully inspectable and reproducible down to the gradient computation, so
no external deep learning framework is involved. Tensors record their
parents and a backward closure; backward() replays the graph in reverse
topological order and accumulates gradients into .grad.

Conventions: float32 by default, float64 for gradient checking; shapes
follow numpy broadcasting, with gradients summed back to each parent's
shape (unbroadcast).
"""
from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"

    # --- graph plumbing ---

    def _accumulate(self, grad: np.ndarray, fresh: bool = False) -> None:
        # fresh: caller hands over a temporary it exclusively owns, so it
        # can be adopted without the defensive copy (grads get += later)
        if self.grad is None:
            if fresh and grad.dtype == self.data.dtype and grad.base is None:
                self.grad = grad
            else:
                self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self) -> None:
        """Reverse-mode accumulation from this (scalar) tensor."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:  # iterative DFS: graphs are deep for long sequences
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:  # intermediates are never read again
                    node.grad = None

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # --- arithmetic ---

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        out = Tensor(self.data + other.data, parents=(self, other))

        def backward(g):
            if self.requires_grad:
                mine = _unbroadcast(g, self.shape)
                self._accumulate(mine, fresh=mine is not g)
            if other.requires_grad:
                theirs = _unbroadcast(g, other.shape)
                other._accumulate(theirs, fresh=theirs is not g)

        out._backward = backward
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        out = Tensor(self.data * other.data, parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape), fresh=True)
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape), fresh=True)

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) + (-self)

    def __truediv__(self, other):
        other = _as_tensor(other, self.dtype)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return _as_tensor(other, self.dtype) * self ** -1.0

    def __pow__(self, exponent: float):
        out = Tensor(self.data ** exponent, parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * exponent * self.data ** (exponent - 1.0), fresh=True)

        out._backward = backward
        return out

    def __matmul__(self, other):
        other = _as_tensor(other, self.dtype)
        out = Tensor(self.data @ other.data, parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(
                    _unbroadcast(g @ other.data.swapaxes(-1, -2), self.shape), fresh=True)
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(self.data.swapaxes(-1, -2) @ g, other.shape), fresh=True)

        out._backward = backward
        return out

    # --- shape ops ---

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(self.shape))

        out._backward = backward
        return out

    def swapaxes(self, a: int, b: int):
        out = Tensor(self.data.swapaxes(a, b), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.swapaxes(a, b))

        out._backward = backward
        return out

    def broadcast_to(self, shape: tuple[int, ...]):
        out = Tensor(np.broadcast_to(self.data, shape).copy(), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))

        out._backward = backward
        return out

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], parents=(self,))

        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, idx, g)
                self._accumulate(full)

        out._backward = backward
        return out

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))

        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # --- nonlinearities ---

    def tanh(self):
        y = np.tanh(self.data)
        out = Tensor(y, parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * (1.0 - y * y), fresh=True)

        out._backward = backward
        return out

    def gelu(self):
        # tanh approximation; smooth everywhere so finite differences agree
        c = float(np.sqrt(2.0 / np.pi))
        x = self.data
        x2 = x * x
        inner = c * (x + 0.044715 * (x2 * x))
        t = np.tanh(inner)
        y = 0.5 * x * (1.0 + t)
        out = Tensor(y, parents=(self,))

        def backward(g):
            if self.requires_grad:
                d_inner = c * (1.0 + (3 * 0.044715) * x2)
                dydx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
                self._accumulate(g * dydx, fresh=True)

        out._backward = backward
        return out


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(data, parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(g[tuple(index)])

    out._backward = backward
    return out


def masked_softmax(logits: Tensor, valid: np.ndarray) -> Tensor:
    """Softmax along the last axis restricted to `valid` (broadcastable bool).

    Invalid columns come out exactly 0; valid columns of each row sum to 1.
    Rows must have at least one valid column.
    """
    x = logits.data
    valid_b = np.broadcast_to(valid, x.shape)
    y = np.where(valid_b, x, -np.inf)
    m = y.max(axis=-1, keepdims=True)
    np.subtract(y, m, out=y)
    np.exp(y, out=y)  # exp(-inf) is exactly 0, which masks pad columns
    s = y.sum(axis=-1, keepdims=True)
    np.divide(y, s, out=y)
    out = Tensor(y, parents=(logits,))

    def backward(g):
        if logits.requires_grad:
            inner = (g * y).sum(axis=-1, keepdims=True)
            logits._accumulate(y * (g - inner), fresh=True)

    out._backward = backward
    return out


def log_softmax(logits: Tensor) -> Tensor:
    """Numerically stable log-softmax along the last axis."""
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = (z - lse).astype(x.dtype)
    out = Tensor(y, parents=(logits,))

    def backward(g):
        if logits.requires_grad:
            soft = np.exp(y)
            logits._accumulate(g - soft * g.sum(axis=-1, keepdims=True), fresh=True)

    out._backward = backward
    return out


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rng is None (inference) or p == 0."""
    if rng is None or p <= 0.0:
        return x
    rand_dtype = np.float32 if x.dtype == np.float32 else np.float64
    keep = rng.random(x.shape, dtype=rand_dtype)
    # floor(u + 1 - p) is 1 where u >= p and 0 otherwise; built in place
    np.add(keep, 1.0 - p, out=keep)
    np.floor(keep, out=keep)
    np.multiply(keep, 1.0 / (1.0 - p), out=keep)
    return x * Tensor(keep)


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Adam:
    """Adam optimizer over a fixed parameter list."""

    def __init__(self, params: list[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data -= (self.lr * update).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment buffers for persistence, keyed by slot index."""
        out: dict[str, np.ndarray] = {"t": np.array([self.t], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out


def finite_difference_check(loss_fn, params: list[Tensor], step: float = 1e-5,
                            scale_floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn() must be deterministic and use the current parameter values;
    parameters should be float64 for the comparison to be meaningful.
    Coordinates where both gradients are below scale_floor are compared
    absolutely (the relative ratio of two near-zero values is all roundoff).
    """
    loss = loss_fn()
    for p in params:
        p.grad = None
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            diff = abs(numeric - gflat[i])
            scale = max(abs(numeric), abs(gflat[i]))
            worst = max(worst, diff / scale if scale >= scale_floor else diff)
    return worst
