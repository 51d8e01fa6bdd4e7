"""Dense tensors with reverse-mode automatic differentiation.

Deliberately small: only the operations the branch architectures and
training losses need. Values are float32 by default (float64 is supported
so numerical checks can run through the identical code paths). Forward
results are plain numpy arrays wrapped in :class:`Tensor`; every op that
participates in a gradient records its parents and a closure that maps the
output gradient to parent gradients. ``Tensor.backward`` replays those
closures in exact reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class NonFiniteGradientError(RuntimeError):
    """Raised when an optimizer step encounters a NaN or infinite gradient."""


def _as_array(data, dtype) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float32)


class Tensor:
    """N-dimensional array plus an optional gradient accumulator.

    ``requires_grad`` marks leaves (parameters, probed inputs) whose
    gradient should be retained by ``backward``. Interior nodes created by
    ops inherit the flag from their parents. A tensor written by an op is
    never mutated afterwards; optimizers update parameter ``data`` in place
    only between graph evaluations.
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 name: str = ""):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    # -- construction used by ops ------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...],
                 backward: Callable) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out.name = ""
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic protocol ------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other): return add(self, _wrap(other, self))
    def __radd__(self, other): return add(_wrap(other, self), self)
    def __sub__(self, other): return sub(self, _wrap(other, self))
    def __rsub__(self, other): return sub(_wrap(other, self), self)
    def __mul__(self, other): return mul(self, _wrap(other, self))
    def __rmul__(self, other): return mul(_wrap(other, self), self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)

    def square(self) -> "Tensor":
        return mul(self, self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self) -> "Tensor":
        return mean(self)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])

    # -- reverse-mode sweep ------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``grad`` of every requires_grad tensor.

        ``self`` must be scalar. Repeated calls without ``zero_grad`` add up.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in flowing:
                    flowing[key] = flowing[key] + pg
                else:
                    flowing[key] = pg


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype), requires_grad=False)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise ops ------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._from_op(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._from_op(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return Tensor._from_op(data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar (no tensor allocated for the constant)."""
    f = a.data.dtype.type(factor)
    return Tensor._from_op(a.data * f, (a,), lambda g: (g * f,))


def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    mask = a.data > 0
    data = np.where(mask, a.data, a.data.dtype.type(0))

    def backward(g):
        return (g * mask,)

    return Tensor._from_op(data, (a,), backward)


_SQRT_GRAD_FLOOR = 1e-6


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root.

    The backward pass clamps the denominator at a small floor so chains of
    the form d = sqrt(sum((x-y)^2)) stay finite when x == y; the clamped
    slope is annihilated by the zero inner gradient there.
    """
    data = np.sqrt(a.data)

    def backward(g):
        return (g / (2.0 * np.maximum(data, a.data.dtype.type(_SQRT_GRAD_FLOOR))),)

    return Tensor._from_op(data, (a,), backward)


# -- reductions / reshaping ------------------------------------------------------


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    data = np.asarray(data, dtype=a.data.dtype)

    def backward(g):
        g = np.asarray(g, dtype=a.data.dtype)
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return Tensor._from_op(data, (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return scale(tensor_sum(a), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.data.shape),)

    return Tensor._from_op(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op(data, (a, b), backward)


# -- layer primitives ------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x[N,F] @ weight[G,F]^T + bias[G]."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ValueError(
            f"linear expects 2-D input and weight, got {x.data.shape} and "
            f"{weight.data.shape}")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(
            f"linear feature dims disagree: input {x.data.shape} vs weight "
            f"{weight.data.shape}")
    if bias.data.shape != (weight.data.shape[0],):
        raise ValueError(
            f"linear bias shape {bias.data.shape} does not match weight "
            f"{weight.data.shape}")
    data = x.data @ weight.data.T + bias.data

    def backward(g):
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    return Tensor._from_op(data, (x, weight, bias), backward)


def _conv_windows(padded: np.ndarray, kh: int, kw: int, stride: int,
                  out_h: int, out_w: int) -> np.ndarray:
    n, c = padded.shape[:2]
    sn, sc, sh, sw = padded.strides
    return np.lib.stride_tricks.as_strided(
        padded,
        shape=(n, c, out_h, out_w, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1,
           pad: int = 0) -> Tensor:
    """Cross-correlation of x[N,C,H,W] with weight[K,C,kh,kw] plus bias[K]."""
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(
            f"conv2d expects 4-D input and weight, got {x.data.shape} and "
            f"{weight.data.shape}")
    n, c, h, w = x.data.shape
    k, wc, kh, kw = weight.data.shape
    if wc != c:
        raise ValueError(
            f"conv2d channel mismatch: input {x.data.shape} vs weight "
            f"{weight.data.shape}")
    if bias.data.shape != (k,):
        raise ValueError(
            f"conv2d bias shape {bias.data.shape} does not match weight "
            f"{weight.data.shape}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ValueError(
            f"conv2d kernel {kh}x{kw} exceeds padded input "
            f"{h + 2 * pad}x{w + 2 * pad}")
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1

    if pad:
        padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.data.dtype)
        padded[:, :, pad:pad + h, pad:pad + w] = x.data
    else:
        padded = x.data
    windows = _conv_windows(padded, kh, kw, stride, out_h, out_w)
    data = np.einsum("nchwuv,kcuv->nkhw", windows, weight.data,
                     optimize=True) + bias.data[None, :, None, None]
    data = np.ascontiguousarray(data, dtype=x.data.dtype)

    def backward(g):
        gw = np.einsum("nkhw,nchwuv->kcuv", g, windows, optimize=True)
        gb = g.sum(axis=(0, 2, 3))
        gx_pad = np.zeros_like(padded)
        for u in range(kh):
            for v in range(kw):
                patch = np.einsum("nkhw,kc->nchw", g, weight.data[:, :, u, v],
                                  optimize=True)
                gx_pad[:, :, u:u + stride * out_h:stride,
                       v:v + stride * out_w:stride] += patch
        if pad:
            gx = gx_pad[:, :, pad:pad + h, pad:pad + w]
        else:
            gx = gx_pad
        return gx, gw.astype(weight.data.dtype), gb.astype(bias.data.dtype)

    return Tensor._from_op(data, (x, weight, bias), backward)


def maxpool2d(x: Tensor, k: int, stride: Optional[int] = None) -> Tensor:
    """k x k max pooling; gradient flows to the argmax only.

    Ties route to the first maximal element in row-major window order,
    which keeps repeated backward passes bit-identical.
    """
    if k < 1:
        raise ValueError(f"maxpool2d window must be >= 1, got {k}")
    if x.data.ndim != 4:
        raise ValueError(f"maxpool2d expects 4-D input, got {x.data.shape}")
    stride = k if stride is None else stride
    if stride < 1:
        raise ValueError(f"maxpool2d stride must be >= 1, got {stride}")
    n, c, h, w = x.data.shape
    if k > h or k > w:
        raise ValueError(
            f"maxpool2d window {k} exceeds spatial extent {h}x{w}")
    out_h = (h - k) // stride + 1
    out_w = (w - k) // stride + 1
    windows = _conv_windows(x.data, k, k, stride, out_h, out_w)
    flat = windows.reshape(n, c, out_h, out_w, k * k)
    argmax = flat.argmax(axis=-1)  # first max in row-major scan
    data = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    data = np.ascontiguousarray(data)

    def backward(g):
        gx = np.zeros_like(x.data)
        ni, ci, hi, wi = np.indices((n, c, out_h, out_w), sparse=False)
        rows = hi * stride + argmax // k
        cols = wi * stride + argmax % k
        np.add.at(gx, (ni, ci, rows, cols), g)
        return (gx,)

    return Tensor._from_op(data, (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator,
            training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p)
    factor = x.data.dtype.type(1.0 / (1.0 - p))
    mask = keep.astype(x.data.dtype) * factor
    data = x.data * mask

    def backward(g):
        return (g * mask,)

    return Tensor._from_op(data, (x,), backward)


def softmax_xent(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    if logits.data.ndim != 2:
        raise ValueError(f"softmax_xent expects 2-D logits, got {logits.data.shape}")
    labels = np.asarray(labels)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ValueError(
            f"softmax_xent labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(
            f"softmax_xent labels must lie in [0, {c}), got range "
            f"[{labels.min()}, {labels.max()}]")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    softmax = exp / exp.sum(axis=1, keepdims=True)
    logp = shifted - np.log(exp.sum(axis=1, keepdims=True))
    data = np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.data.dtype)

    def backward(g):
        grad = softmax.copy()
        grad[np.arange(n), labels] -= 1.0
        return (g * grad / n,)

    return Tensor._from_op(data, (logits,), backward)


# -- optimizer -------------------------------------------------------------------


def sgd_step(params: Iterable[Tensor], lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0,
             velocities: Optional[dict[int, np.ndarray]] = None) -> dict[int, np.ndarray]:
    """One SGD step: v <- momentum*v + grad + decay*param; param <- param - lr*v.

    Returns the velocity table so callers can carry it between steps.
    Raises :class:`NonFiniteGradientError` before touching any parameter if
    a gradient contains NaN or infinity.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    params = [p for p in params if p.grad is not None]
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NonFiniteGradientError(
                f"non-finite gradient on parameter {p.name or '<unnamed>'} "
                f"(shape {p.shape})")
    if velocities is None:
        velocities = {}
    for p in params:
        v = velocities.get(id(p))
        step = p.grad + weight_decay * p.data if weight_decay else p.grad
        v = step if v is None else momentum * v + step
        velocities[id(p)] = v
        p.data = p.data - lr * v
    return velocities


class SGD:
    """Stateful wrapper around :func:`sgd_step` with a persistent velocity table."""

    def __init__(self, params: Iterable[Tensor], lr: float,
                 momentum: float = 0.9, weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocities: dict[int, np.ndarray] = {}

    def step(self) -> None:
        sgd_step(self.params, self.lr, self.momentum, self.weight_decay,
                 self._velocities)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
