"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Every operation returns a :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. Calling
:func:`backward` on a scalar walks the recorded graph in reverse
topological order. Nodes whose inputs do not require gradients are not
recorded, so constant sub-expressions cost nothing on the way back.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, StateError

_FLOAT = np.float64
_recording = True


@contextmanager
def no_grad():
    """Evaluate without recording the tape (inference only)."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (),
                 backward_fn: Callable | None = None):
        self.data = np.asarray(data, dtype=_FLOAT)
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad: np.ndarray | None = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if _recording and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward_fn)
    return Tensor(data)


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return _node(out, (a, b), back)


def matmul(a, b) -> Tensor:
    """Batched matrix product; both operands must have at least two axes."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def back(g):
        return (_unbroadcast(g @ _swap(bd), ad.shape),
                _unbroadcast(_swap(ad) @ g, bd.shape))

    return _node(ad @ bd, (a, b), back)


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _node(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (0.5 * g / out,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,))


# ------------------------------------------------------------ nonlinearities

def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def expit(x: np.ndarray) -> np.ndarray:
    # tanh form: stable for large |x| and faster than scipy.special.expit here
    out = np.tanh(0.5 * x)
    out += 1.0
    out *= 0.5
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def maximum(a, floor: float) -> Tensor:
    """Elementwise ``max(floor, a)``; the gradient is zero where the floor wins."""
    a = as_tensor(a)
    mask = a.data > floor
    return _node(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def where(cond: np.ndarray, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape
    return _node(np.where(cond, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa),
                            _unbroadcast(np.where(cond, 0.0, g), sb)))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    out = ez / ez.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), back)


# ---------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


# ------------------------------------------------------------------- shaping

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def _is_fancy(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    fancy = _is_fancy(index)

    def back(g):
        full = np.zeros(shape, dtype=_FLOAT)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _node(a.data[index], (a,), back)


def take_rows(a, rows: np.ndarray, axis: int) -> Tensor:
    """``np.take(a, rows, axis)`` for a 2-D index array whose rows hold no
    repeated entries (so each row scatters back without collisions)."""
    a = as_tensor(a)
    rows = np.asarray(rows)
    if rows.ndim != 2:
        raise ValueError("take_rows expects a 2-D index array")
    axis = axis % a.ndim
    shape = a.shape

    def back(g):
        full = np.zeros(shape, dtype=_FLOAT)
        dst = np.moveaxis(full, axis, 0)
        src = np.moveaxis(g, (axis, axis + 1), (0, 1))
        for r, idx in enumerate(rows):
            dst[idx] += src[r]
        return (full,)

    return _node(np.take(a.data, rows, axis=axis), (a,), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


# ----------------------------------------------------------- fused LSTM step

def lstm_step(x, hc, w_x, w_h, b) -> Tensor:
    """One LSTM update on a packed state ``hc = [hidden | cell]``.

    Shapes broadcast over leading axes: ``x`` is ``(..., 1)``, ``hc`` is
    ``(..., 2H)``, ``w_x`` is ``(..., 1, 4H)``, ``w_h`` is ``(..., H, 4H)`` and
    ``b`` is ``(..., 1, 4H)`` (or ``(4H,)``). Gate blocks along the last axis
    are input, forget, output (all sigmoid) then candidate (tanh). Returns
    the packed next state.
    """
    x, hc, w_x, w_h, b = (as_tensor(t) for t in (x, hc, w_x, w_h, b))
    hidden = w_h.shape[-2]
    if hc.shape[-1] != 2 * hidden or w_h.shape[-1] != 4 * hidden or w_x.shape[-1] != 4 * hidden:
        raise ValueError(
            f"lstm_step shape mismatch: hc {hc.shape}, w_x {w_x.shape}, w_h {w_h.shape}")
    xd, wxd, whd = x.data, w_x.data, w_h.data
    h, c = hc.data[..., :hidden], hc.data[..., hidden:]
    z = h @ whd
    z += xd * wxd
    z += b.data
    gates = expit(z[..., :3 * hidden])
    i, f, o = gates[..., :hidden], gates[..., hidden:2 * hidden], gates[..., 2 * hidden:]
    gc = np.tanh(z[..., 3 * hidden:])
    c2 = f * c
    c2 += i * gc
    tc = np.tanh(c2)
    out = np.concatenate([o * tc, c2], axis=-1)

    def back(g):
        gh2 = g[..., :hidden]
        gc2 = gh2 * o
        gc2 *= 1.0 - tc * tc
        gc2 += g[..., hidden:]
        dgates = np.concatenate([gc2 * gc, gc2 * c, gh2 * tc], axis=-1)
        dgates *= gates
        dgates *= 1.0 - gates
        dz = np.concatenate([dgates, gc2 * i * (1.0 - gc * gc)], axis=-1)
        gx = _unbroadcast((dz * wxd).sum(axis=-1, keepdims=True), xd.shape)
        gwx = _unbroadcast(xd * dz, wxd.shape)
        gwh = _unbroadcast(_swap(h) @ dz, whd.shape)
        gb = _unbroadcast(dz, b.shape)
        ghc = np.concatenate([_unbroadcast(dz @ _swap(whd), h.shape),
                              _unbroadcast(gc2 * f, c.shape)], axis=-1)
        return gx, ghc, gwx, gwh, gb

    return _node(out, (x, hc, w_x, w_h, b), back)


# ------------------------------------------------------------------ backward

def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if not isinstance(loss, Tensor) or not loss.requires_grad:
        raise StateError("backward called without a recorded forward pass")
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError(f"non-finite loss {loss.data!r}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=_FLOAT)
            else:
                np.add(node.grad, g, out=node.grad)
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg


def check_finite(t: Tensor | np.ndarray, what: str) -> None:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite values in {what}")


# ------------------------------------------------------- finite differences

def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``fn()`` w.r.t. ``param.data``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        up = float(fn().data)
        flat[j] = orig - eps
        down = float(fn().data)
        flat[j] = orig
        out[j] = (up - down) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((diff / scale).max()) if diff.size else 0.0


def gradcheck(fn: Callable[[], Tensor], params: dict[str, Tensor],
              eps: float = 1e-5) -> dict[str, float]:
    """Compare reverse-mode gradients with central differences.

    Returns the maximum relative error per named parameter.
    """
    for p in params.values():
        p.grad = np.zeros_like(p.data)
    backward(fn())
    report = {}
    for name, p in params.items():
        analytic = p.grad.copy()
        report[name] = relative_error(analytic, numerical_gradient(fn, p, eps))
    return report
