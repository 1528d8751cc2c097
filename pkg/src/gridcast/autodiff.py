"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation on a :class:`Tensor` that depends on a tensor with
``requires_grad=True`` records a node holding its parents and a backward
closure. :func:`backward` sorts the recorded graph topologically, runs the
closures once each in reverse order, sums gradients over fan-out and then
frees the graph.

    >>> w = Tensor([1.0, -2.0], requires_grad=True)
    >>> grads = backward(sum(w * w))
    >>> grads[id(w)]
    array([ 2., -4.])
"""
from __future__ import annotations

import builtins
import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import DetachedGraph, NonScalarLoss, ShapeMismatch

DTYPE = np.float64

_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "__weakref__")

    # let numpy defer to our reflected operators
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @classmethod
    def from_op(cls, data, parents, backward_fn):
        """Create the output of an operation.

        ``backward_fn(grad)`` must return one gradient (or ``None``) per parent.
        The node is only recorded when some parent requires a gradient.
        """
        out = cls(data)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

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
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return Tensor.from_op(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return Tensor.from_op(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return Tensor.from_op(a.data * b.data, (a, b), backward)


def power(a, p):
    a = as_tensor(a)

    def backward(g):
        return (g * p * a.data ** (p - 1),)

    return Tensor.from_op(a.data ** p, (a,), backward)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor.from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor.from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * (1.0 - out * out),))


# --------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b):
    """Batched matrix product with broadcasting over leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatch(f"matmul: incompatible batch dims {a.shape} and {b.shape}") from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # fold batch dims instead of materializing per-batch products
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor.from_op(a.data @ b.data, (a, b), backward)


def transpose(a, axes=None):
    """Permute axes; by default swap the last two."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise ShapeMismatch(f"transpose needs at least 2 dims, got shape {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(np.transpose(a.data, axes), (a,),
                          lambda g: (np.transpose(g, inverse),))


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view shape {a.shape} as {tuple(shape)}") from None
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(a.shape),))


def _is_basic_index(key):
    keys = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, builtins.slice)) or k is None or k is Ellipsis
               for k in keys)


def slice_(a, key):
    """Indexing (basic slices or integer arrays) with scatter-add backward."""
    a = as_tensor(a)
    basic = _is_basic_index(key)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        return (full,)

    return Tensor.from_op(a.data[key], (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeMismatch(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        parts = np.split(g, bounds, axis=ax)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeMismatch(f"stack: shapes differ {sorted(shapes)}")

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))

    return Tensor.from_op(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


# --------------------------------------------------------------------------
# reductions and composite ops


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor.from_op(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a, axis=-1):
    """Softmax along ``axis``; entries equal to ``-inf`` get weight exactly 0."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (a,), backward)


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalize over the last dimension, then scale by ``gamma`` and shift by ``beta``."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    n = a.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeMismatch(f"layer_norm: input {a.shape} with gamma {gamma.shape}, beta {beta.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    lead = tuple(range(a.ndim - 1))

    def backward(g):
        ga = gg = gb = None
        if a.requires_grad:
            dxhat = g * gamma.data
            ga = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                            - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        if gamma.requires_grad:
            gg = (g * xhat).sum(axis=lead)
        if beta.requires_grad:
            gb = g.sum(axis=lead)
        return ga, gg, gb

    return Tensor.from_op(xhat * gamma.data + beta.data, (a, gamma, beta), backward)


def dropout(a, rate, training, rng=None):
    """Inverted dropout. Outside training (or at rate 0) the input is returned as is."""
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    rng = np.random.default_rng() if rng is None else rng
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return Tensor.from_op(a.data * mask, (a,), lambda g: (g * mask,))


def mse_loss(pred, target):
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        d = 2.0 * g * diff / n
        return (d if pred.requires_grad else None, -d if target.requires_grad else None)

    return Tensor.from_op(np.mean(diff * diff), (pred, target), backward)


# --------------------------------------------------------------------------
# backward pass


def _topological(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss):
    """Gradients of scalar ``loss`` with respect to every trainable leaf.

    Returns ``{id(leaf): ndarray}`` and also stores each gradient on
    ``leaf.grad``. The recorded graph is released afterwards.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = loss.shape if isinstance(loss, Tensor) else type(loss)
        raise NonScalarLoss(f"loss must be a scalar tensor, got shape {shape}")
    if not loss.requires_grad:
        raise DetachedGraph("loss does not depend on any tensor requiring a gradient")
    if loss._backward is None and not loss._parents:
        # a bare leaf
        loss.grad = np.ones_like(loss.data)
        return {id(loss): loss.grad}

    order = _topological(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                leaves[id(node)] = (node, g)
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
    out = {}
    for key, (node, g) in leaves.items():
        node.grad = g
        out[key] = g
    return out


# --------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    worst_rel_error: float
    passed: bool
    tol: float
    n_checked: int
    worst_location: tuple = ()
    failures: list = field(default_factory=list)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}: worst relative error {self.worst_rel_error:.3e} over "
                f"{self.n_checked} coordinates (tol {self.tol:g})")


def relative_error(analytic, numeric, floor=1e-6):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients from dominating."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(f, point, eps=1e-5, tol=1e-4, max_coords=None, seed=0):
    """Compare ``backward`` against central differences.

    ``f`` maps a list of tensors to a scalar tensor and ``point`` is a list of
    arrays. With ``max_coords`` only that many randomly chosen coordinates per
    array are perturbed.
    """
    arrays = [np.array(p, dtype=DTYPE) for p in point]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = f(leaves)
    grads = backward(loss)
    analytic = [grads.get(id(t), np.zeros_like(t.data)) for t in leaves]

    rng = np.random.default_rng(seed)
    worst, where, failures, n = 0.0, (), [], 0
    for k, a in enumerate(arrays):
        coords = np.arange(a.size)
        if max_coords is not None and a.size > max_coords:
            coords = np.sort(rng.choice(a.size, max_coords, replace=False))
        for j in coords:
            idx = np.unravel_index(j, a.shape)
            orig = a[idx]
            a[idx] = orig + eps
            up = f([Tensor(x) for x in arrays]).item()
            a[idx] = orig - eps
            down = f([Tensor(x) for x in arrays]).item()
            a[idx] = orig
            numeric = (up - down) / (2.0 * eps)
            err = relative_error(analytic[k][idx], numeric)
            n += 1
            if err > worst:
                worst, where = err, (k,) + tuple(int(i) for i in idx)
            if err > tol:
                failures.append(((k,) + tuple(int(i) for i in idx), float(analytic[k][idx]), numeric))
    return GradCheckReport(float(worst), worst <= tol, tol, n, where, failures)
