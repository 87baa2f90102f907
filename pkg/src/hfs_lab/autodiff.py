"""Small reverse-mode differentiation engine on top of numpy.

Every operation returns a new :class:`Tensor` that remembers its parents and
a closure mapping the output gradient to parent gradients. ``backward`` walks
the graph reachable from a scalar loss in reverse topological order, so two
graphs built from the same leaves never exchange gradient mass.

Broadcasting is deliberately narrow: operands of elementwise ops must have
equal shapes, one of them must be a scalar, or one must match the other's
trailing shape (broadcast along the leading batch axis). Anything fancier is
spelled out with :func:`take`.
"""
from __future__ import annotations

import itertools
import json
from pathlib import Path

import numpy as np

from hfs_lab.exceptions import ConfigurationError, ContractError

_tape_counter = itertools.count(1)


class Tensor:
    """Dense float64 array participating in a recorded computation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "tape_id")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.tape_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Named leaf tensor owned by a model."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name, trainable=True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=trainable)
        self.name = name
        self.trainable = trainable


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def _check_broadcast(a, b, op):
    sa, sb = a.shape, b.shape
    if sa == sb or a.ndim == 0 or b.ndim == 0:
        return
    if sa[1:] == sb or sb[1:] == sa:
        return
    raise ConfigurationError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.sum(g)
    # leading batch axis broadcast
    return g.sum(axis=0)


# ----------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), backward)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def square(x):
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x):
    """Square root; the derivative at exactly 0 is taken as 0."""
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        return (g * d,)

    return _make(out, (x,), backward)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x):
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


# ------------------------------------------------------------------- algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward)


# ---------------------------------------------------------------- reductions

def _expand_reduced(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    return _make(np.sum(x.data, axis=axis), (x,),
                 lambda g: (_expand_reduced(g, x.shape, axis),))


def mean(x, axis=None):
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return _make(np.mean(x.data, axis=axis), (x,),
                 lambda g: (_expand_reduced(g, x.shape, axis) / n,))


def _select(x, axis, pick):
    x = as_tensor(x)
    if axis is None:
        flat = int(pick(x.data.reshape(-1)))
        out = x.data.reshape(-1)[flat]

        def backward(g):
            gx = np.zeros(x.size)
            gx[flat] = g
            return (gx.reshape(x.shape),)

        return _make(out, (x,), backward)

    idx = pick(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros(x.shape)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, (x,), backward)


def max(x, axis=None):  # noqa: A001
    """Max over ``axis``; the gradient goes to the first maximal element."""
    return _select(x, axis, np.argmax)


def min(x, axis=None):  # noqa: A001
    """Min over ``axis``; the gradient goes to the first minimal element."""
    return _select(x, axis, np.argmin)


# ----------------------------------------------------------------- structure

def reshape(x, shape):
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat_cols(*xs):
    xs = [as_tensor(x) for x in xs]
    if any(x.ndim != 2 for x in xs) or len({x.shape[0] for x in xs}) != 1:
        raise ConfigurationError(f"concat_cols: incompatible shapes {[x.shape for x in xs]}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def backward(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(np.concatenate([x.data for x in xs], axis=1), xs, backward)


def columns(x, cols):
    """Index-select along axis 1."""
    x = as_tensor(x)
    cols = np.asarray(cols, dtype=np.intp)

    def backward(g):
        gx = np.zeros(x.shape)
        np.add.at(gx, (slice(None), cols), g)
        return (gx,)

    return _make(x.data[:, cols], (x,), backward)


def take(x, flat_index):
    """Gather ``x.ravel()[flat_index]``; the output takes the index array's shape."""
    x = as_tensor(x)
    flat_index = np.asarray(flat_index, dtype=np.intp)
    if flat_index.size and (flat_index.min() < 0 or flat_index.max() >= x.size):
        raise ConfigurationError(f"take: index out of range for shape {x.shape}")

    def backward(g):
        gx = np.bincount(flat_index.reshape(-1), weights=g.reshape(-1), minlength=x.size)
        return (gx.reshape(x.shape),)

    return _make(x.data.reshape(-1)[flat_index], (x,), backward)


# ------------------------------------------------------------------ backward

def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every tensor that ``loss`` depends on.

    Gradients are assigned (not accumulated) so a parameter's ``grad`` always
    reflects the most recent backward pass that reached it.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = next(_tape_counter)
    order = _topological(loss)
    grads = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            g = np.zeros(node.shape)
        node.grad = np.array(g, dtype=np.float64, copy=True).reshape(node.shape)
        node.tape_id = tape
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# --------------------------------------------------------------------- Adam

class Adam:
    """Adam with bias correction, operating in place on ``Parameter.data``."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self._m = [np.zeros(p.shape) for p in self.params]
        self._v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(optimizer):
    optimizer.step()


# -------------------------------------------------------------- checkpoints

def save_parameters(params, path):
    """Write ``<path>.bin`` (float64 little endian) and ``<path>.json`` manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise ConfigurationError("parameter names must be unique")
    manifest, offset, blobs = [], 0, []
    for p in params:
        manifest.append({"name": p.name, "shape": list(p.shape), "offset": offset})
        blobs.append(p.data.astype("<f8").tobytes())
        offset += p.size
    path.with_suffix(".bin").write_bytes(b"".join(blobs))
    path.with_suffix(".json").write_text(json.dumps({"dtype": "<f8", "params": manifest}, indent=1))


def load_parameters(params, path):
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    flat = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    by_name = {p.name: p for p in params}
    for entry in manifest["params"]:
        p = by_name[entry["name"]]
        n = int(np.prod(entry["shape"], dtype=np.int64))
        if tuple(entry["shape"]) != p.shape:
            raise ConfigurationError(
                f"checkpoint shape {tuple(entry['shape'])} != parameter shape {p.shape} for {p.name}")
        p.data[...] = flat[entry["offset"]:entry["offset"] + n].reshape(p.shape)
