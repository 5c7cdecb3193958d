"""Small dense-tensor library with a reverse-mode tape and an Adam optimizer.

Everything is float64 numpy underneath. Each op returns a new :class:`Tensor`
that remembers its parents and a closure mapping the output gradient to the
parents' gradients; :func:`backward` walks the graph in reverse topological
order. Only the handful of ops the parser, encoder and classifier need are
provided.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_VERSION = "topspan-checkpoint/1"


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, op, parents, backward):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, op=op, parents=parents, backward=backward)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _node(ad * bd, "mul", (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def relu(x):
    mask = x.data > 0
    return _node(x.data * mask, "relu", (x,), lambda g: (g * mask,))


def dropout(x, p, rng):
    """Inverted dropout; identity when ``rng`` is None or ``p`` is 0."""
    if rng is None or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _node(x.data * keep, "dropout", (x,), lambda g: (g * keep,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def back(g):
        if bd.ndim == 1:
            ga = np.multiply.outer(g, bd)
            gb = np.tensordot(ad, g, axes=(tuple(range(ad.ndim - 1)), tuple(range(g.ndim))))
            return ga, gb
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _node(ad @ bd, "matmul", (a, b), back)


# ------------------------------------------------------------------ reductions

def tsum(x, axis=None):
    shape = x.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(x.data.sum(axis=axis), "sum", (x,), back)


def tmax(x, axis=-1):
    """Max along ``axis``; ties go to the lowest index."""
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis).squeeze(axis)
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (gx,)

    return _node(out, "max", (x,), back)


# ---------------------------------------------------------------- structural

def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), "concat", tuple(tensors), back)


def index(x, idx):
    """Basic or fancy indexing; repeated fancy indices accumulate."""
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        np.add.at(gx, idx, g)
        return (gx,)

    return _node(x.data[idx], "index", (x,), back)


def gather(table, ids):
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def back(g):
        gt = np.zeros(shape)
        np.add.at(gt, ids, g)
        return (gt,)

    return _node(table.data[ids], "gather", (table,), back)


def reshape(x, shape):
    old = x.shape
    return _node(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(old),))


def transpose(x, axes):
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), "transpose", (x,), lambda g: (g.transpose(inv),))


# -------------------------------------------------------------- normalizers

def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, "softmax", (x,), back)


def log_softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _node(y, "log_softmax", (x,), back)


def layer_norm(x, gain, bias, eps=1e-5):
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    d = x.shape[-1]

    def back(g):
        gxhat = g * gd
        gx = inv / d * (d * gxhat - gxhat.sum(-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(-1, keepdims=True))
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return _node(xhat * gd + bias.data, "layer_norm", (x, gain, bias), back)


# ------------------------------------------------------------------ backward

def backward(loss):
    """Accumulate d(loss)/d(param) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order, seen = [], set()
    stack = [(loss, False)]
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

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise FloatingPointError(f"non-finite gradient produced by op '{node.op}'")
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


# ---------------------------------------------------------------- parameters

class ParamStore:
    """Named registry of trainable tensors with a seeded initializer."""

    def __init__(self, seed=0):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.tensors: dict[str, Tensor] = {}

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors.items())

    def __len__(self):
        return len(self.tensors)

    def names(self):
        return list(self.tensors)

    def add(self, name, shape, init="fan_in"):
        if name in self.tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(shape)
        if init == "uniform":
            data = self.rng.uniform(-0.1, 0.1, size=shape)
        elif init == "unit":  # unit variance, for embedding tables
            data = self.rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=shape)
        elif init == "fan_in":
            bound = np.sqrt(3.0 / shape[0])
            data = self.rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self.tensors[name] = t
        return t

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = np.zeros_like(t.data)

    def clear_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def snapshot(self):
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def restore(self, snap):
        for k, v in snap.items():
            self.tensors[k].data = v.copy()

    def digest(self):
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name].data).tobytes())
        return h.hexdigest()


# ----------------------------------------------------------------- optimizer

@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, state: OptimState, names=None):
    names = params.names() if names is None else names
    for name in names:
        if params[name].grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name in names:
        p = params[name]
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


# ---------------------------------------------------------------- grad check

def grad_check(f, params: ParamStore, eps=1e-4, names=None):
    """Largest relative gap between backprop and central differences.

    ``f`` maps nothing to a scalar Tensor built from ``params``; it is called
    many times, so keep it small.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    names = params.names() if names is None else names
    base1, base2 = f().item(), f().item()
    if base1 != base2:
        raise RuntimeError("f is not deterministic")
    params.zero_grad()
    backward(f())
    analytic = {n: params[n].grad.copy() for n in names}
    worst = 0.0
    for n in names:
        p = params[n]
        flat = p.data.reshape(-1)
        ga = analytic[n].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            hi = f().item()
            flat[i] = old - eps
            lo = f().item()
            flat[i] = old
            num = (hi - lo) / (2 * eps)
            err = abs(ga[i] - num) / max(1.0, abs(ga[i]), abs(num))
            worst = max(worst, err)
    params.clear_grad()
    return worst


# --------------------------------------------------------------- checkpoints

def save_checkpoint(path, params: ParamStore, meta=None):
    """Text checkpoint; floats use repr() so loading is bit-exact."""
    buf = io.StringIO()
    buf.write(CHECKPOINT_VERSION + "\n")
    buf.write(f"seed {params.seed}\n")
    buf.write("meta " + json.dumps(meta or {}, sort_keys=True) + "\n")
    for name in sorted(params.tensors):
        t = params.tensors[name].data
        buf.write(f"tensor {name} {' '.join(str(d) for d in t.shape) or '-'}\n")
        buf.write(" ".join(repr(float(v)) for v in t.reshape(-1)) + "\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines[0] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {lines[0]!r}")
    seed = int(lines[1].split()[1])
    meta = json.loads(lines[2][len("meta "):])
    params = ParamStore(seed)
    i = 3
    while i < len(lines) and lines[i]:
        _, name, dims = lines[i].split(" ", 2)
        shape = () if dims == "-" else tuple(int(d) for d in dims.split())
        vals = lines[i + 1].split()
        data = np.array([float(v) for v in vals], dtype=np.float64).reshape(shape)
        params.tensors[name] = Tensor(data, requires_grad=True, name=name)
        i += 2
    return params, meta
