"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Tensor` wraps a float64 array.  Every operation on tensors that
require gradients records its parents and a closure mapping the upstream
gradient to parent gradients.  :func:`backward` walks the recorded graph once
in reverse topological order.

Leaf tensors (parameters) accumulate into ``.grad`` across backward calls;
intermediate nodes get ``.grad`` overwritten on each call.

Batched inputs use the row convention: ``linear(x, w, b) = x @ w + b`` with
``x`` of shape ``(n, in)`` and ``w`` of shape ``(in, out)``.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "relgraph3d-params"
CHECKPOINT_VERSION = 1


class DiffError(ValueError):
    """Shape mismatch or other invalid use of the differentiation kernel."""


class CheckpointError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    def __len__(self):
        return len(self.data)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    # operators
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _node(data, parents, backward, op) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(np.atleast_1d(a.data)).reshape(a.shape)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    # NaN must survive so the training loop can report it
    return _node(np.where(a.data <= 0, 0.0, a.data), (a,), lambda g: (g * mask,), "relu")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def atan2(y, x) -> Tensor:
    y, x = as_tensor(y), as_tensor(x)
    r2 = x.data**2 + y.data**2
    return _node(
        np.arctan2(y.data, x.data),
        (y, x),
        lambda g: (_unbroadcast(g * x.data / r2, y.shape), _unbroadcast(-g * y.data / r2, x.shape)),
        "atan2",
    )


def wrap(a) -> Tensor:
    """Angle wrap to ``[-pi, pi)``; locally the identity, so gradients pass through."""
    a = as_tensor(a)
    out = np.mod(a.data + np.pi, 2 * np.pi) - np.pi
    out = np.where(out >= np.pi, out - 2 * np.pi, out)
    return _node(out, (a,), lambda g: (g,), "wrap")


# ---------------------------------------------------------------- structural


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DiffError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return _node(a.data[idx], (a,), back, "getitem")


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), back, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _node(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)
    return _node(
        np.stack([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
        "stack",
    )


def index_add(src, index, n: int) -> Tensor:
    """Scatter-add rows of ``src`` into ``n`` output rows: ``out[index[e]] += src[e]``."""
    src = as_tensor(src)
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((n,) + src.shape[1:])
    np.add.at(out, index, src.data)
    return _node(out, (src,), lambda g: (g[index],), "index_add")


def _extreme(a, axis, fn) -> Tensor:
    a = as_tensor(a)
    arg = fn(a.data, axis=axis)
    idx = np.expand_dims(arg, axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def back(g):
        z = np.zeros_like(a.data)
        np.put_along_axis(z, idx, np.expand_dims(g, axis), axis=axis)
        return (z,)

    return _node(out, (a,), back, "extreme")


def amax(a, axis) -> Tensor:
    return _extreme(a, axis, np.argmax)


def amin(a, axis) -> Tensor:
    return _extreme(a, axis, np.argmin)


def norm(a, axis=-1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at zero is taken as zero."""
    a = as_tensor(a)
    out = np.sqrt((a.data**2).sum(axis=axis))

    def back(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return (a.data * np.expand_dims(scale, axis),)

    return _node(out, (a,), back, "norm")


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _node(out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),), "log_softmax")


def softmax(x, axis=-1) -> np.ndarray:
    """Plain (non-differentiable) softmax of an array."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------- layers and losses


def linear(x, w, b=None) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise DiffError(f"linear: input width {x.shape[-1]} does not match weight {w.shape}")
    if x.data.ndim == 1:
        out = reshape(matmul(reshape(x, (1, -1)), w), (w.shape[1],))
    else:
        out = matmul(x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape[-1] != w.shape[1]:
            raise DiffError(f"linear: bias {b.shape} does not match weight {w.shape}")
        out = out + b
    return out


GRU_WEIGHTS = ("w_z", "u_z", "w_r", "u_r", "w_h", "u_h")
GRU_BIASES = ("b_z", "b_r", "b_h")


def gru_step(h_prev, x, params) -> Tensor:
    """One GRU update.

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    h~ = tanh(x W_h + (r * h) U_h + b_h)
    h = (1 - z) * h_prev + z * h~

    ``params`` maps the names in ``GRU_WEIGHTS`` and ``GRU_BIASES`` to tensors.
    """
    h_prev, x = as_tensor(h_prev), as_tensor(x)
    hidden = params["u_z"].shape[0]
    if h_prev.shape[-1] != hidden or x.shape[-1] != params["w_z"].shape[0]:
        raise DiffError(f"gru_step: got h {h_prev.shape}, x {x.shape}, hidden {hidden}")
    z = sigmoid(linear(x, params["w_z"], params["b_z"]) + linear(h_prev, params["u_z"]))
    r = sigmoid(linear(x, params["w_r"], params["b_r"]) + linear(h_prev, params["u_r"]))
    cand = tanh(linear(x, params["w_h"], params["b_h"]) + linear(r * h_prev, params["u_h"]))
    return (1.0 - z) * h_prev + z * cand


def softmax_cross_entropy(logits, target) -> Tensor:
    """``-log softmax(logits)[target]`` per row (scalar for 1-D logits)."""
    logits = as_tensor(logits)
    target = np.asarray(target, dtype=np.int64)
    n_cls = logits.shape[-1]
    if np.any(target < 0) or np.any(target >= n_cls):
        raise DiffError(f"target index out of range for {n_cls} classes")
    lsm = log_softmax(logits, axis=-1)
    if logits.data.ndim == 1:
        return -lsm[int(target)]
    rows = np.arange(logits.shape[0])
    return -lsm[rows, target]


def mse(a, b) -> Tensor:
    a = as_tensor(a)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DiffError(f"mse shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return (d * d).mean()


# ---------------------------------------------------------------- backward


def backward(root: Tensor) -> None:
    """Populate ``.grad`` of every tensor reachable from scalar ``root``."""
    if root.data.size != 1:
        raise DiffError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order, seen, stack_ = [], set(), [(root, False)]
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
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


# ---------------------------------------------------------------- parameters


class ParamStore:
    """Named learnable tensors; names are unique."""

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise DiffError(f"duplicate parameter name {name!r}")
        t = parameter(value)
        self.params[name] = t
        return t

    def add_linear(self, name, n_in, n_out, rng, bias=True):
        bound = np.sqrt(6.0 / (n_in + n_out))
        self.add(f"{name}.w", rng.uniform(-bound, bound, size=(n_in, n_out)))
        if bias:
            self.add(f"{name}.b", np.zeros(n_out))

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def n_values(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict):
        missing = set(self.params) ^ set(state)
        if missing:
            raise CheckpointError(f"parameter names differ: {sorted(missing)}")
        for k, v in state.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != self.params[k].shape:
                raise CheckpointError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = v.copy()


class Adam:
    def __init__(self, store: ParamStore, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.store = store
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in store}
        self.v = {k: np.zeros_like(v.data) for k, v in store}

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        for name, p in self.store:
            if p.grad is None:
                continue
            self.m[name] = b1 * self.m[name] + (1 - b1) * p.grad
            self.v[name] = b2 * self.v[name] + (1 - b2) * p.grad**2
            p.data = p.data - self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state_dict(self, state: dict):
        self.t = int(state["t"])
        self.m = {k: np.asarray(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.asarray(v, dtype=np.float64) for k, v in state["v"].items()}


def _pack(arrays: dict) -> list:
    return [{"name": k, "shape": list(v.shape), "values": np.asarray(v).ravel().tolist()} for k, v in arrays.items()]


def _unpack(records: list) -> dict:
    return {r["name"]: np.asarray(r["values"], dtype=np.float64).reshape(r["shape"]) for r in records}


def save_checkpoint(path, store: ParamStore, optimizer: Adam | None = None, meta: dict | None = None):
    """Write parameters (and optionally Adam state) as versioned JSON."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": _pack(store.state_dict()),
    }
    if optimizer is not None:
        doc["adam"] = {"t": optimizer.t, "m": _pack(optimizer.m), "v": _pack(optimizer.v)}
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> dict:
    """Read a checkpoint; returns ``{"meta", "params", "adam"}`` with numpy arrays."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}") from e
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a parameter checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    adam = None
    if "adam" in doc:
        adam = {"t": doc["adam"]["t"], "m": _unpack(doc["adam"]["m"]), "v": _unpack(doc["adam"]["v"])}
    return {"meta": doc["meta"], "params": _unpack(doc["params"]), "adam": adam}
