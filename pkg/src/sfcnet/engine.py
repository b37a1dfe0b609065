"""Minimal dense-tensor autodiff engine.

Float64 throughout. Every differentiable op builds a node in an implicit
DAG; ``backward`` topologically sorts the graph reachable from a scalar
loss and accumulates gradients into every tensor that requires them.
Includes the Adam optimizer and the binary checkpoint reader/writer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, InputError


class Tensor:
    """Dense float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = None
        self.parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; constants are lifted on the fly
    def __add__(self, other):
        return add(self, _lift(other))

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return neg(self)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, op, backward_fn):
    """Create a non-leaf tensor. Gradient tracking is inherited from parents."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.op = op
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear ops


def add(a, b):
    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(a.data + b.data, (a, b), "add", bw)


def sub(a, b):
    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(a.data - b.data, (a, b), "sub", bw)


def mul(a, b):
    def bw(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _node(a.data * b.data, (a, b), "mul", bw)


def neg(a):
    return _node(-a.data, (a,), "neg", lambda g: (-g,))


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}"
        )

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), "matmul", bw)


def relu(a):
    def bw(g):
        return (g * (a.data > 0),)

    return _node(np.maximum(a.data, 0.0), (a,), "relu", bw)


def tsum(a):
    """Sum of all elements, as a scalar tensor."""

    def bw(g):
        return (np.full_like(a.data, float(g)),)

    return _node(a.data.sum(), (a,), "sum", bw)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape):
    old = a.data.shape

    def bw(g):
        return (g.reshape(old),)

    return _node(a.data.reshape(shape), (a,), "reshape", bw)


def concat(tensors, axis):
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(
        np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", bw
    )


def split(a, sizes, axis):
    """Inverse of concat: cut ``a`` into chunks of the given sizes along axis."""
    if sum(sizes) != a.data.shape[axis]:
        raise DimensionError(
            f"split: sizes {tuple(sizes)} do not cover axis {axis} of {a.data.shape}"
        )
    bounds = np.cumsum(sizes)[:-1]
    pieces = np.split(a.data, bounds, axis=axis)
    outs = []
    for i, piece in enumerate(pieces):

        def bw(g, i=i, piece=piece):
            full = np.zeros_like(a.data)
            sl = [slice(None)] * a.data.ndim
            start = 0 if i == 0 else int(bounds[i - 1])
            sl[axis] = slice(start, start + piece.shape[axis])
            full[tuple(sl)] = g
            return (full,)

        outs.append(_node(piece.copy(), (a,), "split", bw))
    return outs


def take_rows(a, indices):
    """Select rows of a 2-D tensor; gradients scatter-add back."""
    idx = np.asarray(indices, dtype=np.intp)

    def bw(g):
        da = np.zeros_like(a.data)
        np.add.at(da, idx, g)
        return (da,)

    return _node(a.data[idx], (a,), "take_rows", bw)


def pairwise_concat(x, y):
    """All-pairs channel concatenation: out[i, j] = [x_i, y_j].

    x: (m, cx), y: (n, cy) -> (m, n, cx + cy).
    """
    m, cx = x.data.shape
    n, cy = y.data.shape
    out = np.empty((m, n, cx + cy))
    out[:, :, :cx] = x.data[:, None, :]
    out[:, :, cx:] = y.data[None, :, :]

    def bw(g):
        return g[:, :, :cx].sum(axis=1), g[:, :, cx:].sum(axis=0)

    return _node(out, (x, y), "pairwise_concat", bw)


# ---------------------------------------------------------------------------
# pooling


def pool(a, axis, kind):
    """Remove one axis by max or avg reduction.

    Max routes its gradient to the first argmax along the pooled axis.
    """
    if a.data.ndim == 0 or axis >= a.data.ndim or axis < -a.data.ndim:
        raise DimensionError(f"pool: axis {axis} invalid for shape {a.data.shape}")
    if a.data.shape[axis] == 0:
        raise DimensionError(f"pool: empty axis {axis} in shape {a.data.shape}")

    if kind == "max":
        arg = np.argmax(a.data, axis=axis)  # first occurrence on ties

        def bw(g):
            da = np.zeros_like(a.data)
            np.put_along_axis(
                da, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis
            )
            return (da,)

        return _node(np.max(a.data, axis=axis), (a,), "maxpool", bw)
    if kind == "avg":
        n = a.data.shape[axis]

        def bw(g):
            return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

        return _node(np.mean(a.data, axis=axis), (a,), "avgpool", bw)
    raise InputError(f"pool: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# layers


@dataclass
class DenseLayer:
    """One shared fully-connected layer: y = act(x W + b)."""

    weight: Tensor
    bias: Tensor
    activation: str | None = "relu"


def shared_mlp(x, layers):
    """Apply a stack of dense layers to every row of x independently.

    Row i of the output depends only on row i of the input (weights are
    shared across rows), which is what makes downstream pooling
    permutation-invariant.
    """
    layers = list(layers)
    if not layers:
        raise ConfigError("shared_mlp: empty layer list")
    out = x
    for layer in layers:
        out = add(matmul(out, layer.weight), layer.bias)
        if layer.activation == "relu":
            out = relu(out)
        elif layer.activation is not None:
            raise ConfigError(f"shared_mlp: unknown activation {layer.activation!r}")
    return out


def conv2d(x, kernel, bias=None):
    """Point-wise 2-D convolution with a 1x1 kernel.

    x: (h, w, c_in), kernel: (1, 1, c_in, c_out). Each grid cell is
    transformed independently; spatial kernels are deliberately not
    supported because grid cells here are unrelated pairs.
    """
    if kernel.data.ndim != 4 or kernel.data.shape[:2] != (1, 1):
        raise DimensionError(f"conv2d: kernel must be 1x1xCinxCout, got {kernel.data.shape}")
    h, w, c_in = x.data.shape
    if kernel.data.shape[2] != c_in:
        raise DimensionError(
            f"conv2d: input channels {x.data.shape} vs kernel {kernel.data.shape}"
        )
    k2 = kernel.data[0, 0]  # (c_in, c_out)
    y = np.tensordot(x.data, k2, axes=([2], [0]))
    parents = [x, kernel]
    if bias is not None:
        y = y + bias.data
        parents.append(bias)

    def bw(g):
        gflat = g.reshape(-1, k2.shape[1])
        xflat = x.data.reshape(-1, c_in)
        dx = (gflat @ k2.T).reshape(x.data.shape)
        dk = (xflat.T @ gflat)[None, None]
        if bias is not None:
            return dx, dk, gflat.sum(axis=0)
        return dx, dk

    return _node(y, parents, "conv2d", bw)


@dataclass
class BatchNormState:
    """Running statistics for one batchnorm layer (not trainable)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def for_channels(cls, c, momentum=0.1, eps=1e-5):
        return cls(np.zeros(c), np.ones(c), momentum, eps)


def batchnorm(x, gamma, beta, state, training):
    """Normalize (n, c) over rows, then scale and shift per channel.

    Training mode uses batch statistics (biased variance) and updates the
    running estimates in ``state``; eval mode uses the running estimates.
    """
    if x.data.ndim != 2 or gamma.data.shape != (x.data.shape[1],):
        raise DimensionError(
            f"batchnorm: x {x.data.shape} vs gamma {gamma.data.shape}"
        )
    eps = state.eps
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv
        mom = state.momentum
        state.running_mean = (1 - mom) * state.running_mean + mom * mu
        state.running_var = (1 - mom) * state.running_var + mom * var
        n = x.data.shape[0]

        def bw(g):
            dxhat = g * gamma.data
            dx = (
                inv
                / n
                * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            )
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    else:
        inv = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (x.data - state.running_mean) * inv

        def bw(g):
            return g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _node(xhat * gamma.data + beta.data, (x, gamma, beta), "batchnorm", bw)


def dropout(x, p, rng):
    """Inverted dropout. A ``None`` rng disables it (identity)."""
    if rng is None or p <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)

    def bw(g):
        return (g * keep,)

    return _node(x.data * keep, (x,), "dropout", bw)


def cross_entropy(logits, labels):
    """Mean negative log-softmax of the true class. Returns a scalar tensor."""
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be 2-D, got {logits.data.shape}")
    b, k = logits.data.shape
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (b,):
        raise InputError(f"cross_entropy: expected {b} labels, got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"cross_entropy: label out of range [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[np.arange(b), labels]
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)

    def bw(g):
        d = probs.copy()
        d[np.arange(b), labels] -= 1.0
        return (d * (float(g) / b),)

    return _node(losses.mean(), (logits,), "cross_entropy", bw)


# ---------------------------------------------------------------------------
# graph + backward


@dataclass
class GraphNode:
    op: str | None
    tensor: Tensor
    parent_ids: tuple


class ComputeGraph:
    """Topologically ordered record of the ops reachable from one output."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out):
        order = []
        seen = set()
        stack = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls([GraphNode(t.op, t, tuple(id(p) for p in t.parents)) for t in order])


def backward(loss):
    """Populate .grad on every requires_grad tensor reachable from the loss.

    Gradients accumulate across calls until zero_grad is used. Returns the
    ComputeGraph that was traversed.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not require grad")
    graph = ComputeGraph.from_output(loss)
    local = {id(node.tensor): None for node in graph.nodes}
    local[id(loss)] = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        t = node.tensor
        g = local[id(t)]
        if g is None:
            continue
        t.grad = g.copy() if t.grad is None else t.grad + g
        if t._backward_fn is None:
            continue
        for p, pg in zip(t.parents, t._backward_fn(g)):
            if not p.requires_grad or pg is None:
                continue
            if id(p) in local:
                local[id(p)] = pg if local[id(p)] is None else local[id(p)] + pg
    return graph


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Adam with classic L2 weight decay folded into the gradient."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params, state):
    """One Adam update over a stable list of parameter tensors."""
    params = list(params)
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params):
        raise ContractError("adam_step: parameter list changed size")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"adam_step: parameter {i} has no grad")
        g = p.grad + state.weight_decay * p.data
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# checkpoint io
#
# Byte layout (all integers little-endian u32):
#   magic "PSCN" | version u32 | repeated records until EOF:
#     name_len u32 | name utf-8 | rank u32 | dims u32 * rank |
#     little-endian float64 payload (row-major)

CHECKPOINT_MAGIC = b"PSCN"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays):
    """Write named float64 arrays, sorted by name for determinism."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())


def load_checkpoint(path):
    def read_exact(f, n):
        buf = f.read(n)
        if len(buf) != n:
            raise InputError(f"checkpoint {path}: truncated file")
        return buf

    arrays = {}
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise InputError(f"checkpoint {path}: bad magic")
        (version,) = struct.unpack("<I", read_exact(f, 4))
        if version != CHECKPOINT_VERSION:
            raise InputError(f"checkpoint {path}: unsupported version {version}")
        while True:
            head = f.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = read_exact(f, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", read_exact(f, 4))
            dims = struct.unpack(f"<{rank}I", read_exact(f, 4 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            payload = read_exact(f, 8 * count)
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return arrays


# ---------------------------------------------------------------------------
# numeric differentiation (used by the gradcheck CLI path and by tests)


def numeric_gradient(f, x, eps=1e-4):
    """Central-difference gradient of scalar f with respect to array x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def max_relative_error(build_loss, params, eps=1e-4):
    """Compare analytic grads to central differences over all params.

    ``build_loss`` re-runs the forward pass reading the params' current
    data. Error metric per element: |a - n| / max(1, |a|, |n|).
    """
    params = list(params)
    zero_grads(params)
    backward(build_loss())

    def scalar_loss():
        return float(build_loss().data)

    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_gradient(scalar_loss, p.data, eps)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst
