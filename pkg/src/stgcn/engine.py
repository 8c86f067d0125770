"""A small dense-tensor engine with define-by-run reverse-mode differentiation.

Arrays live in numpy. Every op checks shapes before touching data, records its
parents and a backward rule, and ``Tensor.backward`` walks the recorded graph
in reverse topological order. Only the ops the ST-GCN stack needs are here.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_state = {"dtype": np.dtype(np.float32), "grad": True, "relu_log": None}


class ShapeError(ValueError):
    pass


def get_default_dtype() -> np.dtype:
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype):
    """Switch the default real type, e.g. ``precision(np.float64)`` for gradient checks."""
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    prev = _state["dtype"]
    _state["dtype"] = dtype
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def record_relu_patterns():
    """Collect the activation mask of every relu evaluated inside the block."""
    prev = _state["relu_log"]
    log: list[np.ndarray] = []
    _state["relu_log"] = log
    try:
        yield log
    finally:
        _state["relu_log"] = prev


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


class Tensor:
    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or _state["dtype"], copy=None)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = ""

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op or 'leaf'})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every tracked leaf."""
        if self.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("loss does not depend on any tracked tensor")
        order = tape(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(f"internal: {node.op} produced grad {pg.shape} for {parent.shape}")
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(other)) if isinstance(other, Tensor) else add(self, -float(other))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        return permute(self, axes)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def tape(root: Tensor) -> list[Tensor]:
    """The recorded operations reachable from ``root``, in topological order."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _result(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_scalar")
    _same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _state["relu_log"] is not None:
        _state["relu_log"].append(mask)
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit random generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size and -1 not in shape:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "permute")


def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis)), (x,), backward, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    axes = tuple(range(x.ndim)) if axis is None else ((axis,) if isinstance(axis, int) else tuple(axis))
    n = int(np.prod([x.shape[a] for a in axes]))
    if n == 0:
        raise ShapeError("mean over an empty axis")
    return scale(sum_(x, axis), 1.0 / n)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batched when both operands share leading dims, or ``b`` is 2-D."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ, {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def add_bias(x: Tensor, bias: Tensor, axis: int = 1) -> Tensor:
    """Add a per-channel vector along ``axis``."""
    if bias.ndim != 1 or bias.shape[0] != x.shape[axis]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not match axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    others = tuple(i for i in range(x.ndim) if i != axis)
    return _result(
        x.data + bias.data.reshape(view), (x, bias), lambda g: (g, g.sum(axis=others)), "add_bias"
    )


def conv_output_length(T: int, kernel: int, stride: int, pad: int) -> int:
    return (T + 2 * pad - kernel) // stride + 1


def conv2d_temporal(x: Tensor, w: Tensor, stride: int = 1, pad: int | None = None) -> Tensor:
    """Γ×1 convolution over the time axis of an (N, C, T, V) tensor with zero padding.

    ``w`` has shape (C_out, C_in, Γ, 1); the joint axis is never mixed.
    """
    if x.ndim != 4 or w.ndim != 4 or w.shape[3] != 1:
        raise ShapeError(f"conv2d_temporal: expected x (N,C,T,V) and w (C',C,Γ,1), got {x.shape}, {w.shape}")
    N, C, T, V = x.shape
    Co, Ci, G, _ = w.shape
    if Ci != C:
        raise ShapeError(f"conv2d_temporal: input has {C} channels, kernel expects {Ci}")
    if G % 2 == 0:
        raise ValueError(f"temporal kernel size must be odd, got {G}")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    pad = (G - 1) // 2 if pad is None else pad
    To = conv_output_length(T, G, stride, pad)
    if To < 1:
        raise ShapeError(f"conv2d_temporal: T={T} too short for kernel {G} with pad {pad}")

    if G == 1 and stride == 1 and pad == 0:
        return _pointwise_conv(x, w)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (0, 0))) if pad else x.data
    win = sliding_window_view(xp, G, axis=2)[:, :, ::stride][:, :, :To]  # (N, C, To, V, G)
    cols = win.transpose(1, 4, 0, 2, 3).reshape(C * G, N * To * V)
    wm = w.data.reshape(Co, C * G)
    out = (wm @ cols).reshape(Co, N, To, V).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(Co, N * To * V)
        gw = (g2 @ cols.T).reshape(w.shape)
        gcols = (wm.T @ g2).reshape(C, G, N, To, V)
        gxp = np.zeros((C, N, T + 2 * pad, V), dtype=g.dtype)
        span = stride * (To - 1) + 1
        for k in range(G):
            gxp[:, :, k:k + span:stride, :] += gcols[:, k]
        gx = gxp[:, :, pad:pad + T, :].transpose(1, 0, 2, 3)
        return np.ascontiguousarray(gx), gw

    return _result(out, (x, w), backward, "conv2d_temporal")


def _pointwise_conv(x: Tensor, w: Tensor) -> Tensor:
    N, C, T, V = x.shape
    Co = w.shape[0]
    wm = w.data.reshape(Co, C)
    xm = x.data.reshape(N, C, T * V)
    out = np.matmul(wm, xm).reshape(N, Co, T, V)

    def backward(g):
        gm = g.reshape(N, Co, T * V)
        gx = np.matmul(wm.T, gm).reshape(x.shape)
        gw = np.tensordot(gm, xm, axes=([0, 2], [0, 2])).reshape(w.shape)
        return gx, gw

    return _result(out, (x, w), backward, "conv2d_temporal")


def graph_contract(x: Tensor, adj: Tensor) -> Tensor:
    """out[n,c,t,i] = sum_k sum_v adj[k,i,v] * x[n,k,c,t,v].

    ``x`` is (N, K, C, T, V), one slab per partition subset; ``adj`` is (K, V, V)
    with the root joint on rows.
    """
    if x.ndim != 5 or adj.ndim != 3:
        raise ShapeError(f"graph_contract: expected x (N,K,C,T,V) and adj (K,V,V), got {x.shape}, {adj.shape}")
    N, K, C, T, V = x.shape
    if adj.shape != (K, V, V):
        raise ShapeError(f"graph_contract: adjacency {adj.shape} does not match input {x.shape}")
    xm = x.data.transpose(0, 2, 3, 1, 4).reshape(N * C * T, K * V)
    bm = adj.data.transpose(0, 2, 1).reshape(K * V, V)
    out = (xm @ bm).reshape(N, C, T, V)

    def backward(g):
        gm = g.reshape(N * C * T, V)
        gx = (gm @ bm.T).reshape(N, C, T, K, V).transpose(0, 3, 1, 2, 4)
        gb = (xm.T @ gm).reshape(K, V, V).transpose(0, 2, 1)
        return np.ascontiguousarray(gx), np.ascontiguousarray(gb)

    return _result(out, (x, adj), backward, "graph_contract")


# ---------------------------------------------------------------- normalization / heads

def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel (axis 1) normalization over every other axis.

    In training mode the running buffers are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    C = x.shape[1] if x.ndim >= 2 else -1
    if x.ndim < 2 or gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batch_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    if running_mean.shape != (C,) or running_var.shape != (C,):
        raise ShapeError("batch_norm: running statistics do not match channel count")
    axes = (0,) + tuple(range(2, x.ndim))
    n = x.size // C
    if n == 0:
        raise ShapeError("batch_norm: zero-size batch")
    view = [1] * x.ndim
    view[1] = C
    dt = x.dtype

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mu = running_mean.astype(dt)
        var = running_var.astype(dt)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = (x.data - mu.reshape(view)) * inv_std.reshape(view)
    out = xhat * gamma.data.reshape(view) + beta.data.reshape(view)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(view)
        if training:
            gx = (
                gxhat
                - gxhat.mean(axis=axes).reshape(view)
                - xhat * (gxhat * xhat).mean(axis=axes).reshape(view)
            ) * inv_std.reshape(view)
        else:
            gx = gxhat * inv_std.reshape(view)
        return gx.astype(dt), ggamma, gbeta

    return _result(out.astype(dt), (x, gamma, beta), backward, "batch_norm")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected (N,C,T,V), got {x.shape}")
    return mean(x, axis=(2, 3))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape}, labels {labels.shape}")
    N, K = logits.shape
    if N == 0:
        raise ShapeError("softmax_cross_entropy: empty batch")
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"labels must lie in [0, {K}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(N)
    loss = np.asarray((lse - z[rows, labels]).mean(), dtype=logits.dtype)

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return ((p / N) * g).astype(logits.dtype),

    return _result(loss, (logits,), backward, "softmax_cross_entropy")
