"""Minimal reverse-mode autodiff engine on numpy arrays.

Tensors wrap float32 (or float64, for numeric checking) ndarrays and record
the operations applied to them as a DAG. Calling ``backward()`` on a scalar
tensor walks that DAG once in reverse topological order and accumulates
gradients into every leaf tensor with ``requires_grad=True``.

Only the operations the network needs are provided: elementwise arithmetic,
matmul, reshape/transpose/slicing/concat, reductions, activations, softmax,
2-D convolution and max pooling on channel-last maps, batch normalization,
dropout, a bidirectional GRU, and cross-entropy on probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible."""


class GraphError(ValueError):
    """Raised when an autodiff contract is violated (e.g. non-scalar backward)."""


def _wrap(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float32)


class Tensor:
    """An n-d float array participating in a reverse-mode differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "_op")

    def __init__(self, data, requires_grad=False, dtype=None, _prev=(), _op="leaf"):
        self.data = _wrap(data, dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev = _prev
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- graph traversal ----------------------------------------------------

    def _topo_order(self):
        """All reachable graph nodes, children before parents, each exactly once."""
        order, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self):
        """Populate ``grad`` on every reachable requires_grad leaf.

        Must be called on a scalar. Interior node gradients are recomputed from
        scratch on every call while leaf gradients accumulate, so calling twice
        without ``zero_grad`` doubles the leaf gradients.
        """
        if self.data.size != 1:
            raise GraphError(f"backward() requires a scalar, got shape {self.shape}")
        order = self._topo_order()
        for node in order:
            if node._prev:
                node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return tensor_slice(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _node(data, inputs, op):
    needs = any(t.requires_grad for t in inputs)
    prev = tuple(t for t in inputs if t.requires_grad) if needs else ()
    return Tensor(data, requires_grad=needs, _prev=prev, _op=op)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the unbroadcast operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))
        out._backward = backward
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))
        out._backward = backward
    return out


def powf(x, p):
    """Elementwise x**p for a fixed float exponent."""
    x = as_tensor(x)
    out = _node(x.data ** p, (x,), "powf")
    if out.requires_grad:
        def backward(g):
            x._accumulate(g * p * x.data ** (p - 1.0))
        out._backward = backward
    return out


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)
    out = _node(y, (x,), "exp")
    if out.requires_grad:
        def backward(g):
            x._accumulate(g * y)
        out._backward = backward
    return out


def log(x):
    x = as_tensor(x)
    out = _node(np.log(x.data), (x,), "log")
    if out.requires_grad:
        def backward(g):
            x._accumulate(g / x.data)
        out._backward = backward
    return out


def clamp_min(x, floor):
    """max(x, floor); gradient flows only where x > floor."""
    x = as_tensor(x)
    out = _node(np.maximum(x.data, floor), (x,), "clamp_min")
    if out.requires_grad:
        mask = x.data > floor
        def backward(g):
            x._accumulate(g * mask)
        out._backward = backward
    return out


# -- activations --------------------------------------------------------------

def relu(x):
    x = as_tensor(x)
    out = _node(np.maximum(x.data, 0.0), (x,), "relu")
    if out.requires_grad:
        mask = x.data > 0.0
        def backward(g):
            x._accumulate(g * mask)
        out._backward = backward
    return out


def sigmoid(x):
    x = as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = _node(y, (x,), "sigmoid")
    if out.requires_grad:
        def backward(g):
            x._accumulate(g * y * (1.0 - y))
        out._backward = backward
    return out


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    out = _node(y, (x,), "tanh")
    if out.requires_grad:
        def backward(g):
            x._accumulate(g * (1.0 - y * y))
        out._backward = backward
    return out


def dropout(x, p, mode, rng=None):
    """Inverted dropout: train mode zeroes with probability p and rescales
    survivors by 1/(1-p); infer mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise GraphError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if mode == "infer" or p == 0.0:
        return x
    if rng is None:
        raise GraphError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    out = _node(x.data * mask, (x,), "dropout")
    if out.requires_grad:
        def backward(g):
            x._accumulate(g * mask)
        out._backward = backward
    return out


# -- shape plumbing -----------------------------------------------------------

def reshape(x, shape):
    x = as_tensor(x)
    out = _node(x.data.reshape(shape), (x,), "reshape")
    if out.requires_grad:
        def backward(g):
            x._accumulate(g.reshape(x.shape))
        out._backward = backward
    return out


def transpose(x, axes):
    x = as_tensor(x)
    out = _node(x.data.transpose(axes), (x,), "transpose")
    if out.requires_grad:
        inverse = np.argsort(axes)
        def backward(g):
            x._accumulate(g.transpose(inverse))
        out._backward = backward
    return out


def tensor_slice(x, idx):
    """Basic (non-fancy) slicing; the backward scatters into a zero buffer."""
    x = as_tensor(x)
    out = _node(x.data[idx], (x,), "slice")
    if out.requires_grad:
        def backward(g):
            buf = np.zeros_like(x.data)
            buf[idx] = g
            x._accumulate(buf)
        out._backward = backward
    return out


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat")
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        def backward(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                if t.requires_grad:
                    t._accumulate(piece)
        out._backward = backward
    return out


def stack(tensors, axis):
    """Stack equal-shape tensors along a new axis (via reshape + concat)."""
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis)


# -- reductions ---------------------------------------------------------------

def _expand_reduced(g, in_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(in_shape)), in_shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    if not keepdims:
        for ax in sorted(ax % len(in_shape) for ax in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, in_shape)


def tensor_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = _node(x.data.sum(axis=axis, keepdims=keepdims), (x,), "sum")
    if out.requires_grad:
        def backward(g):
            x._accumulate(_expand_reduced(g, x.shape, axis, keepdims))
        out._backward = backward
    return out


def tensor_mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = _node(x.data.mean(axis=axis, keepdims=keepdims), (x,), "mean")
    if out.requires_grad:
        count = x.data.size // out.data.size
        def backward(g):
            x._accumulate(_expand_reduced(g, x.shape, axis, keepdims) / count)
        out._backward = backward
    return out


# -- linear algebra -----------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = _node(np.matmul(a.data, b.data), (a, b), "matmul")
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape))
        out._backward = backward
    return out


def dense(x, weight, bias=None):
    """Affine map rows(x) @ weight + bias."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    out = matmul(x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape[-1] != weight.shape[1]:
            raise ShapeError(f"dense: bias width {bias.shape[-1]} != weight cols {weight.shape[1]}")
        out = add(out, bias)
    return out


def softmax(x):
    """Numerically stable softmax over the last axis."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _node(y, (x,), "softmax")
    if out.requires_grad:
        def backward(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            x._accumulate((g - dot) * y)
        out._backward = backward
    return out


# -- convolution and pooling --------------------------------------------------

def _conv_geometry(size, k, s, padding):
    if padding == "same":
        out = -(-size // s)
        total = max((out - 1) * s + k - size, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        out = (size - k) // s + 1
        return out, 0, 0
    raise ValueError(f"unknown padding {padding!r}")


def _gather_patches(xp, of, ot, kf, kt, sf, st):
    n, _, _, c = xp.shape
    cols = np.empty((n, of, ot, kf, kt, c), dtype=xp.dtype)
    for a in range(kf):
        for b in range(kt):
            cols[:, :, :, a, b, :] = xp[:, a:a + of * sf:sf, b:b + ot * st:st, :]
    return cols


def conv2d(x, kernel, bias=None, stride=(1, 1), padding="same"):
    """2-D correlation over channel-last maps.

    x: (F, T, Cin) or (N, F, T, Cin); kernel: (kf, kt, Cin, Cout); bias: (Cout,).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 3/4-d input and 4-d kernel, got {x.shape}, {kernel.shape}")
    n, f, t, cin = xd.shape
    kf, kt, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv2d: input channels {cin} != kernel channels {kcin}")
    sf, st = stride
    if sf < 1 or st < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    of, pf0, pf1 = _conv_geometry(f, kf, sf, padding)
    ot, pt0, pt1 = _conv_geometry(t, kt, st, padding)
    if of < 1 or ot < 1:
        raise ShapeError(f"conv2d: kernel ({kf},{kt}) larger than padded input ({f},{t})")

    xp = np.pad(xd, ((0, 0), (pf0, pf1), (pt0, pt1), (0, 0)))
    cols = _gather_patches(xp, of, ot, kf, kt, sf, st)
    w2 = kernel.data.reshape(kf * kt * cin, cout)
    y = cols.reshape(n, of, ot, kf * kt * cin) @ w2
    bias = as_tensor(bias) if bias is not None else None
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
        y = y + bias.data
    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    out = _node(y[0] if squeeze else y, inputs, "conv2d")

    if out.requires_grad:
        def backward(g):
            gb = g[None] if squeeze else g
            g2 = gb.reshape(n * of * ot, cout)
            if bias is not None and bias.requires_grad:
                bias._accumulate(g2.sum(axis=0))
            if kernel.requires_grad:
                gw = cols.reshape(n * of * ot, kf * kt * cin).T @ g2
                kernel._accumulate(gw.reshape(kf, kt, cin, cout))
            if x.requires_grad:
                gcols = (g2 @ w2.T).reshape(n, of, ot, kf, kt, cin)
                gxp = np.zeros_like(xp)
                for a in range(kf):
                    for b in range(kt):
                        gxp[:, a:a + of * sf:sf, b:b + ot * st:st, :] += gcols[:, :, :, a, b, :]
                gx = gxp[:, pf0:pf0 + f, pt0:pt0 + t, :]
                x._accumulate(gx[0] if squeeze else gx)
        out._backward = backward
    return out


def maxpool2d(x, window):
    """Non-overlapping max pooling (stride = window); remainder cells dropped.

    The gradient routes to the argmax position of each window only.
    """
    x = as_tensor(x)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    n, f, t, c = xd.shape
    wf, wt = window
    if wf > f or wt > t:
        raise ShapeError(f"maxpool2d: window {window} larger than input ({f},{t})")
    of, ot = f // wf, t // wt
    win = (xd[:, :of * wf, :ot * wt, :]
           .reshape(n, of, wf, ot, wt, c)
           .transpose(0, 1, 3, 2, 4, 5)
           .reshape(n, of, ot, wf * wt, c))
    idx = win.argmax(axis=3)
    y = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    out = _node(y[0] if squeeze else y, (x,), "maxpool2d")

    if out.requires_grad:
        def backward(g):
            gb = g[None] if squeeze else g
            gwin = np.zeros_like(win)
            np.put_along_axis(gwin, idx[:, :, :, None, :], gb[:, :, :, None, :], axis=3)
            gx = np.zeros_like(xd)
            gx[:, :of * wf, :ot * wt, :] = (gwin
                                            .reshape(n, of, ot, wf, wt, c)
                                            .transpose(0, 1, 3, 2, 4, 5)
                                            .reshape(n, of * wf, ot * wt, c))
            x._accumulate(gx[0] if squeeze else gx)
        out._backward = backward
    return out


def avgpool_freq(x):
    """Mean over the frequency axis of (..., F, T, C), keeping it as size 1."""
    x = as_tensor(x)
    return tensor_mean(x, axis=x.ndim - 3, keepdims=True)


# -- batch normalization --------------------------------------------------------

@dataclass
class BatchNormState:
    """Learnable scale/shift plus running statistics for one channel axis."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9

    @classmethod
    def create(cls, channels, epsilon=1e-5, momentum=0.9, dtype=np.float32):
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            epsilon=epsilon,
            momentum=momentum,
        )


def batchnorm(x, state, mode):
    """Normalize over every axis except the trailing channel axis.

    Train mode uses batch statistics (differentiable through them) and folds
    the batch mean/variance into the running statistics; infer mode uses the
    running statistics as constants.
    """
    x = as_tensor(x)
    if x.shape[-1] != state.gamma.shape[0]:
        raise ShapeError(f"batchnorm: channels {x.shape[-1]} != state channels {state.gamma.shape[0]}")
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        mu = tensor_mean(x, axis=axes, keepdims=True)
        centered = x - mu
        var = tensor_mean(mul(centered, centered), axis=axes, keepdims=True)
        inv = powf(add(var, state.epsilon), -0.5)
        xhat = mul(centered, inv)
        m = state.momentum
        state.running_mean = (m * state.running_mean
                              + (1.0 - m) * mu.data.reshape(-1).astype(state.running_mean.dtype))
        state.running_var = (m * state.running_var
                             + (1.0 - m) * var.data.reshape(-1).astype(state.running_var.dtype))
    elif mode == "infer":
        scale = 1.0 / np.sqrt(state.running_var.astype(x.dtype) + state.epsilon)
        xhat = mul(x - Tensor(state.running_mean, dtype=x.dtype), Tensor(scale, dtype=x.dtype))
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    return add(mul(xhat, state.gamma), state.beta)


# -- recurrent ----------------------------------------------------------------

@dataclass
class GRUDirParams:
    """One GRU direction: packed input/recurrent weights and bias.

    Gate packing order along the last axis is (update z, reset r, candidate n).
    The reset gate multiplies the previous state before the recurrent matmul,
    and the new state is h' = (1 - z) * h + z * n.
    """

    w_x: Tensor  # (Din, 3H)
    w_h: Tensor  # (H, 3H)
    b: Tensor    # (3H,)

    @property
    def hidden(self):
        return self.w_h.shape[0]


@dataclass
class BiGRUParams:
    fw: GRUDirParams
    bw: GRUDirParams

    def tensors(self, prefix):
        return {
            f"{prefix}.fw.w_x": self.fw.w_x, f"{prefix}.fw.w_h": self.fw.w_h,
            f"{prefix}.fw.b": self.fw.b,
            f"{prefix}.bw.w_x": self.bw.w_x, f"{prefix}.bw.w_h": self.bw.w_h,
            f"{prefix}.bw.b": self.bw.b,
        }


def _gru_direction(steps, p):
    h = p.hidden
    if p.w_x.shape[1] != 3 * h or p.b.shape != (3 * h,):
        raise ShapeError(f"gru: packed shapes disagree: w_x {p.w_x.shape}, w_h {p.w_h.shape}, b {p.b.shape}")
    n = steps[0].shape[0]
    state = Tensor(np.zeros((n, h), dtype=steps[0].dtype))
    outputs = []
    w_zr = p.w_h[:, :2 * h]
    w_n = p.w_h[:, 2 * h:]
    for x_t in steps:
        gx = add(matmul(x_t, p.w_x), p.b)
        gh = matmul(state, w_zr)
        z = sigmoid(add(gx[:, :h], gh[:, :h]))
        r = sigmoid(add(gx[:, h:2 * h], gh[:, h:]))
        cand = tanh(add(gx[:, 2 * h:], matmul(mul(r, state), w_n)))
        state = add(mul(1.0 - z, state), mul(z, cand))
        outputs.append(state)
    return outputs


def gru_bidirectional(x, params):
    """Bidirectional GRU over (T, Din) or (N, T, Din) with zero initial state.

    Output step t concatenates the forward state after consuming x[..t] with
    the backward state after consuming x[t..], giving (..., T, 2H).
    """
    x = as_tensor(x)
    squeeze = x.ndim == 2
    xb = reshape(x, (1,) + x.shape) if squeeze else x
    if xb.ndim != 3:
        raise ShapeError(f"gru expects (T, Din) or (N, T, Din), got {x.shape}")
    if xb.shape[2] != params.fw.w_x.shape[0] or xb.shape[2] != params.bw.w_x.shape[0]:
        raise ShapeError(f"gru: input width {xb.shape[2]} != weight rows "
                         f"{params.fw.w_x.shape[0]}/{params.bw.w_x.shape[0]}")
    t_len = xb.shape[1]
    steps = [xb[:, t, :] for t in range(t_len)]
    fw = _gru_direction(steps, params.fw)
    bw = list(reversed(_gru_direction(list(reversed(steps)), params.bw)))
    per_step = [concat([f, b], axis=1) for f, b in zip(fw, bw)]
    out = stack(per_step, axis=1)
    return reshape(out, out.shape[1:]) if squeeze else out


# -- loss -----------------------------------------------------------------------

def cross_entropy(probs, targets, clamp=1e-7):
    """Mean over the batch of -sum(target * log(prob)), on soft labels.

    The log argument is clamped below at ``clamp`` so confidently wrong
    predictions stay finite.
    """
    probs = as_tensor(probs)
    targets = as_tensor(targets, dtype=probs.dtype)
    if probs.shape != targets.shape:
        raise ShapeError(f"cross_entropy: probs {probs.shape} != targets {targets.shape}")
    logp = log(clamp_min(probs, clamp))
    per_row = tensor_sum(mul(targets, logp), axis=-1)
    return mul(tensor_mean(per_row), -1.0)
