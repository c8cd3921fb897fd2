"""Dense float32 tensors with reverse-mode automatic differentiation.

The graph is a dynamic tape: every op executed while gradients are enabled
records a node holding its parents and a backward closure. ``backward()`` on a
scalar walks the tape in reverse topological order. Forward data is always
float32 and C-contiguous; any non-finite value raised by an op aborts with a
:class:`NumericError` naming the op instead of propagating NaNs.

Broadcasting for binary ops is deliberately restricted to leading singleton
dimensions (after left-padding the shorter shape with 1s); anything fancier
must go through :meth:`Tensor.broadcast_to` explicitly.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class TensorError(Exception):
    """Base class for tensor-library failures."""


class ShapeError(TensorError):
    """Operand shapes violate an op's contract."""


class NumericError(TensorError):
    """Domain violation or non-finite value in a forward pass."""


class GraphError(TensorError):
    """Autodiff contract violation (e.g. backward on a non-scalar)."""


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    # summing is cheaper than isfinite().all() and still trips on any NaN/Inf
    # (a finite-overflow false positive would need magnitudes ~1e38)
    with np.errstate(over="ignore", invalid="ignore"):
        total = arr.sum()
    if not np.isfinite(total):
        if np.isfinite(arr).all():
            return  # pathological cancellation-free overflow of the sum itself
        raise NumericError(f"{op}: non-finite value in forward output")


def _quiet():
    # overflow/invalid raise NumericError via the finiteness check; numpy's
    # own warnings on the way there are noise
    return np.errstate(over="ignore", invalid="ignore", divide="ignore")


class Node:
    """Tape entry: parents plus a closure mapping output-grad to parent-grads."""

    __slots__ = ("parents", "backward", "name")

    def __init__(self, parents, backward, name):
        self.parents = parents
        self.backward = backward
        self.name = name


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, node: Node | None = None):
        arr = np.asarray(data, dtype=np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node = node

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=np.float32), requires_grad)

    @staticmethod
    def ones(shape, requires_grad=False):
        return Tensor(np.ones(shape, dtype=np.float32), requires_grad)

    # -- basic introspection ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"

    # -- graph plumbing --------------------------------------------------------

    def backward(self) -> None:
        backward(self)

    # Arithmetic operators defined below module-level op functions.


def _result(data, parents, backward_fn, name):
    data = np.ascontiguousarray(np.asarray(data, dtype=np.float32))
    _check_finite(data, name)
    rg = grad_enabled() and any(p.requires_grad for p in parents)
    node = Node(tuple(parents), backward_fn, name) if rg else None
    return Tensor(data, requires_grad=rg, node=node)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))


# ---------------------------------------------------------------------------
# broadcasting (leading singleton dimensions only)
# ---------------------------------------------------------------------------


def _broadcast_shapes(sa, sb):
    nd = max(len(sa), len(sb))
    pa = (1,) * (nd - len(sa)) + tuple(sa)
    pb = (1,) * (nd - len(sb)) + tuple(sb)
    # longest matching suffix
    k = 0
    while k < nd and pa[nd - 1 - k] == pb[nd - 1 - k]:
        k += 1
    for i in range(nd - k):
        if pa[i] != 1 and pb[i] != 1:
            raise ShapeError(
                f"broadcast limited to leading singleton dims: {tuple(sa)} vs {tuple(sb)}"
            )
    return tuple(max(a, b) for a, b in zip(pa, pb))


def _reduce_to(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad over axes that were broadcast, then reshape to `shape`."""
    nd = grad.ndim
    padded = (1,) * (nd - len(shape)) + tuple(shape)
    axes = tuple(i for i in range(nd) if padded[i] == 1 and grad.shape[i] > 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return np.ascontiguousarray(grad.reshape(shape))


def _binary(a, b, fwd, bwd_a, bwd_b, name):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes(a.shape, b.shape)
    with _quiet():
        out = fwd(a.data, b.data)

    def backward_fn(g):
        ga = _reduce_to(bwd_a(g, a.data, b.data, out), a.shape) if a.requires_grad else None
        gb = _reduce_to(bwd_b(g, a.data, b.data, out), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward_fn, name)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y, o: g, lambda g, x, y, o: g, "add")


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y, o: g, lambda g, x, y, o: -g, "sub")


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y, o: g * y, lambda g, x, y, o: g * x, "mul")


def div(a, b):
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y, o: g / y,
                   lambda g, x, y, o: -g * x / (y * y), "div")


def _unary(x, fwd, bwd, name):
    x = _as_tensor(x)
    with _quiet():
        out = fwd(x.data)

    def backward_fn(g):
        return (bwd(g, x.data, out),)

    return _result(out, (x,), backward_fn, name)


def neg(x):
    return _unary(x, lambda v: -v, lambda g, v, o: -g, "neg")


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0.0),
                  lambda g, v, o: g * (v > 0), "relu")


def _sigmoid_stable(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x):
    return _unary(x, _sigmoid_stable, lambda g, v, o: g * o * (1.0 - o), "sigmoid")


def tanh(x):
    return _unary(x, np.tanh, lambda g, v, o: g * (1.0 - o * o), "tanh")


def exp(x):
    return _unary(x, np.exp, lambda g, v, o: g * o, "exp")


def log(x):
    x = _as_tensor(x)
    if (x.data <= 0).any():
        raise NumericError("log: non-positive input element")
    return _unary(x, np.log, lambda g, v, o: g / v, "log")


def sqrt(x):
    x = _as_tensor(x)
    if (x.data < 0).any():
        raise NumericError("sqrt: negative input element")
    return _unary(x, np.sqrt,
                  lambda g, v, o: g * 0.5 / np.maximum(o, 1e-12), "sqrt")


def pow_const(x, c: float):
    x = _as_tensor(x)
    if c != int(c) and (x.data < 0).any():
        raise NumericError("pow: negative base with fractional exponent")
    return _unary(x, lambda v: v ** c,
                  lambda g, v, o: g * c * np.sign(v) * np.abs(v) ** (c - 1.0)
                  if c != int(c) else g * c * v ** (c - 1.0),
                  "pow")


def clamp(x, lo: float, hi: float):
    x = _as_tensor(x)
    mask_holder = {}

    def fwd(v):
        out = np.clip(v, lo, hi)
        mask_holder["m"] = (v >= lo) & (v <= hi)
        return out

    return _unary(x, fwd, lambda g, v, o: g * mask_holder["m"], "clamp")


def smooth_l1(x, beta: float = 1.0):
    """Elementwise smooth-L1: 0.5 d^2 / beta inside the knee, |d| - beta/2 outside."""
    x = _as_tensor(x)

    def fwd(v):
        a = np.abs(v)
        return np.where(a < beta, 0.5 * v * v / beta, a - 0.5 * beta)

    def bwd(g, v, o):
        return g * np.where(np.abs(v) < beta, v / beta, np.sign(v))

    return _unary(x, fwd, bwd, "smooth_l1")


# ---------------------------------------------------------------------------
# reductions / shape ops
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward_fn(g):
        gg = g
        if not keepdims:
            shape = list(x.shape)
            for a in axes:
                shape[a] = 1
            gg = g.reshape(shape)
        return (np.ascontiguousarray(np.broadcast_to(gg, x.shape)),)

    return _result(out, (x,), backward_fn, "sum")


def tmean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = 1
    for a in axes:
        n *= x.shape[a]
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def reshape(x, shape):
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def backward_fn(g):
        return (np.ascontiguousarray(g.reshape(x.shape)),)

    return _result(out, (x,), backward_fn, "reshape")


def transpose(x, axes):
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = x.data.transpose(axes)

    def backward_fn(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _result(out, (x,), backward_fn, "transpose")


def broadcast_to(x, shape):
    x = _as_tensor(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as e:
        raise ShapeError(f"broadcast_to: {x.shape} -> {shape}") from e

    def backward_fn(g):
        return (_reduce_to(g, x.shape),)

    return _result(out.copy(), (x,), backward_fn, "broadcast_to")


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of empty list")
    axis = axis % tensors[0].ndim
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward_fn(g):
        grads = []
        off = 0
        for t, s in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(off, off + s)
            grads.append(np.ascontiguousarray(g[tuple(idx)]) if t.requires_grad else None)
            off += s
        return tuple(grads)

    return _result(out, tuple(tensors), backward_fn, "concat")


def _is_advanced_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def getitem(x, idx):
    x = _as_tensor(x)
    out = x.data[idx]
    advanced = _is_advanced_index(idx)

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        if advanced:
            np.add.at(gx, idx, g)  # duplicate indices accumulate
        else:
            gx[idx] += g.reshape(gx[idx].shape)
        return (gx,)

    return _result(out, (x,), backward_fn, "getitem")


def index_rows(table, ids):
    """Row gather (embedding lookup). ids: 1-D integer array/list."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"index_rows: ids must be 1-D, got {ids.shape}")
    if table.ndim != 2:
        raise ShapeError(f"index_rows: table must be 2-D, got {table.shape}")
    if (ids < 0).any() or (ids >= table.shape[0]).any():
        raise ShapeError("index_rows: id out of range")
    out = table.data[ids]

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _result(out, (table,), backward_fn, "index_rows")


# ---------------------------------------------------------------------------
# linear algebra / network primitives
# ---------------------------------------------------------------------------


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backward_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward_fn, "matmul")


def conv2d(x, w, stride: int = 1, padding: int = 0, bias=None):
    """Cross-correlation of (Cin,H,W) input with (Cout,Cin,kh,kw) weights,
    plus an optional per-output-channel bias."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d: expects (C,H,W) x (O,C,kh,kw), got {x.shape} x {w.shape}")
    if x.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d: channel mismatch: input {x.shape} vs weight {w.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    kh, kw = w.shape[2], w.shape[3]
    if kh > x.shape[1] + 2 * padding or kw > x.shape[2] + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input "
            f"{x.shape[1] + 2 * padding}x{x.shape[2] + 2 * padding}"
        )
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (w.shape[0],):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({w.shape[0]},)")
    y, cols, xp_shape = kernels.conv2d_forward(x.data, w.data, stride, padding)
    if bias is not None:
        y = y + bias.data[:, None, None]

    def backward_fn(g):
        dx, dw = kernels.conv2d_backward(
            g, cols, xp_shape, x.shape, w.data, stride, padding
        )
        grads = [dx if x.requires_grad else None, dw if w.requires_grad else None]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)) if bias.requires_grad else None)
        return tuple(grads)

    parents = (x, w) if bias is None else (x, w, bias)
    return _result(y, parents, backward_fn, "conv2d")


def softmax(x, axis=-1):
    x = _as_tensor(x)
    axis = axis % x.ndim
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _result(out, (x,), backward_fn, "softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    """Normalization over the last axis with learnable scale and shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(
            f"layer_norm: gamma/beta must be ({x.shape[-1]},), got {gamma.shape}/{beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def backward_fn(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            gx = inv * (dxhat - m1 - xhat * m2)
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward_fn, "layer_norm")


def l2_channel_normalize(x, eps: float = 1e-6):
    """Normalize each (h,w) channel vector of a (C,H,W) map: v / (||v|| + eps)."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"l2_channel_normalize: expects (C,H,W), got {x.shape}")
    if eps <= 0:
        raise ShapeError("l2_channel_normalize: eps must be > 0")
    norm = np.sqrt((x.data * x.data).sum(axis=0, keepdims=True))
    denom = norm + eps
    out = x.data / denom

    def backward_fn(g):
        s = (g * x.data).sum(axis=0, keepdims=True)
        safe = np.maximum(norm, 1e-12)
        return (g / denom - x.data * (s / (safe * denom * denom)),)

    return _result(out, (x,), backward_fn, "l2_channel_normalize")


# ---------------------------------------------------------------------------
# recurrent cell
# ---------------------------------------------------------------------------


@dataclass
class LSTMParams:
    """Gate weights for one direction: order (input, forget, cell, output)."""

    w_ih: "Tensor"  # (4*d_h, d_in)
    w_hh: "Tensor"  # (4*d_h, d_h)
    bias: "Tensor"  # (4*d_h,)

    def hidden_size(self) -> int:
        return self.w_hh.shape[1]


def lstm_step(x, h_prev, c_prev, params: LSTMParams):
    """One gated-recurrence step. x: (d_in,), h/c: (d_h,) -> (h, c)."""
    d_h = params.hidden_size()
    d_in = params.w_ih.shape[1]
    if x.shape != (d_in,):
        raise ShapeError(f"lstm_step: input shape {x.shape} != ({d_in},)")
    if h_prev.shape != (d_h,) or c_prev.shape != (d_h,):
        raise ShapeError(f"lstm_step: state shapes {h_prev.shape}/{c_prev.shape} != ({d_h},)")
    gates = add(
        add(matmul(params.w_ih, reshape(x, (d_in, 1))),
            matmul(params.w_hh, reshape(h_prev, (d_h, 1)))),
        reshape(params.bias, (4 * d_h, 1)),
    )
    gates = reshape(gates, (4 * d_h,))
    i = sigmoid(getitem(gates, slice(0, d_h)))
    f = sigmoid(getitem(gates, slice(d_h, 2 * d_h)))
    g = tanh(getitem(gates, slice(2 * d_h, 3 * d_h)))
    o = sigmoid(getitem(gates, slice(3 * d_h, 4 * d_h)))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


# ---------------------------------------------------------------------------
# backward traversal
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate .grad on every reachable requires_grad tensor from a scalar loss."""
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad or loss.node is None:
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
        return

    # iterative post-order topological sort
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, processed = stack.pop()
        if processed:
            topo.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(topo):
        g = flowing.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            _accumulate(t, g)
        if t.node is None:
            continue
        parent_grads = t.node.backward(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float32)
            if pg.shape != p.shape:
                raise GraphError(
                    f"{t.node.name}: backward produced shape {pg.shape} for parent {p.shape}"
                )
            if id(p) in flowing:
                flowing[id(p)] = flowing[id(p)] + pg
            else:
                flowing[id(p)] = pg


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.astype(np.float32).copy()
    else:
        t.grad = t.grad + g


def zero_grad(params) -> None:
    for p in params:
        p.tensor.grad = None


# ---------------------------------------------------------------------------
# trainable parameters and the Adam update
# ---------------------------------------------------------------------------


@dataclass
class Parameter:
    """Named trainable tensor with Adam state."""

    name: str
    tensor: Tensor
    adam_m: np.ndarray = field(default=None)  # type: ignore[assignment]
    adam_v: np.ndarray = field(default=None)  # type: ignore[assignment]
    step_count: int = 0

    def __post_init__(self):
        self.tensor.requires_grad = True
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.tensor.data)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.tensor.data)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data


def adam_step(
    params,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-4,
) -> None:
    """Adam with bias correction; weight decay is decoupled and applied first."""
    params = list(params)
    if params:
        steps = {p.step_count for p in params}
        if len(steps) != 1:
            raise GraphError(f"adam_step: inconsistent step counts {sorted(steps)}")
    for p in params:
        g = p.tensor.grad
        if g is None:
            g = np.zeros_like(p.tensor.data)
        if weight_decay:
            p.tensor.data *= 1.0 - lr * weight_decay
        t = p.step_count + 1
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        p.tensor.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)
        p.step_count = t


# operator sugar -------------------------------------------------------------

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = lambda self, other: div(self, other)
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
Tensor.reshape = lambda self, shape: reshape(self, shape)
Tensor.sum = lambda self, axis=None, keepdims=False: tsum(self, axis, keepdims)
Tensor.mean = lambda self, axis=None, keepdims=False: tmean(self, axis, keepdims)
Tensor.broadcast_to = lambda self, shape: broadcast_to(self, shape)
