"""Dense tensors with reverse-mode automatic differentiation.

Eager tape: every op records its parents and a backward closure on the
output tensor. `backward()` on a scalar loss walks the tape in reverse
topological order and accumulates gradients into `requires_grad` leaves.

Float32 is the working precision; float64 is available (see `precision`)
for finite-difference gradient checks. Convolutions use the
(channels, height, width) layout everywhere.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (float64 for grad checks)."""
    global DEFAULT_DTYPE
    prev = DEFAULT_DTYPE
    DEFAULT_DTYPE = dtype
    try:
        yield
    finally:
        DEFAULT_DTYPE = prev


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._op = ""

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def backward(self):
        backward(self)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype), dtype=like.data.dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], bwd: Callable | None, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    track = _grad_enabled and any(p.requires_grad or p._parents for p in parents)
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward = bwd if track else None
    out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_finite_inputs(op: str, *tensors: Tensor):
    # forward ops promise no NaN/Inf on finite inputs; callers may assert via this
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise FloatingPointError(f"{op}: non-finite input values")


# -- elementwise -------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} not broadcastable") from None

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} not broadcastable") from None

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} not broadcastable") from None

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), bwd, "mul")


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def bwd(g):
        return (g * (x.data > 0),)

    return _make(data, (x,), bwd, "relu")


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def bwd(g):
        return (g * (1.0 - data * data),)

    return _make(data, (x,), bwd, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    data = _sigmoid(x.data)

    def bwd(g):
        return (g * data * (1.0 - data),)

    return _make(data, (x,), bwd, "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# -- shape ops ---------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.shape),)

    return _make(data, (x,), bwd, "reshape")


def flatten(x: Tensor) -> Tensor:
    """Flatten all dims after the first (batch) dim."""
    if x.data.ndim < 2:
        raise ShapeError(f"flatten: need at least 2 dims, got {x.shape}")
    return reshape(x, (x.shape[0], -1))


def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    shapes = [t.shape for t in tensors]
    base = list(shapes[0])
    for s in shapes[1:]:
        if len(s) != len(base) or any(s[i] != base[i] for i in range(len(base)) if i != axis % len(base)):
            raise ShapeError(f"concatenate: incompatible shapes {shapes} on axis {axis}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        sl = [slice(None)] * g.ndim
        outs = []
        for k in range(len(tensors)):
            sl[axis] = slice(offsets[k], offsets[k + 1])
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return _make(data, tuple(tensors), bwd, "concatenate")


# -- reductions --------------------------------------------------------


def tsum(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def bwd(g):
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return _make(data, (x,), bwd, "sum")


def tmean(x: Tensor) -> Tensor:
    n = x.size
    data = np.asarray(x.data.mean(), dtype=x.data.dtype)

    def bwd(g):
        return ((np.broadcast_to(g, x.shape) / n).astype(x.data.dtype),)

    return _make(data, (x,), bwd, "mean")


# -- linear algebra ----------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} incompatible")
    data = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _make(data, (a, b), bwd, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with x:(N,I), w:(I,O), b:(O,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"linear: shapes x={x.shape} w={w.shape} b={b.shape} incompatible")
    data = x.data @ w.data + b.data

    def bwd(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return _make(data, (x, w, b), bwd, "linear")


# -- convolution / pooling / upsampling --------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, layout (batch, channels, height, width).

    w: (filters, channels, kh, kw), b: (filters,).
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: need 4-D x and w, got x={x.shape} w={w.shape}")
    B, C, H, W = x.shape
    F, Cw, kh, kw = w.shape
    if C != Cw or b.shape != (F,):
        raise ShapeError(f"conv2d: shapes x={x.shape} w={w.shape} b={b.shape} incompatible")
    s, p = stride, padding
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d: empty output for x={x.shape} kernel=({kh},{kw}) stride={s} pad={p}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    # (B, C, Ho, Wo, kh, kw) -> (B*Ho*Wo, C*kh*kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(F, C * kh * kw)
    out = (cols @ wmat.T + b.data).reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2)

    def bwd(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, F)
        gb = gmat.sum(axis=0)
        gw = (gmat.T @ cols).reshape(F, C, kh, kw)
        gcols = (gmat @ wmat).reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros((B, C, H + 2 * p, W + 2 * p), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + Ho * s : s, j : j + Wo * s : s] += gcols[:, :, :, :, i, j]
        gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
        return gx, gw, gb

    return _make(out.copy(), (x, w, b), bwd, "conv2d")


def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping max pooling with window k (H, W divisible by k)."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d: need 4-D input, got {x.shape}")
    B, C, H, W = x.shape
    if H % k or W % k:
        raise ShapeError(f"maxpool2d: dims {H}x{W} not divisible by {k}")
    Ho, Wo = H // k, W // k
    tiles = x.data.reshape(B, C, Ho, k, Wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, k * k)
    idx = tiles.argmax(axis=-1)
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        gt = np.zeros((B, C, Ho, Wo, k * k), dtype=g.dtype)
        np.put_along_axis(gt, idx[..., None], g[..., None], axis=-1)
        gx = gt.reshape(B, C, Ho, Wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
        return (gx,)

    return _make(out, (x,), bwd, "maxpool2d")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling on (B, C, H, W)."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2x: need 4-D input, got {x.shape}")
    B, C, H, W = x.shape
    data = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def bwd(g):
        gx = g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5))
        return (gx,)

    return _make(data, (x,), bwd, "upsample2x")


# -- losses ------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Mean softmax cross-entropy of (N, K) logits against int targets (N,).

    Optional per-row weights; rows with weight 0 are ignored. The mean is
    taken over the total weight.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: need (N,K) logits, got {logits.shape}")
    targets = np.asarray(targets)
    N, K = logits.shape
    if targets.shape != (N,):
        raise ShapeError(f"softmax_cross_entropy: targets {targets.shape} vs logits {logits.shape}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(sez)
    ce = -logp[np.arange(N), targets]
    if weights is None:
        denom = float(N)
        loss = ce.sum() / denom
        wcol = None
    else:
        w = np.asarray(weights, dtype=z.dtype)
        denom = max(float(w.sum()), 1e-12)
        loss = float((ce * w).sum() / denom)
        wcol = (w / denom)[:, None]

    def bwd(g):
        p = ez / sez
        p[np.arange(N), targets] -= 1.0
        if wcol is None:
            p /= denom
        else:
            p *= wcol
        return (g * p,)

    return _make(np.asarray(loss, dtype=z.dtype), (logits,), bwd, "softmax_cross_entropy")


def bce_with_logits(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Mean binary cross-entropy on logits against float targets in [0,1]."""
    t = np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: targets {t.shape} vs logits {logits.shape}")
    z = logits.data
    # stable: max(z,0) - z*t + log(1+exp(-|z|))
    per = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    if weights is None:
        denom = float(z.size)
        loss = per.sum() / denom
        warr = None
    else:
        warr = np.asarray(weights, dtype=z.dtype)
        denom = max(float(warr.sum()), 1e-12)
        loss = float((per * warr).sum() / denom)

    def bwd(g):
        d = _sigmoid(z) - t
        if warr is None:
            d /= denom
        else:
            d = d * warr / denom
        return (g * d,)

    return _make(np.asarray(loss, dtype=z.dtype), (logits,), bwd, "bce_with_logits")


def l1_loss(a: Tensor, b: Tensor, reduction: str = "sum") -> Tensor:
    """L1 distance. reduction: 'sum', 'mean' (per element) or 'mean_batch'
    (sum per sample, averaged over the first axis)."""
    if a.shape != b.shape:
        raise ShapeError(f"l1_loss: shapes {a.shape} vs {b.shape} differ")
    diff = a.data - b.data
    total = np.abs(diff).sum()
    if reduction == "sum":
        scale = 1.0
    elif reduction == "mean":
        scale = 1.0 / a.size
    elif reduction == "mean_batch":
        scale = 1.0 / a.shape[0]
    else:
        raise ValueError(f"l1_loss: unknown reduction {reduction!r}")
    loss = np.asarray(total * scale, dtype=a.data.dtype)

    def bwd(g):
        s = np.sign(diff) * scale
        return g * s, -(g * s)

    return _make(loss, (a, b), bwd, "l1_loss")


# -- backward pass -----------------------------------------------------


def backward(loss: Tensor):
    """Reverse-mode sweep from a scalar loss; accumulates into leaf .grad."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg
        # free the tape as we go
        node._backward = None
        node._parents = ()


# -- optimizers --------------------------------------------------------


class SGD:
    """Plain gradient descent: p <- p - lr * g."""

    def __init__(self, params: dict[str, Tensor], lr: float):
        if lr <= 0:
            raise ValueError(f"SGD: learning_rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.step_count = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"SGD: non-finite gradient for parameter {name!r}")
            p.data -= (self.lr * p.grad).astype(p.data.dtype)


class Adam:
    """Adam with standard bias correction."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"Adam: learning_rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"Adam: non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


def make_optimizer(kind: str, params: dict[str, Tensor], lr: float):
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer kind {kind!r}")


# -- gradient checking -------------------------------------------------


def finite_difference_check(fn: Callable[..., Tensor], inputs: Iterable[Tensor],
                            eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` maps the given float64 tensors to a scalar Tensor. Relative error
    per element is |a - n| / max(|a| + |n|, 1e-8).
    """
    inputs = list(inputs)
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("finite_difference_check: inputs must be float64")
        t.grad = None
    loss = fn(*inputs)
    backward(loss)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(*inputs).item()
            flat[i] = orig - eps
            lo = fn(*inputs).item()
            flat[i] = orig
            nflat[i] = (hi - lo) / (2 * eps)
        err = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
        # ignore places where both are essentially zero
        err[np.maximum(np.abs(analytic), np.abs(numeric)) < 1e-10] = 0.0
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst
