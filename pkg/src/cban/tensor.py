"""Dense float64 tensors with a reverse-mode gradient tape.

Everything the settling dynamics and the unrolled training loop need lives
here: elementwise arithmetic, matrix products, the half-padded convolution
and its index-reversed counterpart, 2x2 average pooling with its
nearest-neighbor upsampling partner, and a GradTape that differentiates any
scalar built from these operations with respect to any tensor that fed it.

Tensors are immutable values; every operation returns a fresh tensor. A
batch dimension, when present, is leading and optional: feature maps are
(channels, height, width) or (batch, channels, height, width), flat layers
are (units,) or (batch, units). Construction rejects NaN/Inf outright so a
numerical blow-up surfaces at the operation that produced it.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "DomainError",
    "Tensor",
    "ConvKernel",
    "GradTape",
    "grad",
    "matmul",
    "transpose",
    "reshape",
    "tensor_sum",
    "tanh",
    "atanh",
    "leaky_sigmoid",
    "leaky_sigmoid_inverse",
    "barrier_tanh",
    "barrier_leaky",
    "softplus",
    "clip",
    "where",
    "conv2d_half",
    "reverse_kernel",
    "avg_pool2",
    "nn_upsample2",
]


class DomainError(ValueError):
    """An input lies outside an operation's mathematical domain."""


_ACTIVE_TAPE = None


def _first_bad_index(arr, good):
    return tuple(int(i) for i in np.argwhere(~good)[0])


class Tensor:
    """Immutable dense float64 array, optionally recorded on a GradTape."""

    __slots__ = ("data", "_parents", "_vjp", "_tape")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.size == 0:
            raise ValueError("tensors must have at least one element")
        finite = np.isfinite(arr)
        if not finite.all():
            raise ValueError(
                f"non-finite value at index {_first_bad_index(arr, finite)} "
                f"in tensor of shape {arr.shape}"
            )
        self.data = arr
        self._parents = ()
        self._vjp = None
        self._tape = None

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
        return float(self.data)

    def sum(self, axis=None):
        return tensor_sum(self, axis=axis)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def __add__(self, other):
        return _binary_elementwise(self, other, np.add, _add_vjp)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary_elementwise(self, other, np.subtract, _sub_vjp)

    def __rsub__(self, other):
        return _binary_elementwise(self, other, np.subtract, _sub_vjp, swap=True)

    def __mul__(self, other):
        return _binary_elementwise(self, other, np.multiply, _mul_vjp)

    __rmul__ = __mul__

    def __neg__(self):
        return _from_op(-self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data, parents, vjp):
    out = Tensor(data)
    tape = _ACTIVE_TAPE
    if tape is not None:
        out._parents = tuple(parents)
        out._vjp = vjp
        out._tape = tape
        tape._register(out)
    return out


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _add_vjp(a, b, out):
    return lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _sub_vjp(a, b, out):
    return lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _mul_vjp(a, b, out):
    return lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _binary_elementwise(a, b, fwd, make_vjp, swap=False):
    at = _as_tensor(a)
    bt = _as_tensor(b)
    if swap:
        at, bt = bt, at
    data = fwd(at.data, bt.data)
    return _from_op(data, (at, bt), make_vjp(at.data, bt.data, data))


def matmul(a, b):
    """a @ b with a of shape (n,) or (batch, n) and b a 2-d matrix."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if b.ndim != 2:
        raise ValueError(f"matmul expects a 2-d right operand, got {b.shape}")
    if a.ndim not in (1, 2):
        raise ValueError(f"matmul expects a 1-d or 2-d left operand, got {a.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ bd.T
        gb = np.outer(ad, g) if ad.ndim == 1 else ad.T @ g
        return ga, gb

    return _from_op(data, (a, b), vjp)


def transpose(a):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose expects a 2-d tensor, got {a.shape}")
    return _from_op(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape
    return _from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tensor_sum(a, axis=None):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis)
    in_shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, in_shape).copy(),)
        g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, in_shape).copy(),)

    return _from_op(data, (a,), vjp)


def tanh(a):
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _from_op(y, (a,), lambda g: (g * (1.0 - y * y),))


def atanh(a):
    """Inverse tanh; strict domain |x| < 1, error names the offending index."""
    a = _as_tensor(a)
    ok = np.abs(a.data) < 1.0
    if not ok.all():
        raise DomainError(
            f"atanh domain violation (|x| >= 1) at index {_first_bad_index(a.data, ok)}"
        )
    x = a.data
    return _from_op(np.arctanh(x), (a,), lambda g: (g / (1.0 - x * x),))


def _leaky_forward(x, alpha):
    return np.where(x > 1.0, alpha * (x - 1.0) + 1.0,
                    np.where(x < -1.0, alpha * (x + 1.0) - 1.0, x))


def _leaky_inverse(x, alpha):
    return np.where(x > 1.0, (x - 1.0) / alpha + 1.0,
                    np.where(x < -1.0, (x + 1.0) / alpha - 1.0, x))


def leaky_sigmoid(a, alpha):
    """Identity on [-1, 1], slope alpha outside, continuous at +/-1."""
    a = _as_tensor(a)
    x = a.data
    slope = np.where(np.abs(x) > 1.0, alpha, 1.0)
    return _from_op(_leaky_forward(x, alpha), (a,), lambda g: (g * slope,))


def leaky_sigmoid_inverse(a, alpha):
    a = _as_tensor(a)
    x = a.data
    slope = np.where(np.abs(x) > 1.0, 1.0 / alpha, 1.0)
    return _from_op(_leaky_inverse(x, alpha), (a,), lambda g: (g * slope,))


def _xlogx(t):
    out = np.zeros_like(t)
    pos = t > 0.0
    out[pos] = t[pos] * np.log(t[pos])
    return out


def _barrier_tanh_np(x):
    # 0.5*(1+x)ln(1+x) + 0.5*(1-x)ln(1-x), with 0*ln(0) := 0 at the endpoints
    return 0.5 * _xlogx(1.0 + x) + 0.5 * _xlogx(1.0 - x)


def _barrier_leaky_np(x, alpha):
    inner = 0.5 * x * x
    hi = (x * x + (1.0 - alpha) * (1.0 - 2.0 * x)) / (2.0 * alpha)
    lo = (x * x + (1.0 - alpha) * (1.0 + 2.0 * x)) / (2.0 * alpha)
    return np.where(x > 1.0, hi, np.where(x < -1.0, lo, inner))


def barrier_tanh(a):
    """Integral of atanh from 0 to x; domain |x| <= 1 (endpoints by continuity)."""
    a = _as_tensor(a)
    ok = np.abs(a.data) <= 1.0
    if not ok.all():
        raise DomainError(
            f"barrier domain violation (|x| > 1) at index {_first_bad_index(a.data, ok)}"
        )
    x = a.data
    return _from_op(_barrier_tanh_np(x), (a,), lambda g: (g * np.arctanh(x),))


def barrier_leaky(a, alpha):
    """Integral of the leaky-sigmoid inverse from 0 to x; defined on all reals."""
    a = _as_tensor(a)
    x = a.data
    return _from_op(
        _barrier_leaky_np(x, alpha), (a,), lambda g: (g * _leaky_inverse(x, alpha),)
    )


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a):
    """log(1 + exp(x)), overflow-safe: returns x directly once x > 30."""
    a = _as_tensor(a)
    x = a.data
    safe = np.minimum(x, 30.0)
    y = np.where(x > 30.0, x, np.log1p(np.exp(safe)))
    return _from_op(y, (a,), lambda g: (g * _sigmoid_np(x),))


def clip(a, lo, hi):
    a = _as_tensor(a)
    x = a.data
    inside = (x > lo) & (x < hi)
    return _from_op(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def where(mask, a, b):
    """Elementwise select: mask is a fixed boolean array, not differentiated."""
    mask = np.asarray(mask, dtype=bool)
    a = _as_tensor(a)
    b = _as_tensor(b)
    data = np.where(mask, a.data, b.data)

    def vjp(g):
        return (
            _unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape),
        )

    return _from_op(data, (a, b), vjp)


class ConvKernel:
    """Convolution weights of shape (out_channels, in_channels, kh, kw).

    Kernel extents must be odd: half padding preserves spatial dimensions
    only for odd kernels.
    """

    __slots__ = ("weights",)

    def __init__(self, weights):
        w = weights if isinstance(weights, Tensor) else Tensor(weights)
        if w.ndim != 4:
            raise ValueError(f"kernel must be 4-d (q, r, kh, kw), got {w.shape}")
        if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
            raise ValueError(f"kernel extents must be odd, got {w.shape[2:]}")
        self.weights = w

    @property
    def shape(self):
        return self.weights.shape

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    def __repr__(self):
        return f"ConvKernel(shape={self.shape})"


def _flip_kernel_np(w):
    return np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])


def reverse_kernel(k):
    """Swap channel axes and reverse both spatial axes; an involution.

    A kernel and its reverse implement transposed linear maps under
    half-padded convolution (see conv2d_half), which is how bidirectional
    symmetric connectivity is realized without storing reverse weights.
    """
    w = k.weights
    out = _from_op(_flip_kernel_np(w.data), (w,), lambda g: (_flip_kernel_np(g),))
    return ConvKernel(out)


def _pad_hw(x, pa, pb):
    pad = [(0, 0)] * (x.ndim - 2) + [(pa, pa), (pb, pb)]
    return np.pad(x, pad)


def _conv_half_np(x, w):
    # x: (b, r, H, W), w: (q, r, a, b) -> (b, q, H, W), zero padding (k-1)/2
    ka, kb = w.shape[2], w.shape[3]
    xp = _pad_hw(x, (ka - 1) // 2, (kb - 1) // 2)
    win = sliding_window_view(xp, (ka, kb), axis=(2, 3))  # (b, r, H, W, a, b)
    return np.einsum("qruv,nrhwuv->nqhw", w, win, optimize=True)


def conv2d_half(x, k):
    """Half-padded 2-d convolution preserving spatial dims.

    out[q, i, j] = sum_{r,a,b} k[q, r, a, b] * x_padded[r, i + a, j + b],
    with zero padding of (extent - 1) / 2 on each side. Accepts an optional
    leading batch dimension.
    """
    x = _as_tensor(x)
    if x.ndim not in (3, 4):
        raise ValueError(f"conv input must be (c, H, W) or (batch, c, H, W), got {x.shape}")
    batched = x.ndim == 4
    if x.shape[-3] != k.in_channels:
        raise ValueError(
            f"channel mismatch: input has {x.shape[-3]}, kernel expects {k.in_channels}"
        )
    w = k.weights
    xd = x.data if batched else x.data[None]
    wd = w.data
    out = np.einsum("qruv,nrhwuv->nqhw",
                    wd,
                    _windows(xd, wd.shape[2], wd.shape[3]),
                    optimize=True)

    def vjp(g):
        gb = g if batched else g[None]
        gx = _conv_half_np(gb, _flip_kernel_np(wd))
        gw = np.einsum("nqhw,nrhwuv->qruv",
                       gb,
                       _windows(xd, wd.shape[2], wd.shape[3]),
                       optimize=True)
        return (gx if batched else gx[0]), gw

    return _from_op(out if batched else out[0], (x, w), vjp)


def _windows(xb, ka, kb):
    xp = _pad_hw(xb, (ka - 1) // 2, (kb - 1) // 2)
    return sliding_window_view(xp, (ka, kb), axis=(2, 3))


def avg_pool2(x):
    """2x2 average pooling; spatial extents must be even."""
    x = _as_tensor(x)
    if x.ndim not in (3, 4):
        raise ValueError(f"pool input must be (c, H, W) or (batch, c, H, W), got {x.shape}")
    H, W = x.shape[-2], x.shape[-1]
    if H % 2 or W % 2:
        raise ValueError(f"avg_pool2 requires even spatial extents, got {(H, W)}")
    lead = x.shape[:-2]
    blocks = x.data.reshape(lead + (H // 2, 2, W // 2, 2))
    out = blocks.mean(axis=(-3, -1))

    def vjp(g):
        return (0.25 * np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1),)

    return _from_op(out, (x,), vjp)


def nn_upsample2(x):
    """2x2 nearest-neighbor upsampling: each element becomes a 2x2 block."""
    x = _as_tensor(x)
    if x.ndim not in (3, 4):
        raise ValueError(f"upsample input must be (c, h, w) or (batch, c, h, w), got {x.shape}")
    out = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)
    h, w = x.shape[-2], x.shape[-1]
    lead = x.shape[:-2]

    def vjp(g):
        return (g.reshape(lead + (h, 2, w, 2)).sum(axis=(-3, -1)),)

    return _from_op(out, (x,), vjp)


class GradTape:
    """Records tensor operations for reverse-mode differentiation.

    Single-owner: at most one tape is active at a time, entered with a
    `with` block. Every operation executed inside the block is recorded;
    `gradient` then returns d(output)/d(input) for a scalar output and any
    tensors that participated.
    """

    def __init__(self):
        self._leaf_ids = set()
        self._leaf_refs = []
        self._entered = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a GradTape is already active; tapes do not nest")
        if self._entered:
            raise RuntimeError("a GradTape cannot be reused")
        self._entered = True
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def _register(self, out):
        for p in out._parents:
            if p._tape is None:
                if id(p) not in self._leaf_ids:
                    self._leaf_ids.add(id(p))
                    self._leaf_refs.append(p)
            elif p._tape is not self:
                raise RuntimeError("tensor recorded on a different tape")

    def _on_tape(self, t):
        return t._tape is self or id(t) in self._leaf_ids

    def gradient(self, output, inputs):
        """Gradients of a recorded scalar with respect to recorded inputs."""
        if isinstance(output, ConvKernel):
            output = output.weights
        if output.size != 1:
            raise ValueError(f"gradient output must be scalar, got shape {output.shape}")
        if output._tape is not self:
            raise ValueError("output was not recorded on this tape")
        targets = [t.weights if isinstance(t, ConvKernel) else t for t in inputs]
        for t in targets:
            if not self._on_tape(t):
                raise ValueError("an input was not recorded on this tape")

        topo = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p._tape is self and id(p) not in visited:
                    stack.append((p, False))

        grads = {id(output): np.ones_like(output.data)}
        for node in reversed(topo):
            g = grads.get(id(node))
            if g is None or node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        return [grads.get(id(t), np.zeros_like(t.data)) for t in targets]


def grad(tape, scalar_output, inputs):
    """Functional form of GradTape.gradient."""
    return tape.gradient(scalar_output, inputs)
