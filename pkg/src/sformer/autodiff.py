"""Dense float32 tensors with reverse-mode automatic differentiation.

Every network block, loss term, and optimizer in this package is built from
the primitives here. Forward values are float32 numpy arrays; each operation
records its parent tensors and a backward closure, and ``Tensor.backward()``
replays the closures in reverse topological order, accumulating gradients
into ``.grad`` arrays of identical shape.

Conventions:
  * arrays are row-major float32; non-finite op outputs raise ``NumericError``
  * convolution is cross-correlation (no kernel flip)
  * GELU uses the tanh approximation
  * ``sqrt`` and ``atan2`` guard their backward denominators so gradients stay
    finite at the origin (forward values are exact)
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError

__all__ = [
    "Tensor",
    "Parameter",
    "ParameterRegistry",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "depthwise_conv2d",
    "fft2d_pair",
    "gelu",
    "grad_check",
    "layer_norm",
    "linear",
    "max_pool2d",
    "relu",
    "sigmoid",
    "softmax",
    "where",
]

# When True every op validates that its output is finite. Cheap relative to
# the matmuls that dominate runtime and it enforces the no-NaN contract.
STRICT_FINITE = True

_F32 = np.float32

# Working precision for all op outputs. Float32 is the production setting;
# grad_check can switch to float64 so central differences become trustworthy
# (tiny steps without cancellation noise).
DTYPE = np.float32


def _as_array(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x.astype(DTYPE, copy=False)
    return np.asarray(x, dtype=DTYPE)


def _check_finite(data: np.ndarray, op: str) -> np.ndarray:
    if STRICT_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by '{op}'")
    return data


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce a gradient back to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    """A float32 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward: Callable | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- autodiff ----------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar; gradients accumulate into leaves."""
        if self.size != 1:
            raise DimensionError(f"backward() needs a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
            if node._parents:
                node.grad = None  # free intermediate gradients eagerly

    # -- operator sugar ------------------------------------------------------
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

    def __pow__(self, c):
        return pow_scalar(self, c)

    def __matmul__(self, other):
        return matmul(self, other)

    # method aliases used throughout the model code
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return tmax(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)


class Parameter(Tensor):
    """A named learnable tensor; gradient buffer is zero-initialized."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class ParameterRegistry:
    """Ordered, uniquely-named collection of Parameters for a whole model."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def adopt(self, param: Parameter) -> Parameter:
        if param.name in self._params:
            raise ValueError(f"duplicate parameter name {param.name!r}")
        self._params[param.name] = param
        return param

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def n_parameters(self) -> int:
        return sum(p.size for p in self._params.values())


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor],
          backward: Callable | None) -> Tensor:
    data = _check_finite(data.astype(DTYPE, copy=False), op)
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=tuple(parents), backward=backward)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(out_data, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _make(out_data, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(out_data, "mul", (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / b.data)
        if b.requires_grad:
            b._accumulate(-g * a.data / (b.data * b.data))

    return _make(out_data, "div", (a, b), backward)


def pow_scalar(a, c: float) -> Tensor:
    a = _wrap(a)
    c = float(c)
    out_data = a.data ** c

    def backward(g):
        a._accumulate(g * c * a.data ** (c - 1.0))

    return _make(out_data, "pow", (a,), backward)


def texp(a) -> Tensor:
    a = _wrap(a)
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _make(out_data, "exp", (a,), backward)


def tlog(a) -> Tensor:
    a = _wrap(a)
    out_data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(out_data, "log", (a,), backward)


def tsqrt(a) -> Tensor:
    a = _wrap(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        # denominator floored so the subgradient at 0 stays finite
        a._accumulate(g / (2.0 * np.maximum(out_data, _F32(1e-6))))

    return _make(out_data, "sqrt", (a,), backward)


def ttanh(a) -> Tensor:
    a = _wrap(a)
    out_data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, "tanh", (a,), backward)


def tsin(a) -> Tensor:
    a = _wrap(a)
    out_data = np.sin(a.data)

    def backward(g):
        a._accumulate(g * np.cos(a.data))

    return _make(out_data, "sin", (a,), backward)


def tcos(a) -> Tensor:
    a = _wrap(a)
    out_data = np.cos(a.data)

    def backward(g):
        a._accumulate(-g * np.sin(a.data))

    return _make(out_data, "cos", (a,), backward)


def tabs(a) -> Tensor:
    a = _wrap(a)
    out_data = np.abs(a.data)

    def backward(g):
        a._accumulate(g * np.sign(a.data))

    return _make(out_data, "abs", (a,), backward)


def atan2(y, x) -> Tensor:
    y, x = _wrap(y), _wrap(x)
    out_data = np.arctan2(y.data, x.data)

    def backward(g):
        denom = np.maximum(x.data * x.data + y.data * y.data, _F32(1e-12))
        if y.requires_grad:
            y._accumulate(g * x.data / denom)
        if x.requires_grad:
            x._accumulate(-g * y.data / denom)

    return _make(out_data, "atan2", (y, x), backward)


def clamp(a, lo=None, hi=None) -> Tensor:
    a = _wrap(a)
    out_data = np.clip(a.data, lo, hi)

    def backward(g):
        mask = np.ones_like(a.data)
        if lo is not None:
            mask *= a.data >= lo
        if hi is not None:
            mask *= a.data <= hi
        a._accumulate(g * mask)

    return _make(out_data, "clamp", (a,), backward)


def where(mask: np.ndarray, a, b) -> Tensor:
    """Elementwise select with a constant boolean mask."""
    a, b = _wrap(a), _wrap(b)
    mask = np.asarray(mask, dtype=bool)
    out_data = np.where(mask, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.where(mask, g, 0.0))
        if b.requires_grad:
            b._accumulate(np.where(mask, 0.0, g))

    return _make(out_data, "where", (a, b), backward)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a) -> Tensor:
    a = _wrap(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        a._accumulate(g * (a.data > 0))

    return _make(out_data, "relu", (a,), backward)


_GELU_C = _F32(math.sqrt(2.0 / math.pi))
_GELU_A = _F32(0.044715)


def gelu(a) -> Tensor:
    """GELU, tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))."""
    a = _wrap(a)
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def backward(g):
        sech2 = 1.0 - t * t
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        a._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner))

    return _make(out_data, "gelu", (a,), backward)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, "sigmoid", (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along one axis; max-shifted for stability (gradient exact)."""
    a = _wrap(a)
    shift = a.data.max(axis=axis, keepdims=True)
    e = texp(sub(a, Tensor(shift)))
    return div(e, tsum(e, axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axes(axis, a.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        a._accumulate(np.broadcast_to(g, a.data.shape))

    return _make(np.asarray(out_data), "sum", (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.data.shape[ax] for ax in axes])) if axes else 1
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def tmax(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max-reduce over a single axis (or all); ties route to the first max."""
    a = _wrap(a)
    if axis is None:
        flat = reshape(a, a.size)
        out = tmax(flat, axis=0, keepdims=False)
        return out
    ax = axis % a.ndim
    out_data = a.data.max(axis=ax, keepdims=keepdims)
    idx = np.argmax(a.data, axis=ax)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        onehot = np.zeros_like(a.data)
        np.put_along_axis(onehot, np.expand_dims(idx, ax), 1.0, axis=ax)
        a._accumulate(onehot * g)

    return _make(np.asarray(out_data), "max", (a,), backward)


def reshape(a, *shape) -> Tensor:
    a = _wrap(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _make(out_data, "reshape", (a,), backward)


def transpose(a, *axes) -> Tensor:
    a = _wrap(a)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    out_data = a.data.transpose(axes)
    inv = np.argsort(axes)

    def backward(g):
        a._accumulate(g.transpose(inv))

    return _make(out_data, "transpose", (a,), backward)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _wrap(a)
    ax = axis % a.ndim
    sl = [slice(None)] * a.ndim
    sl[ax] = slice(start, start + length)
    sl = tuple(sl)
    out_data = a.data[sl]

    def backward(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        a._accumulate(full)

    return _make(np.ascontiguousarray(out_data), "narrow", (a,), backward)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    ax = axis % ts[0].ndim
    out_data = np.concatenate([t.data for t in ts], axis=ax)
    sizes = [t.data.shape[ax] for t in ts]

    def backward(g):
        offset = 0
        for t, s in zip(ts, sizes):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(offset, offset + s)
                t._accumulate(g[tuple(sl)])
            offset += s

    return _make(out_data, "concat", tuple(ts), backward)


def matmul(a, b) -> Tensor:
    """Batched matrix product; both operands must have ndim >= 2."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _make(out_data, "matmul", (a, b), backward)


# ---------------------------------------------------------------------------
# neural-network structured ops
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(N,C,Hp,Wp) -> (N, C*k*k, Ho*Wo) patch matrix of a padded input."""
    n, c, hp, wp = xp.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    s0, s1, s2, s3 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, (n, c, k, k, ho, wo), (s0, s1, s2, s3, s2 * stride, s3 * stride))
    return np.ascontiguousarray(windows).reshape(n, c * k * k, ho * wo), ho, wo


def conv2d(x, w, b, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation, NCHW input and OIKK weight."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input/weight, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, cin_w, k, k2 = w.shape
    if cin != cin_w or k != k2:
        raise DimensionError(f"conv2d shape mismatch: input {x.shape} vs weight {w.shape}")
    if h + 2 * padding < k or wd + 2 * padding < k:
        raise DimensionError(f"kernel {k} does not fit padded input {x.shape} (padding {padding})")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols, ho, wo = _im2col(xp, k, stride)
    w2 = w.data.reshape(cout, cin * k * k)
    out_data = (w2 @ cols).reshape(n, cout, ho, wo) + b.data.reshape(1, cout, 1, 1)

    def backward(g):
        gm = g.reshape(n, cout, ho * wo)
        if b.requires_grad:
            b._accumulate(gm.sum(axis=(0, 2)))
        if w.requires_grad:
            dw = np.einsum("nol,ncl->oc", gm, cols, optimize=True)
            w._accumulate(dw.reshape(w.data.shape))
        if x.requires_grad:
            dcols = np.matmul(w2.T, gm)  # (N, C*k*k, L)
            dcols = dcols.reshape(n, cin, k, k, ho, wo)
            dxp = np.zeros_like(xp)
            for ki in range(k):
                for kj in range(k):
                    dxp[:, :, ki:ki + ho * stride:stride, kj:kj + wo * stride:stride] += \
                        dcols[:, :, ki, kj]
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(dxp)

    return _make(out_data, "conv2d", (x, w, b), backward)


def conv_transpose2d(x, w, b, stride: int = 2) -> Tensor:
    """Transposed convolution with kernel size equal to stride (no overlap)."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    n, cin, h, wd = x.shape
    cin_w, cout, k, k2 = w.shape
    if cin != cin_w or k != k2:
        raise DimensionError(
            f"conv_transpose2d shape mismatch: input {x.shape} vs weight {w.shape}")
    if k != stride:
        raise DimensionError(f"kernel size {k} must equal stride {stride}")
    out = np.einsum("nihw,iokl->nohkwl", x.data, w.data, optimize=True)
    out_data = out.reshape(n, cout, h * k, wd * k) + b.data.reshape(1, cout, 1, 1)

    def backward(g):
        g6 = g.reshape(n, cout, h, k, wd, k)
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            w._accumulate(np.einsum("nihw,nohkwl->iokl", x.data, g6, optimize=True))
        if x.requires_grad:
            x._accumulate(np.einsum("nohkwl,iokl->nihw", g6, w.data, optimize=True))

    return _make(out_data, "conv_transpose2d", (x, w, b), backward)


def max_pool2d(x, window: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pooling; spatial dims must be divisible by stride."""
    x = _wrap(x)
    if window != stride:
        raise DimensionError(f"max_pool2d supports window == stride, got {window}/{stride}")
    n, c, h, w = x.shape
    if h % stride or w % stride:
        raise DimensionError(f"spatial dims {h}x{w} not divisible by pool stride {stride}")
    ho, wo = h // stride, w // stride
    tiles = x.data.reshape(n, c, ho, stride, wo, stride).transpose(0, 1, 2, 4, 3, 5)
    tiles = tiles.reshape(n, c, ho, wo, stride * stride)
    idx = np.argmax(tiles, axis=-1)
    out_data = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dtiles = np.zeros_like(tiles)
        np.put_along_axis(dtiles, idx[..., None], g[..., None], axis=-1)
        dx = dtiles.reshape(n, c, ho, wo, stride, stride).transpose(0, 1, 2, 4, 3, 5)
        x._accumulate(dx.reshape(n, c, h, w))

    return _make(out_data, "max_pool2d", (x,), backward)


def depthwise_conv2d(x, w, b) -> Tensor:
    """3x3 depthwise convolution, padding 1, with a channel multiplier.

    Weight has shape (m*C, 3, 3); output channel j convolves input channel
    j % C, so the multiplier blocks are laid out [block0 | block1 | ...].
    """
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    n, c, h, wd = x.shape
    mc, k, k2 = w.shape
    if k != 3 or k2 != 3 or mc % c:
        raise DimensionError(f"depthwise weight {w.shape} incompatible with input {x.shape}")
    m = mc // c
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    xt = np.tile(xp, (1, m, 1, 1))  # channel j sees input j % c
    out_data = np.zeros((n, mc, h, wd), dtype=DTYPE)
    for di in range(3):
        for dj in range(3):
            out_data += w.data[None, :, di, dj, None, None] * xt[:, :, di:di + h, dj:dj + wd]
    out_data += b.data.reshape(1, mc, 1, 1)

    def backward(g):
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            dw = np.zeros_like(w.data)
            for di in range(3):
                for dj in range(3):
                    dw[:, di, dj] = (g * xt[:, :, di:di + h, dj:dj + wd]).sum(axis=(0, 2, 3))
            w._accumulate(dw)
        if x.requires_grad:
            dxt = np.zeros_like(xt)
            for di in range(3):
                for dj in range(3):
                    dxt[:, :, di:di + h, dj:dj + wd] += w.data[None, :, di, dj, None, None] * g
            dxp = dxt.reshape(n, m, c, h + 2, wd + 2).sum(axis=1)
            x._accumulate(dxp[:, :, 1:-1, 1:-1])

    return _make(out_data, "depthwise_conv2d", (x, w, b), backward)


def linear(x, w, b) -> Tensor:
    """Affine map over the last dim: x(...,Din) @ w(Dout,Din)^T + b(Dout)."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.shape[-1] != w.shape[-1]:
        raise DimensionError(f"linear: input last dim {x.shape} vs weight {w.shape}")
    return add(matmul(x, transpose(w, 1, 0)), b)


def layer_norm(x, gamma, beta, axes=(-1,), eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance over `axes`, then affine."""
    x = _wrap(x)
    axes = _norm_axes(axes, x.ndim)
    count = int(np.prod([x.shape[ax] for ax in axes]))
    if count == 0:
        raise DimensionError(f"layer_norm over empty axes {axes} of shape {x.shape}")
    mu = tmean(x, axis=axes, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=axes, keepdims=True)
    xhat = div(centered, tsqrt(add(var, eps)))
    return add(mul(_wrap(gamma), xhat), _wrap(beta))


# ---------------------------------------------------------------------------
# 2-d Fourier transform primitives (complex packed on axis -3)
# ---------------------------------------------------------------------------

def _pair_to_complex(data: np.ndarray) -> np.ndarray:
    return data[..., 0, :, :].astype(np.float64) + 1j * data[..., 1, :, :].astype(np.float64)


def _complex_to_pair(z: np.ndarray) -> np.ndarray:
    return np.stack([z.real, z.imag], axis=-3).astype(DTYPE)


def fft2d_pair(x) -> Tensor:
    """Unnormalized forward 2-d DFT of (..., 2, H, W) re/im-packed data."""
    x = _wrap(x)
    if x.ndim < 3 or x.shape[-3] != 2:
        raise DimensionError(f"fft2d_pair expects (...,2,H,W), got {x.shape}")
    out_data = _complex_to_pair(np.fft.fft2(_pair_to_complex(x.data)))

    def backward(g):
        # adjoint of the forward DFT: conjugate, transform, conjugate
        gz = g[..., 0, :, :].astype(np.float64) - 1j * g[..., 1, :, :].astype(np.float64)
        r = np.fft.fft2(gz)
        x._accumulate(np.stack([r.real, -r.imag], axis=-3).astype(DTYPE))

    return _make(out_data, "fft2d", (x,), backward)


def ifft2d_pair(x) -> Tensor:
    """Inverse 2-d DFT with 1/(H*W) normalization, same packing as fft2d_pair."""
    x = _wrap(x)
    if x.ndim < 3 or x.shape[-3] != 2:
        raise DimensionError(f"ifft2d_pair expects (...,2,H,W), got {x.shape}")
    out_data = _complex_to_pair(np.fft.ifft2(_pair_to_complex(x.data)))

    def backward(g):
        gz = g[..., 0, :, :].astype(np.float64) - 1j * g[..., 1, :, :].astype(np.float64)
        r = np.fft.ifft2(gz)
        x._accumulate(np.stack([r.real, -r.imag], axis=-3).astype(DTYPE))

    return _make(out_data, "ifft2d", (x,), backward)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Sequence[Parameter],
               h: float = 1e-3, n_samples: int = 64, seed: int = 0,
               min_grad: float = 0.0, float64: bool = False) -> float:
    """Compare analytic parameter gradients of ``f`` with central differences.

    Returns the max over sampled coordinates of
    ``|analytic - fd| / max(1e-6, |fd|)``. The true step is measured from the
    rounded perturbed values so quadratic losses difference exactly.
    Coordinates whose analytic gradient is below ``min_grad`` are skipped:
    forward rounding noise swamps central differences there.

    With ``float64=True`` the whole evaluation (params, forward, perturbation)
    runs in 64-bit, which makes small steps trustworthy for losses whose
    float32 differences would be dominated by rounding or by piecewise-linear
    kink crossings. Production precision is unaffected.
    """
    global DTYPE
    params = list(params)
    saved_dtype = DTYPE
    saved_data = None
    if float64:
        saved_data = [p.data for p in params]
        DTYPE = np.float64
        for p in params:
            p.data = p.data.astype(np.float64)
    try:
        for p in params:
            p.grad = np.zeros_like(p.data)
        loss = f()
        if not np.all(np.isfinite(loss.data)):
            raise NumericError("grad_check: non-finite loss")
        loss.backward()
        analytic = [np.array(p.grad, dtype=np.float64) for p in params]

        coords = [(pi, i) for pi, p in enumerate(params)
                  for i in range(p.size)
                  if abs(analytic[pi].flat[i]) >= min_grad]
        if not coords:
            raise ValueError("grad_check: no coordinates above min_grad")
        rng = np.random.default_rng(seed)
        if len(coords) > n_samples:
            coords = [coords[i]
                      for i in rng.choice(len(coords), n_samples, replace=False)]

        worst = 0.0
        for pi, i in coords:
            p = params[pi]
            orig = p.data.flat[i]
            hi = DTYPE(orig + h)
            lo = DTYPE(orig - h)
            p.data.flat[i] = hi
            f_hi = float(f().data)
            p.data.flat[i] = lo
            f_lo = float(f().data)
            p.data.flat[i] = orig
            fd = (f_hi - f_lo) / (float(hi) - float(lo))
            rel = abs(analytic[pi].flat[i] - fd) / max(1e-6, abs(fd))
            worst = max(worst, rel)
        return worst
    finally:
        if float64:
            DTYPE = saved_dtype
            for p, data in zip(params, saved_data):
                p.data = data
                p.grad = np.zeros_like(data)
