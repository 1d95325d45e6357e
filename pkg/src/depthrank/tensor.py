"""Dense tensors with reverse-mode automatic differentiation.

A small numpy-backed engine with just the operations needed to express a
multi-scale convolutional encoder-decoder and pixel-pair losses: conv2d,
2x average pooling, 2x nearest upsampling, elementwise add, ReLU, channel
concatenation, and scalar reductions.

Data is float32 by default; reductions accumulate in float64. Building a
graph from float64 leaves keeps the whole graph in float64, which is how
the gradient-check suite runs. Any NaN/Inf produced by a forward or
backward pass raises immediately.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# Toggle for the finite-value invariant. On by default; not a public knob.
_CHECK_FINITE = True


def _as_float_array(data, dtype) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(dtype if dtype is not None else np.float32)
    elif dtype is not None and arr.dtype != np.dtype(dtype):
        arr = arr.astype(dtype)
    return arr


def _check_finite(arr: np.ndarray, context: str) -> None:
    if _CHECK_FINITE and not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values produced by {context}")


class Tensor:
    """A dense array plus the graph links needed for backward().

    Leaves (parameters, inputs) have no parents; every op sets `parents`
    and a closure that scatters the output gradient back to them.
    """

    __slots__ = ("data", "grad", "parents", "op", "name", "_backward", "_visits")

    def __init__(self, data, dtype=None, name=None):
        self.data = _as_float_array(data, dtype)
        self.grad = None
        self.parents: tuple[Tensor, ...] = ()
        self.op = "leaf"
        self.name = name
        self._backward = None
        self._visits = 0  # incremented once per backward traversal, for tests

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Tensor{label} {self.op} shape={self.data.shape} dtype={self.data.dtype}>"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


def _from_op(data: np.ndarray, parents, op: str, backward_fn) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.parents = tuple(parents)
    out.op = op
    out.name = None
    out._backward = backward_fn
    out._visits = 0
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


# ---------------------------------------------------------------------------
# convolution

def _conv_out_size(h: int, w: int, k: int, stride: int, padding: int) -> tuple[int, int]:
    return ((h + 2 * padding - k) // stride + 1,
            (w + 2 * padding - k) // stride + 1)


def _im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Unfold k x k patches into columns: (N, C*k*k, Hp*Wp).

    1x1/stride-1 convolutions reduce to a reshape view (no copy).
    """
    n, c, h, w = x.shape
    if k == 1 and stride == 1 and padding == 0:
        return x.reshape(n, c, h * w)
    hp, wp = _conv_out_size(h, w, k, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, k, k, hp, wp), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = x[:, :, i:i + stride * hp:stride, j:j + stride * wp:stride]
    return cols.reshape(n, c * k * k, hp * wp)


def _col2im(cols: np.ndarray, x_shape, k: int, stride: int, padding: int) -> np.ndarray:
    """Scatter-add columns back to image space; adjoint of _im2col."""
    n, c, h, w = x_shape
    if k == 1 and stride == 1 and padding == 0:
        return cols.reshape(n, c, h, w)
    hp, wp = _conv_out_size(h, w, k, stride, padding)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols6 = cols.reshape(n, c, k, k, hp, wp)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * hp:stride, j:j + stride * wp:stride] += cols6[:, :, i, j]
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return out


# Flat-shift convolution (stride 1): one channel-contracting GEMM on the
# zero-padded input, then k*k shifted adds. Every add is one contiguous
# slice of the flattened padded grid, which is far cheaper than gathering
# k*k strided patches; row wrap-around only pollutes pad columns, which
# the final crop discards.

def _shift_conv(xflat: np.ndarray, wmat: np.ndarray, k: int, wp2: int,
                out_rows: int, out_cols: int, hp2: int) -> np.ndarray:
    """Correlate a flattened padded grid with a (OC, C, k, k) kernel."""
    n = xflat.shape[0]
    oc = wmat.shape[0]
    l2 = xflat.shape[2]
    s = np.matmul(wmat.reshape(oc * k * k, -1), xflat)  # (N, OC*k*k, L2)
    s = s.reshape(n, oc, k * k, l2)
    acc = np.zeros((n, oc, l2), dtype=xflat.dtype)
    for i in range(k):
        for j in range(k):
            delta = i * wp2 + j
            if delta:
                acc[:, :, :l2 - delta] += s[:, :, i * k + j, delta:]
            else:
                acc += s[:, :, i * k + j]
    return np.ascontiguousarray(
        acc.reshape(n, oc, hp2, wp2)[:, :, :out_rows, :out_cols])


def _conv_fwd_stride1(xd: np.ndarray, wd: np.ndarray, padding: int) -> np.ndarray:
    n, c, h, w = xd.shape
    oc, _, k, _ = wd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else xd
    hp2, wp2 = h + 2 * padding, w + 2 * padding
    wmat = wd.transpose(0, 2, 3, 1)  # (OC, k, k, C) so rows follow (i, j)
    return _shift_conv(xp.reshape(n, c, hp2 * wp2), wmat, k, wp2,
                       hp2 - k + 1, wp2 - k + 1, hp2)


def _flat_patches(grid: np.ndarray, k: int, wp2: int) -> np.ndarray:
    """All k*k flat-offset patches of a flattened padded grid.

    `grid` is (N, C, rows*wp2 + k-1); the k-1 slack elements at the tail
    keep the strided view in bounds. Returns (N, C*k*k, Lv) with
    Lv = (rows-k+1)*wp2; entry [n, (c,i,j), q] = grid[n, c, q + i*wp2 + j].
    """
    n, c, l2 = grid.shape
    lv = l2 - (k - 1) * wp2 - (k - 1)
    lv = ((lv + k - 1) // wp2) * wp2  # whole rows; tail covered by slack
    st = grid.strides
    view = np.lib.stride_tricks.as_strided(
        grid, shape=(n, c, k, k, lv),
        strides=(st[0], st[1], wp2 * st[2], st[2], st[2]))
    return np.ascontiguousarray(view).reshape(n, c * k * k, lv)


def _conv_dx_stride1(g: np.ndarray, wd: np.ndarray, padding: int,
                     x_shape) -> np.ndarray:
    # dx is the correlation of the padded output gradient with the
    # spatially flipped, channel-transposed kernel, computed as one GEMM
    # against the patch matrix of the padded gradient.
    n, c, h, w = x_shape
    oc, _, k, _ = wd.shape
    q = k - 1 - padding
    hp2, wp2 = g.shape[2] + 2 * q, g.shape[3] + 2 * q
    l2 = hp2 * wp2
    gp = np.zeros((n, oc, l2 + k - 1), dtype=g.dtype)
    gp3 = gp[:, :, :l2].reshape(n, oc, hp2, wp2)
    gp3[:, :, q:q + g.shape[2], q:q + g.shape[3]] = g
    patches = _flat_patches(gp, k, wp2)  # (N, OC*k*k, Lv)
    wflip = wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, oc * k * k)
    out = np.matmul(wflip, patches)  # (N, C, Lv)
    rows = patches.shape[2] // wp2
    return np.ascontiguousarray(out.reshape(n, c, rows, wp2)[:, :, :h, :w])


def _conv_dw_stride1(g: np.ndarray, xd: np.ndarray, padding: int,
                     k: int) -> np.ndarray:
    n, c, h, w = xd.shape
    oc = g.shape[1]
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else xd
    hp2, wp2 = h + 2 * padding, w + 2 * padding
    l2 = hp2 * wp2
    gacc = np.zeros((n, oc, hp2, wp2), dtype=g.dtype)
    gacc[:, :, :g.shape[2], :g.shape[3]] = g
    gflat = gacc.reshape(n, oc, l2)
    xflat = xp.reshape(n, c, l2)
    dw = np.empty((oc, c, k, k), dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            delta = i * wp2 + j
            dw[:, :, i, j] = np.tensordot(
                gflat[:, :, :l2 - delta] if delta else gflat,
                xflat[:, :, delta:] if delta else xflat,
                axes=([0, 2], [0, 2]))
    return dw


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution (cross-correlation) over (N, C, H, W) input."""
    if x.data.ndim != 4:
        raise ValueError(f"conv2d input must be (N, C, H, W), got shape {x.data.shape}")
    if weight.data.ndim != 4 or weight.data.shape[2] != weight.data.shape[3]:
        raise ValueError(f"conv2d weight must be (out_ch, in_ch, k, k), got shape {weight.data.shape}")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input shape {x.data.shape} has "
            f"{x.data.shape[1]} channels, weight shape {weight.data.shape} expects "
            f"{weight.data.shape[1]}")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d padding must be >= 0, got {padding}")

    n, _, h, w = x.data.shape
    oc, ic, k, _ = weight.data.shape
    hp, wp = _conv_out_size(h, w, k, stride, padding)
    if hp < 1 or wp < 1:
        raise ValueError(
            f"conv2d output would be empty: input {h}x{w}, kernel {k}, "
            f"stride {stride}, padding {padding}")
    if bias is not None and bias.data.shape != (oc,):
        raise ValueError(f"conv2d bias shape {bias.data.shape} != ({oc},)")

    parents = (x, weight) if bias is None else (x, weight, bias)

    if stride == 1 and k > 1 and padding <= k - 1:
        out = _conv_fwd_stride1(x.data, weight.data, padding)
        if bias is not None:
            out += bias.data[None, :, None, None]

        def backward(g):
            _accum(weight, _conv_dw_stride1(g, x.data, padding, k))
            _accum(x, _conv_dx_stride1(g, weight.data, padding, x.data.shape))
            if bias is not None:
                _accum(bias, g.sum(axis=(0, 2, 3)))

        return _from_op(out, parents, "conv2d", backward)

    cols = _im2col(x.data, k, stride, padding)  # saved; a view when k == 1
    w2 = weight.data.reshape(oc, ic * k * k)
    out = np.matmul(w2, cols)  # (N, OC, Hp*Wp)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, oc, hp, wp)

    def backward(g):
        g2 = g.reshape(n, oc, hp * wp)
        dw = np.tensordot(g2, cols, axes=([0, 2], [0, 2]))
        _accum(weight, dw.reshape(weight.data.shape))
        dcols = np.matmul(w2.T, g2)
        _accum(x, _col2im(dcols, x.data.shape, k, stride, padding))
        if bias is not None:
            _accum(bias, g.sum(axis=(0, 2, 3)))

    return _from_op(out, parents, "conv2d", backward)


# ---------------------------------------------------------------------------
# resampling

def avgpool2x(x: Tensor) -> Tensor:
    """2x2 average pooling; halves both spatial extents."""
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2x needs even spatial extents, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        _accum(x, np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * np.asarray(0.25, dtype=g.dtype))

    return _from_op(out, (x,), "avgpool2x", backward)


def upsample2x_nearest(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling; each cell becomes a 2x2 block."""
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    n, c, h, w = x.data.shape

    def backward(g):
        _accum(x, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _from_op(out, (x,), "upsample2x_nearest", backward)


# ---------------------------------------------------------------------------
# elementwise and structural ops

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _from_op(out, (a, b), "add", backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g):
        _accum(x, g * (x.data > 0))

    return _from_op(out, (x,), "relu", backward)


def concat_channels(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat_channels needs at least one tensor")
    base = parts[0].data.shape
    for p in parts[1:]:
        s = p.data.shape
        if len(s) != 4 or s[0] != base[0] or s[2:] != base[2:]:
            raise ValueError(f"concat_channels non-channel extents differ: {base} vs {s}")
    out = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[:, lo:hi])

    return _from_op(out, tuple(parts), "concat_channels", backward)


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor. Accumulates in float64."""
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.data.dtype)

    def backward(g):
        _accum(x, np.broadcast_to(g, x.data.shape).copy())

    return _from_op(out, (x,), "sum", backward)


def tmean(x: Tensor) -> Tensor:
    """Mean of all elements, as a scalar tensor. Accumulates in float64."""
    inv = 1.0 / x.data.size
    out = np.asarray(x.data.sum(dtype=np.float64) * inv, dtype=x.data.dtype)

    def backward(g):
        _accum(x, np.broadcast_to(g * np.asarray(inv, dtype=g.dtype), x.data.shape).copy())

    return _from_op(out, (x,), "mean", backward)


def mul_scalar(x: Tensor, c: float) -> Tensor:
    cc = np.asarray(c, dtype=x.data.dtype)
    out = x.data * cc

    def backward(g):
        _accum(x, g * cc)

    return _from_op(out, (x,), "mul_scalar", backward)


# ---------------------------------------------------------------------------
# backward pass

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order  # inputs before the nodes that consume them


def backward(root: Tensor, params: list[Tensor] | None = None) -> int:
    """Reverse-mode gradient of a scalar `root` w.r.t. every reachable leaf.

    Gradients accumulate into `.grad`. Leaves listed in `params` but not
    reachable from `root` end up with zero gradients. Returns the number of
    graph nodes visited (each exactly once).
    """
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
    order = _toposort(root)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        node._visits += 1
        if node._backward is not None:
            node._backward(node.grad)
            _check_finite(node.grad, f"backward of {node.op}")
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            else:
                _check_finite(p.grad, "parameter gradient")
    return len(order)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    """First/second moment buffers for one parameter list."""
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "AdamState":
        return cls(m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params])


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> list[Tensor]:
    """One adaptive-moment update, in place. Deterministic given `state`."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError(
            f"adam_step length mismatch: {len(params)} params, {len(grads)} grads, "
            f"{len(state.m)} state slots")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step grad shape {g.shape} != param shape {p.data.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError("adam_step received a non-finite gradient")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
    return params
