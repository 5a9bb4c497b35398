"""Dense tensor engine with reverse-mode differentiation.

Values are numpy arrays, float32 by default (float64 is available for
high-precision checking). Differentiable ops record onto an explicit
:class:`GradTape` (a Wengert list); with no active tape, ops are plain
numpy calls with zero bookkeeping, which is what inference uses.

Layout is row-major with a channel-first (C, H, W) convention; ops that
take feature maps also accept a leading batch dimension. Reductions
accumulate in float64 and cast back to the storage dtype.
"""

import contextlib

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ParameterError

DEFAULT_DTYPE = np.float32

_TAPE_STACK = []
_CHECKED = False


def set_checked(flag: bool) -> None:
    """Globally enable/disable finite-value checks at op boundaries."""
    global _CHECKED
    _CHECKED = bool(flag)


@contextlib.contextmanager
def checked_mode(flag: bool = True):
    global _CHECKED
    prev = _CHECKED
    _CHECKED = bool(flag)
    try:
        yield
    finally:
        _CHECKED = prev


def _require_finite(arr, where):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values detected in {where}")


class Tensor:
    """Dense n-dimensional array with optional gradient tracking.

    Immutable by convention after construction, except that optimizers may
    update ``data`` in place between tape lifetimes and ``grad`` accumulates
    during backward passes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_recorded")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=DEFAULT_DTYPE if dtype is None else dtype)
        if any(d <= 0 for d in arr.shape):
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        if _CHECKED:
            _require_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._recorded = False  # True once produced by a taped op (non-leaf)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self._recorded

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # Operator sugar; the free functions below do the real work.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


class GradTape:
    """Ordered record of executed differentiable ops.

    Ops append in execution order, which is a topological order of the data
    flow, so the backward pass is a single reverse sweep that visits each
    recorded op exactly once. A tape is consumed by its backward pass.
    """

    def __init__(self):
        self._records = []  # (output, inputs, backward_fn)
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def _record(self, output, inputs, backward_fn):
        if self._consumed:
            raise ContractError("gradient tape already consumed by a backward pass")
        self._records.append((output, inputs, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into each requires_grad leaf's ``grad``."""
        if self._consumed:
            raise ContractError("gradient tape already consumed by a backward pass")
        if loss.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not any(out is loss for out, _, _ in self._records):
            raise ContractError("loss was not produced under this tape")
        self._consumed = True
        grads = {id(loss): np.ones_like(loss.data)}
        for out, inputs, backward_fn in reversed(self._records):
            g_out = grads.pop(id(out), None)
            if g_out is None:
                continue  # not on the path from loss
            for inp, g in zip(inputs, backward_fn(g_out)):
                if g is None or not inp.requires_grad:
                    continue
                if inp._recorded:
                    key = id(inp)
                    grads[key] = g if key not in grads else grads[key] + g
                else:
                    inp.grad = g.copy() if inp.grad is None else inp.grad + g
        self._records.clear()


def backward(loss: Tensor, tape: GradTape) -> None:
    """Free-function alias for :meth:`GradTape.backward`."""
    tape.backward(loss)


def as_tensor(x, like=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _make(out_data, inputs, backward_fn, op_name):
    """Wrap an op result, recording it on the active tape when tracking."""
    if _CHECKED:
        _require_finite(out_data, op_name)
    req = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = req
    out.grad = None
    out._recorded = False
    if req and _TAPE_STACK:
        _TAPE_STACK[-1]._record(out, inputs, backward_fn)
        out._recorded = True
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def add(a, b):
    a, b = as_tensor(a, like=b if isinstance(b, Tensor) else None), as_tensor(b, like=a if isinstance(a, Tensor) else None)
    out = a.data + b.data

    def bwd(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bwd, "add")


def sub(a, b):
    a, b = as_tensor(a, like=b if isinstance(b, Tensor) else None), as_tensor(b, like=a if isinstance(a, Tensor) else None)
    out = a.data - b.data

    def bwd(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bwd, "sub")


def mul(a, b):
    a, b = as_tensor(a, like=b if isinstance(b, Tensor) else None), as_tensor(b, like=a if isinstance(a, Tensor) else None)
    out = a.data * b.data

    def bwd(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bwd, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-D operands per the core contract; stacked leading
    batch dimensions broadcast as in numpy."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul requires rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bwd, "matmul")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0)

    def bwd(g):
        return (g * (x.data > 0),)

    return _make(out, (x,), bwd, "relu")


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.exp(-np.abs(x.data))  # always <= 1, no overflow
    out = np.where(x.data >= 0, 1.0 / (1.0 + t), t / (1.0 + t)).astype(x.data.dtype)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), bwd, "sigmoid")


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(x.data)

    def bwd(g):
        return (g / x.data,)

    return _make(out, (x,), bwd, "log")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Shift-stable softmax along ``axis``; each slice sums to 1."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    if x.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _make(out, (x,), bwd, "softmax")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.data.dtype)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return _make(out, (x,), bwd, "sum")


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    out = x.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.data.dtype)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype) / count,)

    return _make(out, (x,), bwd, "mean")


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    out = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), bwd, "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    x = as_tensor(x)
    perm = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    out = x.data.transpose(perm)
    inv = tuple(np.argsort(perm))

    def bwd(g):
        return (g.transpose(inv),)

    return _make(out, (x,), bwd, "transpose")


def swap_last2(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(out, tuple(tensors), bwd, "concat")


# ---------------------------------------------------------------------------
# convolution and pooling (feature maps are (..., C, H, W))


def _corr2d(x, w, stride, padding):
    """Raw batched cross-correlation on numpy arrays.

    x: (N, Cin, H, W), w: (Cout, Cin, kh, kw) -> out (N, Cout, H', W') plus the
    im2col patch matrix, reused by the weight gradient. Windows are gathered
    from an NHWC copy so the innermost contiguous run is a full channel
    vector, which keeps the gather memory-bound rather than latency-bound.
    """
    n, cin, h, wdt = x.shape
    cout, _, kh, kw = w.shape
    xt = np.ascontiguousarray(x.transpose(0, 2, 3, 1))  # NHWC
    if padding:
        xt = np.pad(xt, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    hp, wp = xt.shape[1], xt.shape[2]
    if hp < kh or wp < kw:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    win = np.lib.stride_tricks.sliding_window_view(xt, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (N, H', W', Cin, kh, kw)
    ho, wo = win.shape[1], win.shape[2]
    patches = win.transpose(0, 1, 2, 4, 5, 3).reshape(n, ho * wo, kh * kw * cin)
    w2 = w.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout)
    out = patches @ w2
    return out.transpose(0, 2, 1).reshape(n, cout, ho, wo), patches


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip) over the trailing (C, H, W) axes.

    Output spatial size is (H + 2*padding - k) / stride + 1 and must be
    integral; a fractional size is a dimension error rather than a floor.
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 4:
        raise DimensionError(f"conv2d kernel must be (Cout, Cin, k, k), got {w.shape}")
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d input must be (C, H, W) or (N, C, H, W), got {x.shape}")
    if stride < 1 or padding < 0:
        raise ParameterError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    batched = x.ndim == 4
    cout, cin, kh, kw = w.shape
    cx = x.shape[-3]
    if cx != cin:
        raise DimensionError(f"conv2d channel mismatch: input has {cx}, kernel expects {cin}")
    if padding > min(kh, kw) - 1:
        raise ParameterError(f"conv2d padding {padding} exceeds kernel size {kh}x{kw} minus one")
    h, wdt = x.shape[-2], x.shape[-1]
    for name, dim, k in (("height", h, kh), ("width", wdt, kw)):
        if (dim + 2 * padding - k) % stride != 0:
            raise DimensionError(
                f"conv2d output {name} is not integral: ({dim} + 2*{padding} - {k}) / {stride}"
            )
    x4 = x.data if batched else x.data[None]
    out, patches = _corr2d(x4, w.data, stride, padding)

    def bwd(g):
        g4 = g if batched else g[None]
        n, _, ho, wo = g4.shape
        gw = None
        if w.requires_grad:
            gflat = g4.reshape(n, cout, ho * wo).transpose(0, 2, 1)  # (N, H'W', Cout)
            gw = np.tensordot(gflat, patches, axes=([0, 1], [0, 1]))  # (Cout, kh*kw*Cin)
            gw = gw.reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2).astype(w.data.dtype)
        if not x.requires_grad:
            return None, gw
        # input gradient: stride-dilate g, then full-correlate with the
        # flipped, channel-swapped kernel
        if stride > 1:
            dil = np.zeros((n, cout, (ho - 1) * stride + 1, (wo - 1) * stride + 1), dtype=g4.dtype)
            dil[:, :, ::stride, ::stride] = g4
        else:
            dil = g4
        w_rot = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (Cin, Cout, kh, kw)
        gx = _corr2d(np.pad(dil, ((0, 0), (0, 0), (kh - 1 - padding,) * 2, (kw - 1 - padding,) * 2)),
                     w_rot, 1, 0)[0]
        gx = gx.astype(x.data.dtype)
        return (gx if batched else gx[0], gw)

    return _make(out if batched else out[0], (x, w), bwd, "conv2d")


def _check_map(x, op):
    if x.ndim not in (3, 4):
        raise DimensionError(f"{op} expects (C, H, W) or (N, C, H, W), got {x.shape}")


def avg_pool_spatial(x: Tensor) -> Tensor:
    """Per-channel mean over all spatial positions: (..., C, H, W) -> (..., C, 1, 1)."""
    x = as_tensor(x)
    _check_map(x, "avg_pool_spatial")
    out = x.data.mean(axis=(-2, -1), keepdims=True, dtype=np.float64).astype(x.data.dtype)
    hw = x.shape[-2] * x.shape[-1]

    def bwd(g):
        return (np.broadcast_to(g / hw, x.shape).astype(x.data.dtype),)

    return _make(out, (x,), bwd, "avg_pool_spatial")


def max_pool_spatial(x: Tensor) -> Tensor:
    """Per-channel max over all spatial positions; the subgradient routes to
    the first (row-major) argmax."""
    x = as_tensor(x)
    _check_map(x, "max_pool_spatial")
    h, wdt = x.shape[-2], x.shape[-1]
    flat = x.data.reshape(x.shape[:-2] + (h * wdt,))
    idx = np.argmax(flat, axis=-1)  # first occurrence in row-major order
    out = np.take_along_axis(flat, idx[..., None], axis=-1).reshape(x.shape[:-2] + (1, 1))

    def bwd(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx[..., None], g.reshape(idx.shape + (1,)), axis=-1)
        return (gx.reshape(x.shape),)

    return _make(out, (x,), bwd, "max_pool_spatial")


def channel_pool(x: Tensor, mode: str) -> Tensor:
    """Reduce across channels at each position: (..., C, H, W) -> (..., 1, H, W)."""
    x = as_tensor(x)
    _check_map(x, "channel_pool")
    if mode == "avg":
        out = x.data.mean(axis=-3, keepdims=True, dtype=np.float64).astype(x.data.dtype)
        c = x.shape[-3]

        def bwd(g):
            return (np.broadcast_to(g / c, x.shape).astype(x.data.dtype),)

    elif mode == "max":
        idx = np.argmax(x.data, axis=-3, keepdims=True)
        out = np.take_along_axis(x.data, idx, axis=-3)

        def bwd(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx, g, axis=-3)
            return (gx,)

    else:
        raise ParameterError(f"channel_pool mode must be 'avg' or 'max', got {mode!r}")
    return _make(out, (x,), bwd, "channel_pool")


def adaptive_avg_pool(x: Tensor, out_hw=(1, 1)) -> Tensor:
    """Average pool to a target spatial size via standard bin partitioning.

    Bin i covers [floor(i*H/H'), ceil((i+1)*H/H')); at 1x1 output this is
    exactly the global spatial mean.
    """
    x = as_tensor(x)
    _check_map(x, "adaptive_avg_pool")
    oh, ow = out_hw
    h, wdt = x.shape[-2], x.shape[-1]
    if oh > h or ow > wdt or oh < 1 or ow < 1:
        raise DimensionError(f"adaptive output {out_hw} incompatible with input {h}x{wdt}")
    if h % oh == 0 and wdt % ow == 0:
        bh, bw = h // oh, wdt // ow
        r = x.data.reshape(x.shape[:-2] + (oh, bh, ow, bw))
        out = r.mean(axis=(-3, -1), dtype=np.float64).astype(x.data.dtype)

        def bwd(g):
            g = np.repeat(np.repeat(g, bh, axis=-2), bw, axis=-1)
            return ((g / (bh * bw)).astype(x.data.dtype),)

    else:
        hs = [(int(np.floor(i * h / oh)), int(np.ceil((i + 1) * h / oh))) for i in range(oh)]
        ws = [(int(np.floor(j * wdt / ow)), int(np.ceil((j + 1) * wdt / ow))) for j in range(ow)]
        out = np.empty(x.shape[:-2] + (oh, ow), dtype=x.data.dtype)
        for i, (h0, h1) in enumerate(hs):
            for j, (w0, w1) in enumerate(ws):
                out[..., i, j] = x.data[..., h0:h1, w0:w1].mean(axis=(-2, -1), dtype=np.float64)

        def bwd(g):
            gx = np.zeros_like(x.data)
            for i, (h0, h1) in enumerate(hs):
                for j, (w0, w1) in enumerate(ws):
                    gx[..., h0:h1, w0:w1] += g[..., i : i + 1, j : j + 1] / ((h1 - h0) * (w1 - w0))
            return (gx,)

    return _make(out, (x,), bwd, "adaptive_avg_pool")


def avg_pool2x(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2; spatial dims must be even."""
    x = as_tensor(x)
    _check_map(x, "avg_pool2x")
    h, wdt = x.shape[-2], x.shape[-1]
    if h % 2 or wdt % 2:
        raise DimensionError(f"avg_pool2x needs even spatial dims, got {h}x{wdt}")
    r = x.data.reshape(x.shape[:-2] + (h // 2, 2, wdt // 2, 2))
    out = r.mean(axis=(-3, -1), dtype=np.float64).astype(x.data.dtype)

    def bwd(g):
        g = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1)
        return ((g * 0.25).astype(x.data.dtype),)

    return _make(out, (x,), bwd, "avg_pool2x")


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero each element with probability ``rate`` and scale
    survivors by 1/(1-rate), so the expectation equals the input."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype)
    mask = keep / np.asarray(1.0 - rate, dtype=x.data.dtype)
    out = x.data * mask

    def bwd(g):
        return (g * mask,)

    return _make(out, (x,), bwd, "dropout")


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true class.

    ``probs`` holds post-softmax probabilities, shape (N_cl,) or (B, N_cl);
    ``labels`` is an int or an int array of shape (B,).
    """
    probs = as_tensor(probs)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    p2 = probs.data if probs.ndim == 2 else probs.data[None]
    if probs.ndim not in (1, 2):
        raise DimensionError(f"cross_entropy expects (N_cl,) or (B, N_cl), got {probs.shape}")
    if labels.shape != (p2.shape[0],):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {p2.shape[0]}")
    if labels.min() < 0 or labels.max() >= p2.shape[1]:
        raise ParameterError(f"labels out of range [0, {p2.shape[1]})")
    n = p2.shape[0]
    rows = np.arange(n)
    p_true = np.clip(p2[rows, labels], 1e-12, None)
    out = np.asarray(-np.log(p_true, dtype=np.float64).mean(), dtype=probs.data.dtype)

    def bwd(g):
        gp = np.zeros_like(p2)
        gp[rows, labels] = -1.0 / (n * p_true)
        gp = gp * g
        return (gp if probs.ndim == 2 else gp[0],)

    return _make(out, (probs,), bwd, "cross_entropy")


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """He-uniform initialized parameter tensor: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    limit = np.sqrt(6.0 / fan_in)
    data = rng.uniform(-limit, limit, size=shape).astype(DEFAULT_DTYPE)
    return Tensor(data, requires_grad=True)
