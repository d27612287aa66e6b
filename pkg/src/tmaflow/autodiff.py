"""Minimal dense-tensor engine with tape-based reverse-mode differentiation.

Only the op set needed by the flow network is provided.  Ops record onto the
innermost active :class:`Tape`; with no tape active nothing is recorded and
evaluation runs at plain numpy speed.

Arrays default to float32.  :func:`replay64` switches newly created tensors
and internal constants to float64 so finite-difference checks can use tight
tolerances.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPE = [np.float32]
_TAPES: list["Tape"] = []


def default_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def replay64():
    """Evaluate in float64 (gradient-check mode)."""
    _DTYPE.append(np.float64)
    try:
        yield
    finally:
        _DTYPE.pop()


class DimensionError(ValueError):
    pass


class Tensor:
    """Dense array plus a ``requires_grad`` flag.

    Identity-hashed so it can key gradient dictionaries.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64) or arr.dtype != default_dtype():
            arr = arr.astype(default_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered op record for one forward pass.

    Used as a context manager; nodes are appended in execution order, so the
    list is topologically sorted by construction.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        return backward(self, loss)


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _record(out: np.ndarray, inputs: Sequence[Tensor], fn: Callable) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=needs)
    if needs:
        tape.nodes.append(Node(tuple(inputs), result, fn))
    return result


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-accumulate gradients of a scalar ``loss``.

    Leaf tensors with ``requires_grad`` get their ``.grad`` set; the returned
    dict maps each such leaf to its gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = set()
    for node in reversed(tape.nodes):
        produced.add(id(node.output))
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
    leaves: dict[Tensor, np.ndarray] = {}
    seen = set()
    for node in tape.nodes:
        for inp in node.inputs:
            if inp.requires_grad and id(inp) not in produced and id(inp) not in seen:
                seen.add(id(inp))
                g = grads.get(id(inp))
                if g is None:
                    g = np.zeros_like(inp.data)
                inp.grad = g
                leaves[inp] = g
    if loss.requires_grad and id(loss) not in produced:
        loss.grad = np.ones_like(loss.data)
        leaves[loss] = loss.grad
    return leaves


# ----------------------------------------------------------------- helpers


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _operand(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else default_dtype()
    return Tensor._wrap(np.asarray(x, dtype=dtype))


# ------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bw)


def pow(x: Tensor, exponent: float) -> Tensor:
    out = x.data ** exponent
    return _record(out, (x,), lambda g: (g * exponent * x.data ** (exponent - 1),))


def absolute(x: Tensor) -> Tensor:
    return _record(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return _record(out, (x,), lambda g: (g * (x.data > 0),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _record(out, (x,), lambda g: (g * (1 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype, copy=False)
    return _record(out, (x,), lambda g: (g * out * (1 - out),))


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


# ---------------------------------------------------------------- shaping


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _record(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (g.transpose(inv),))


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g) if _is_advanced(index) else _assign_add(full, index, g)
        return (full,)

    return _record(np.array(out, copy=True), (x,), bw)


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _assign_add(full, index, g):
    full[index] += g


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 1:
        t = tensors[0]
        return _record(t.data.copy(), (t,), lambda g: (g,))
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
                t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(
                f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def bw(g):
        sl = [slice(None)] * g.ndim
        res = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[ax] = slice(lo, hi)
            res.append(g[tuple(sl)])
        return tuple(res)

    return _record(out, tuple(tensors), bw)


# -------------------------------------------------------------- reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.asarray(out, dtype=x.dtype), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else int(np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]))
    return mul(sum(x, axis, keepdims), 1.0 / n)


# ------------------------------------------------------------ linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record(out, (a, b), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), bw)


# ------------------------------------------------------------- convolution


def _conv_out(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is ``C_in x H x W`` or batched ``N x C_in x H x W``; ``kernel`` is
    ``C_out x C_in x k x k``.
    """
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise DimensionError(f"conv2d: kernel expects {kcin} channels, input has {cin}")
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")
    k = kh
    ho, wo = _conv_out(h, k, stride, padding), _conv_out(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: non-positive output size {ho}x{wo}")

    if stride == 1 and k > 1 and cout <= 4 * cin:
        y = _conv2d_shifted(x, kernel, padding)
        return reshape(y, y.shape[1:]) if unbatched else y

    # channel-major layout makes every kernel shift a block copy
    xc = x.data.transpose(1, 0, 2, 3)
    if k == 1 and padding == 0:
        cols = np.ascontiguousarray(xc[:, :, ::stride, ::stride]).reshape(cin, n * ho * wo)
        hp, wp = h, w
    else:
        hp, wp = h + 2 * padding, w + 2 * padding
        xp = np.zeros((cin, n, hp, wp), dtype=x.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = xc
        cols = np.empty((k, k, cin, n, ho, wo), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
        cols = cols.reshape(k * k * cin, n * ho * wo)
    wmat = np.ascontiguousarray(kernel.data.transpose(0, 2, 3, 1)).reshape(cout, k * k * cin)
    out = np.ascontiguousarray((wmat @ cols).reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))

    def bw(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, n * ho * wo)
        gk = gx = None
        if kernel.requires_grad:
            gk = (gt @ cols.T).reshape(cout, k, k, cin).transpose(0, 3, 1, 2)
            gk = np.ascontiguousarray(gk)
        if x.requires_grad:
            dcols = (wmat.T @ gt).reshape(k, k, cin, n, ho, wo)
            gxp = np.zeros((cin, n, hp, wp), dtype=x.dtype)
            if k == 1 and padding == 0:
                gxp[:, :, ::stride, ::stride] = dcols[0, 0]
            else:
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[i, j]
            if padding:
                gxp = gxp[:, :, padding:padding + h, padding:padding + w]
            gx = np.ascontiguousarray(gxp.transpose(1, 0, 2, 3))
        return gx, gk

    y = _record(out, (x, kernel), bw)
    if unbatched:
        y = reshape(y, y.shape[1:])
    return y


def _conv2d_shifted(x: Tensor, kernel: Tensor, padding: int) -> Tensor:
    """Stride-1 convolution without an im2col matrix.

    On the flattened padded input every tap ``(i, j)`` is a constant offset
    ``i * wp + j``.  One GEMM applies all taps at once and the output sums
    shifted slices of the result.  Positions that wrap across rows or samples
    land outside the ``ho x wo`` crop.
    """
    n, cin, h, w = x.shape
    cout, _, k, _ = kernel.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho, wo = hp - k + 1, wp - k + 1
    size = n * hp * wp
    reach = (k - 1) * (wp + 1)
    span = size - reach  # every kept output position is below this
    offs = [i * wp + j for i in range(k) for j in range(k)]
    crop = (slice(None), slice(None), slice(padding, padding + h), slice(padding, padding + w))

    xp = np.zeros((cin, n, hp, wp), dtype=x.dtype)
    xp[crop] = x.data.transpose(1, 0, 2, 3)
    xf = xp.reshape(cin, size)
    taps = (kernel.data.transpose(2, 3, 0, 1).reshape(k * k * cout, cin) @ xf).reshape(k * k, cout, size)
    acc = np.zeros((cout, size), dtype=x.dtype)
    for t, off in enumerate(offs):
        acc[:, :span] += taps[t, :, off:off + span]
    del taps
    out = np.ascontiguousarray(acc.reshape(cout, n, hp, wp)[:, :, :ho, :wo].transpose(1, 0, 2, 3))

    def bw(g):
        gfull = np.zeros((cout, n, hp, wp), dtype=g.dtype)
        gfull[:, :, :ho, :wo] = g.transpose(1, 0, 2, 3)
        gf = gfull.reshape(cout, size)
        gk = gx = None
        cols = None
        if cout < cin:
            # shifted copies of the narrower gradient serve both products
            gext = np.zeros((cout, reach + size), dtype=g.dtype)
            gext[:, reach:] = gf
            cols = np.stack([gext[:, reach - off:reach - off + size] for off in offs])
            cols = cols.reshape(k * k * cout, size)
        if kernel.requires_grad:
            if cols is not None:
                gk = (cols @ xf.T).reshape(k, k, cout, cin).transpose(2, 3, 0, 1)
            else:
                gk = np.empty((cout, k * k, cin), dtype=g.dtype)
                for t, off in enumerate(offs):
                    gk[:, t] = gf[:, :span] @ xf[:, off:off + span].T
                gk = gk.reshape(cout, k, k, cin).transpose(0, 3, 1, 2)
            gk = np.ascontiguousarray(gk)
        if x.requires_grad:
            if cols is not None:
                wcat = kernel.data.transpose(1, 2, 3, 0).reshape(cin, k * k * cout)
                gxp = wcat @ cols
            else:
                wt = kernel.data.transpose(2, 3, 1, 0).reshape(k * k * cin, cout)
                z = (wt @ gf[:, :span]).reshape(k * k, cin, span)
                gxp = np.zeros((cin, size), dtype=g.dtype)
                for t, off in enumerate(offs):
                    gxp[:, off:off + span] += z[t]
            gx = np.ascontiguousarray(gxp.reshape(cin, n, hp, wp)[crop].transpose(1, 0, 2, 3))
        return gx, gk

    return _record(out, (x, kernel), bw)


# ------------------------------------------------------------ grid sampling


def grid_sample_bilinear(maps: Tensor, coords: Tensor) -> Tensor:
    """Bilinear lookup at continuous ``(x, y)`` pixel coordinates.

    ``maps`` is ``C x H x W`` with ``coords`` ``N x 2`` (result ``N x C``), or
    batched ``M x C x H x W`` with ``coords`` ``M x K x 2`` (result
    ``M x K x C``).  Corners outside the map read as zero.
    """
    unbatched = maps.ndim == 3
    if unbatched:
        maps = reshape(maps, (1,) + maps.shape)
        coords = reshape(coords, (1,) + coords.shape)
    m, c, h, w = maps.shape
    k = coords.shape[1]
    cx = coords.data[..., 0]
    cy = coords.data[..., 1]
    x0 = np.floor(cx)
    y0 = np.floor(cy)
    fx = cx - x0
    fy = cy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    flat = maps.data.reshape(m, c, h * w)
    rows = np.arange(m)[:, None]

    corners = []  # (dx, dy, weight, valid, flat index, gathered values)
    out = np.zeros((m, k, c), dtype=maps.dtype)
    for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
        xi, yi = x0 + dx, y0 + dy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        idx = np.where(valid, yi * w + xi, 0)
        vals = flat[rows, :, idx]  # m x k x c
        vals = vals * valid[..., None]
        wx = fx if dx else 1 - fx
        wy = fy if dy else 1 - fy
        wgt = (wx * wy).astype(maps.dtype, copy=False)
        out += wgt[..., None] * vals
        corners.append((dx, dy, wx, wy, valid, idx, vals))

    def bw(g):
        gm = gc = None
        if maps.requires_grad:
            acc = np.zeros((c, m * h * w), dtype=maps.dtype)
            base = (np.arange(m) * (h * w))[:, None]
            for dx, dy, wx, wy, valid, idx, _ in corners:
                lin = (base + idx)[valid]
                wv = (wx * wy)[valid]
                gv = g[valid]  # n_valid x c
                for ch in range(c):
                    acc[ch] += np.bincount(lin, weights=wv * gv[:, ch], minlength=m * h * w)
            gm = acc.reshape(c, m, h, w).transpose(1, 0, 2, 3).astype(maps.dtype, copy=False)
        if coords.requires_grad:
            gx = np.zeros((m, k), dtype=coords.dtype)
            gy = np.zeros((m, k), dtype=coords.dtype)
            for dx, dy, wx, wy, valid, idx, vals in corners:
                gv = (g * vals).sum(axis=-1)
                gx += gv * (1.0 if dx else -1.0) * wy
                gy += gv * (1.0 if dy else -1.0) * wx
            gc = np.stack([gx, gy], axis=-1)
        return gm, gc

    y = _record(out, (maps, coords), bw)
    if unbatched:
        y = reshape(y, y.shape[1:])
    return y


def window_sample(maps: Tensor, centers: Tensor, radius: int) -> Tensor:
    """Bilinear samples on the integer ``(2r+1)^2`` window around each centre.

    ``maps`` is ``M x H x W`` and ``centers`` ``M x 2`` in ``(x, y)`` pixels.
    Returns ``M x (2r+1)^2`` with offsets ordered ``dy`` major, equal to
    :func:`grid_sample_bilinear` at ``centers + offset``.  All taps of one
    window share the same fractional weights, so a single ``(2r+2)^2`` patch
    is gathered per centre.
    """
    m, h, w = maps.shape
    if centers.shape != (m, 2):
        raise DimensionError(f"window_sample: centers must be {(m, 2)}, got {centers.shape}")
    s = 2 * radius + 2
    cx = centers.data[:, 0]
    cy = centers.data[:, 1]
    x0 = np.floor(cx)
    y0 = np.floor(cy)
    fx = (cx - x0).astype(maps.dtype, copy=False)[:, None, None]
    fy = (cy - y0).astype(maps.dtype, copy=False)[:, None, None]
    # clipping keeps far-away windows far away without integer overflow
    ar = np.arange(s)
    xs = np.clip(x0, -s, w + s).astype(np.int64)[:, None] - radius + ar
    ys = np.clip(y0, -s, h + s).astype(np.int64)[:, None] - radius + ar
    inside = (((ys >= 0) & (ys < h))[:, :, None] & ((xs >= 0) & (xs < w))[:, None, :])
    idx = np.clip(ys, 0, h - 1)[:, :, None] * w + np.clip(xs, 0, w - 1)[:, None, :]
    idx += (np.arange(m) * (h * w))[:, None, None]
    patch = maps.data.reshape(-1)[idx]  # m x s x s, zero outside the map
    patch *= inside
    p00, p01 = patch[:, :-1, :-1], patch[:, :-1, 1:]
    p10, p11 = patch[:, 1:, :-1], patch[:, 1:, 1:]
    out = ((1 - fx) * (1 - fy) * p00 + fx * (1 - fy) * p01
           + (1 - fx) * fy * p10 + fx * fy * p11)

    def bw(g):
        g = g.reshape(m, s - 1, s - 1)
        gm = gc = None
        if maps.requires_grad:
            gp = np.zeros((m, s, s), dtype=maps.dtype)
            gp[:, :-1, :-1] += (1 - fx) * (1 - fy) * g
            gp[:, :-1, 1:] += fx * (1 - fy) * g
            gp[:, 1:, :-1] += (1 - fx) * fy * g
            gp[:, 1:, 1:] += fx * fy * g
            gp *= inside
            acc = np.bincount(idx.ravel(), weights=gp.ravel(), minlength=m * h * w)
            gm = acc.reshape(m, h, w).astype(maps.dtype, copy=False)
        if centers.requires_grad:
            gx = (g * ((1 - fy) * (p01 - p00) + fy * (p11 - p10))).sum(axis=(1, 2))
            gy = (g * ((1 - fx) * (p10 - p00) + fx * (p11 - p01))).sum(axis=(1, 2))
            gc = np.stack([gx, gy], axis=-1).astype(centers.dtype, copy=False)
        return gm, gc

    return _record(out.reshape(m, (s - 1) ** 2), (maps, centers), bw)


# -------------------------------------------------------------------- loss


def l1_loss(pred: Tensor, target, mask) -> Tensor:
    """Masked mean absolute error; zero when the mask is empty.

    ``mask`` broadcasts against ``pred``; the count is the number of masked
    elements after broadcasting.
    """
    target = _operand(target, pred)
    mask_arr = np.broadcast_to(
        np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=pred.dtype),
        pred.shape)
    count = float(mask_arr.sum())
    if count == 0:
        return _record(np.zeros((), dtype=pred.dtype), (pred,),
                       lambda g: (np.zeros_like(pred.data),))
    diff = pred.data - target.data
    out = np.asarray((np.abs(diff) * mask_arr).sum() / count, dtype=pred.dtype)

    def bw(g):
        s = np.sign(diff) * mask_arr * (g / count)
        return (s if pred.requires_grad else None,
                -s if target.requires_grad else None)

    return _record(out, (pred, target), bw)


def global_norm(arrays: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(np.sum([np.sum(np.square(a, dtype=np.float64)) for a in arrays])))
